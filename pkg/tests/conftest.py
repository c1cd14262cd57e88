# Core Imports
import os
import tempfile
from typing import Callable, List

# Log files from the modules under test go to a scratch directory; this
# must happen before any module creates its Logger
os.environ.setdefault("COMMITTOR_LOG_DIR", tempfile.mkdtemp(prefix="committor-logs-"))
os.environ.setdefault("COMMITTOR_ENVIRONMENT_MODE", "PROD")

# Third Party Imports
import pytest
import torch

# Local Imports
from core.autodiff import configure_determinism
from core.nets import CommittorNet

configure_determinism(1)


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run desk-scale experiment runs"
    )


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "invariant: numerical invariant suites run by selftest")
    config.addinivalue_line("markers", "slow: desk-scale runs, skipped without --runslow")


def pytest_collection_modifyitems(config: pytest.Config, items: List[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def gen() -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(1234)
    return g


@pytest.fixture
def tiny_net() -> Callable[[int], CommittorNet]:
    def build(dim: int, width: int = 8, layers: int = 3) -> CommittorNet:
        g = torch.Generator()
        g.manual_seed(7)
        return CommittorNet([dim] + [width] * (layers - 1) + [1], "tanh", generator=g)

    return build
