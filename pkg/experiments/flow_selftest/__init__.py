from __future__ import annotations

# Core Imports
import math
from typing import TYPE_CHECKING, List, Sequence, Tuple

# Third Party Imports
import torch

# Local Imports
from core.autodiff import Tensor
from core.errors import ConfigError
from core.flow import box_normalization, self_normalized_kl, train_flow_ce
from utils.config import ExperimentConfig
from utils.experiment import Experiment, Summary
from utils.manifest import RunManifest
from utils.metrics import write_rows

if TYPE_CHECKING:
    from runner import ExperimentRunner

BOX: Tuple[Sequence[float], Sequence[float]] = ([-4.0, -3.0], [4.0, 6.0])
NORMALIZATION_SAMPLES = 200_000


def banana_log_density(x: Tensor, curvature: float = 0.5) -> Tensor:
    """Unnormalized log-density of a bent Gaussian in two dimensions"""
    x1, x2 = x[:, 0], x[:, 1]
    return -0.5 * x1**2 - 0.5 * (x2 - curvature * (x1**2 - 1.0)) ** 2


def uniform_box(n: int, generator: torch.Generator) -> Tuple[Tensor, Tensor]:
    lo = torch.tensor(BOX[0], dtype=torch.float64)
    hi = torch.tensor(BOX[1], dtype=torch.float64)
    x = lo + (hi - lo) * torch.rand(n, 2, generator=generator, dtype=torch.float64)
    log_p = torch.full((n,), -math.log(float(torch.prod(hi - lo))), dtype=torch.float64)
    return x, log_p


class FlowSelftest(Experiment):
    """
    Cross-entropy fit of the flow to a known two-dimensional target.

    Writes the self-normalized KL divergence after every epoch and checks
    that the learned density integrates to one over the box.
    """

    name = "flow-selftest"

    def run(self, config: ExperimentConfig, manifest: RunManifest) -> Summary:
        if not config.flow.bounded:
            raise ConfigError("flow.bounded", "flow-selftest needs a bounded flow")
        dastr = config.dastr
        flow = self.build_flow(config, 2, BOX)
        x, log_p = uniform_box(dastr.N_0, self.generator(config, "pool"))
        target = torch.exp(banana_log_density(x))
        x_eval, log_p_eval = uniform_box(dastr.N_0, self.generator(config, "held-out"))
        log_target_eval = banana_log_density(x_eval)

        optimizer = torch.optim.Adam(flow.parameters(), lr=dastr.flow_lr)
        train_gen = self.generator(config, "train")
        trace: List[float] = []
        for epoch in range(dastr.N_e_flow):
            train_flow_ce(
                flow,
                x,
                target,
                log_p,
                epochs=1,
                batch_size=dastr.m_flow,
                lr=dastr.flow_lr,
                generator=train_gen,
                optimizer=optimizer,
                logger=self.logger,
            )
            with torch.no_grad():
                kl = self_normalized_kl(log_target_eval, flow.log_density(x_eval), log_p_eval)
            trace.append(kl)
            self.logger.debug(f"epoch {epoch + 1}: KL={kl:.6g}")

        write_rows(
            manifest.add_metric("kl", "kl.csv"),
            ("epoch", "kl"),
            ([i + 1, kl] for i, kl in enumerate(trace)),
        )
        mass, se = box_normalization(
            flow, NORMALIZATION_SAMPLES, self.generator(config, "normalization")
        )
        summary: Summary = {
            "kl_first": trace[0] if trace else None,
            "kl_final": trace[-1] if trace else None,
            "normalization": mass,
            "normalization_se": se,
        }
        self.logger.info(
            f"flow selftest: KL {summary['kl_first']} -> {summary['kl_final']}, "
            f"mass {mass:.4f} +- {se:.4f}"
        )
        self.write_summary(manifest, summary)
        return summary


def setup(runner: ExperimentRunner) -> None:
    runner.add_experiment(FlowSelftest(runner))
