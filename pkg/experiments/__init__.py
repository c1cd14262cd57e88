"""Contains every experiment extension the runner can load"""

# Core Imports
from typing import Tuple

EXPERIMENTS: Tuple[str, ...] = (
    "experiments.brownian20",
    "experiments.rugged_mueller10",
    "experiments.rugged_mueller_latent",
    "experiments.flow_selftest",
)
