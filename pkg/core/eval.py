"""
Error metrics, the trajectory-counting committor oracle and histogram output.
"""

from __future__ import annotations

# Core Imports
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

# Third Party Imports
import numpy as np
import torch

# Local Imports
from utils.logger import Logger
from .autodiff import Tensor
from .checkpoint import write_json_atomic
from .errors import EmptyIsosurfaceError, MetricError
from .nets import CommittorNet
from .potentials import BrownianAnnulus, Potential
from .sde import DEFAULT_MAX_STEPS, HIT_A, HIT_B, first_hit
from .types import HistogramPayload

logger = Logger("core/eval")

CURVE_POINTS = 5000


def validation_curve(potential: BrownianAnnulus, n: int = CURVE_POINTS) -> Tensor:
    """``n`` points ``(k, ..., k)`` with ``k`` evenly spaced in ``[a / sqrt(d), b / sqrt(d)]``"""
    root = math.sqrt(potential.dim)
    kappa = torch.linspace(potential.inner / root, potential.outer / root, n, dtype=torch.float64)
    return kappa.unsqueeze(-1).expand(n, potential.dim).clone()


def relative_l2(q_net: Tensor, q_ref: Tensor) -> float:
    """``|q_net - q_ref|_2 / |q_ref|_2``"""
    if q_net.shape != q_ref.shape:
        raise MetricError(
            "relative_l2 needs equal shapes", net=tuple(q_net.shape), ref=tuple(q_ref.shape)
        )
    ref = float(torch.linalg.vector_norm(q_ref))
    if ref == 0.0:
        raise MetricError("relative_l2 reference has zero norm")
    return float(torch.linalg.vector_norm(q_net - q_ref)) / ref


@torch.no_grad()
def curve_error(net: CommittorNet, potential: BrownianAnnulus, n: int = CURVE_POINTS) -> float:
    x = validation_curve(potential, n)
    return relative_l2(net(x), potential.reference_committor(x))


@dataclass
class CommittorEstimate:
    """Per-point fraction of trajectories reaching B first, with binomial SEs"""

    estimates: Tensor
    se: Tensor
    hits_a: Tensor
    hits_b: Tensor
    timeouts: Tensor
    flagged: List[int] = field(default_factory=lambda: [])


def mc_committor(
    potential: Potential,
    points: Tensor,
    n_traj: int,
    dt: float,
    beta: float,
    generator: torch.Generator,
    *,
    max_steps: int = DEFAULT_MAX_STEPS,
    chunk: int = 50_000,
) -> CommittorEstimate:
    """
    Trajectory-counting committor at each point.

    Timeouts are left out of the ratio and counted separately. Points where
    every trajectory timed out get a NaN estimate and are listed in
    ``flagged``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    n = points.shape[0]
    walkers = points.repeat_interleave(n_traj, dim=0)
    labels = torch.empty(walkers.shape[0], dtype=torch.int64)
    for start in range(0, walkers.shape[0], chunk):
        part = slice(start, start + chunk)
        labels[part] = first_hit(
            potential, walkers[part], dt, beta, generator, max_steps=max_steps
        )
    labels = labels.reshape(n, n_traj)
    hits_a = (labels == HIT_A).sum(dim=1)
    hits_b = (labels == HIT_B).sum(dim=1)
    finished = (hits_a + hits_b).to(torch.float64)
    estimates = hits_b.to(torch.float64) / finished
    se = torch.sqrt(estimates * (1.0 - estimates) / finished)
    timeouts = n_traj - hits_a - hits_b
    flagged = torch.nonzero(finished == 0).flatten().tolist()
    if flagged:
        logger.warn(f"mc_committor: {len(flagged)} points timed out on every trajectory")
    return CommittorEstimate(estimates, se, hits_a, hits_b, timeouts, flagged)


@torch.no_grad()
def extract_isosurface(
    net: CommittorNet, pool: Tensor, tol: float, *, max_points: Optional[int] = None
) -> Tensor:
    """
    Pool points with ``|q(x) - 1/2| <= tol``, closest to 1/2 first.

    :raises EmptyIsosurfaceError: when no point qualifies
    """
    if pool.shape[0] == 0:
        raise ValueError("Isosurface extraction needs a non-empty pool")
    gap = (net(pool) - 0.5).abs()
    members = torch.nonzero(gap <= tol).flatten()
    if members.numel() == 0:
        raise EmptyIsosurfaceError(tol, int(pool.shape[0]))
    members = members[torch.argsort(gap[members], stable=True)]
    if max_points is not None:
        members = members[:max_points]
    return pool[members]


def histogram(values: Tensor, bins: int, value_range: Tuple[float, float]) -> HistogramPayload:
    counts, edges = np.histogram(values.detach().numpy(), bins=bins, range=value_range)
    return {"edges": edges.tolist(), "counts": [int(c) for c in counts]}


@dataclass
class IsosurfaceReport:
    points: Tensor
    estimates: CommittorEstimate
    mean: float
    sd: float
    histogram: HistogramPayload

    @property
    def size(self) -> int:
        return int(self.points.shape[0])


def isosurface_histogram(
    net: CommittorNet,
    pool: Tensor,
    tol: float,
    potential: Potential,
    n_traj: int,
    dt: float,
    beta: float,
    generator: torch.Generator,
    *,
    bins: int = 20,
    max_points: Optional[int] = None,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> IsosurfaceReport:
    """
    Oracle committor values on the model's 1/2-isosurface.

    For an accurate model the estimates cluster around 0.5.
    """
    points = extract_isosurface(net, pool, tol, max_points=max_points)
    estimate = mc_committor(
        potential, points, n_traj, dt, beta, generator, max_steps=max_steps
    )
    values = estimate.estimates[torch.isfinite(estimate.estimates)]
    mean = float(values.mean()) if values.numel() else math.nan
    sd = float(values.std(unbiased=False)) if values.numel() else math.nan
    logger.info(f"isosurface: |G|={points.shape[0]}, mean={mean:.4f}, sd={sd:.4f}")
    return IsosurfaceReport(points, estimate, mean, sd, histogram(values, bins, (0.0, 1.0)))


def norm_histogram(
    samples: Tensor, bins: int = 50, value_range: Optional[Tuple[float, float]] = None
) -> HistogramPayload:
    """Histogram of sample norms; counts sum to the number of samples"""
    norms = torch.linalg.vector_norm(samples, dim=-1) if samples.numel() else samples.new_zeros(0)
    if value_range is None:
        top = float(norms.max()) if norms.numel() else 1.0
        value_range = (0.0, top if top > 0 else 1.0)
    return histogram(norms, bins, value_range)


def concentration_fraction(samples: Tensor, lower: float, upper: float) -> float:
    """Fraction of samples whose norm lies in ``[lower, upper]``"""
    if samples.shape[0] == 0:
        return 0.0
    norms = torch.linalg.vector_norm(samples, dim=-1)
    return float(((norms >= lower) & (norms <= upper)).double().mean())


def write_histogram(path: str, payload: HistogramPayload) -> None:
    write_json_atomic(path, payload)
