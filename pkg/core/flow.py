"""
Affine coupling flow with exact log-density, on R^d or on a bounded box.

The model maps data ``x`` to latent ``z`` through

    x --(affine box -> unit cube, logit)--> y --(blocks of couplings)--> z

Each block is ``couplings_per_block`` affine coupling layers with alternating
masks followed by a fixed orthogonal rotation, so information mixes across
coordinates between blocks. ``z`` has a standard Gaussian prior.
"""

from __future__ import annotations

# Core Imports
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

# Third Party Imports
import torch
from torch import nn

# Local Imports
from utils.logger import Logger
from .autodiff import Tensor
from .errors import DimensionError, DomainError, ImportanceWeightError
from .nets import glorot_uniform

LOG_2PI = math.log(2.0 * math.pi)
UNIT_EPS = 1e-12


class Bijection(nn.Module):
    """A layer with ``forward(x) -> (y, log|det dy/dx|)`` and its inverse"""

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        raise NotImplementedError

    def inverse(self, y: Tensor) -> Tuple[Tensor, Tensor]:
        raise NotImplementedError


class AffineCoupling(Bijection):
    """
    ``y = x * exp(s(x_frozen)) + t(x_frozen)`` on the transformed coordinates.

    The raw scale goes through ``s_max * tanh(raw / s_max)``. The last layer
    of the scale-and-shift network starts at zero, so a fresh layer is the
    identity.
    """

    mask: Tensor

    def __init__(
        self,
        dim: int,
        mask: Tensor,
        width: int,
        *,
        s_max: float = 5.0,
        generator: Optional[torch.Generator] = None,
    ) -> None:
        super().__init__()
        self.dim = dim
        self.s_max = s_max
        self.register_buffer("mask", mask.to(torch.float64))
        layers = [
            nn.Linear(dim, width, dtype=torch.float64),
            nn.Linear(width, width, dtype=torch.float64),
            nn.Linear(width, 2 * dim, dtype=torch.float64),
        ]
        for layer in layers[:-1]:
            glorot_uniform(layer, generator)
        with torch.no_grad():
            layers[-1].weight.zero_()
            layers[-1].bias.zero_()
        self.net = nn.Sequential(layers[0], nn.ReLU(), layers[1], nn.ReLU(), layers[2])

    def _scale_shift(self, frozen: Tensor) -> Tuple[Tensor, Tensor]:
        raw_s, t = self.net(frozen).chunk(2, dim=-1)
        free = 1.0 - self.mask
        s = self.s_max * torch.tanh(raw_s / self.s_max) * free
        return s, t * free

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        s, t = self._scale_shift(x * self.mask)
        return x * torch.exp(s) + t, s.sum(dim=-1)

    def inverse(self, y: Tensor) -> Tuple[Tensor, Tensor]:
        s, t = self._scale_shift(y * self.mask)
        return (y - t) * torch.exp(-s), -s.sum(dim=-1)


class FixedRotation(Bijection):
    """Orthogonal mixing between blocks; |det| = 1"""

    rotation: Tensor

    def __init__(self, dim: int, generator: Optional[torch.Generator] = None) -> None:
        super().__init__()
        q, r = torch.linalg.qr(torch.randn(dim, dim, generator=generator, dtype=torch.float64))
        # Sign fix makes the factorisation unique
        q = q * torch.sign(torch.diagonal(r)).unsqueeze(0)
        self.register_buffer("rotation", q)

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        return x @ self.rotation.T, x.new_zeros(x.shape[0])

    def inverse(self, y: Tensor) -> Tuple[Tensor, Tensor]:
        return y @ self.rotation, y.new_zeros(y.shape[0])


class BoxLogit(Bijection):
    """Affine map from the box to the unit cube followed by the logit"""

    lower: Tensor
    upper: Tensor

    def __init__(self, lower: Sequence[float], upper: Sequence[float]) -> None:
        super().__init__()
        lo = torch.as_tensor(lower, dtype=torch.float64)
        hi = torch.as_tensor(upper, dtype=torch.float64)
        if bool((hi <= lo).any()):
            raise ValueError("Box upper bounds must exceed lower bounds")
        self.register_buffer("lower", lo)
        self.register_buffer("upper", hi)

    def contains(self, x: Tensor) -> Tensor:
        """Strict interior membership, per row"""
        return ((x > self.lower) & (x < self.upper)).all(dim=-1)

    def saturated(self, x: Tensor) -> Tensor:
        """Rows whose unit coordinates sit on the clamp, per row"""
        u = (x - self.lower) / (self.upper - self.lower)
        return ((u < 2 * UNIT_EPS) | (u > 1.0 - 2 * UNIT_EPS)).any(dim=-1)

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        outside = int((~self.contains(x)).sum())
        if outside:
            raise DomainError("FlowModel.forward", outside)
        width = self.upper - self.lower
        u = (x - self.lower) / width
        y = torch.log(u) - torch.log1p(-u)
        log_det = (-torch.log(width) - torch.log(u) - torch.log1p(-u)).sum(dim=-1)
        return y, log_det

    def inverse(self, y: Tensor) -> Tuple[Tensor, Tensor]:
        width = self.upper - self.lower
        u = torch.sigmoid(y).clamp(UNIT_EPS, 1.0 - UNIT_EPS)
        x = self.lower + width * u
        log_det = (torch.log(width) + torch.log(u) + torch.log1p(-u)).sum(dim=-1)
        return x, log_det


class FlowModel(nn.Module):
    """Normalizing flow density model ``p(x) = N(f(x)) |det grad f(x)|``"""

    def __init__(
        self,
        dim: int,
        *,
        blocks: int = 5,
        couplings_per_block: int = 8,
        width: int = 120,
        box: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
        s_max: float = 5.0,
        generator: Optional[torch.Generator] = None,
    ) -> None:
        super().__init__()
        if dim < 2:
            raise ValueError("Coupling flows need at least two coordinates")
        self.dim = dim
        self.box = BoxLogit(*box) if box is not None else None

        index = torch.arange(dim)
        layers: List[Bijection] = []
        for b in range(blocks):
            for c in range(couplings_per_block):
                mask = (index % 2 == c % 2).to(torch.float64)
                layers.append(
                    AffineCoupling(dim, mask, width, s_max=s_max, generator=generator)
                )
            if b < blocks - 1:
                layers.append(FixedRotation(dim, generator))
        self.layers = nn.ModuleList(layers)

    def _check(self, x: Tensor) -> None:
        if x.dim() != 2 or x.shape[1] != self.dim:
            raise DimensionError(self.dim, int(x.shape[-1]), "FlowModel")

    def contains(self, x: Tensor) -> Tensor:
        if self.box is None:
            return torch.ones(x.shape[0], dtype=torch.bool)
        return self.box.contains(x)

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """``(z, log|det dz/dx|)``; raises :class:`DomainError` outside the box"""
        self._check(x)
        log_det = x.new_zeros(x.shape[0])
        if self.box is not None:
            x, ld = self.box(x)
            log_det = log_det + ld
        for layer in self.layers:
            x, ld = layer(x)
            log_det = log_det + ld
        return x, log_det

    def inverse(self, z: Tensor) -> Tuple[Tensor, Tensor]:
        """``(x, log|det dx/dz|)``"""
        self._check(z)
        log_det = z.new_zeros(z.shape[0])
        for layer in reversed(self.layers):
            assert isinstance(layer, Bijection)
            z, ld = layer.inverse(z)
            log_det = log_det + ld
        if self.box is not None:
            z, ld = self.box.inverse(z)
            log_det = log_det + ld
        return z, log_det

    @staticmethod
    def prior_log_density(z: Tensor) -> Tensor:
        return -0.5 * (z**2).sum(dim=-1) - 0.5 * z.shape[-1] * LOG_2PI

    def log_density(self, x: Tensor) -> Tensor:
        z, log_det = self.forward(x)
        return self.prior_log_density(z) + log_det

    def transform_prior(self, z: Tensor) -> Tuple[Tensor, Tensor]:
        """Map prior draws ``z`` to samples and their log-densities"""
        x, log_det = self.inverse(z)
        log_density = self.prior_log_density(z) - log_det
        if self.box is not None:
            edge = self.box.saturated(x)
            if bool(edge.any()):
                # Clamped draws no longer map back to z; their density comes from x
                log_density = log_density.clone()
                log_density[edge] = self.log_density(x[edge])
        return x, log_density

    def sample(self, n: int, generator: torch.Generator) -> Tuple[Tensor, Tensor]:
        """``n`` samples and their log-densities"""
        if n < 1:
            raise ValueError("n must be >= 1")
        z = torch.randn(n, self.dim, generator=generator, dtype=torch.float64)
        return self.transform_prior(z)

    @torch.no_grad()
    def sample_excluding(
        self,
        n: int,
        generator: torch.Generator,
        reject: Callable[[Tensor], Tensor],
        *,
        max_passes: int = 100,
    ) -> Tuple[Tensor, Tensor, float]:
        """
        Rejection sampling from the flow restricted to ``~reject(x)``.

        Returns the samples, their log-densities under the *restricted*
        distribution (flow density divided by the acceptance rate) and the
        acceptance rate itself.
        """
        kept_x: List[Tensor] = []
        kept_lp: List[Tensor] = []
        have = drawn = 0
        for _ in range(max_passes):
            x, lp = self.sample(n, generator)
            keep = ~reject(x) & self.contains(x)
            drawn += n
            kept_x.append(x[keep])
            kept_lp.append(lp[keep])
            have += int(keep.sum())
            if have >= n:
                break
        if have == 0:
            raise DomainError("FlowModel.sample_excluding", drawn)
        acceptance = have / drawn
        x = torch.cat(kept_x)[:n]
        lp = torch.cat(kept_lp)[:n] - math.log(acceptance)
        return x, lp, acceptance


@dataclass
class FlowTrainingReport:
    ce_trace: List[float] = field(default_factory=lambda: [])
    rejected: int = 0
    total: int = 0
    skipped: bool = False


def importance_weights(
    target_density: Tensor, proposal_log_density: Tensor
) -> Tuple[Tensor, Tensor]:
    """
    Raw ratios ``target / proposal`` and the mask of usable ones.

    The target is taken in linear scale (an unnormalized density, zero
    allowed), so scaling it by a power of two scales every ratio exactly.
    """
    raw = target_density * torch.exp(-proposal_log_density)
    valid = torch.isfinite(raw) & (raw >= 0)
    return raw, valid


def train_flow_ce(
    model: FlowModel,
    samples: Tensor,
    target_density: Tensor,
    proposal_log_density: Tensor,
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    generator: torch.Generator,
    optimizer: Optional[torch.optim.Optimizer] = None,
    max_rejected: float = 0.10,
    logger: Optional[Logger] = None,
) -> FlowTrainingReport:
    """
    Fit ``model`` to an unnormalized target by importance-sampled cross entropy.

    ``target_density`` holds the unnormalized target at ``samples`` and
    ``proposal_log_density`` the log-density the samples were drawn from.

    The loss is ``-sum_i w_i log p_model(x_i)`` with ``w_i`` the ratios
    ``target(x_i) / p_IS(x_i)`` normalized over the whole pool. Because the
    weights are normalized, a constant factor on the target leaves every
    parameter update unchanged.
    """
    logger = logger or Logger("core/flow")
    report = FlowTrainingReport(total=int(samples.shape[0]))

    with torch.no_grad():
        raw, valid = importance_weights(target_density, proposal_log_density)
    report.rejected = int((~valid).sum())
    if report.rejected > max_rejected * report.total:
        raise ImportanceWeightError(
            "train_flow_ce", report.rejected, report.total, max_rejected
        )
    inside = model.contains(samples)
    samples = samples[valid & inside]
    raw = raw[valid & inside]
    total = raw.sum()
    if not bool(total > 0):
        logger.warn("All importance weights are zero; skipping flow update")
        report.skipped = True
        return report
    weights = raw / total

    optimizer = optimizer or torch.optim.Adam(model.parameters(), lr=lr)
    n = samples.shape[0]
    for epoch in range(epochs):
        order = torch.randperm(n, generator=generator)
        epoch_ce = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            scale = n / idx.shape[0]
            loss = -(weights[idx] * model.log_density(samples[idx])).sum() * scale
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_ce += float(loss.detach()) * idx.shape[0] / n
        report.ce_trace.append(epoch_ce)
        if not math.isfinite(epoch_ce):
            raise ImportanceWeightError("train_flow_ce", n, n, max_rejected)
        if epoch == epochs - 1 or (epoch + 1) % 10 == 0:
            logger.debug(f"flow epoch {epoch + 1}/{epochs} CE={epoch_ce:.6g}")
    return report


@torch.no_grad()
def self_normalized_kl(
    log_target: Tensor, model_log_density: Tensor, proposal_log_density: Tensor
) -> float:
    """
    KL(target || model) from proposal samples, with the target known only
    up to a constant (the constant is estimated from the same weights).
    """
    log_w = log_target - proposal_log_density
    log_z = torch.logsumexp(log_w, dim=0) - math.log(log_w.shape[0])
    w = torch.softmax(log_w, dim=0)
    return float((w * (log_target - log_z - model_log_density)).sum())


@torch.no_grad()
def box_normalization(
    model: FlowModel, n: int, generator: torch.Generator
) -> Tuple[float, float]:
    """Uniform-box Monte Carlo estimate of the integral of ``p`` and its SE"""
    if model.box is None:
        raise ValueError("Normalization check needs a bounded flow")
    lo, hi = model.box.lower, model.box.upper
    u = torch.rand(n, model.dim, generator=generator, dtype=torch.float64).clamp(UNIT_EPS, 1 - UNIT_EPS)
    x = lo + (hi - lo) * u
    values = torch.exp(model.log_density(x)) * torch.prod(hi - lo)
    return float(values.mean()), float(values.std() / math.sqrt(n))
