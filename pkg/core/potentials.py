"""
Potential-energy landscapes with metastable sets A and B.

Every potential works on batches ``(n, d)`` of float64 points inside an
axis-aligned box. Set membership is closed (``<=`` on radii) with a relative
slack of ``MEMBERSHIP_SLACK`` so points sampled exactly on a boundary sphere
count as members despite rounding.
"""

from __future__ import annotations

# Core Imports
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

# Third Party Imports
import torch
import yaml

# Local Imports
from .autodiff import Tensor
from .errors import DimensionError, DomainError, EmptyStageError, UnsupportedError

Which = Literal["A", "B"]
MEMBERSHIP_SLACK = 1e-12


class Potential(ABC):
    """Energy ``V``, its gradient, inverse temperature and metastable sets"""

    dim: int
    beta: float
    lower: Tensor
    upper: Tensor

    def __init__(
        self, dim: int, beta: float, lower: Sequence[float], upper: Sequence[float]
    ) -> None:
        self.dim = dim
        self.beta = beta
        self.lower = torch.as_tensor(lower, dtype=torch.float64)
        self.upper = torch.as_tensor(upper, dtype=torch.float64)

    @property
    def box(self) -> Tuple[List[float], List[float]]:
        return self.lower.tolist(), self.upper.tolist()

    @property
    def volume(self) -> float:
        return float(torch.prod(self.upper - self.lower))

    def _check(self, x: Tensor) -> None:
        if x.dim() != 2 or x.shape[1] != self.dim:
            raise DimensionError(self.dim, int(x.shape[-1]), type(self).__name__)

    def contains(self, x: Tensor) -> Tensor:
        return ((x >= self.lower) & (x <= self.upper)).all(dim=-1)

    @abstractmethod
    def energy(self, x: Tensor) -> Tensor:
        """``V(x)`` without domain checks; differentiable"""

    def gradient(self, x: Tensor) -> Tensor:
        with torch.enable_grad():
            x = x.detach().requires_grad_(True)
            (g,) = torch.autograd.grad(self.energy(x).sum(), [x])
        return g

    def evaluate(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """``(V, grad V)`` with dimension and domain checks"""
        self._check(x)
        outside = int((~self.contains(x)).sum())
        if outside:
            raise DomainError(type(self).__name__, outside)
        return self.energy(x), self.gradient(x)

    @abstractmethod
    def in_a(self, x: Tensor) -> Tensor: ...

    @abstractmethod
    def in_b(self, x: Tensor) -> Tensor: ...

    def in_ab(self, x: Tensor) -> Tensor:
        return self.in_a(x) | self.in_b(x)

    @abstractmethod
    def sample_boundary(
        self, which: Which, n: int, generator: torch.Generator
    ) -> Tensor: ...

    def sample_interior_uniform(
        self, n: int, generator: torch.Generator, *, max_passes: int = 1000
    ) -> Tuple[Tensor, float]:
        """
        Uniform points in ``box \\ (A u B)`` and the log of their density.

        The density is ``1 / (volume * acceptance)`` with the acceptance
        measured while rejecting points in A or B.
        """
        kept: List[Tensor] = []
        have = drawn = 0
        for _ in range(max_passes):
            u = torch.rand(n, self.dim, generator=generator, dtype=torch.float64)
            x = self.lower + (self.upper - self.lower) * u
            keep = ~self.in_ab(x)
            drawn += n
            have += int(keep.sum())
            kept.append(x[keep])
            if have >= n:
                break
        if have == 0:
            raise EmptyStageError("No uniform sample landed outside A and B")
        acceptance = have / drawn
        return torch.cat(kept)[:n], -math.log(self.volume * acceptance)

    def reflect(self, x: Tensor) -> Tensor:
        """Fold points back into the box (mirror at each face)"""
        width = self.upper - self.lower
        y = torch.remainder(x - self.lower, 2.0 * width)
        y = torch.where(y > width, 2.0 * width - y, y)
        return self.lower + y


@dataclass
class MuellerParameters:
    """Rugged Mueller constants; defaults are the canonical Mueller-Brown set"""

    D: List[float] = field(default_factory=lambda: [-200.0, -100.0, -170.0, 15.0])
    a: List[float] = field(default_factory=lambda: [-1.0, -1.0, -6.5, 0.7])
    b: List[float] = field(default_factory=lambda: [0.0, 0.0, 11.0, 0.6])
    c: List[float] = field(default_factory=lambda: [-10.0, -10.0, -6.5, 0.7])
    xi: List[float] = field(default_factory=lambda: [1.0, 0.0, -0.5, -1.0])
    eta: List[float] = field(default_factory=lambda: [0.0, 0.5, 1.5, 1.0])
    gamma: float = 9.0
    k: float = 5.0
    sigma: float = 0.05
    beta: float = 0.1
    center_a: List[float] = field(default_factory=lambda: [-0.558, 1.441])
    center_b: List[float] = field(default_factory=lambda: [0.623, 0.028])
    radius: float = 0.1
    lower: List[float] = field(default_factory=lambda: [-1.5, -0.5])
    upper: List[float] = field(default_factory=lambda: [1.0, 2.0])
    extended_bound: float = 1.0

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> MuellerParameters:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"Unknown rugged Mueller parameters: {sorted(unknown)}")
        return cls(**dict(data))

    @classmethod
    def from_file(
        cls, path: str, overrides: Optional[Mapping[str, Any]] = None
    ) -> MuellerParameters:
        with open(path) as f:
            data: Dict[str, Any] = yaml.safe_load(f) or {}
        data.update(overrides or {})
        return cls.from_mapping(data)


class RuggedMueller(Potential):
    """
    ``V(x) = V_rm(x1, x2) + 1/(2 sigma^2) * sum_{i>=3} x_i^2``

    A and B are cylinders over the (x1, x2) plane, unbounded in the
    extended coordinates.
    """

    def __init__(self, dim: int = 10, params: Optional[MuellerParameters] = None) -> None:
        if dim < 2:
            raise ValueError("Rugged Mueller needs at least two coordinates")
        p = params or MuellerParameters()
        ext = p.extended_bound
        super().__init__(
            dim,
            p.beta,
            list(p.lower) + [-ext] * (dim - 2),
            list(p.upper) + [ext] * (dim - 2),
        )
        self.params = p
        self._D = torch.tensor(p.D, dtype=torch.float64)
        self._a = torch.tensor(p.a, dtype=torch.float64)
        self._b = torch.tensor(p.b, dtype=torch.float64)
        self._c = torch.tensor(p.c, dtype=torch.float64)
        self._xi = torch.tensor(p.xi, dtype=torch.float64)
        self._eta = torch.tensor(p.eta, dtype=torch.float64)
        self.center_a = torch.tensor(p.center_a, dtype=torch.float64)
        self.center_b = torch.tensor(p.center_b, dtype=torch.float64)

    def mueller(self, x1: Tensor, x2: Tensor) -> Tensor:
        dx = x1.unsqueeze(-1) - self._xi
        dy = x2.unsqueeze(-1) - self._eta
        terms = self._D * torch.exp(self._a * dx**2 + self._b * dx * dy + self._c * dy**2)
        p = self.params
        rugged = p.gamma * torch.sin(2 * p.k * math.pi * x1) * torch.sin(
            2 * p.k * math.pi * x2
        )
        return terms.sum(dim=-1) + rugged

    def energy(self, x: Tensor) -> Tensor:
        v = self.mueller(x[:, 0], x[:, 1])
        if self.dim > 2:
            v = v + (x[:, 2:] ** 2).sum(dim=-1) / (2.0 * self.params.sigma**2)
        return v

    def gradient(self, x: Tensor) -> Tensor:
        x1, x2 = x[:, 0], x[:, 1]
        dx = x1.unsqueeze(-1) - self._xi
        dy = x2.unsqueeze(-1) - self._eta
        e = self._D * torch.exp(self._a * dx**2 + self._b * dx * dy + self._c * dy**2)
        p = self.params
        w = 2 * p.k * math.pi
        g1 = (e * (2 * self._a * dx + self._b * dy)).sum(-1) + p.gamma * w * torch.cos(
            w * x1
        ) * torch.sin(w * x2)
        g2 = (e * (self._b * dx + 2 * self._c * dy)).sum(-1) + p.gamma * w * torch.sin(
            w * x1
        ) * torch.cos(w * x2)
        rest = x[:, 2:] / p.sigma**2
        return torch.cat([g1.unsqueeze(-1), g2.unsqueeze(-1), rest], dim=-1)

    def _projected_distance(self, x: Tensor, center: Tensor) -> Tensor:
        return torch.linalg.vector_norm(x[:, :2] - center, dim=-1)

    def in_a(self, x: Tensor) -> Tensor:
        r = self.params.radius * (1 + MEMBERSHIP_SLACK)
        return self._projected_distance(x, self.center_a) <= r

    def in_b(self, x: Tensor) -> Tensor:
        r = self.params.radius * (1 + MEMBERSHIP_SLACK)
        return self._projected_distance(x, self.center_b) <= r

    def sample_boundary(
        self, which: Which, n: int, generator: torch.Generator
    ) -> Tensor:
        """
        Points on the boundary circle of the cylinder (uniform angle); the
        extended coordinates come from N(0, sigma^2), the quadratic
        confinement's own width, clipped to the box.
        """
        center = self.center_a if which == "A" else self.center_b
        theta = 2 * math.pi * torch.rand(n, generator=generator, dtype=torch.float64)
        ring = torch.stack([torch.cos(theta), torch.sin(theta)], dim=-1)
        head = center + self.params.radius * ring
        if self.dim == 2:
            return head
        tail = self.params.sigma * torch.randn(n, self.dim - 2, generator=generator, dtype=torch.float64)
        tail = tail.clamp(self.lower[2:], self.upper[2:])
        return torch.cat([head, tail], dim=-1)


class BrownianAnnulus(Potential):
    """Free diffusion between the spheres ``|x| = a`` (A) and ``|x| = b`` (B)"""

    def __init__(self, dim: int = 20, inner: float = 1.0, outer: float = 2.0) -> None:
        super().__init__(dim, 0.5, [-outer] * dim, [outer] * dim)
        if not 0 < inner < outer:
            raise ValueError("Annulus radii must satisfy 0 < a < b")
        self.inner = inner
        self.outer = outer

    def energy(self, x: Tensor) -> Tensor:
        return x.new_zeros(x.shape[0]) + 0.0 * x.sum(dim=-1)

    def gradient(self, x: Tensor) -> Tensor:
        return torch.zeros_like(x)

    def radius(self, x: Tensor) -> Tensor:
        return torch.linalg.vector_norm(x, dim=-1)

    def in_a(self, x: Tensor) -> Tensor:
        return self.radius(x) <= self.inner * (1 + MEMBERSHIP_SLACK)

    def in_b(self, x: Tensor) -> Tensor:
        return self.radius(x) >= self.outer * (1 - MEMBERSHIP_SLACK)

    def _directions(self, n: int, generator: torch.Generator) -> Tensor:
        g = torch.randn(n, self.dim, generator=generator, dtype=torch.float64)
        return g / torch.linalg.vector_norm(g, dim=-1, keepdim=True)

    def sample_boundary(
        self, which: Which, n: int, generator: torch.Generator
    ) -> Tensor:
        radius = self.inner if which == "A" else self.outer
        return radius * self._directions(n, generator)

    @property
    def annulus_volume(self) -> float:
        d = self.dim
        unit_ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
        return unit_ball * (self.outer**d - self.inner**d)

    def sample_interior_uniform(
        self, n: int, generator: torch.Generator, *, max_passes: int = 1000
    ) -> Tuple[Tensor, float]:
        """Exact uniform sampling of the open annulus via the radial CDF"""
        d = self.dim
        u = torch.rand(n, generator=generator, dtype=torch.float64)
        r = (self.inner**d + u * (self.outer**d - self.inner**d)) ** (1.0 / d)
        x = r.unsqueeze(-1) * self._directions(n, generator)
        # Radii that round onto a boundary sphere are pulled just inside
        lo, hi = self.inner * (1 + 1e-9), self.outer * (1 - 1e-9)
        rr = self.radius(x).clamp(lo, hi)
        x = x * (rr / self.radius(x)).unsqueeze(-1)
        return x, -math.log(self.annulus_volume)

    def reference_committor(self, x: Tensor) -> Tensor:
        """Closed-form committor for d >= 3"""
        d = self.dim
        if d < 3:
            raise UnsupportedError("Closed-form annulus committor needs d >= 3", dim=d)
        a, b = self.inner, self.outer
        r = self.radius(x)
        num = a ** (2 - d) - r ** (2 - d)
        den = a ** (2 - d) - b ** (2 - d)
        return (num / den).clamp(0.0, 1.0)


class FreeInterval(Potential):
    """Free diffusion on [0, 1] with A = {x <= 0} and B = {x >= 1}"""

    def __init__(self, beta: float = 1.0, margin: float = 0.5) -> None:
        super().__init__(1, beta, [-margin], [1.0 + margin])

    def energy(self, x: Tensor) -> Tensor:
        return x.new_zeros(x.shape[0]) + 0.0 * x.sum(dim=-1)

    def gradient(self, x: Tensor) -> Tensor:
        return torch.zeros_like(x)

    def in_a(self, x: Tensor) -> Tensor:
        return x[:, 0] <= 0.0

    def in_b(self, x: Tensor) -> Tensor:
        return x[:, 0] >= 1.0

    def sample_boundary(
        self, which: Which, n: int, generator: torch.Generator
    ) -> Tensor:
        value = 0.0 if which == "A" else 1.0
        return torch.full((n, 1), value, dtype=torch.float64)

    def sample_interior_uniform(
        self, n: int, generator: torch.Generator, *, max_passes: int = 1000
    ) -> Tuple[Tensor, float]:
        u = torch.rand(n, 1, generator=generator, dtype=torch.float64).clamp(1e-12, 1 - 1e-12)
        return u, 0.0


class QuadraticWell(Potential):
    """Isotropic harmonic well ``V = k |x|^2 / 2`` with no metastable sets"""

    def __init__(self, dim: int = 1, k: float = 1.0, beta: float = 1.0, bound: float = 50.0) -> None:
        super().__init__(dim, beta, [-bound] * dim, [bound] * dim)
        self.k = k

    def energy(self, x: Tensor) -> Tensor:
        return 0.5 * self.k * (x**2).sum(dim=-1)

    def gradient(self, x: Tensor) -> Tensor:
        return self.k * x

    def in_a(self, x: Tensor) -> Tensor:
        return torch.zeros(x.shape[0], dtype=torch.bool)

    def in_b(self, x: Tensor) -> Tensor:
        return torch.zeros(x.shape[0], dtype=torch.bool)

    def sample_boundary(
        self, which: Which, n: int, generator: torch.Generator
    ) -> Tensor:
        raise UnsupportedError("QuadraticWell has no metastable sets")


class DoubleWell(Potential):
    """
    ``V = h (x1^2 - 1)^2 + x2^2 / 2 + ...`` with A, B discs around x1 = -1, +1.
    """

    def __init__(
        self, dim: int = 2, height: float = 5.0, beta: float = 1.0, radius: float = 0.2
    ) -> None:
        super().__init__(dim, beta, [-2.0] + [-2.0] * (dim - 1), [2.0] + [2.0] * (dim - 1))
        self.height = height
        self.radius = radius

    def energy(self, x: Tensor) -> Tensor:
        return self.height * (x[:, 0] ** 2 - 1.0) ** 2 + 0.5 * (x[:, 1:] ** 2).sum(dim=-1)

    def gradient(self, x: Tensor) -> Tensor:
        g0 = 4.0 * self.height * x[:, 0] * (x[:, 0] ** 2 - 1.0)
        return torch.cat([g0.unsqueeze(-1), x[:, 1:]], dim=-1)

    def _distance(self, x: Tensor, center: float) -> Tensor:
        shifted = x.clone()
        shifted[:, 0] = shifted[:, 0] - center
        return torch.linalg.vector_norm(shifted, dim=-1)

    def in_a(self, x: Tensor) -> Tensor:
        return self._distance(x, -1.0) <= self.radius * (1 + MEMBERSHIP_SLACK)

    def in_b(self, x: Tensor) -> Tensor:
        return self._distance(x, 1.0) <= self.radius * (1 + MEMBERSHIP_SLACK)

    def sample_boundary(
        self, which: Which, n: int, generator: torch.Generator
    ) -> Tensor:
        g = torch.randn(n, self.dim, generator=generator, dtype=torch.float64)
        g = g / torch.linalg.vector_norm(g, dim=-1, keepdim=True)
        x = self.radius * g
        x[:, 0] = x[:, 0] + (-1.0 if which == "A" else 1.0)
        return x


PotentialFactory = Callable[..., Potential]

POTENTIALS: Dict[str, PotentialFactory] = {
    "rugged-mueller": RuggedMueller,
    "brownian-annulus": BrownianAnnulus,
    "free-interval": FreeInterval,
    "quadratic": QuadraticWell,
    "double-well": DoubleWell,
}
