"""
Overdamped Langevin dynamics ``dX = -grad(V + V_bias) dt + sqrt(2 / beta) dW``.

Every routine runs a batch of independent walkers ``(n, d)`` in lock step and
draws its noise from the generator it is handed. Steps that leave the domain
box are mirrored back in; hits on A or B are tested on the unreflected
proposal so a walker crossing the box face inside a set still counts.
"""

from __future__ import annotations

# Core Imports
import math
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

# Third Party Imports
import numpy as np
import torch

# Local Imports
from utils.logger import Logger
from .autodiff import Tensor
from .errors import (
    DomainError,
    EmptyStageError,
    NonFiniteStateError,
    UmbrellaConvergenceError,
)
from .potentials import Potential

CVMap = Callable[[Tensor], Tensor]

HIT_A = 0
HIT_B = 1
TIMEOUT = -1
DEFAULT_MAX_STEPS = 10_000_000

logger = Logger("core/sde")


def identity_cv(dims: Sequence[int]) -> CVMap:
    """CV map that picks the given coordinates"""
    index = list(dims)

    def cvmap(x: Tensor) -> Tensor:
        return x[:, index]

    return cvmap


class Bias(ABC):
    """An additive bias potential ``V_bias(x)``"""

    @abstractmethod
    def value(self, x: Tensor) -> Tensor: ...

    def gradient(self, x: Tensor) -> Tensor:
        with torch.enable_grad():
            x = x.detach().requires_grad_(True)
            (g,) = torch.autograd.grad(self.value(x).sum(), [x], allow_unused=True)
        return torch.zeros_like(x) if g is None else g


class MetadynamicsBias(Bias):
    """
    Sum of Gaussians ``w_k exp(-|s(x) - s_k|^2 / (2 sigma_g^2))`` over deposits.

    With ``bias_factor`` set, deposit heights are tempered by the bias already
    present at the deposit point (well-tempered metadynamics).
    """

    def __init__(
        self,
        cvmap: CVMap,
        height: float,
        width: float,
        *,
        beta: float = 1.0,
        bias_factor: Optional[float] = None,
    ) -> None:
        if height < 0 or width <= 0:
            raise ValueError("Metadynamics needs height >= 0 and width > 0")
        if bias_factor is not None and bias_factor <= 1:
            raise ValueError("bias_factor must be > 1")
        self.cvmap = cvmap
        self.height = height
        self.width = width
        self.beta = beta
        self.bias_factor = bias_factor
        self.centers: List[Tensor] = []
        self.heights: List[Tensor] = []

    @property
    def deposits(self) -> int:
        return sum(int(c.shape[0]) for c in self.centers)

    def value_cv(self, s: Tensor) -> Tensor:
        if not self.centers:
            return s.new_zeros(s.shape[0]) + 0.0 * s.sum(dim=-1)
        centers = torch.cat(self.centers)
        heights = torch.cat(self.heights)
        sq = ((s.unsqueeze(1) - centers.unsqueeze(0)) ** 2).sum(dim=-1)
        return (heights * torch.exp(-sq / (2.0 * self.width**2))).sum(dim=-1)

    def value(self, x: Tensor) -> Tensor:
        return self.value_cv(self.cvmap(x))

    @torch.no_grad()
    def deposit(self, x: Tensor) -> None:
        """Add one Gaussian per walker at the walkers' current CVs"""
        s = self.cvmap(x).detach().clone()
        heights = torch.full((s.shape[0],), self.height, dtype=s.dtype)
        if self.bias_factor is not None:
            tempering = self.beta / (self.bias_factor - 1.0)
            heights = heights * torch.exp(-tempering * self.value_cv(s))
        self.centers.append(s)
        self.heights.append(heights)


class UmbrellaBias(Bias):
    """Harmonic restraint ``k_us / 2 * |s(x) - s_0|^2``"""

    def __init__(self, cvmap: CVMap, k: float, target: Tensor) -> None:
        self.cvmap = cvmap
        self.k = k
        self.target = target.detach().reshape(1, -1)

    def value(self, x: Tensor) -> Tensor:
        return 0.5 * self.k * ((self.cvmap(x) - self.target) ** 2).sum(dim=-1)


@dataclass
class EulerMaruyama:
    """One explicit step of the overdamped Langevin SDE"""

    potential: Potential
    dt: float
    beta: float
    bias: Optional[Bias] = None

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("Time step must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        self.noise_scale = 0.0 if math.isinf(self.beta) else math.sqrt(2.0 * self.dt / self.beta)

    def drift(self, x: Tensor) -> Tensor:
        g = self.potential.gradient(x)
        if self.bias is not None:
            g = g + self.bias.gradient(x)
        return -g

    def propose(self, x: Tensor, generator: torch.Generator) -> Tensor:
        """The unreflected next state"""
        noise = torch.randn(x.shape, generator=generator, dtype=x.dtype)
        return x + self.drift(x) * self.dt + self.noise_scale * noise

    def step(self, x: Tensor, generator: torch.Generator) -> Tensor:
        return self.potential.reflect(self.propose(x, generator))


@dataclass
class Trajectory:
    """Positions recorded every ``stride`` steps, shape ``(frames, walkers, d)``"""

    steps: List[int] = field(default_factory=lambda: [])
    frames: List[Tensor] = field(default_factory=lambda: [])

    @property
    def positions(self) -> Tensor:
        return torch.stack(self.frames)

    def flat(self) -> Tensor:
        """All recorded states as one ``(frames * walkers, d)`` batch"""
        return self.positions.reshape(-1, self.frames[0].shape[-1])


def _check_finite(x: Tensor, step: int) -> None:
    if not bool(torch.isfinite(x).all()):
        raise NonFiniteStateError(step)


@torch.no_grad()
def simulate(
    potential: Potential,
    x0: Tensor,
    steps: int,
    dt: float,
    beta: float,
    generator: torch.Generator,
    *,
    bias: Optional[Bias] = None,
    stride: int = 1,
    record_initial: bool = True,
) -> Trajectory:
    """Run ``steps`` Euler-Maruyama steps from ``x0`` and keep every ``stride``-th state"""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    x = x0.reshape(-1, potential.dim).clone()
    outside = int((~potential.contains(x)).sum())
    if outside:
        raise DomainError("simulate", outside)

    integrator = EulerMaruyama(potential, dt, beta, bias)
    trajectory = Trajectory()
    if record_initial:
        trajectory.steps.append(0)
        trajectory.frames.append(x.clone())
    for step in range(1, steps + 1):
        x = integrator.step(x, generator)
        _check_finite(x, step)
        if step % stride == 0:
            trajectory.steps.append(step)
            trajectory.frames.append(x.clone())
    return trajectory


@torch.no_grad()
def first_hit(
    potential: Potential,
    x0: Tensor,
    dt: float,
    beta: float,
    generator: torch.Generator,
    *,
    max_steps: int = DEFAULT_MAX_STEPS,
    bias: Optional[Bias] = None,
) -> Tensor:
    """
    Label of the set each walker enters first: ``HIT_A``, ``HIT_B`` or ``TIMEOUT``.

    Walkers already absorbed stop drawing noise; the generator is consumed
    only by the walkers still active, in batch order.
    """
    x = x0.reshape(-1, potential.dim).clone()
    if bool(potential.in_ab(x).any()):
        raise DomainError("first_hit start inside A or B", int(potential.in_ab(x).sum()))

    integrator = EulerMaruyama(potential, dt, beta, bias)
    labels = torch.full((x.shape[0],), TIMEOUT, dtype=torch.int64)
    active = torch.arange(x.shape[0])
    for step in range(1, max_steps + 1):
        if active.numel() == 0:
            break
        proposal = integrator.propose(x[active], generator)
        _check_finite(proposal, step)
        hit_a = potential.in_a(proposal)
        hit_b = potential.in_b(proposal) & ~hit_a
        labels[active[hit_a]] = HIT_A
        labels[active[hit_b]] = HIT_B
        x[active] = potential.reflect(proposal)
        active = active[~(hit_a | hit_b)]
    if active.numel():
        logger.warn(f"first_hit: {active.numel()} walkers timed out after {max_steps} steps")
    return labels


@dataclass
class MetadynamicsResult:
    samples: Tensor
    bias_values: Tensor
    bias: MetadynamicsBias
    steps: int


@torch.no_grad()
def metadynamics_run(
    potential: Potential,
    cvmap: CVMap,
    height: float,
    width: float,
    interval: int,
    total_deposits: int,
    dt: float,
    beta: float,
    generator: torch.Generator,
    *,
    x0: Tensor,
    steps: Optional[int] = None,
    stride: int = 1,
    bias_factor: Optional[float] = None,
) -> MetadynamicsResult:
    """
    Biased dynamics with a Gaussian deposited every ``interval`` steps.

    A deposit made at step ``t`` acts from step ``t + 1`` on. The run lasts
    ``steps`` steps (default ``interval * total_deposits``) and stops
    depositing once ``total_deposits`` are in. Recorded states inside A or B
    are dropped; each kept sample carries the final bias value at it.
    """
    if total_deposits < 0 or interval < 1:
        raise ValueError("Metadynamics needs total_deposits >= 0 and interval >= 1")
    steps = interval * max(total_deposits, 1) if steps is None else steps

    bias = MetadynamicsBias(cvmap, height, width, beta=beta, bias_factor=bias_factor)
    integrator = EulerMaruyama(potential, dt, beta, bias)
    x = x0.reshape(-1, potential.dim).clone()
    frames: List[Tensor] = []
    made = 0
    for step in range(1, steps + 1):
        x = integrator.step(x, generator)
        _check_finite(x, step)
        if step % stride == 0:
            frames.append(x.clone())
        if step % interval == 0 and made < total_deposits:
            bias.deposit(x)
            made += 1
    states = torch.cat(frames) if frames else x.new_zeros((0, potential.dim))
    samples = states[~potential.in_ab(states)]
    logger.debug(
        f"metadynamics: {steps} steps, {bias.deposits} deposits, "
        f"{samples.shape[0]}/{states.shape[0]} states outside A and B"
    )
    return MetadynamicsResult(samples, bias.value(samples), bias, steps)


@dataclass
class UmbrellaResult:
    samples: Tensor
    rms_distance: float
    tolerance: float
    steps: int


def umbrella_tolerance(beta: float, k_us: float) -> float:
    """Two standard deviations of the restraint's Gaussian width"""
    return 2.0 / math.sqrt(beta * k_us)


@torch.no_grad()
def umbrella_relax(
    potential: Potential,
    cvmap: CVMap,
    k_us: float,
    target_cvs: Tensor,
    x_init: Tensor,
    dt: float,
    beta: float,
    generator: torch.Generator,
    n_keep: int = 100,
    *,
    windows: int = 10,
    steps_per_window: int = 100,
    burn_in: int = 0,
    max_steps: int = 20_000,
    tolerance: Optional[float] = None,
) -> UmbrellaResult:
    """
    Pull ``n_keep`` copies of ``x_init`` onto ``target_cvs`` with a harmonic restraint.

    The restraint centre moves in ``windows`` equal steps from ``s(x_init)``
    to the target. After the final window each walker keeps the first state
    (at or after ``burn_in`` further steps) whose CV distance to the target is
    within ``tolerance``.
    """
    tol = umbrella_tolerance(beta, k_us) if tolerance is None else tolerance
    start = x_init.reshape(1, potential.dim)
    target = target_cvs.reshape(1, -1)
    x = start.repeat(n_keep, 1)
    s_init = cvmap(start)

    steps = 0
    if not bool(torch.allclose(s_init, target)):
        for w in range(1, windows + 1):
            centre = s_init + (target - s_init) * (w / windows)
            integrator = EulerMaruyama(potential, dt, beta, UmbrellaBias(cvmap, k_us, centre))
            for _ in range(steps_per_window):
                x = integrator.step(x, generator)
                steps += 1
                _check_finite(x, steps)

    integrator = EulerMaruyama(potential, dt, beta, UmbrellaBias(cvmap, k_us, target))
    kept = torch.zeros(n_keep, dtype=torch.bool)
    samples = x.clone()
    since = 0
    while True:
        if since >= burn_in:
            close = torch.linalg.vector_norm(cvmap(x) - target, dim=-1) <= tol
            fresh = close & ~kept
            samples[fresh] = x[fresh]
            kept |= fresh
            if bool(kept.all()):
                break
        if steps >= max_steps:
            distance = torch.linalg.vector_norm(cvmap(x) - target, dim=-1)
            achieved = float(torch.sqrt((distance**2).mean()))
            raise UmbrellaConvergenceError(achieved, tol, steps)
        x = integrator.step(x, generator)
        steps += 1
        since += 1
        _check_finite(x, steps)

    distance = torch.linalg.vector_norm(cvmap(samples) - target, dim=-1)
    return UmbrellaResult(samples, float(torch.sqrt((distance**2).mean())), tol, steps)


def write_trajectory_csv(
    path: str,
    trajectory: Trajectory,
    potential: Potential,
    bias: Optional[Bias] = None,
) -> None:
    """
    Dump a trajectory as CSV with header ``step,walker,x1..xd,V,bias``.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    rows: List[np.ndarray] = []
    for step, frame in zip(trajectory.steps, trajectory.frames):
        energy = potential.energy(frame)
        extra = bias.value(frame) if bias is not None else torch.zeros_like(energy)
        walkers = torch.arange(frame.shape[0], dtype=torch.float64)
        block = torch.cat(
            [
                torch.full((frame.shape[0], 1), float(step), dtype=torch.float64),
                walkers.unsqueeze(-1),
                frame,
                energy.unsqueeze(-1),
                extra.unsqueeze(-1),
            ],
            dim=-1,
        )
        rows.append(block.detach().numpy())
    coords = [f"x{i + 1}" for i in range(potential.dim)]
    header = ",".join(["step", "walker", *coords, "V", "bias"])
    fmt = ["%d", "%d"] + ["%.17g"] * (potential.dim + 2)
    np.savetxt(path, np.concatenate(rows), delimiter=",", header=header, comments="", fmt=fmt)


@torch.no_grad()
def sample_dynamics(
    potential: Potential,
    n: int,
    dt: float,
    beta: float,
    generator: torch.Generator,
    *,
    x0: Tensor,
    bias: Optional[Bias] = None,
    burn_in: int = 0,
    stride: int = 1,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> Tensor:
    """
    ``n`` states outside A and B collected from walkers started at ``x0``.

    After ``burn_in`` steps every walker contributes its state each
    ``stride`` steps, in walker order, until ``n`` states are in.
    """
    integrator = EulerMaruyama(potential, dt, beta, bias)
    x = x0.reshape(-1, potential.dim).clone()
    kept: List[Tensor] = []
    have = 0
    for step in range(1, max_steps + 1):
        x = integrator.step(x, generator)
        _check_finite(x, step)
        if step > burn_in and (step - burn_in) % stride == 0:
            outside = x[~potential.in_ab(x)]
            kept.append(outside.clone())
            have += int(outside.shape[0])
            if have >= n:
                break
    if have == 0:
        raise EmptyStageError("Dynamics produced no states outside A and B")
    if have < n:
        logger.warn(f"sample_dynamics: only {have}/{n} states after {max_steps} steps")
    return torch.cat(kept)[:n]
