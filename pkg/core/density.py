"""
Densities shared by the committor loss, flow training and the latent pipeline.
"""

from __future__ import annotations

# Core Imports
import math
from typing import Callable, Iterator, Optional

# Third Party Imports
import torch

# Local Imports
from .autodiff import Tensor
from .nets import CommittorNet
from .potentials import Potential

BiasFn = Callable[[Tensor], Tensor]


def _chunks(n: int, size: int) -> Iterator[slice]:
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def sampling_density_unnorm(
    net: CommittorNet,
    potential: Potential,
    x: Tensor,
    *,
    beta: Optional[float] = None,
    bias: Optional[BiasFn] = None,
    chunk: int = 4096,
) -> Tensor:
    """
    ``|grad q(x)|^2 exp(-beta (V + V_bias)(x))`` without a normalizing constant.

    Detached from every tape; evaluated in chunks of ``chunk`` points.
    """
    beta = potential.beta if beta is None else beta
    out = torch.empty(x.shape[0], dtype=x.dtype)
    for part in _chunks(x.shape[0], chunk):
        xs = x[part]
        g = net.input_gradient(xs, create_graph=False).detach()
        with torch.no_grad():
            energy = potential.energy(xs)
            if bias is not None:
                energy = energy + bias(xs)
            out[part] = (g**2).sum(dim=-1) * torch.exp(-beta * energy)
    return out


@torch.no_grad()
def gibbs_log_ratio(
    potential: Potential,
    x: Tensor,
    log_density: Tensor,
    *,
    beta: Optional[float] = None,
    log_normalizer: float = 0.0,
) -> Tensor:
    """``log( exp(-beta V(x)) / Z / p(x) )`` for samples with stored ``log p``"""
    beta = potential.beta if beta is None else beta
    return -beta * potential.energy(x) - log_normalizer - log_density


@torch.no_grad()
def estimate_log_normalizer(
    potential: Potential,
    generator: torch.Generator,
    n: int,
    *,
    beta: Optional[float] = None,
    bias: Optional[BiasFn] = None,
) -> float:
    """
    Uniform Monte Carlo estimate of ``log int exp(-beta (V + V_bias))`` over
    the box minus A and B.
    """
    beta = potential.beta if beta is None else beta
    x, log_uniform = potential.sample_interior_uniform(n, generator)
    energy = potential.energy(x)
    if bias is not None:
        energy = energy + bias(x)
    log_mean = torch.logsumexp(-beta * energy, dim=0) - math.log(x.shape[0])
    return float(log_mean) - log_uniform
