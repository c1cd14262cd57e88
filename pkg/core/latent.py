"""
Latent collective variables learned by an autoencoder, and the plumbing that
turns latent flow samples back into configurations.

The autoencoder is trained once on the initial data and then frozen; every
adaptive stage checks its parameter digest so an accidental update is caught.
"""

from __future__ import annotations

# Core Imports
import hashlib
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

# Third Party Imports
import numpy as np
import torch

# Local Imports
from utils.logger import Logger
from .autodiff import Tensor
from .density import BiasFn, sampling_density_unnorm
from .errors import CommittorError, ConfigError, FilterError, TrainingDivergedError
from .flow import FlowModel
from .nets import Autoencoder, AutoencoderActivation, CommittorNet
from .potentials import Potential

logger = Logger("core/latent")

LATENT_MODES = ("autoencoder", "umbrella")


@dataclass(frozen=True)
class LatentConfig:
    """
    Settings for adaptive sampling on collective variables.

    ``autoencoder`` mode learns the CVs; ``umbrella`` mode uses the
    coordinates in ``cv_dims`` and relaxes configurations onto sampled CVs.
    """

    mode: str = "autoencoder"
    latent_dim: int = 2
    hidden: List[int] = field(default_factory=lambda: [64, 64])
    activation: str = "swish"
    ae_epochs: int = 200
    ae_batch_size: int = 256
    ae_lr: float = 1e-3
    energy_threshold: float = 100.0
    min_acceptance: float = 0.5
    bounded: bool = True
    box_padding: float = 0.25
    prefit_epochs: int = 50
    cv_dims: List[int] = field(default_factory=lambda: [0, 1])
    k_us_start: float = 200.0
    k_us_end: float = 2000.0
    n_keep: int = 100
    dt: float = 1e-5
    windows: int = 10
    steps_per_window: int = 100
    burn_in: int = 100
    max_steps: int = 20_000

    def __post_init__(self) -> None:
        if self.mode not in LATENT_MODES:
            raise ConfigError("latent.mode", f"must be one of {LATENT_MODES}")
        if self.activation not in ("swish", "linear"):
            raise ConfigError("latent.activation", "must be 'swish' or 'linear'")
        if self.latent_dim < 2:
            raise ConfigError("latent.latent_dim", "coupling flows need at least two CVs")
        if not 0 <= self.min_acceptance <= 1:
            raise ConfigError("latent.min_acceptance", "must lie in [0, 1]")
        if len(self.cv_dims) < 2:
            raise ConfigError("latent.cv_dims", "coupling flows need at least two CVs")
        if self.k_us_start <= 0 or self.k_us_end <= 0:
            raise ConfigError("latent.k_us_start", "force constants must be > 0")

    def widths(self, input_dim: int) -> Tuple[List[int], List[int]]:
        """Encoder and decoder widths; the decoder mirrors the encoder"""
        encoder = [input_dim, *self.hidden, self.latent_dim]
        return encoder, list(reversed(encoder))


@dataclass
class AutoencoderResult:
    model: Autoencoder
    mse: float
    trace: List[float] = field(default_factory=lambda: [])


def parameter_digest(module: torch.nn.Module) -> str:
    """SHA-256 over every parameter and buffer, in state-dict order"""
    h = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def freeze(module: torch.nn.Module) -> None:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)


def train_autoencoder(
    data: Tensor,
    encoder_widths: Sequence[int],
    decoder_widths: Sequence[int],
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    generator: torch.Generator,
    activation: AutoencoderActivation = "swish",
) -> AutoencoderResult:
    """
    Minimize the mean squared reconstruction error, then freeze the model.

    :raises TrainingDivergedError: if an epoch ends with a non-finite loss
    """
    if data.shape[0] == 0:
        raise ValueError("Autoencoder training needs data")
    if encoder_widths[-1] > encoder_widths[0]:
        raise ValueError("Latent dimension must not exceed the input dimension")

    model = Autoencoder(encoder_widths, decoder_widths, activation, generator=generator)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    n = data.shape[0]
    trace: List[float] = []
    for epoch in range(epochs):
        order = torch.randperm(n, generator=generator)
        total = 0.0
        for start in range(0, n, batch_size):
            batch = data[order[start : start + batch_size]]
            loss = ((model(batch) - batch) ** 2).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * batch.shape[0]
        mse = total / n
        if not math.isfinite(mse):
            raise TrainingDivergedError("autoencoder", epoch)
        trace.append(mse)

    with torch.no_grad():
        mse = float(((model(data) - data) ** 2).mean())
    freeze(model)
    logger.info(f"autoencoder trained: {epochs} epochs, MSE={mse:.3e}")
    return AutoencoderResult(model, mse, trace)


def energy_histogram(energy: Tensor, bins: int = 20) -> Tuple[List[float], List[int]]:
    values = energy[torch.isfinite(energy)].detach().numpy()
    if values.size == 0:
        return [], []
    counts, edges = np.histogram(values, bins=bins)
    return edges.tolist(), counts.tolist()


@dataclass
class LatentPipeline:
    """
    A frozen autoencoder, a flow on its latent space and the energy filter.

    ``accepted`` and ``rejected`` count decoded samples over the pipeline's
    lifetime; the filter never lets a sample with ``V > threshold`` through.
    """

    autoencoder: Autoencoder
    flow: FlowModel
    potential: Potential
    threshold: float
    accepted: int = 0
    rejected: int = 0
    digest: str = ""

    def __post_init__(self) -> None:
        freeze(self.autoencoder)
        self.reset_digest()

    def reset_digest(self) -> None:
        self.digest = parameter_digest(self.autoencoder)

    def check_frozen(self) -> None:
        if parameter_digest(self.autoencoder) != self.digest:
            raise CommittorError("Autoencoder parameters changed while frozen")

    @torch.no_grad()
    def encode(self, x: Tensor) -> Tensor:
        return self.autoencoder.encode(x)

    @torch.no_grad()
    def decode(self, s: Tensor) -> Tensor:
        return self.autoencoder.decode(s)

    @property
    def acceptance(self) -> float:
        seen = self.accepted + self.rejected
        return self.accepted / seen if seen else 0.0


@torch.no_grad()
def latent_box(encoded: Tensor, padding: float = 0.25) -> Tuple[List[float], List[float]]:
    """Bounding box of encoded samples widened by ``padding`` of its extent per side"""
    lo = encoded.min(dim=0).values
    hi = encoded.max(dim=0).values
    pad = padding * (hi - lo).clamp_min(1e-6)
    return (lo - pad).tolist(), (hi + pad).tolist()


def latent_ce_weights(
    x: Tensor,
    net: CommittorNet,
    potential: Potential,
    pipeline: LatentPipeline,
    prev_flow: FlowModel,
    *,
    beta: Optional[float] = None,
    bias: Optional[BiasFn] = None,
) -> Tuple[Tensor, Tensor, int]:
    """
    Cross-entropy weights for the latent flow from configuration samples.

    Each ``x_i`` is encoded to ``s_i`` and weighted by
    ``p_Vq(x_i) / p_prev(s_i)``, the configuration-space target standing in
    for its value at the CVs. Returns the kept latents, their weights and the
    number of samples dropped for a non-finite weight.
    """
    s = pipeline.encode(x)
    target = sampling_density_unnorm(net, potential, x, beta=beta, bias=bias)
    with torch.no_grad():
        inside = prev_flow.contains(s)
        log_prev = torch.full_like(target, math.inf)
        if bool(inside.any()):
            log_prev[inside] = prev_flow.log_density(s[inside])
        weights = target * torch.exp(-log_prev)
    valid = torch.isfinite(weights) & (weights >= 0) & inside
    dropped = int((~valid).sum())
    if dropped:
        logger.debug(f"latent weights: dropped {dropped}/{x.shape[0]} samples")
    return s[valid], weights[valid], dropped


@dataclass
class DecodedBatch:
    x: Tensor
    s: Tensor
    log_density: Tensor
    acceptance: float
    energies: Tensor


@torch.no_grad()
def decode_and_filter(
    pipeline: LatentPipeline, s: Tensor, log_density: Optional[Tensor] = None
) -> DecodedBatch:
    """
    Decode latent samples and keep those inside the box with ``V <= threshold``.

    The acceptance fraction counts decoded points outside the box as
    rejected. Points in A or B are left in place; callers drop them.

    :raises FilterError: when nothing passes, with a histogram of the
        decoded energies attached
    """
    if not bool(torch.isfinite(s).all()):
        raise ValueError("Latent samples must be finite")
    x = pipeline.decode(s)
    energy = pipeline.potential.energy(x)
    keep = pipeline.potential.contains(x) & (energy <= pipeline.threshold)
    accepted = int(keep.sum())
    pipeline.accepted += accepted
    pipeline.rejected += s.shape[0] - accepted
    if accepted == 0:
        edges, counts = energy_histogram(energy)
        raise FilterError(pipeline.threshold, edges, counts)
    lp = log_density if log_density is not None else torch.zeros(s.shape[0], dtype=s.dtype)
    return DecodedBatch(x[keep], s[keep], lp[keep], accepted / s.shape[0], energy)
