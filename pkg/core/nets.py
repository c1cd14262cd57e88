"""
Committor network and autoencoder.

Layer counts follow the weight-layer convention: a "four-layer" network
with 100 neurons on a 10-D input has widths ``[10, 100, 100, 100, 1]``.
"""

from __future__ import annotations

# Core Imports
from typing import List, Literal, Optional, Sequence, Tuple

# Third Party Imports
import torch
from torch import nn

# Local Imports
from .autodiff import Tensor, input_gradient
from .errors import DimensionError

HiddenActivation = Literal["tanh", "tanh2"]
AutoencoderActivation = Literal["swish", "linear"]


class SquaredTanh(nn.Module):
    def forward(self, x: Tensor) -> Tensor:
        return torch.tanh(x) ** 2


def _hidden(activation: HiddenActivation) -> nn.Module:
    if activation == "tanh":
        return nn.Tanh()
    if activation == "tanh2":
        return SquaredTanh()
    raise ValueError(f"Unknown hidden activation '{activation}'")


def glorot_uniform(layer: nn.Linear, generator: Optional[torch.Generator]) -> None:
    fan_out, fan_in = layer.weight.shape
    bound = (6.0 / (fan_in + fan_out)) ** 0.5
    with torch.no_grad():
        layer.weight.copy_(
            (torch.rand(layer.weight.shape, generator=generator, dtype=torch.float64) * 2.0 - 1.0) * bound
        )
        layer.bias.zero_()


def committor_widths(dim: int, neurons: int, layers: int) -> List[int]:
    """Widths for a ``layers``-weight-layer net with ``neurons`` per hidden layer"""
    return [dim] + [neurons] * (layers - 1) + [1]


class CommittorNet(nn.Module):
    """Fully connected ``q_theta(x)`` with a sigmoid output in (0, 1)"""

    widths: List[int]
    activation: HiddenActivation

    def __init__(
        self,
        widths: Sequence[int],
        activation: HiddenActivation = "tanh",
        *,
        generator: Optional[torch.Generator] = None,
        zero_output: bool = False,
    ) -> None:
        super().__init__()
        if len(widths) < 2 or widths[-1] != 1:
            raise ValueError(f"Committor widths must end in 1, got {list(widths)}")
        self.widths = list(widths)
        self.activation = activation

        modules: List[nn.Module] = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            layer = nn.Linear(fan_in, fan_out, dtype=torch.float64)
            glorot_uniform(layer, generator)
            modules.append(layer)
            if i < len(widths) - 2:
                modules.append(_hidden(activation))
        self.body = nn.Sequential(*modules)

        if zero_output:
            last = modules[-1]
            assert isinstance(last, nn.Linear)
            with torch.no_grad():
                last.weight.zero_()
                last.bias.zero_()

    @property
    def dim(self) -> int:
        return self.widths[0]

    def _check(self, x: Tensor) -> None:
        if x.dim() != 2 or x.shape[1] != self.dim:
            got = int(x.shape[-1]) if x.dim() > 0 else 0
            raise DimensionError(self.dim, got, "CommittorNet")

    def logits(self, x: Tensor) -> Tensor:
        self._check(x)
        return self.body(x).squeeze(-1)

    def forward(self, x: Tensor) -> Tensor:
        return torch.sigmoid(self.logits(x))

    def input_gradient(self, x: Tensor, *, create_graph: bool = True) -> Tensor:
        """``grad_x q(x)`` per sample, left on the tape for the parameter gradient"""
        self._check(x)
        _, g = input_gradient(self.forward, x, create_graph=create_graph)
        return g

    def value_and_gradient(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        self._check(x)
        return input_gradient(self.forward, x)


class Autoencoder(nn.Module):
    """Encoder ``s(x)`` and decoder ``S(s)`` built from fully connected layers"""

    encoder_widths: List[int]
    decoder_widths: List[int]

    def __init__(
        self,
        encoder_widths: Sequence[int],
        decoder_widths: Sequence[int],
        activation: AutoencoderActivation = "swish",
        *,
        generator: Optional[torch.Generator] = None,
    ) -> None:
        super().__init__()
        if encoder_widths[-1] != decoder_widths[0]:
            raise ValueError("Encoder output and decoder input widths must agree")
        if encoder_widths[0] != decoder_widths[-1]:
            raise ValueError("Decoder output width must equal the input width")
        self.encoder_widths = list(encoder_widths)
        self.decoder_widths = list(decoder_widths)
        self.activation = activation
        self.encoder = self._stack(encoder_widths, activation, generator)
        self.decoder = self._stack(decoder_widths, activation, generator)

    @staticmethod
    def _stack(
        widths: Sequence[int],
        activation: AutoencoderActivation,
        generator: Optional[torch.Generator],
    ) -> nn.Sequential:
        modules: List[nn.Module] = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            layer = nn.Linear(fan_in, fan_out, dtype=torch.float64)
            glorot_uniform(layer, generator)
            modules.append(layer)
            if i < len(widths) - 2 and activation == "swish":
                # SiLU is x * sigmoid(x)
                modules.append(nn.SiLU())
        return nn.Sequential(*modules)

    @property
    def input_dim(self) -> int:
        return self.encoder_widths[0]

    @property
    def latent_dim(self) -> int:
        return self.encoder_widths[-1]

    def encode(self, x: Tensor) -> Tensor:
        if x.dim() != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(self.input_dim, int(x.shape[-1]), "Autoencoder.encode")
        return self.encoder(x)

    def decode(self, s: Tensor) -> Tensor:
        if s.dim() != 2 or s.shape[1] != self.latent_dim:
            raise DimensionError(self.latent_dim, int(s.shape[-1]), "Autoencoder.decode")
        return self.decoder(s)

    def forward(self, x: Tensor) -> Tensor:
        return self.decode(self.encode(x))
