# Core Imports
import dataclasses
from typing import Any, Dict

# Third Party Imports
import pytest
import torch

# Local Imports
from core.density import sampling_density_unnorm
from core.errors import CommittorError, ConfigError, FilterError
from core.flow import FlowModel
from core.latent import (
    LatentConfig,
    LatentPipeline,
    decode_and_filter,
    latent_box,
    latent_ce_weights,
    parameter_digest,
    train_autoencoder,
)
from core.nets import Autoencoder, CommittorNet
from core.potentials import QuadraticWell


def identity_pipeline(threshold: float, box: bool = False) -> LatentPipeline:
    """Pipeline whose autoencoder is the identity on the plane"""
    autoencoder = Autoencoder([2, 2], [2, 2], "linear")
    with torch.no_grad():
        for stack in (autoencoder.encoder, autoencoder.decoder):
            layer = stack[0]
            assert isinstance(layer, torch.nn.Linear)
            layer.weight.copy_(torch.eye(2, dtype=torch.float64))
            layer.bias.zero_()
    flow = FlowModel(
        2, blocks=1, couplings_per_block=2, width=4,
        box=([-2.0, -2.0], [2.0, 2.0]) if box else None,
    )
    return LatentPipeline(autoencoder, flow, QuadraticWell(dim=2), threshold)


def test_config_widths_mirror_the_encoder() -> None:
    config = LatentConfig(hidden=[64, 32], latent_dim=2)
    assert config.widths(10) == ([10, 64, 32, 2], [2, 32, 64, 10])


@pytest.mark.parametrize(
    "changes, path",
    [
        ({"mode": "pca"}, "latent.mode"),
        ({"latent_dim": 1}, "latent.latent_dim"),
        ({"cv_dims": [0]}, "latent.cv_dims"),
        ({"min_acceptance": 1.5}, "latent.min_acceptance"),
        ({"activation": "relu"}, "latent.activation"),
    ],
)
def test_config_validation_names_the_key(changes: Dict[str, Any], path: str) -> None:
    with pytest.raises(ConfigError) as info:
        dataclasses.replace(LatentConfig(), **changes)
    assert info.value.path == path


def test_autoencoder_training_freezes_the_model(gen: torch.Generator) -> None:
    t = torch.linspace(-1.0, 1.0, 256, dtype=torch.float64).unsqueeze(-1)
    data = torch.cat([t, 0.5 * t], dim=-1)
    result = train_autoencoder(
        data, [2, 1], [1, 2], epochs=60, batch_size=32, lr=1e-2, generator=gen, activation="linear"
    )
    assert len(result.trace) == 60
    assert result.trace[-1] < result.trace[0]
    assert result.mse < 1e-2
    assert not any(p.requires_grad for p in result.model.parameters())
    assert not result.model.training


def test_autoencoder_rejects_a_wider_latent_space(gen: torch.Generator) -> None:
    with pytest.raises(ValueError):
        train_autoencoder(
            torch.zeros(4, 2, dtype=torch.float64), [2, 3], [3, 2],
            epochs=1, batch_size=2, lr=1e-3, generator=gen,
        )


def test_pipeline_detects_changed_parameters() -> None:
    pipeline = identity_pipeline(1.0)
    pipeline.check_frozen()
    before = parameter_digest(pipeline.autoencoder)
    with torch.no_grad():
        next(pipeline.autoencoder.parameters()).add_(1e-3)
    assert parameter_digest(pipeline.autoencoder) != before
    with pytest.raises(CommittorError):
        pipeline.check_frozen()


def test_energy_filter_keeps_low_energy_points() -> None:
    pipeline = identity_pipeline(threshold=1.0)
    # V = |x|^2 / 2: energies 0, 4.5, 0.125, 8
    s = torch.tensor([[0.0, 0.0], [3.0, 0.0], [0.5, 0.0], [0.0, 4.0]], dtype=torch.float64)
    batch = decode_and_filter(pipeline, s, torch.arange(4, dtype=torch.float64))
    assert batch.acceptance == 0.5
    assert batch.x.tolist() == [[0.0, 0.0], [0.5, 0.0]]
    assert batch.log_density.tolist() == [0.0, 2.0]
    assert bool((pipeline.potential.energy(batch.x) <= 1.0).all())
    assert (pipeline.accepted, pipeline.rejected) == (2, 2)
    assert pipeline.acceptance == 0.5


def test_decoded_points_outside_the_box_are_rejected() -> None:
    pipeline = identity_pipeline(threshold=1e9)
    s = torch.tensor([[60.0, 0.0], [1.0, 1.0]], dtype=torch.float64)
    batch = decode_and_filter(pipeline, s)
    assert batch.x.tolist() == [[1.0, 1.0]]


def test_filter_error_carries_an_energy_histogram() -> None:
    pipeline = identity_pipeline(threshold=-1.0)
    s = torch.tensor([[1.0, 0.0], [2.0, 0.0]], dtype=torch.float64)
    with pytest.raises(FilterError) as info:
        decode_and_filter(pipeline, s)
    assert info.value.threshold == -1.0
    assert sum(info.value.counts) == 2
    assert len(info.value.edges) == len(info.value.counts) + 1


def test_latent_box_pads_each_side() -> None:
    encoded = torch.tensor([[0.0, 0.0], [1.0, 2.0]], dtype=torch.float64)
    assert latent_box(encoded, padding=0.25) == ([-0.25, -0.5], [1.25, 2.5])


def test_latent_weights_divide_by_the_previous_flow(gen: torch.Generator) -> None:
    pipeline = identity_pipeline(threshold=10.0, box=True)
    net = CommittorNet([2, 4, 1], generator=gen)
    x = torch.tensor([[0.1, 0.2], [-1.0, 0.5], [3.0, 0.0]], dtype=torch.float64)
    s, weights, dropped = latent_ce_weights(x, net, pipeline.potential, pipeline, pipeline.flow)
    assert dropped == 1
    assert torch.equal(s, x[:2])
    with torch.no_grad():
        expected = sampling_density_unnorm(net, pipeline.potential, x[:2]) * torch.exp(
            -pipeline.flow.log_density(x[:2])
        )
    assert torch.allclose(weights, expected, rtol=1e-12)


def test_autoencoder_recovers_a_plane_in_ten_dimensions() -> None:
    g = torch.Generator().manual_seed(4)
    basis, _ = torch.linalg.qr(torch.randn(10, 2, generator=g, dtype=torch.float64))
    coefficients = 2.0 * torch.rand(512, 2, generator=g, dtype=torch.float64) - 1.0
    data = coefficients @ basis.T
    result = train_autoencoder(
        data, [10, 2], [2, 10], epochs=400, batch_size=64, lr=5e-3, generator=g, activation="linear"
    )
    assert result.model.encode(data).shape == (512, 2)
    assert result.mse < 1e-3
