# Core Imports
import json
import math
from pathlib import Path

# Third Party Imports
import pytest
import torch

# Local Imports
from core.density import estimate_log_normalizer, gibbs_log_ratio, sampling_density_unnorm
from core.errors import EmptyIsosurfaceError, MetricError
from core.eval import (
    concentration_fraction,
    extract_isosurface,
    histogram,
    mc_committor,
    norm_histogram,
    relative_l2,
    validation_curve,
    write_histogram,
)
from core.nets import CommittorNet
from core.potentials import BrownianAnnulus, FreeInterval, QuadraticWell


def sigmoid_net(weight: float = 1.0, bias: float = 0.0) -> CommittorNet:
    """One linear layer: ``q(x) = sigmoid(weight * x + bias)``"""
    net = CommittorNet([1, 1])
    layer = net.body[0]
    assert isinstance(layer, torch.nn.Linear)
    with torch.no_grad():
        layer.weight.fill_(weight)
        layer.bias.fill_(bias)
    return net


def test_relative_l2() -> None:
    ref = torch.tensor([3.0, 4.0], dtype=torch.float64)
    assert relative_l2(torch.zeros(2, dtype=torch.float64), ref) == 1.0
    assert relative_l2(ref.clone(), ref) == 0.0


def test_relative_l2_rejects_bad_input() -> None:
    with pytest.raises(MetricError):
        relative_l2(torch.zeros(2, dtype=torch.float64), torch.zeros(3, dtype=torch.float64))
    with pytest.raises(MetricError):
        relative_l2(torch.ones(2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64))


def test_validation_curve_spans_the_annulus() -> None:
    potential = BrownianAnnulus(dim=20)
    curve = validation_curve(potential, 5000)
    assert curve.shape == (5000, 20)
    r = potential.radius(curve)
    assert float(r[0]) == pytest.approx(1.0)
    assert float(r[-1]) == pytest.approx(2.0)
    q = potential.reference_committor(curve)
    assert float(q[0]) == pytest.approx(0.0, abs=1e-12)
    assert float(q[-1]) == pytest.approx(1.0, abs=1e-12)
    assert bool((q[1:] >= q[:-1]).all())


def test_isosurface_is_sorted_by_distance_to_one_half() -> None:
    pool = torch.tensor([[-0.3], [0.05], [2.0], [-0.01]], dtype=torch.float64)
    points = extract_isosurface(sigmoid_net(), pool, 0.1)
    assert points.reshape(-1).tolist() == [-0.01, 0.05, -0.3]
    capped = extract_isosurface(sigmoid_net(), pool, 0.1, max_points=2)
    assert capped.reshape(-1).tolist() == [-0.01, 0.05]


def test_empty_isosurface_names_the_tolerance() -> None:
    with pytest.raises(EmptyIsosurfaceError) as info:
        extract_isosurface(sigmoid_net(), torch.tensor([[3.0]], dtype=torch.float64), 0.01)
    assert info.value.tol == 0.01
    assert info.value.pool_size == 1


def test_histogram_counts_and_edges() -> None:
    payload = histogram(torch.tensor([0.1, 0.2, 0.9], dtype=torch.float64), 2, (0.0, 1.0))
    assert payload["counts"] == [2, 1]
    assert payload["edges"] == [0.0, 0.5, 1.0]


def test_norm_histogram_counts_every_sample(gen: torch.Generator) -> None:
    samples = torch.randn(300, 5, generator=gen, dtype=torch.float64)
    payload = norm_histogram(samples, bins=10)
    assert sum(payload["counts"]) == 300
    assert len(payload["edges"]) == 11


def test_concentration_fraction() -> None:
    samples = torch.tensor([[1.0, 0.0], [0.0, 1.5], [2.0, 0.0], [0.0, 1.9]], dtype=torch.float64)
    assert concentration_fraction(samples, 1.2, 1.8) == 0.25
    assert concentration_fraction(samples[:0], 1.2, 1.8) == 0.0


def test_write_histogram(tmp_path: Path) -> None:
    path = tmp_path / "histograms" / "h.json"
    write_histogram(str(path), {"edges": [0.0, 1.0], "counts": [4]})
    assert json.loads(path.read_text()) == {"edges": [0.0, 1.0], "counts": [4]}


def test_points_that_always_time_out_are_flagged(gen: torch.Generator) -> None:
    estimate = mc_committor(
        FreeInterval(), torch.tensor([[0.5]], dtype=torch.float64),
        n_traj=5, dt=1e-10, beta=1.0, generator=gen, max_steps=2,
    )
    assert estimate.flagged == [0]
    assert math.isnan(float(estimate.estimates[0]))
    assert int(estimate.timeouts[0]) == 5


def test_sampling_density_of_a_sigmoid_committor() -> None:
    potential = QuadraticWell(dim=1, k=2.0, beta=1.5)
    x = torch.tensor([[-1.0], [0.0], [0.7]], dtype=torch.float64)
    s = torch.sigmoid(x.reshape(-1))
    expected = (s * (1 - s)) ** 2 * torch.exp(-1.5 * x.reshape(-1) ** 2)
    got = sampling_density_unnorm(sigmoid_net(), potential, x, chunk=2)
    assert torch.allclose(got, expected, rtol=1e-12)


def test_gibbs_log_ratio() -> None:
    potential = QuadraticWell(dim=1, k=2.0, beta=0.5)
    x = torch.tensor([[1.0]], dtype=torch.float64)
    ratio = gibbs_log_ratio(potential, x, torch.tensor([-0.25], dtype=torch.float64), log_normalizer=1.0)
    assert float(ratio[0]) == pytest.approx(-0.5 - 1.0 + 0.25)


def test_log_normalizer_of_a_flat_interval(gen: torch.Generator) -> None:
    assert estimate_log_normalizer(FreeInterval(), gen, 100) == pytest.approx(0.0, abs=1e-12)
