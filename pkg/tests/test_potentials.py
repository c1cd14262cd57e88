# Core Imports
import math
import os

# Third Party Imports
import pytest
import torch

# Local Imports
from core.errors import DimensionError, DomainError, UnsupportedError
from core.potentials import (
    POTENTIALS,
    BrownianAnnulus,
    DoubleWell,
    FreeInterval,
    MuellerParameters,
    Potential,
    QuadraticWell,
    RuggedMueller,
)

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def uniform_in_box(potential: Potential, n: int, gen: torch.Generator) -> torch.Tensor:
    u = torch.rand(n, potential.dim, generator=gen, dtype=torch.float64)
    return potential.lower + (potential.upper - potential.lower) * u


def test_rugged_mueller_gradient_matches_autograd(gen: torch.Generator) -> None:
    potential = RuggedMueller(dim=10)
    x = uniform_in_box(potential, 64, gen)
    analytic = potential.gradient(x)
    automatic = Potential.gradient(potential, x)
    assert torch.allclose(analytic, automatic, rtol=1e-10, atol=1e-8)


def test_smooth_mueller_minimum() -> None:
    potential = RuggedMueller(dim=2, params=MuellerParameters(gamma=0.0))
    v = potential.energy(torch.tensor([[-0.558, 1.442]], dtype=torch.float64))
    assert float(v) == pytest.approx(-146.7, abs=0.1)


def test_extended_coordinates_are_harmonic() -> None:
    potential = RuggedMueller(dim=4)
    base = torch.tensor([[0.1, 0.2, 0.0, 0.0]], dtype=torch.float64)
    shifted = torch.tensor([[0.1, 0.2, 0.05, -0.05]], dtype=torch.float64)
    gap = float(potential.energy(shifted) - potential.energy(base))
    assert gap == pytest.approx((0.05**2 + 0.05**2) / (2 * 0.05**2))


@pytest.mark.parametrize("which", ["A", "B"])
def test_rugged_mueller_boundary_points_are_in_their_set(which: str, gen: torch.Generator) -> None:
    potential = RuggedMueller(dim=10)
    x = potential.sample_boundary(which, 200, gen)  # type: ignore[arg-type]
    member = potential.in_a(x) if which == "A" else potential.in_b(x)
    assert bool(member.all())
    assert bool(potential.contains(x).all())


def test_annulus_reference_committor_at_midpoint() -> None:
    potential = BrownianAnnulus(dim=20)
    x = torch.zeros(1, 20, dtype=torch.float64)
    x[0, 0] = 1.5
    expected = (1 - 1.5**-18) / (1 - 2.0**-18)
    assert float(potential.reference_committor(x)) == pytest.approx(expected, rel=1e-12)


def test_annulus_reference_committor_boundary_values(gen: torch.Generator) -> None:
    potential = BrownianAnnulus(dim=5, inner=0.5, outer=3.0)
    a = potential.sample_boundary("A", 10, gen)
    b = potential.sample_boundary("B", 10, gen)
    assert torch.allclose(potential.reference_committor(a), torch.zeros(10, dtype=torch.float64), atol=1e-12)
    assert torch.allclose(potential.reference_committor(b), torch.ones(10, dtype=torch.float64), atol=1e-12)


def test_annulus_reference_committor_needs_three_dimensions() -> None:
    with pytest.raises(UnsupportedError):
        BrownianAnnulus(dim=2).reference_committor(torch.ones(1, 2, dtype=torch.float64))


def test_annulus_uniform_samples(gen: torch.Generator) -> None:
    potential = BrownianAnnulus(dim=20)
    x, log_density = potential.sample_interior_uniform(1000, gen)
    r = potential.radius(x)
    assert x.shape == (1000, 20)
    assert bool(((r > 1.0) & (r < 2.0)).all())
    assert log_density == pytest.approx(-math.log(potential.annulus_volume))
    # Uniform in the annulus: P(r <= 1.9) = (1.9^20 - 1) / (2^20 - 1)
    inner_share = float((r <= 1.9).double().mean())
    assert inner_share == pytest.approx((1.9**20 - 1) / (2**20 - 1), abs=0.05)


def test_rejection_uniform_samples_avoid_the_sets(gen: torch.Generator) -> None:
    potential = DoubleWell()
    x, log_density = potential.sample_interior_uniform(500, gen)
    assert x.shape == (500, 2)
    assert not bool(potential.in_ab(x).any())
    assert log_density > -math.log(potential.volume)


def test_evaluate_checks_domain_and_dimension() -> None:
    potential = RuggedMueller(dim=2)
    with pytest.raises(DomainError):
        potential.evaluate(torch.tensor([[5.0, 0.0]], dtype=torch.float64))
    with pytest.raises(DimensionError):
        potential.evaluate(torch.zeros(1, 3, dtype=torch.float64))


def test_reflect_mirrors_into_the_box() -> None:
    potential = FreeInterval(margin=0.5)
    x = torch.tensor([[1.7], [-0.8], [0.3]], dtype=torch.float64)
    assert torch.allclose(potential.reflect(x), torch.tensor([[1.3], [-0.2], [0.3]], dtype=torch.float64))


def test_membership_is_closed() -> None:
    potential = FreeInterval()
    x = torch.tensor([[0.0], [1.0], [0.5]], dtype=torch.float64)
    assert potential.in_a(x).tolist() == [True, False, False]
    assert potential.in_b(x).tolist() == [False, True, False]


def test_quadratic_well_has_no_boundary() -> None:
    with pytest.raises(UnsupportedError):
        QuadraticWell().sample_boundary("A", 1, torch.Generator())


def test_unknown_mueller_parameter_is_rejected() -> None:
    with pytest.raises(KeyError):
        MuellerParameters.from_mapping({"gama": 1.0})


def test_shipped_parameter_file_matches_defaults() -> None:
    loaded = MuellerParameters.from_file(os.path.join(CONFIGS, "potentials", "rugged_mueller.yaml"))
    assert loaded == MuellerParameters()


def test_registry_builds_every_potential() -> None:
    for name, factory in POTENTIALS.items():
        assert isinstance(factory(), Potential), name
