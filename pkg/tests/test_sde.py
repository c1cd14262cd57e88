# Core Imports
import math
from pathlib import Path

# Third Party Imports
import pytest
import torch

# Local Imports
from core.errors import DomainError, EmptyStageError
from core.eval import mc_committor
from core.potentials import DoubleWell, FreeInterval, QuadraticWell
from core.sde import (
    HIT_A,
    HIT_B,
    TIMEOUT,
    MetadynamicsBias,
    UmbrellaBias,
    first_hit,
    identity_cv,
    metadynamics_run,
    sample_dynamics,
    simulate,
    umbrella_relax,
    umbrella_tolerance,
    write_trajectory_csv,
)


@pytest.mark.invariant
def test_free_interval_committor_at_midpoint(gen: torch.Generator) -> None:
    estimate = mc_committor(
        FreeInterval(), torch.tensor([[0.5]], dtype=torch.float64),
        n_traj=400, dt=1e-3, beta=1.0, generator=gen, max_steps=100_000,
    )
    q, se = float(estimate.estimates[0]), float(estimate.se[0])
    assert int(estimate.timeouts[0]) == 0
    assert abs(q - 0.5) <= 3 * se


@pytest.mark.invariant
def test_umbrella_restraint_width_matches_gaussian(gen: torch.Generator) -> None:
    # Free particle under k/2 x^2 samples N(0, 1/(beta k))
    k, beta = 100.0, 1.0
    potential = QuadraticWell(dim=1, k=0.0, beta=beta)
    bias = UmbrellaBias(identity_cv([0]), k, torch.zeros(1, dtype=torch.float64))
    x0 = torch.zeros(200, 1, dtype=torch.float64)
    trajectory = simulate(
        potential, x0, 3000, 1e-3, beta, gen, bias=bias, stride=50, record_initial=False
    )
    kept = trajectory.positions[10:].reshape(-1)
    predicted = 1.0 / math.sqrt(beta * k)
    measured = float(kept.std())
    assert predicted / 3 <= measured <= 3 * predicted


@pytest.mark.invariant
def test_metadynamics_bias_grows_with_deposits(gen: torch.Generator) -> None:
    bias = MetadynamicsBias(identity_cv([0, 1]), height=1.0, width=0.1)
    grid = 4 * torch.rand(500, 2, generator=gen, dtype=torch.float64) - 2
    previous = bias.value(grid)
    assert torch.equal(previous, torch.zeros(500, dtype=torch.float64))
    for _ in range(20):
        bias.deposit(2 * torch.rand(3, 2, generator=gen, dtype=torch.float64) - 1)
        current = bias.value(grid)
        assert bool((current >= 0).all())
        assert bool((current >= previous).all())
        previous = current
    assert bias.deposits == 60


def test_well_tempered_heights_shrink() -> None:
    bias = MetadynamicsBias(identity_cv([0]), height=1.0, width=0.1, beta=1.0, bias_factor=5.0)
    point = torch.zeros(1, 1, dtype=torch.float64)
    bias.deposit(point)
    bias.deposit(point)
    first, second = float(bias.heights[0][0]), float(bias.heights[1][0])
    assert first == 1.0
    assert second == pytest.approx(math.exp(-0.25))


def test_metadynamics_run_deposits_per_walker(gen: torch.Generator) -> None:
    x0 = torch.zeros(3, 2, dtype=torch.float64)
    result = metadynamics_run(
        DoubleWell(), identity_cv([0]), 1.0, 0.1, interval=10, total_deposits=5,
        dt=1e-3, beta=1.0, generator=gen, x0=x0,
    )
    assert result.steps == 50
    assert result.bias.deposits == 15
    assert result.samples.shape[0] == result.bias_values.shape[0]
    assert bool((result.bias_values >= 0).all())


def test_umbrella_relax_reaches_target(gen: torch.Generator) -> None:
    potential = QuadraticWell(dim=2, k=1.0)
    target = torch.tensor([1.0], dtype=torch.float64)
    result = umbrella_relax(
        potential, identity_cv([0]), 100.0, target,
        torch.zeros(2, dtype=torch.float64), 1e-3, 1.0, gen, n_keep=20,
    )
    assert result.samples.shape == (20, 2)
    assert result.tolerance == pytest.approx(umbrella_tolerance(1.0, 100.0))
    assert result.rms_distance <= result.tolerance
    assert bool(((result.samples[:, 0] - 1.0).abs() <= result.tolerance).all())


def test_first_hit_labels(gen: torch.Generator) -> None:
    x0 = torch.tensor([[0.01], [0.99], [0.5]], dtype=torch.float64)
    labels = first_hit(FreeInterval(), x0, 1e-4, 1.0, gen, max_steps=200_000)
    assert int(labels[0]) in (HIT_A, HIT_B) and int(labels[1]) in (HIT_A, HIT_B)
    stuck = first_hit(FreeInterval(), x0[2:], 1e-8, 1.0, gen, max_steps=3)
    assert stuck.tolist() == [TIMEOUT]


def test_first_hit_rejects_start_in_a_set(gen: torch.Generator) -> None:
    with pytest.raises(DomainError):
        first_hit(FreeInterval(), torch.tensor([[0.0]], dtype=torch.float64), 1e-3, 1.0, gen)


def test_simulate_rejects_start_outside_box(gen: torch.Generator) -> None:
    with pytest.raises(DomainError):
        simulate(DoubleWell(), torch.tensor([[3.0, 0.0]], dtype=torch.float64), 10, 1e-3, 1.0, gen)


def test_simulate_records_every_stride(gen: torch.Generator) -> None:
    trajectory = simulate(
        DoubleWell(), torch.zeros(4, 2, dtype=torch.float64), 10, 1e-3, 1.0, gen, stride=5
    )
    assert trajectory.steps == [0, 5, 10]
    assert trajectory.positions.shape == (3, 4, 2)
    assert trajectory.flat().shape == (12, 2)


def test_sample_dynamics_needs_states_outside_the_sets(gen: torch.Generator) -> None:
    # Zero temperature and zero force: the walker never leaves A
    with pytest.raises(EmptyStageError):
        sample_dynamics(
            FreeInterval(beta=math.inf), 5, 1e-3, math.inf, gen,
            x0=torch.tensor([[-0.2]], dtype=torch.float64), max_steps=5,
        )


def test_sample_dynamics_collects_requested_count(gen: torch.Generator) -> None:
    x = sample_dynamics(
        DoubleWell(), 50, 1e-3, 1.0, gen,
        x0=torch.zeros(10, 2, dtype=torch.float64), burn_in=10, stride=2,
    )
    assert x.shape == (50, 2)
    assert not bool(DoubleWell().in_ab(x).any())


def test_trajectory_csv_layout(tmp_path: Path, gen: torch.Generator) -> None:
    potential = DoubleWell()
    trajectory = simulate(potential, torch.zeros(2, 2, dtype=torch.float64), 4, 1e-3, 1.0, gen, stride=2)
    path = str(tmp_path / "traj.csv")
    write_trajectory_csv(path, trajectory, potential)
    with open(path) as f:
        lines = f.read().splitlines()
    assert lines[0] == "step,walker,x1,x2,V,bias"
    assert len(lines) == 1 + 3 * 2


@pytest.mark.invariant
def test_quadratic_well_reaches_the_gibbs_variance() -> None:
    beta = 2.0
    potential = QuadraticWell(dim=1, beta=beta)
    x0 = torch.zeros(20_000, 1, dtype=torch.float64)
    trajectory = simulate(
        potential, x0, 400, 1e-2, beta, torch.Generator().manual_seed(8), stride=400
    )
    final = trajectory.frames[-1]
    assert final.shape == (20_000, 1)
    assert float(final.var()) == pytest.approx(1.0 / beta, rel=0.05)
