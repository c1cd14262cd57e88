# Core Imports
import copy
import math
from typing import Optional, Sequence, Tuple

# Third Party Imports
import pytest
import torch

# Local Imports
from core.errors import DomainError, ImportanceWeightError
from core.flow import (
    AffineCoupling,
    FlowModel,
    box_normalization,
    self_normalized_kl,
    train_flow_ce,
)

Box = Tuple[Sequence[float], Sequence[float]]


def perturbed(flow: FlowModel, scale: float = 0.05, seed: int = 3) -> FlowModel:
    """Give every coupling a non-trivial last layer"""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in flow.layers:
            if isinstance(layer, AffineCoupling):
                last = layer.net[-1]
                assert isinstance(last, torch.nn.Linear)
                last.weight.copy_(scale * torch.randn(last.weight.shape, generator=g, dtype=torch.float64))
                last.bias.copy_(scale * torch.randn(last.bias.shape, generator=g, dtype=torch.float64))
    return flow


def small_flow(box: Optional[Box] = None, seed: int = 0) -> FlowModel:
    return FlowModel(
        2, blocks=2, couplings_per_block=2, width=16, box=box,
        generator=torch.Generator().manual_seed(seed),
    )


def test_fresh_flow_is_standard_normal(gen: torch.Generator) -> None:
    flow = small_flow()
    x = torch.randn(50, 2, generator=gen, dtype=torch.float64)
    expected = -0.5 * (x**2).sum(dim=-1) - math.log(2 * math.pi)
    with torch.no_grad():
        assert torch.allclose(flow.log_density(x), expected, atol=1e-12)


@pytest.mark.invariant
def test_inverse_undoes_forward(gen: torch.Generator) -> None:
    flow = perturbed(small_flow(box=([-2.0, -1.0], [3.0, 2.0])))
    lo = torch.tensor([-2.0, -1.0], dtype=torch.float64)
    hi = torch.tensor([3.0, 2.0], dtype=torch.float64)
    x = lo + (hi - lo) * torch.rand(200, 2, generator=gen, dtype=torch.float64).clamp(0.01, 0.99)
    with torch.no_grad():
        z, ld_forward = flow(x)
        back, ld_inverse = flow.inverse(z)
    assert float((back - x).abs().max()) < 1e-8
    assert float((ld_forward + ld_inverse).abs().max()) < 1e-8


@pytest.mark.invariant
def test_log_det_matches_numerical_jacobian(gen: torch.Generator) -> None:
    flow = perturbed(small_flow(box=([-1.0, -1.0], [1.0, 1.0])), scale=0.2)
    x = 0.8 * (2 * torch.rand(5, 2, generator=gen, dtype=torch.float64) - 1)
    for point in x:
        def fn(p: torch.Tensor) -> torch.Tensor:
            return flow(p.unsqueeze(0))[0].squeeze(0)

        jac = torch.autograd.functional.jacobian(fn, point)
        _, log_abs = torch.linalg.slogdet(jac)
        with torch.no_grad():
            _, log_det = flow(point.unsqueeze(0))
        assert abs(float(log_abs) - float(log_det[0])) < 1e-5


@pytest.mark.invariant
def test_bounded_density_integrates_to_one() -> None:
    flow = perturbed(small_flow(box=([-1.0, -1.0], [1.0, 1.0])))
    mass, se = box_normalization(flow, 200_000, torch.Generator().manual_seed(11))
    assert abs(mass - 1.0) < 0.01
    assert se < 0.005


@pytest.mark.invariant
def test_flow_training_is_invariant_to_target_scale(gen: torch.Generator) -> None:
    box = ([-1.0, -1.0], [1.0, 1.0])
    x = 1.8 * torch.rand(400, 2, generator=gen, dtype=torch.float64) - 0.9
    target = torch.exp(-4.0 * ((x - 0.3) ** 2).sum(dim=-1))
    proposal = torch.full((400,), -math.log(4.0), dtype=torch.float64)

    first = perturbed(small_flow(box=box))
    second = copy.deepcopy(first)
    for model, factor in ((first, 1.0), (second, 8.0)):
        train_flow_ce(
            model, x, target * factor, proposal,
            epochs=3, batch_size=100, lr=1e-3,
            generator=torch.Generator().manual_seed(5),
        )
    for a, b in zip(first.parameters(), second.parameters()):
        assert torch.equal(a, b)


def test_training_lowers_cross_entropy(gen: torch.Generator) -> None:
    box = ([-1.0, -1.0], [1.0, 1.0])
    x = 1.98 * torch.rand(2000, 2, generator=gen, dtype=torch.float64) - 0.99
    target = torch.exp(-8.0 * ((x - 0.4) ** 2).sum(dim=-1))
    proposal = torch.full((2000,), -math.log(4.0), dtype=torch.float64)
    report = train_flow_ce(
        small_flow(box=box), x, target, proposal,
        epochs=30, batch_size=500, lr=1e-2, generator=torch.Generator().manual_seed(2),
    )
    assert len(report.ce_trace) == 30
    assert report.ce_trace[-1] < report.ce_trace[0]


def test_too_many_invalid_weights_raise() -> None:
    x = torch.zeros(10, 2, dtype=torch.float64)
    target = torch.ones(10, dtype=torch.float64)
    target[:3] = math.nan
    with pytest.raises(ImportanceWeightError) as info:
        train_flow_ce(
            small_flow(), x, target, torch.zeros(10, dtype=torch.float64),
            epochs=1, batch_size=5, lr=1e-3, generator=torch.Generator().manual_seed(0),
            max_rejected=0.1,
        )
    assert info.value.rejected == 3


def test_all_zero_weights_skip_the_update() -> None:
    flow = small_flow()
    before = [p.clone() for p in flow.parameters()]
    report = train_flow_ce(
        flow, torch.zeros(4, 2, dtype=torch.float64), torch.zeros(4, dtype=torch.float64),
        torch.zeros(4, dtype=torch.float64),
        epochs=2, batch_size=2, lr=1e-3, generator=torch.Generator().manual_seed(0),
    )
    assert report.skipped
    for a, b in zip(before, flow.parameters()):
        assert torch.equal(a, b)


def test_forward_outside_box_is_a_domain_error() -> None:
    flow = small_flow(box=([0.0, 0.0], [1.0, 1.0]))
    with pytest.raises(DomainError):
        flow(torch.tensor([[1.5, 0.5]], dtype=torch.float64))


def test_sample_excluding_corrects_density_by_acceptance(gen: torch.Generator) -> None:
    flow = small_flow()
    reject = lambda x: x[:, 0] < 0.0  # noqa: E731
    x, lp, acceptance = flow.sample_excluding(2000, gen, reject)
    assert x.shape == (2000, 2)
    assert bool((x[:, 0] >= 0).all())
    assert acceptance == pytest.approx(0.5, abs=0.03)
    with torch.no_grad():
        raw = flow.log_density(x)
    assert torch.allclose(lp, raw - math.log(acceptance), atol=1e-9)


def test_kl_of_model_against_itself_is_zero(gen: torch.Generator) -> None:
    flow = small_flow()
    with torch.no_grad():
        x, lp = flow.sample(1000, gen)
        kl = self_normalized_kl(lp + 3.0, flow.log_density(x), lp)
    assert abs(kl) < 1e-9


def banana(x: torch.Tensor) -> torch.Tensor:
    return -0.5 * x[:, 0] ** 2 - 0.5 * (x[:, 1] - 0.5 * (x[:, 0] ** 2 - 1.0)) ** 2


def test_training_on_a_banana_lowers_the_kl(gen: torch.Generator) -> None:
    box = ([-4.0, -3.0], [4.0, 6.0])
    lo = torch.tensor(box[0], dtype=torch.float64)
    hi = torch.tensor(box[1], dtype=torch.float64)

    def uniform(n: int, g: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
        u = torch.rand(n, 2, generator=g, dtype=torch.float64).clamp(1e-6, 1 - 1e-6)
        return lo + (hi - lo) * u, torch.full((n,), -math.log(72.0), dtype=torch.float64)

    x, log_p = uniform(4000, gen)
    x_eval, log_p_eval = uniform(4000, torch.Generator().manual_seed(9))
    flow = small_flow(box=box)
    with torch.no_grad():
        before = self_normalized_kl(banana(x_eval), flow.log_density(x_eval), log_p_eval)
    train_flow_ce(
        flow, x, torch.exp(banana(x)), log_p,
        epochs=40, batch_size=500, lr=1e-2, generator=torch.Generator().manual_seed(3),
    )
    with torch.no_grad():
        after = self_normalized_kl(banana(x_eval), flow.log_density(x_eval), log_p_eval)
    assert after < before


def test_clamped_draws_carry_their_own_density() -> None:
    flow = small_flow(box=([-1.0, -1.0], [1.0, 1.0]))
    assert flow.box is not None
    z = torch.tensor([[50.0, 0.0], [0.1, -0.2]], dtype=torch.float64)
    with torch.no_grad():
        x, log_density = flow.transform_prior(z)
        assert flow.box.saturated(x).tolist() == [True, False]
        assert bool(flow.contains(x).all())
        assert torch.allclose(log_density, flow.log_density(x), atol=1e-8)
