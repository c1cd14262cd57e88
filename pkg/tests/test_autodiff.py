# Core Imports
from typing import Callable

# Third Party Imports
import pytest
import torch

# Local Imports
from core.autodiff import as_tensor, grad, input_gradient, record, substream
from core.errors import NonScalarOutputError, ShapeError

Tensor = torch.Tensor


def central_difference(fn: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-6) -> Tensor:
    out = torch.zeros_like(x)
    flat = out.reshape(-1)
    for i in range(x.numel()):
        step = torch.zeros_like(x).reshape(-1)
        step[i] = h
        step = step.reshape(x.shape)
        flat[i] = (fn(x + step) - fn(x - step)) / (2 * h)
    return out


def assert_close_relative(a: Tensor, b: Tensor, rtol: float = 1e-6) -> None:
    scale = torch.clamp(b.abs(), min=1.0)
    assert bool(((a - b).abs() / scale <= rtol).all()), (a, b)


def composite(x: Tensor) -> Tensor:
    w = as_tensor([[0.3, -0.7], [1.1, 0.4], [-0.2, 0.9]])
    h = record("tanh", record("matmul", x, w))
    h = record("mul", h, record("sigmoid", h))
    h = record("add", record("exp", record("neg", record("square", h))), h)
    return record("sum", record("log", record("add", record("square", h), as_tensor(1.0))))


@pytest.mark.invariant
def test_gradient_matches_finite_differences() -> None:
    x = as_tensor([[0.1, -0.4, 0.8], [0.5, 0.2, -0.3]]).requires_grad_(True)
    (g,) = grad(composite(x), [x])
    fd = central_difference(lambda y: composite(y).detach(), x.detach())
    assert_close_relative(g.detach(), fd)


@pytest.mark.invariant
def test_nested_gradient_matches_finite_differences() -> None:
    # d/dw of |d f / dx|^2 with f(x) = sum tanh(w x)
    x = as_tensor([0.3, -0.6, 1.2])

    def gradient_norm(w: Tensor) -> Tensor:
        xx = x.detach().requires_grad_(True)
        f = record("sum", record("tanh", record("mul", w, xx)))
        (gx,) = grad(f, [xx])
        return record("sum", record("square", gx))

    w = as_tensor(0.7).requires_grad_(True)
    (dw,) = grad(gradient_norm(w), [w])
    h = 1e-6
    fd = (gradient_norm(as_tensor(0.7 + h)) - gradient_norm(as_tensor(0.7 - h))).detach() / (2 * h)
    assert_close_relative(dw.detach().reshape(1), fd.reshape(1))


def test_sigmoid_derivative_at_zero() -> None:
    x = as_tensor(0.0).requires_grad_(True)
    (g,) = grad(record("sigmoid", x), [x])
    assert float(g) == pytest.approx(0.25, abs=1e-15)


def test_unused_input_gets_zero_gradient() -> None:
    x = as_tensor([1.0, 2.0]).requires_grad_(True)
    y = as_tensor([3.0]).requires_grad_(True)
    gx, gy = grad(record("sum", record("square", x)), [x, y])
    assert torch.equal(gx.detach(), as_tensor([2.0, 4.0]))
    assert torch.equal(gy, torch.zeros(1, dtype=torch.float64))


def test_non_scalar_output_is_rejected() -> None:
    x = as_tensor([1.0, 2.0]).requires_grad_(True)
    with pytest.raises(NonScalarOutputError):
        grad(record("square", x), [x])


def test_incompatible_shapes_are_rejected() -> None:
    with pytest.raises(ShapeError) as info:
        record("matmul", as_tensor([[1.0, 2.0]]), as_tensor([[1.0, 2.0, 3.0]]))
    assert info.value.op == "matmul"
    with pytest.raises(ShapeError):
        record("add", as_tensor([1.0, 2.0]), as_tensor([1.0, 2.0, 3.0]))


def test_input_gradient_is_per_sample() -> None:
    x = as_tensor([[1.0, 2.0], [-1.0, 0.5]])
    y, g = input_gradient(lambda t: (t**2).sum(dim=-1), x)
    assert torch.equal(y.detach(), as_tensor([5.0, 1.25]))
    assert torch.equal(g.detach(), 2 * x)


def test_input_gradient_works_under_no_grad() -> None:
    x = as_tensor([[0.5, -0.5]])
    with torch.no_grad():
        _, g = input_gradient(lambda t: (t**3).sum(dim=-1), x, create_graph=False)
    assert torch.allclose(g, 3 * x**2)


def test_substreams_are_keyed_by_labels() -> None:
    a = torch.rand(4, generator=substream(3, "dastr", "flow"), dtype=torch.float64)
    b = torch.rand(4, generator=substream(3, "dastr", "flow"), dtype=torch.float64)
    c = torch.rand(4, generator=substream(3, "dastr", "sample"), dtype=torch.float64)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)
