"""
Reverse-mode differentiation on dense float64 tensors.

The engine is torch's autograd tape. Every gradient is taken with
``create_graph=True`` so the returned tensors are themselves nodes on the
tape, which is what lets the variational loss differentiate ``grad_x q(x)``
with respect to the network parameters. A tape lives for one optimizer step:
calling ``backward`` (or letting the loss go out of scope) frees it.

Reductions use torch's CPU kernels under deterministic mode with a fixed
intra-op thread count, so the summation order is fixed for a given
``threads`` setting.
"""

from __future__ import annotations

# Core Imports
import hashlib
from typing import Callable, Dict, List, Sequence, Tuple

# Third Party Imports
import torch

# Local Imports
from .errors import NonScalarOutputError, ShapeError

Tensor = torch.Tensor

_UNARY: Dict[str, Callable[[Tensor], Tensor]] = {
    "neg": torch.neg,
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "exp": torch.exp,
    "log": torch.log,
    "square": torch.square,
    "swish": lambda t: t * torch.sigmoid(t),
}

_BINARY: Dict[str, Callable[[Tensor, Tensor], Tensor]] = {
    "add": torch.add,
    "sub": torch.sub,
    "mul": torch.mul,
    "div": torch.div,
}

_REDUCE: Dict[str, Callable[[Tensor], Tensor]] = {
    "sum": torch.sum,
    "mean": torch.mean,
}

OPS: Tuple[str, ...] = tuple(_UNARY) + tuple(_BINARY) + tuple(_REDUCE) + ("matmul",)


def configure_determinism(threads: int = 1) -> None:
    """Float64 everywhere, deterministic kernels, fixed thread count"""
    torch.set_default_dtype(torch.float64)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(max(1, threads))


def substream(seed: int, *labels: object) -> torch.Generator:
    """
    Derive an independent generator from the master seed.

    The labels are hashed together with the seed, so the same
    ``(seed, labels)`` pair always yields the same stream regardless of
    the order in which other streams were created.
    """
    key = "/".join([str(seed), *(str(label) for label in labels)])
    digest = hashlib.sha256(key.encode()).digest()
    generator = torch.Generator()
    generator.manual_seed(int.from_bytes(digest[:8], "little") & ((1 << 63) - 1))
    return generator


def as_tensor(data: object) -> Tensor:
    return torch.as_tensor(data, dtype=torch.float64)


def record(op: str, *operands: Tensor) -> Tensor:
    """
    Apply a primitive operation and extend the tape.

    :param op: one of :data:`OPS`
    :param operands: one tensor for unary/reduce ops, two for binary ops and matmul
    :return: the result tensor, differentiable if any operand is
    """
    shapes = [tuple(o.shape) for o in operands]
    if op in _UNARY or op in _REDUCE:
        if len(operands) != 1:
            raise ShapeError(op, shapes)
        fn = _UNARY.get(op) or _REDUCE[op]
        return fn(operands[0])
    if len(operands) != 2:
        raise ShapeError(op, shapes)
    a, b = operands
    if op == "matmul":
        if a.dim() == 0 or b.dim() == 0 or a.shape[-1] != b.shape[0]:
            raise ShapeError(op, shapes)
        return a @ b
    if op not in _BINARY:
        raise ValueError(f"Unknown operation '{op}'")
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError(op, shapes) from None
    return _BINARY[op](a, b)


def grad(
    output: Tensor, wrt: Sequence[Tensor], *, create_graph: bool = True
) -> List[Tensor]:
    """
    Gradients of a scalar ``output`` with respect to each tensor in ``wrt``.

    Inputs that ``output`` does not depend on get a zero gradient. With
    ``create_graph`` (the default) the results stay on the tape and can be
    differentiated again.
    """
    if output.numel() != 1:
        raise NonScalarOutputError(tuple(output.shape))
    if not output.requires_grad:
        return [torch.zeros_like(w) for w in wrt]
    grads = torch.autograd.grad(
        output.reshape(()),
        list(wrt),
        create_graph=create_graph,
        allow_unused=True,
    )
    return [
        torch.zeros_like(w) if g is None else g for g, w in zip(grads, wrt)
    ]


def input_gradient(
    fn: Callable[[Tensor], Tensor], x: Tensor, *, create_graph: bool = True
) -> Tuple[Tensor, Tensor]:
    """
    Per-sample gradient of a batched scalar field.

    ``fn`` maps ``(batch, d)`` to ``(batch,)``; samples are independent, so
    the gradient of the batch sum with respect to ``x`` is the stack of the
    per-sample gradients.
    """
    with torch.enable_grad():
        x = x.detach().requires_grad_(True)
        y = fn(x)
        (g,) = grad(y.sum(), [x], create_graph=create_graph)
    return y, g
