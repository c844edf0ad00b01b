"""Reverse-mode autodiff over dense float64 tensors.

Deliberately minimal: exactly the operations the property-prediction
pipeline needs, all in 64-bit, all deterministic. Every op validates its
output for NaN/Inf so a poisoned value fails at the op that produced it
instead of three modules downstream. Gradients are checked against central
finite differences via :func:`grad_check`.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "TensorError",
    "ShapeError",
    "NonFiniteError",
    "DegenerateInputError",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "sigmoid",
    "shifted_softplus",
    "layer_norm",
    "scatter_sum",
    "gather_rows",
    "concat_last",
    "sum_all",
    "mean_all",
    "sum_rows",
    "abs_",
    "grad_check",
]

LN2 = float(np.log(2.0))


class TensorError(Exception):
    """Base class for tensor-core failures."""


class ShapeError(TensorError):
    """Operand shapes are incompatible; message carries both shapes."""


class NonFiniteError(TensorError):
    """An op produced (or was handed) NaN/Inf data."""


class DegenerateInputError(TensorError):
    """Input is structurally valid but meaningless for the op (e.g. layer
    norm of a single element)."""


# Monotonic creation counter. Tensors are immutable once built, so creation
# order is a valid topological order of the tape.
_TAPE_COUNTER = 0


def _next_tape_index() -> int:
    global _TAPE_COUNTER
    _TAPE_COUNTER += 1
    return _TAPE_COUNTER


class Tensor:
    """Dense float64 tensor, row-major, with an optional backward closure.

    Data is never mutated by ops; parameter updates (the optimizer) write
    through ``.data`` between steps, when no tape references are live.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "op", "tape_index")

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in result of op '{op}'")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = tuple(_parents)
        self.op = op
        self.tape_index = _next_tape_index()

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this (scalar) tensor into the tape.

        Visits every reachable node exactly once, in reverse topological
        order (descending creation index).
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar output, got shape {self.data.shape}")
        nodes = _reachable(self)
        self.grad = np.ones_like(self.data)
        for node in sorted(nodes, key=lambda t: t.tape_index, reverse=True):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Convenience arithmetic; the named functions below are the API.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={list(self.data.shape)}, op={self.op!r})"


def _reachable(root: Tensor) -> list:
    seen = set()
    out = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        out.append(node)
        stack.extend(node._parents)
    return out


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad and t._backward is None:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _wrap(raw, requires_grad, parents, op, backward):
    out = Tensor(raw, requires_grad=requires_grad, _parents=parents, op=op)
    if requires_grad:
        out._backward = backward
    return out


def _needs_grad(*tensors) -> bool:
    return any(t.requires_grad or t._backward is not None for t in tensors)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias against each row of a 2-D a."""
    if a.data.shape == b.data.shape:
        def backward(grad):
            _accumulate(a, grad)
            _accumulate(b, grad)
    elif a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        def backward(grad):
            _accumulate(a, grad)
            _accumulate(b, grad.sum(axis=0))
    else:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} are incompatible")
    return _wrap(a.data + b.data, _needs_grad(a, b), (a, b), "add", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: shapes {a.data.shape} and {b.data.shape} differ")

    def backward(grad):
        _accumulate(a, grad)
        _accumulate(b, -grad)

    return _wrap(a.data - b.data, _needs_grad(a, b), (a, b), "sub", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")

    def backward(grad):
        _accumulate(a, grad * b.data)
        _accumulate(b, grad * a.data)

    return _wrap(a.data * b.data, _needs_grad(a, b), (a, b), "mul", backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(grad):
        _accumulate(a, grad * c)

    return _wrap(a.data * c, _needs_grad(a), (a,), "scale", backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard [m×k]·[k×p] product. Backward: dA = dC·Bᵀ, dB = Aᵀ·dC."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.data.shape} x {b.data.shape}")

    def backward(grad):
        _accumulate(a, grad @ b.data.T)
        _accumulate(b, a.data.T @ grad)

    return _wrap(a.data @ b.data, _needs_grad(a, b), (a, b), "matmul", backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.data.shape}")

    def backward(grad):
        _accumulate(a, grad.T)

    return _wrap(a.data.T, _needs_grad(a), (a,), "transpose", backward)


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise 1/(1+e^{-x}); saturates without overflow for any finite x."""
    y = _sigmoid_raw(x.data)

    def backward(grad):
        _accumulate(x, grad * y * (1.0 - y))

    return _wrap(y, _needs_grad(x), (x,), "sigmoid", backward)


def shifted_softplus(x: Tensor) -> Tensor:
    """ln(0.5·e^x + 0.5): softplus shifted so the origin is a fixed point."""
    d = x.data
    # softplus(x) - ln 2 in the overflow-safe form max(x,0) + log1p(e^{-|x|}).
    y = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d))) - LN2

    def backward(grad):
        _accumulate(x, grad * _sigmoid_raw(d))

    return _wrap(y, _needs_grad(x), (x,), "shifted_softplus", backward)


def _sigmoid_raw(d: np.ndarray) -> np.ndarray:
    # Overflow-safe: exp of a nonpositive argument only.
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Variance is biased (divide by n). Accepts a vector [n] or a batch of
    rows [B×n]; gamma and beta are length n. n == 1 is rejected: a single
    element has no meaningful variance.
    """
    if eps <= 0:
        raise DegenerateInputError(f"layer_norm: eps must be > 0, got {eps}")
    d = x.data
    if d.ndim not in (1, 2):
        raise ShapeError(f"layer_norm expects 1-D or 2-D input, got {d.shape}")
    n = d.shape[-1]
    if n < 2:
        raise DegenerateInputError("layer_norm: need at least 2 elements per normalized axis")
    if gamma.data.shape != (n,) or beta.data.shape != (n,):
        raise ShapeError(
            f"layer_norm: gamma/beta shapes {gamma.data.shape}/{beta.data.shape} do not match feature size {n}"
        )

    mean = d.mean(axis=-1, keepdims=True)
    centered = d - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = xhat * gamma.data + beta.data

    def backward(grad):
        if d.ndim == 1:
            _accumulate(gamma, grad * xhat)
            _accumulate(beta, grad)
        else:
            _accumulate(gamma, (grad * xhat).sum(axis=0))
            _accumulate(beta, grad.sum(axis=0))
        gxhat = grad * gamma.data
        # d/dx of (x - mean)/sqrt(var + eps) with biased variance.
        m1 = gxhat.mean(axis=-1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv_std * (gxhat - m1 - xhat * m2))

    return _wrap(y, _needs_grad(x, gamma, beta), (x, gamma, beta), "layer_norm", backward)


def scatter_sum(messages: Tensor, targets, n_nodes: int) -> Tensor:
    """Sum message rows into their target rows; rows with no messages are zero.

    Summation order is fixed by a stable sort on the target index, so the
    result is deterministic for a given message order.
    """
    d = messages.data
    if d.ndim != 2:
        raise ShapeError(f"scatter_sum expects 2-D messages, got {d.shape}")
    idx = np.asarray(targets, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != d.shape[0]:
        raise ShapeError(f"scatter_sum: {d.shape[0]} messages but {idx.shape} targets")
    if idx.size and (idx.min() < 0 or idx.max() >= n_nodes):
        bad = idx[(idx < 0) | (idx >= n_nodes)][0]
        raise IndexError(f"scatter_sum: target index {bad} out of range [0, {n_nodes})")

    order = np.argsort(idx, kind="stable")
    out = np.zeros((n_nodes, d.shape[1]), dtype=np.float64)
    np.add.at(out, idx[order], d[order])

    def backward(grad):
        _accumulate(messages, grad[idx])

    return _wrap(out, _needs_grad(messages), (messages,), "scatter_sum", backward)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor; backward scatters gradients back."""
    d = x.data
    if d.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D tensor, got {d.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= d.shape[0]):
        bad = idx[(idx < 0) | (idx >= d.shape[0])][0]
        raise IndexError(f"gather_rows: row index {bad} out of range [0, {d.shape[0]})")

    def backward(grad):
        acc = np.zeros_like(d)
        np.add.at(acc, idx, grad)
        _accumulate(x, acc)

    return _wrap(d[idx], _needs_grad(x), (x,), "gather_rows", backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.data.shape} as {shape}")

    def backward(grad):
        _accumulate(x, grad.reshape(x.data.shape))

    return _wrap(x.data.reshape(shape), _needs_grad(x), (x,), "reshape", backward)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis ([g̃ ‖ t̃]-style)."""
    da, db = a.data, b.data
    if da.ndim != db.ndim or da.ndim not in (1, 2):
        raise ShapeError(f"concat_last: shapes {da.shape} and {db.shape} are incompatible")
    if da.ndim == 2 and da.shape[0] != db.shape[0]:
        raise ShapeError(f"concat_last: row counts differ, {da.shape} vs {db.shape}")
    na = da.shape[-1]

    def backward(grad):
        _accumulate(a, grad[..., :na])
        _accumulate(b, grad[..., na:])

    return _wrap(np.concatenate([da, db], axis=-1), _needs_grad(a, b), (a, b), "concat", backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(grad):
        _accumulate(x, np.full_like(x.data, float(grad)))

    return _wrap(x.data.sum(), _needs_grad(x), (x,), "sum", backward)


def mean_all(x: Tensor) -> Tensor:
    inv = 1.0 / x.data.size

    def backward(grad):
        _accumulate(x, np.full_like(x.data, float(grad) * inv))

    return _wrap(x.data.mean(), _needs_grad(x), (x,), "mean", backward)


def sum_rows(x: Tensor) -> Tensor:
    """Column-wise sum of a 2-D tensor (the pooling reduce)."""
    if x.data.ndim != 2:
        raise ShapeError(f"sum_rows expects a 2-D tensor, got {x.data.shape}")

    def backward(grad):
        _accumulate(x, np.broadcast_to(grad, x.data.shape).copy())

    return _wrap(x.data.sum(axis=0), _needs_grad(x), (x,), "sum_rows", backward)


def abs_(x: Tensor) -> Tensor:
    """Elementwise |x|; subgradient at 0 is 0."""
    sign = np.sign(x.data)

    def backward(grad):
        _accumulate(x, grad * sign)

    return _wrap(np.abs(x.data), _needs_grad(x), (x,), "abs", backward)


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f must map a Tensor to a scalar Tensor. Error per coordinate is
    |analytic − fd| / max(1, |analytic|); the max over coordinates is
    returned. h must lie in [1e-7, 1e-3].
    """
    if not (1e-7 <= h <= 1e-3):
        raise ValueError(f"grad_check: h={h} outside [1e-7, 1e-3]")
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ShapeError(f"grad_check: f must be scalar-valued, got shape {out.data.shape}")
    out.backward()
    analytic = probe.grad.copy() if probe.grad is not None else np.zeros_like(probe.data)

    flat = probe.data.reshape(-1)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(Tensor(probe.data.copy())).item()
        flat[i] = orig - h
        lo = f(Tensor(probe.data.copy())).item()
        flat[i] = orig
        fd[i] = (hi - lo) / (2.0 * h)

    a = analytic.reshape(-1)
    rel = np.abs(a - fd) / np.maximum(1.0, np.abs(a))
    return float(rel.max()) if rel.size else 0.0
