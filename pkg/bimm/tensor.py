"""
tensor.py - dense numpy tensors with reverse-mode differentiation.

Public API
----------
Tensor
    n-d array with an optional gradient slot.  Operators ``+ - * / @ []``
    build the graph when any operand requires a gradient.

Ops
    ``add, sub, mul, div, neg, matmul, sum, mean, reshape, transpose,
    swapaxes, broadcast_to, concat, gather_rows, layer_norm, softmax, gelu,
    mse_loss, cross_entropy``

backward(loss, store=None)
    Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

precision(dtype) / get_default_dtype()
    float32 for training, float64 for gradient checking.

no_grad()
    Context manager that disables graph construction.
"""

from __future__ import annotations

import contextlib
import math
from typing import TYPE_CHECKING, Any, Callable, Iterator, Sequence

import numpy as np
from scipy import special

from .errors import ContractError, NumericError, ShapeError

if TYPE_CHECKING:  # pragma: no cover
    from .params import ParamStore

__all__ = [
    "Tensor",
    "as_tensor",
    "add", "sub", "mul", "div", "neg", "matmul",
    "sum", "mean", "reshape", "transpose", "swapaxes", "broadcast_to",
    "concat", "gather_rows", "layer_norm", "softmax", "gelu",
    "mse_loss", "cross_entropy",
    "backward", "no_grad", "precision", "get_default_dtype",
]

# --------------------------------------------------------------------------- #
# Global mode                                                                 #
# --------------------------------------------------------------------------- #

_DEFAULT_DTYPE: np.dtype = np.dtype(np.float32)
_GRAD_ENABLED = True
_CHECK_FINITE = True

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype: Any) -> Iterator[np.dtype]:
    """Temporarily switch the dtype new tensors are created with."""
    global _DEFAULT_DTYPE
    new = np.dtype(dtype)
    if new not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported precision {new}; use float32 or float64")
    old, _DEFAULT_DTYPE = _DEFAULT_DTYPE, new
    try:
        yield new
    finally:
        _DEFAULT_DTYPE = old


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording the graph (inference, frozen-encoder heads, oracles)."""
    global _GRAD_ENABLED
    old, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


# --------------------------------------------------------------------------- #
# Tensor                                                                      #
# --------------------------------------------------------------------------- #

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A dense array, its gradient slot and the op that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 100.0  # ndarray <op> Tensor defers to Tensor

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        *,
        dtype: Any = None,
        name: str | None = None,
    ) -> None:
        arr = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        self.data: np.ndarray = np.require(arr, requirements="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = ""

    # -- introspection ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # -- operators --------------------------------------------------------
    def __add__(self, other: Any) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: Any) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return _getitem(self, index)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes or None)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value: Any) -> Tensor:
    """Wrap constants; tensors pass through untouched."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


# --------------------------------------------------------------------------- #
# Graph plumbing                                                              #
# --------------------------------------------------------------------------- #

def _result(data: np.ndarray, parents: Sequence[Tensor], fn: BackwardFn, op: str) -> Tensor:
    if _CHECK_FINITE and data.size and not np.isfinite(data).all():
        raise NumericError(f"{op}: produced non-finite values")
    out = Tensor(data, dtype=data.dtype)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum *grad* down to *shape* (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary_dtype(a: Tensor, b: Tensor) -> np.dtype:
    return np.result_type(a.data.dtype, b.data.dtype)


# --------------------------------------------------------------------------- #
# Elementwise                                                                 #
# --------------------------------------------------------------------------- #

def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = np.add(a.data, b.data, dtype=_binary_dtype(a, b))
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc

    def fn(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(data, (a, b), fn, "add")


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = np.subtract(a.data, b.data, dtype=_binary_dtype(a, b))
    except ValueError as exc:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from exc

    def fn(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(data, (a, b), fn, "sub")


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = np.multiply(a.data, b.data, dtype=_binary_dtype(a, b))
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc

    def fn(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(data, (a, b), fn, "mul")


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = np.divide(a.data, b.data, dtype=_binary_dtype(a, b))
    except ValueError as exc:
        raise ShapeError(f"div: cannot broadcast {a.shape} with {b.shape}") from exc

    def fn(g: np.ndarray):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(data, (a, b), fn, "div")


def neg(a: Any) -> Tensor:
    a = as_tensor(a)

    def fn(g: np.ndarray):
        return (-g,)

    return _result(-a.data, (a,), fn, "neg")


def gelu(x: Any) -> Tensor:
    """Exact GELU, ``0.5·x·(1 + erf(x/√2))``."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + special.erf(x.data * _SQRT_HALF))
    data = (x.data * cdf).astype(x.dtype, copy=False)

    def fn(g: np.ndarray):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _result(data, (x,), fn, "gelu")


# --------------------------------------------------------------------------- #
# Linear algebra & reductions                                                 #
# --------------------------------------------------------------------------- #

def matmul(a: Any, b: Any) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul: batch dims not broadcastable, {a.shape} @ {b.shape}") from exc
    data = np.matmul(a.data, b.data)

    def fn(g: np.ndarray):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(data, (a, b), fn, "matmul")


def _norm_axes(axis: Any, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x: Any, axis: Any = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    data = np.sum(x.data, axis=axes, keepdims=keepdims)

    def fn(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(data), (x,), fn, "sum")


def mean(x: Any, axis: Any = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ContractError("mean: reduction over an empty axis")
    data = np.mean(x.data, axis=axes, keepdims=keepdims)

    def fn(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _result(np.asarray(data, dtype=x.dtype), (x,), fn, "mean")


# --------------------------------------------------------------------------- #
# Shape manipulation                                                          #
# --------------------------------------------------------------------------- #

def reshape(x: Any, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from exc

    def fn(g: np.ndarray):
        return (g.reshape(x.shape),)

    return _result(data, (x,), fn, "reshape")


def transpose(x: Any, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    perm = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(perm))
    data = np.ascontiguousarray(np.transpose(x.data, perm))

    def fn(g: np.ndarray):
        return (np.transpose(g, inverse),)

    return _result(data, (x,), fn, "transpose")


def swapaxes(x: Any, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    perm = list(range(x.ndim))
    perm[a1], perm[a2] = perm[a2], perm[a1]
    return transpose(x, perm)


def broadcast_to(x: Any, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        data = np.broadcast_to(x.data, tuple(shape)).copy()
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {x.shape} -> {tuple(shape)}") from exc

    def fn(g: np.ndarray):
        return (_unbroadcast(g, x.shape),)

    return _result(data, (x,), fn, "broadcast_to")


def concat(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ContractError("concat: nothing to concatenate")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def fn(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(data, parts, fn, "concat")


def _getitem(x: Tensor, index: Any) -> Tensor:
    data = np.array(x.data[index])

    def fn(g: np.ndarray):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(data, (x,), fn, "getitem")


def gather_rows(x: Any, index: Any) -> Tensor:
    """Pick rows along axis 1: ``x[b, index[b, m], :]`` for ``x`` of shape (B, N, D)."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    if x.ndim != 3 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_rows: expected (B,N,D) and (B,M), got {x.shape} and {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise ContractError(f"gather_rows: index out of range for {x.shape[1]} rows")
    data = np.take_along_axis(x.data, idx[:, :, None], axis=1)
    rows = np.arange(x.shape[0])[:, None]

    def fn(g: np.ndarray):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, idx), g)
        return (full,)

    return _result(data, (x,), fn, "gather_rows")


# --------------------------------------------------------------------------- #
# Fused network ops                                                           #
# --------------------------------------------------------------------------- #

def layer_norm(x: Any, gamma: Any, beta: Any, eps: float = 1e-6) -> Tensor:
    """Normalise over the last dim, then apply the affine ``gamma·x̂ + beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({d},), got {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std
    data = xhat * gamma.data + beta.data

    def fn(g: np.ndarray):
        dxhat = g * gamma.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(data.astype(x.dtype, copy=False), (x, gamma, beta), fn, "layer_norm")


def softmax(x: Any) -> Tensor:
    """Softmax over the last dim (max-shifted, so ``x`` and ``x + c`` agree)."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), fn, "softmax")


def mse_loss(pred: Any, target: Any) -> Tensor:
    """Mean squared error over every element; an empty selection scores 0."""
    pred = as_tensor(pred)
    tgt = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if pred.shape != tgt.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {tgt.shape}")
    n = pred.size
    if n == 0:
        return _result(np.zeros((), dtype=pred.dtype), (pred,), lambda g: (np.zeros_like(pred.data),), "mse_loss")
    diff = pred.data - tgt
    data = np.asarray(np.mean(diff * diff), dtype=pred.dtype)

    def fn(g: np.ndarray):
        return (g * (2.0 / n) * diff,)

    return _result(data, (pred,), fn, "mse_loss")


def cross_entropy(logits: Any, labels: Any) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or y.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {y.shape}")
    m = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(m)
    data = np.asarray(-log_p[rows, y].mean(), dtype=logits.dtype)

    def fn(g: np.ndarray):
        grad = np.exp(log_p)
        grad[rows, y] -= 1.0
        return (g * grad / m,)

    return _result(data, (logits,), fn, "cross_entropy")


# --------------------------------------------------------------------------- #
# Reverse pass                                                                #
# --------------------------------------------------------------------------- #

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, store: "ParamStore | None" = None) -> None:
    """Accumulate gradients of the scalar *loss* into every reachable leaf.

    Leaf gradients add onto whatever ``grad`` already holds, so two calls
    double the gradient and a sum of losses equals the sum of their grads.
    When *store* is given, its parameters the loss does not reach receive a
    zero gradient so every entry is populated afterwards.
    """
    if not isinstance(loss, Tensor) or loss.ndim != 0:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward: loss must be a 0-d tensor, got shape {shape}")

    if loss.requires_grad:
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(_topological(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=parent.dtype)
                if _CHECK_FINITE and pg.size and not np.isfinite(pg).all():
                    raise NumericError(f"backward through {node._op}: non-finite gradient")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    if store is not None:
        for tensor in store.values():
            if tensor.requires_grad and tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)
