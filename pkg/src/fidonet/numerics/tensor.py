"""Dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small: numpy arrays as storage, a tape-free
graph of `Tensor` nodes, and one vector-Jacobian closure per node.
Shapes are explicit everywhere; the only implicit broadcast allowed is
adding a 1-D bias to the trailing axis.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import NumericError, ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "tensor",
    "custom_op",
    "checked_mode",
    "set_checked",
    "is_checked",
]

_ALLOWED_DTYPES = (np.float32, np.float64)

_CHECKED = False


def set_checked(flag: bool) -> None:
    """Globally enable/disable finiteness validation at construction."""
    global _CHECKED
    _CHECKED = bool(flag)


def is_checked() -> bool:
    return _CHECKED


@contextmanager
def checked_mode(flag: bool = True) -> Iterator[None]:
    """Temporarily toggle checked construction (NaN/Inf rejection)."""
    global _CHECKED
    prev = _CHECKED
    _CHECKED = bool(flag)
    try:
        yield
    finally:
        _CHECKED = prev


def _validate(data: np.ndarray) -> None:
    if data.dtype.type not in _ALLOWED_DTYPES:
        raise ShapeError(f"unsupported dtype {data.dtype}; expected float32 or float64")
    if _CHECKED and not np.all(np.isfinite(data)):
        raise NumericError("non-finite values in tensor construction")


# A vjp maps the output gradient to one gradient per parent (None for
# parents that do not need one).
Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Immutable value node in the computation graph.

    `data` is never mutated by graph operations; optimizers update leaf
    parameters in place between graph evaluations.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(
        self,
        data: np.ndarray,
        *,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _vjp: Vjp | None = None,
    ) -> None:
        if not isinstance(data, np.ndarray):
            raise ShapeError("Tensor data must be a numpy array")
        _validate(data)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._vjp = _vjp

    # -- introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err()

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"<Tensor shape={self.shape} dtype={self.data.dtype}{tag}>"

    # -- graph plumbing -----------------------------------------------

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        """Reverse-mode sweep seeding d(self)/d(self) = 1 (scalar only)."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                # Leaf: accumulate into .grad
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.asarray(pg)

    # -- operator sugar (elementwise / matmul) -------------------------

    def __add__(self, other: "Tensor | float") -> "Tensor":
        if isinstance(other, Tensor):
            return _add(self, other)
        return _add_scalar(self, float(other))

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return _mul_scalar(self, -1.0)

    def __sub__(self, other: "Tensor | float") -> "Tensor":
        if isinstance(other, Tensor):
            return _add(self, _mul_scalar(other, -1.0))
        return _add_scalar(self, -float(other))

    def __rsub__(self, other: float) -> "Tensor":
        return _add_scalar(_mul_scalar(self, -1.0), float(other))

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        if isinstance(other, Tensor):
            return _mul(self, other)
        return _mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Tensor":
        return _mul_scalar(self, 1.0 / float(other))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    # -- methods for common ops ----------------------------------------

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes or None)

    def sum(self) -> "Tensor":
        return _reduce(self, np.sum, lambda g, d: np.full(d.shape, g, dtype=d.dtype))

    def mean(self) -> "Tensor":
        return _reduce(
            self, np.mean, lambda g, d: np.full(d.shape, g / d.size, dtype=d.dtype)
        )

    def relu(self) -> "Tensor":
        out = np.maximum(self.data, 0)
        mask = self.data > 0
        return custom_op(out, (self,), lambda g: (g * mask,))

    def sigmoid(self) -> "Tensor":
        # Stable split form; both branches avoid overflow in exp.
        x = self.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return custom_op(out, (self,), lambda g: (g * out * (1.0 - out),))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return custom_op(out, (self,), lambda g: (g * (1.0 - out * out),))

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return custom_op(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        return custom_op(np.log(self.data), (self,), lambda g: (g / self.data,))

    def log1p(self) -> "Tensor":
        return custom_op(np.log1p(self.data), (self,), lambda g: (g / (1.0 + self.data),))


def _scalar_err():
    raise ShapeError("item() only valid on single-element tensors")


class Parameter(Tensor):
    """Trainable leaf tensor with a unique name path inside a model."""

    __slots__ = ()

    def __init__(self, value: np.ndarray, name: str) -> None:
        if not name:
            raise ShapeError("Parameter requires a non-empty name")
        super().__init__(np.ascontiguousarray(value), requires_grad=True, name=name)

    @property
    def value(self) -> np.ndarray:
        return self.data


def tensor(
    data,
    dtype: np.dtype | type = np.float32,
    requires_grad: bool = False,
    name: str | None = None,
) -> Tensor:
    """Construct a leaf tensor from array-like data."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=requires_grad, name=name)


def custom_op(
    data: np.ndarray, parents: tuple[Tensor, ...], vjp: Vjp
) -> Tensor:
    """Build a graph node from a forward value and its vjp.

    Extension point used by fused ops elsewhere in the package (LSTM,
    convolution, learnable filterbank).
    """
    data = np.asarray(data)  # 0-d numpy scalars back to arrays
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp)
    return Tensor(data)


# -- primitive ops ------------------------------------------------------


def _same_dtype(a: Tensor, b: Tensor) -> None:
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")


def _add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.shape == b.shape:
        return custom_op(a.data + b.data, (a, b), lambda g: (g, g))
    # Row-wise bias: (..., n) + (n,)
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        red = tuple(range(a.ndim - 1))
        return custom_op(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=red)))
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        red = tuple(range(b.ndim - 1))
        return custom_op(a.data + b.data, (a, b), lambda g: (g.sum(axis=red), g))
    raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")


def _add_scalar(a: Tensor, s: float) -> Tensor:
    return custom_op(a.data + np.asarray(s, dtype=a.data.dtype), (a,), lambda g: (g,))


def _mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return custom_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def _mul_scalar(a: Tensor, s: float) -> Tensor:
    sv = np.asarray(s, dtype=a.data.dtype)
    return custom_op(a.data * sv, (a,), lambda g: (g * sv,))


def _reduce(a: Tensor, fn, expand) -> Tensor:
    out = np.asarray(fn(a.data), dtype=a.data.dtype).reshape(())
    return custom_op(out, (a,), lambda g: (expand(g, a.data),))


def mean_axis(a: Tensor, axis: int) -> Tensor:
    """Mean along one axis (no keepdims)."""
    n = a.shape[axis]
    out = a.data.mean(axis=axis)

    def vjp(g: np.ndarray):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return custom_op(out, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D or stacked matmul; leading (batch) dims must match exactly."""
    _same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g: np.ndarray):
        return (g @ b.data.swapaxes(-1, -2), a.data.swapaxes(-1, -2) @ g)

    return custom_op(out, (a, b), vjp)


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        if a.ndim != 2:
            raise ShapeError("default transpose only defined for 2-D tensors")
        axes = (1, 0)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return custom_op(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    out = a.data.reshape(shape)
    return custom_op(out, (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    for p in parts[1:]:
        _same_dtype(parts[0], p)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g: np.ndarray):
        sl = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(np.ascontiguousarray(g[tuple(sl)]))
        return grads

    return custom_op(out, tuple(parts), vjp)


def flip0(a: Tensor) -> Tensor:
    """Reverse along the first (time) axis."""
    out = np.ascontiguousarray(a.data[::-1])
    return custom_op(out, (a,), lambda g: (np.ascontiguousarray(g[::-1]),))
