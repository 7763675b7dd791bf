"""Minimal reverse-mode automatic differentiation over numpy arrays.

Operations on :class:`Tensor` values are recorded on the innermost active
:class:`Tape` whenever at least one input is tracked. ``Tape.gradient`` then
walks the recorded nodes in reverse order, so arbitrarily long graphs (such as
an unrolled Sinkhorn loop) never hit the recursion limit.

    >>> x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    >>> with Tape() as tape:
    ...     y = (x * x).sum()
    >>> tape.gradient(y, [x])[0]
    array([2., 4.])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidArgumentError, ShapeError

_TAPES: list["Tape"] = []

# above this many D*m*n elements the expanded |a|^2 + |b|^2 - 2ab form is used
_DIRECT_DIST_LIMIT = 1 << 16


class Tensor:
    """A float64 array that can participate in gradient computation."""

    __slots__ = ("value", "requires_grad", "name")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 else shape)


class Tape:
    """Records operations and computes reverse-mode gradients."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self._nodes.append((out, inputs, vjp))

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``target`` with respect to each of ``sources``.

        Sources that do not influence the target get a zero array. Gradients of
        a tensor used several times are summed.
        """
        if target.value.size != 1:
            raise ShapeError(f"gradient target must be scalar, got shape {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.value)}
        for out, inputs, vjp in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                gi = _unbroadcast(gi, inp.shape)
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(s), np.zeros_like(s.value)) for s in sources]


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """A tensor that never receives gradients (values are copied by reference)."""
    return Tensor(x.value if isinstance(x, Tensor) else x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _make(value: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
    tape = _active_tape()
    tracked = tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=tracked)
    if tracked:
        tape.record(out, inputs, vjp)
    return out


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _make(out, (a, b), lambda g: (g / bv, -g * out / bv))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(av * av, (a,), lambda g: (2.0 * g * av,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.log(av), (a,), lambda g: (g / av,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    out = np.logaddexp(0.0, av)
    # d/dx log(1 + e^x) = sigmoid(x)
    sig = np.exp(av - out)
    return _make(out, (a,), lambda g: (g * sig,))


# -- linear algebra and shape -------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0 or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")

    def vjp(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:
            return bv @ g, np.outer(av, g)
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def take(a, index) -> Tensor:
    """Gather ``a[index]``; the backward pass scatters into a zero array."""
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.value[index], (a,), vjp)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else a.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) / float(n)


def where(mask: np.ndarray, a, b) -> Tensor:
    """Elementwise select: ``a`` where ``mask`` is true, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    return _make(
        np.where(mask, a.value, b.value),
        (a, b),
        lambda g: (np.where(mask, g, 0.0), np.where(mask, 0.0, g)),
    )


# -- normalizing reductions ---------------------------------------------------


def logsumexp(a, axis=-1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    av = a.value
    m = av.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out_k = m + np.log(np.exp(av - m).sum(axis=axis, keepdims=True))
    weights = np.exp(av - out_k)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    out = out_k if keepdims else np.squeeze(out_k, axis=axis)
    return _make(out, (a,), vjp)


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    av = a.value
    m = av.max(axis=axis, keepdims=True)
    shifted = av - m
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)
    return _make(out, (a,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    out = softmax_stable(a.value, axis=axis)
    return _make(
        out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    )


def softmax_stable(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with max-shift; raises on empty input."""
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0:
        raise InvalidArgumentError("softmax of an empty vector")
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    # summing in sorted order makes the result exactly permutation-equivariant
    return e / np.sort(e, axis=axis).sum(axis=axis, keepdims=True)


# -- distances ----------------------------------------------------------------


def pairwise_sq_dist(a, b) -> Tensor:
    """Squared Euclidean distances between the columns of ``a`` (D x m) and ``b`` (D x n)."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[0] != bv.shape[0]:
        raise ShapeError(f"pairwise_sq_dist needs D x m and D x n, got {av.shape} and {bv.shape}")
    if av.shape[0] * av.shape[1] * bv.shape[1] <= _DIRECT_DIST_LIMIT:
        diff = av[:, :, None] - bv[:, None, :]
        out = np.einsum("dij,dij->ij", diff, diff)
    else:
        sq_a = np.einsum("dm,dm->m", av, av)
        sq_b = np.einsum("dn,dn->n", bv, bv)
        out = np.maximum(sq_a[:, None] + sq_b[None, :] - 2.0 * (av.T @ bv), 0.0)

    def vjp(g):
        ga = 2.0 * (av * g.sum(axis=1)[None, :] - bv @ g.T)
        gb = 2.0 * (bv * g.sum(axis=0)[None, :] - av @ g)
        return ga, gb

    return _make(out, (a, b), vjp)
