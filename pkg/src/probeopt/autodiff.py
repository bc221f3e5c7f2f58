"""Reverse-mode automatic differentiation over scalars and dense float64 arrays.

Define-by-run: every operation records its parents and a backward closure on
the produced node. Calling ``backward`` on a scalar output topologically
orders the reachable graph (the tape) and accumulates adjoints into ``grad``.

Broadcasting is restricted to scalar-with-array; elementwise operations on
mismatched array shapes raise ``ShapeError``. Explicit ops (``add_bias``,
``embed_lookup``, batched ``matmul``) cover the remaining shape plumbing.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class NumericError(ArithmeticError):
    """A non-finite value surfaced in the computation graph."""


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """One node of the computation graph: a float64 array plus its adjoint."""

    __slots__ = ("data", "grad", "op", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.data = _as_array(data)
        self.grad = None
        self.op = op
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def value(self) -> float:
        """The scalar payload; only valid for single-element tensors."""
        if self.data.size != 1:
            raise ShapeError(f"value of non-scalar tensor with shape {self.data.shape}")
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(lift(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(lift(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(lift(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    # -- reductions / elementwise as methods --------------------------------

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


def lift(x) -> Tensor:
    """Wrap a number or array as a constant tensor; tensors pass through."""
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def _check_elementwise(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.shape == b.data.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise ShapeError(f"{opname}: shapes {a.data.shape} and {b.data.shape} "
                     "(only scalar-with-array broadcast is supported)")


def _reduce_to_shape(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (undo scalar/batch broadcast)."""
    if g.shape == tuple(shape):
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- arithmetic primitives ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_elementwise(a, b, "add")
    out = Tensor(a.data + b.data, parents=(a, b), op="add")

    def _bw(g):
        a._accumulate(_reduce_to_shape(g, a.data.shape))
        b._accumulate(_reduce_to_shape(g, b.data.shape))
    out._backward = _bw if out.requires_grad else None
    return out


def sub(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_elementwise(a, b, "sub")
    out = Tensor(a.data - b.data, parents=(a, b), op="sub")

    def _bw(g):
        a._accumulate(_reduce_to_shape(g, a.data.shape))
        b._accumulate(_reduce_to_shape(-g, b.data.shape))
    out._backward = _bw if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_elementwise(a, b, "mul")
    out = Tensor(a.data * b.data, parents=(a, b), op="mul")

    def _bw(g):
        a._accumulate(_reduce_to_shape(g * b.data, a.data.shape))
        b._accumulate(_reduce_to_shape(g * a.data, b.data.shape))
    out._backward = _bw if out.requires_grad else None
    return out


def div(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_elementwise(a, b, "div")
    out = Tensor(a.data / b.data, parents=(a, b), op="div")

    def _bw(g):
        a._accumulate(_reduce_to_shape(g / b.data, a.data.shape))
        b._accumulate(_reduce_to_shape(-g * out.data / b.data, b.data.shape))
    out._backward = _bw if out.requires_grad else None
    return out


def matmul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b), op="matmul")

    def _bw(g):
        a._accumulate(_reduce_to_shape(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        b._accumulate(_reduce_to_shape(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))
    out._backward = _bw if out.requires_grad else None
    return out


def add_bias(x, b) -> Tensor:
    """x[..., d] + b[d]: the one non-scalar broadcast, named explicitly."""
    x, b = lift(x), lift(b)
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: {x.data.shape} with bias {b.data.shape}")
    out = Tensor(x.data + b.data, parents=(x, b), op="add_bias")

    def _bw(g):
        x._accumulate(g)
        b._accumulate(_reduce_to_shape(g, b.data.shape))
    out._backward = _bw if out.requires_grad else None
    return out


def affine(x, w, b) -> Tensor:
    """Fused x @ w + b for [..., k] @ [k, n] + [n]."""
    x, w, b = lift(x), lift(w), lift(b)
    if w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[0] or b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"affine: {x.data.shape} @ {w.data.shape} + {b.data.shape}")
    out = Tensor(x.data @ w.data + b.data, parents=(x, w, b), op="affine")

    def _bw(g):
        x._accumulate(g @ w.data.T)
        xd = x.data.reshape(-1, x.data.shape[-1])
        w._accumulate(xd.T @ g.reshape(-1, g.shape[-1]))
        b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
    out._backward = _bw if out.requires_grad else None
    return out


# -- shape primitives --------------------------------------------------------

def transpose(a, axes=None) -> Tensor:
    a = lift(a)
    out = Tensor(np.transpose(a.data, axes), parents=(a,), op="transpose")
    inv = None if axes is None else np.argsort(axes)

    def _bw(g):
        a._accumulate(np.transpose(g, inv))
    out._backward = _bw if out.requires_grad else None
    return out


def reshape(a, shape) -> Tensor:
    a = lift(a)
    out = Tensor(a.data.reshape(shape), parents=(a,), op="reshape")

    def _bw(g):
        a._accumulate(g.reshape(a.data.shape))
    out._backward = _bw if out.requires_grad else None
    return out


def concat(tensors, axis=0) -> Tensor:
    ts = [lift(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis), parents=tuple(ts), op="concat")
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def _bw(g):
        for t, s, e in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(s, e)
            t._accumulate(g[tuple(idx)])
    out._backward = _bw if out.requires_grad else None
    return out


def slice_(a, key) -> Tensor:
    """Basic indexing (ints and slices); gradient scatters back into zeros."""
    a = lift(a)
    out = Tensor(a.data[key], parents=(a,), op="slice")

    def _bw(g):
        buf = np.zeros_like(a.data)
        buf[key] = g
        a._accumulate(buf)
    out._backward = _bw if out.requires_grad else None
    return out


def embed_lookup(table, ids) -> Tensor:
    """Gather rows of ``table`` (axis 0) by an integer index array."""
    table = lift(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("embed_lookup: ids must be integers")
    out = Tensor(table.data[ids], parents=(table,), op="embed_lookup")

    def _bw(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids, g)
        table._accumulate(buf)
    out._backward = _bw if out.requires_grad else None
    return out


def where(mask, a, b) -> Tensor:
    """Select by a boolean array; the mask itself carries no gradient."""
    a, b = lift(a), lift(b)
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, a.data, b.data), parents=(a, b), op="where")

    def _bw(g):
        a._accumulate(_reduce_to_shape(np.where(mask, g, 0.0), a.data.shape))
        b._accumulate(_reduce_to_shape(np.where(mask, 0.0, g), b.data.shape))
    out._backward = _bw if out.requires_grad else None
    return out


# -- reductions ---------------------------------------------------------------

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = lift(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,), op="sum")

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())
    out._backward = _bw if out.requires_grad else None
    return out


def mean_(a, axis=None, keepdims=False) -> Tensor:
    a = lift(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), parents=(a,), op="mean")
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g / n, a.data.shape).copy())
    out._backward = _bw if out.requires_grad else None
    return out


def max_(a, axis=None, keepdims=False) -> Tensor:
    a = lift(a)
    out = Tensor(a.data.max(axis=axis, keepdims=keepdims), parents=(a,), op="max")
    # adjoint is split evenly among tied argmax positions
    kept = a.data.max(axis=axis, keepdims=True)
    mask = (a.data == kept)
    counts = mask.sum(axis=axis, keepdims=True)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None:
            g = np.asarray(g).reshape((1,) * a.data.ndim)
        a._accumulate(mask * (g / counts))
    out._backward = _bw if out.requires_grad else None
    return out


# -- nonlinearities ------------------------------------------------------------

def exp(a) -> Tensor:
    a = lift(a)
    out = Tensor(np.exp(a.data), parents=(a,), op="exp")

    def _bw(g):
        a._accumulate(g * out.data)
    out._backward = _bw if out.requires_grad else None
    return out


def log(a) -> Tensor:
    a = lift(a)
    out = Tensor(np.log(a.data), parents=(a,), op="log")

    def _bw(g):
        a._accumulate(g / a.data)
    out._backward = _bw if out.requires_grad else None
    return out


def sqrt(a) -> Tensor:
    a = lift(a)
    out = Tensor(np.sqrt(a.data), parents=(a,), op="sqrt")

    def _bw(g):
        a._accumulate(g * 0.5 / out.data)
    out._backward = _bw if out.requires_grad else None
    return out


def tanh(a) -> Tensor:
    a = lift(a)
    out = Tensor(np.tanh(a.data), parents=(a,), op="tanh")

    def _bw(g):
        a._accumulate(g * (1.0 - out.data * out.data))
    out._backward = _bw if out.requires_grad else None
    return out


def sigmoid(a) -> Tensor:
    a = lift(a)
    v = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    out = Tensor(v, parents=(a,), op="sigmoid")

    def _bw(g):
        a._accumulate(g * out.data * (1.0 - out.data))
    out._backward = _bw if out.requires_grad else None
    return out


def relu(a) -> Tensor:
    a = lift(a)
    out = Tensor(np.maximum(a.data, 0.0), parents=(a,), op="relu")

    def _bw(g):
        a._accumulate(g * (a.data > 0))
    out._backward = _bw if out.requires_grad else None
    return out


def softplus(a) -> Tensor:
    a = lift(a)
    v = np.logaddexp(0.0, a.data)
    out = Tensor(v, parents=(a,), op="softplus")

    def _bw(g):
        s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                     np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
        a._accumulate(g * s)
    out._backward = _bw if out.requires_grad else None
    return out


def softmax(a, axis=-1) -> Tensor:
    a = lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    v = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(v, parents=(a,), op="softmax")

    def _bw(g):
        inner = (g * out.data).sum(axis=axis, keepdims=True)
        a._accumulate(out.data * (g - inner))
    out._backward = _bw if out.requires_grad else None
    return out


def layer_norm(x, gain, bias, eps=1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = lift(x), lift(gain), lift(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, parents=(x, gain, bias), op="layer_norm")

    def _bw(g):
        gg = g * gain.data
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        x._accumulate(inv * (gg - m1 - xhat * m2))
        flat_g = g.reshape(-1, d)
        flat_xhat = xhat.reshape(-1, d)
        gain._accumulate((flat_g * flat_xhat).sum(axis=0))
        bias._accumulate(flat_g.sum(axis=0))
    out._backward = _bw if out.requires_grad else None
    return out


# -- tape and backward ---------------------------------------------------------

class Tape:
    """Topologically ordered record of the nodes reachable from one output."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = self._topo(output)

    @staticmethod
    def _topo(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return order

    def check_finite(self) -> None:
        """Raise NumericError naming the first op with a non-finite value or adjoint."""
        for node in self.nodes:
            if not np.all(np.isfinite(node.data)):
                raise NumericError(f"non-finite value in op {node.op!r}")
            if node.grad is not None and not np.all(np.isfinite(node.grad)):
                raise NumericError(f"non-finite adjoint in op {node.op!r}")

    def run_backward(self) -> None:
        self.output._accumulate(np.ones_like(self.output.data))
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def backward(output: Tensor, check_finite: bool = False) -> None:
    """Accumulate d(output)/d(leaf) into every reachable leaf's ``grad``.

    Repeated calls accumulate; callers reset leaf grads between passes.
    """
    if output.data.size != 1:
        raise ShapeError(f"backward requires a scalar output, got shape {output.data.shape}")
    tape = Tape(output)
    tape.run_backward()
    if check_finite:
        tape.check_finite()


# -- gradient checking -----------------------------------------------------------

def finite_difference_check(f, xs, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the tensors in ``xs`` to a scalar tensor and is re-evaluated at
    perturbed points, so it must read the current ``data`` on every call.
    Error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    xs = [x if isinstance(x, Tensor) else Tensor(x, requires_grad=True) for x in xs]
    for x in xs:
        x.requires_grad = True
        x.zero_grad()
    out = f(*xs)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("objective non-finite at the evaluation point")
    backward(out)
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in xs]

    worst = 0.0
    for x, a in zip(xs, analytic):
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(*xs).data)
            flat[i] = orig - eps
            fm = float(f(*xs).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("objective non-finite near the evaluation point")
            numeric = (fp - fm) / (2.0 * eps)
            ai = a.reshape(-1)[i]
            worst = max(worst, abs(ai - numeric) / max(1.0, abs(ai)))
    return worst
