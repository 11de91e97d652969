"""Minimal reverse-mode gradient engine on dense float64 numpy arrays.

A :class:`Tensor` wraps an ndarray and records the operation graph as it is
built. Calling ``backward()`` on a scalar result accumulates gradients into
every reachable leaf created with ``requires_grad=True``. The primitive set
is deliberately small: affine algebra, elementwise transcendentals, rectifier,
reductions, indexing/stacking, and the numerically stable (weighted)
log-softmax kernel that the loss functions share.

``grad`` runs the analytic path, ``fd_grad`` is the independent
central-difference oracle used to cross-check it; the two must never be
collapsed into one code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericsError

# Floor added under squared norms before the square root in normalize_rows.
# Keeps the training graph finite when a rectifier zeroes a whole row; for
# rows of norm >= 1e-7 the deviation from an exact unit norm is < 1e-10.
NORM_FLOOR = 1e-24


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # Make `ndarray <op> Tensor` dispatch to the reflected Tensor operator
    # instead of a numpy elementwise object loop.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @staticmethod
    def _accum(p: "Tensor", g: np.ndarray):
        if p.requires_grad:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad += g

    # -- graph traversal ---------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- basic arithmetic --------------------------------------------------

    def __add__(self, other):
        a, b = self, as_tensor(other)
        out_data = a.data + b.data

        def bw(g):
            Tensor._accum(a, _unbroadcast(g, a.data.shape))
            Tensor._accum(b, _unbroadcast(g, b.data.shape))

        return Tensor._from_op(out_data, (a, b), bw)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bw(g):
            Tensor._accum(a, -g)

        return Tensor._from_op(-a.data, (a,), bw)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        a, b = self, as_tensor(other)
        out_data = a.data * b.data

        def bw(g):
            Tensor._accum(a, _unbroadcast(g * b.data, a.data.shape))
            Tensor._accum(b, _unbroadcast(g * a.data, b.data.shape))

        return Tensor._from_op(out_data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, as_tensor(other)
        out_data = a.data / b.data

        def bw(g):
            Tensor._accum(a, _unbroadcast(g / b.data, a.data.shape))
            Tensor._accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._from_op(out_data, (a, b), bw)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, k):
        if not np.isscalar(k):
            raise TypeError("only scalar exponents are supported")
        a = self
        out_data = a.data ** k

        def bw(g):
            Tensor._accum(a, g * k * a.data ** (k - 1))

        return Tensor._from_op(out_data, (a,), bw)

    def __matmul__(self, other):
        a, b = self, as_tensor(other)
        if a.data.ndim == 1 and b.data.ndim == 1:
            out_data = a.data @ b.data

            def bw(g):
                Tensor._accum(a, g * b.data)
                Tensor._accum(b, g * a.data)

        elif a.data.ndim == 2 and b.data.ndim == 2:
            out_data = a.data @ b.data

            def bw(g):
                Tensor._accum(a, g @ b.data.T)
                Tensor._accum(b, a.data.T @ g)

        elif a.data.ndim == 2 and b.data.ndim == 1:
            out_data = a.data @ b.data

            def bw(g):
                Tensor._accum(a, np.outer(g, b.data))
                Tensor._accum(b, a.data.T @ g)

        elif a.data.ndim == 1 and b.data.ndim == 2:
            out_data = a.data @ b.data

            def bw(g):
                Tensor._accum(a, b.data @ g)
                Tensor._accum(b, np.outer(a.data, g))

        else:
            raise ValueError("matmul supports 1-D and 2-D operands only")
        return Tensor._from_op(out_data, (a, b), bw)

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    @property
    def T(self):
        a = self
        if a.data.ndim != 2:
            raise ValueError("T is defined for 2-D tensors")

        def bw(g):
            Tensor._accum(a, g.T)

        return Tensor._from_op(a.data.T, (a,), bw)

    def reshape(self, *shape):
        a = self
        old = a.data.shape

        def bw(g):
            Tensor._accum(a, g.reshape(old))

        return Tensor._from_op(a.data.reshape(*shape), (a,), bw)

    def __getitem__(self, idx):
        a = self
        out_data = a.data[idx]

        def bw(g):
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            Tensor._accum(a, buf)

        return Tensor._from_op(out_data, (a,), bw)

    # -- elementwise -------------------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def bw(g):
            Tensor._accum(a, g * out_data)

        return Tensor._from_op(out_data, (a,), bw)

    def log(self):
        a = self

        def bw(g):
            Tensor._accum(a, g / a.data)

        return Tensor._from_op(np.log(a.data), (a,), bw)

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)

        def bw(g):
            Tensor._accum(a, g * 0.5 / out_data)

        return Tensor._from_op(out_data, (a,), bw)

    def relu(self):
        a = self
        mask = a.data > 0

        def bw(g):
            Tensor._accum(a, g * mask)

        return Tensor._from_op(np.maximum(a.data, 0.0), (a,), bw)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            Tensor._accum(a, np.broadcast_to(gg, a.data.shape).copy())

        return Tensor._from_op(out_data, (a,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    # -- misc ----------------------------------------------------------------

    def detach(self):
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def stack(tensors, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out_data = np.stack([p.data for p in parts], axis=axis)

    def bw(g):
        for i, p in enumerate(parts):
            Tensor._accum(p, np.take(g, i, axis=axis))

    return Tensor._from_op(out_data, tuple(parts), bw)


def log_softmax(x, weights=None):
    """Log-probabilities of a (weighted) softmax over the last axis.

    With weights w >= 0 the output is log(w_i e^{x_i} / sum_j w_j e^{x_j})
    over the entries with w_i > 0; zero-weight entries are excluded from the
    normalizer and reported as -inf, and their gradient is exactly zero.
    Adding a constant to all inputs leaves the output unchanged.

    Accepts a Tensor or ndarray (1-D or batched rows); returns the same kind.
    """
    live = isinstance(x, Tensor)
    xt = as_tensor(x)
    z = xt.data
    if not np.isfinite(z).all():
        raise ValueError("log_softmax: non-finite logits")
    if weights is None:
        support = np.ones(z.shape, dtype=bool)
        w = None
    else:
        w = np.asarray(weights, dtype=np.float64)
        if not np.isfinite(w).all() or (w < 0).any():
            raise ValueError("log_softmax: weights must be finite and nonnegative")
        w = np.broadcast_to(w, z.shape)
        support = w > 0
        if not support.any(axis=-1).all():
            raise ValueError("log_softmax: a row has no positive weight")

    m = np.max(np.where(support, z, -np.inf), axis=-1, keepdims=True)
    ez = np.where(support, np.exp(z - m), 0.0)
    if w is not None:
        ez = ez * np.where(support, w, 0.0)
    s = ez.sum(axis=-1, keepdims=True)
    p = ez / s
    logw = 0.0 if w is None else np.where(support, np.log(np.where(support, w, 1.0)), 0.0)
    out_data = np.where(support, z + logw - (m + np.log(s)), -np.inf)

    def bw(g):
        geff = np.where(support, g, 0.0)
        gz = geff - p * geff.sum(axis=-1, keepdims=True)
        Tensor._accum(xt, gz)

    out = Tensor._from_op(out_data, (xt,), bw)
    return out if live else out.data


def normalize_rows(x, axis: int = -1) -> Tensor:
    """Scale rows to (floored) unit Euclidean norm inside the graph."""
    xt = as_tensor(x)
    n2 = (xt * xt).sum(axis=axis, keepdims=True)
    return xt / (n2 + NORM_FLOOR).sqrt()


@dataclass
class GradResult:
    """Scalar loss value plus one gradient array per parameter block."""

    value: float
    grads: dict[str, np.ndarray]


def make_leaves(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def collect_grads(leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for k, t in leaves.items()
    }


def grad(loss_fn, params: dict[str, np.ndarray]) -> GradResult:
    """Analytic reverse-mode gradient of a scalar loss of parameter blocks.

    `loss_fn` receives a dict of Tensors (same keys as `params`) and must
    return a scalar Tensor built from supported primitives.
    """
    leaves = make_leaves(params)
    out = loss_fn(leaves)
    if not isinstance(out, Tensor):
        raise TypeError("loss_fn must return a Tensor (got %r)" % type(out).__name__)
    out.backward()
    grads = collect_grads(leaves)
    value = float(out.data)
    if not np.isfinite(value) or any(not np.isfinite(g).all() for g in grads.values()):
        raise NumericsError("grad: non-finite loss or gradients")
    return GradResult(value=value, grads=grads)


def fd_grad(loss_fn, params: dict[str, np.ndarray], eps: float = 1e-5) -> GradResult:
    """Central finite-difference gradient oracle, (L(x+eps)-L(x-eps))/2eps."""
    if not (0.0 < eps <= 1e-2):
        raise ValueError("fd_grad: eps must lie in (0, 1e-2]")

    def evaluate(p: dict[str, np.ndarray]) -> float:
        out = loss_fn({k: Tensor(v) for k, v in p.items()})
        val = float(out.data if isinstance(out, Tensor) else out)
        if not np.isfinite(val):
            raise NumericsError("fd_grad: non-finite loss evaluation")
        return val

    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    grads = {}
    for key, arr in base.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = evaluate(base)
            flat[i] = orig - eps
            lo = evaluate(base)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads[key] = g
    return GradResult(value=evaluate(base), grads=grads)
