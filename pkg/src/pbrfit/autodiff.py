"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every primitive below accepts plain ``numpy`` arrays or :class:`Var` nodes.
When no argument is a ``Var`` the primitive reduces to the plain numpy
computation and returns an ``ndarray``, so the same code path serves both the
fast forward-only case and the differentiable case.

Example::

    x = Var(np.array([1.0, 2.0]))
    y = ad.sum(ad.exp(x) * 3.0)
    backward(y)
    x.grad  # 3 * exp(x)
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Var", "backward", "grad", "value", "is_var", "const",
    "add", "sub", "mul", "div", "neg", "power", "matmul", "exp", "log", "sqrt",
    "sigmoid", "softplus", "relu", "abs", "clip", "maximum", "minimum", "where",
    "sum", "mean", "reshape", "transpose", "getitem", "concatenate", "stack",
    "cumsum", "take_rows", "sparse_dot", "square", "dot_last", "normalize",
    "floor_const", "custom",
]


class Var:
    """A node in the computation graph.

    Leaves created by the user get their gradient in ``.grad`` after
    :func:`backward`.
    """

    __array_priority__ = 1000
    __slots__ = ("value", "grad", "_parents", "_vjp", "name")

    def __init__(self, value, parents=(), vjp=None, name=None):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = parents
        self._vjp = vjp
        self.name = name

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)
    dtype = property(lambda self: self.value.dtype)
    T = property(lambda self: transpose(self))

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)


def is_var(x) -> bool:
    return isinstance(x, Var)


def value(x):
    """Strip the graph: return the underlying ndarray."""
    return x.value if isinstance(x, Var) else x


def const(x) -> Var:
    return Var(x)


def _any_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(val, parents, vjp):
    """Create a graph node; non-Var parents are dropped from the graph."""
    keep = tuple((i, p) for i, p in enumerate(parents) if isinstance(p, Var))
    if not keep:
        return val
    idx = [i for i, _ in keep]

    def sub_vjp(g):
        gs = vjp(g)
        return tuple(gs[i] for i in idx)

    return Var(val, tuple(p for _, p in keep), sub_vjp)


def custom(val, parents, vjp):
    """Register a hand-written primitive.

    ``vjp(g)`` must return one cotangent per entry of ``parents`` (``None``
    for non-differentiable inputs).
    """
    return _node(np.asarray(val), tuple(parents), vjp)


def backward(out, seed=None):
    """Accumulate d(out)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if not isinstance(out, Var):
        return
    order = []
    seen = set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(out): np.ones_like(out.value) if seed is None
             else np.asarray(seed, dtype=out.value.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._vjp(g)):
            if pg is None:
                continue
            k = id(p)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg


def grad(fn, *args):
    """Return ``(fn(*args) value, [d/d arg ...])`` for a scalar-valued fn."""
    xs = [Var(np.array(a, dtype=float)) for a in args]
    out = fn(*xs)
    backward(out)
    gs = [x.grad if x.grad is not None else np.zeros_like(x.value) for x in xs]
    return value(out), gs


# -- elementwise arithmetic -------------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    if not _any_var(a, b):
        return out
    return _node(out, (a, b), lambda g: (_unbroadcast(g, np.shape(av)),
                                         _unbroadcast(g, np.shape(bv))))


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv
    if not _any_var(a, b):
        return out
    return _node(out, (a, b), lambda g: (_unbroadcast(g, np.shape(av)),
                                         _unbroadcast(-g, np.shape(bv))))


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    if not _any_var(a, b):
        return out
    return _node(out, (a, b), lambda g: (_unbroadcast(g * bv, np.shape(av)),
                                         _unbroadcast(g * av, np.shape(bv))))


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    if not _any_var(a, b):
        return out
    return _node(out, (a, b), lambda g: (
        _unbroadcast(g / bv, np.shape(av)),
        _unbroadcast(-g * out / bv, np.shape(bv))))


def neg(a):
    if not isinstance(a, Var):
        return -a
    return _node(-a.value, (a,), lambda g: (-g,))


def square(a):
    av = value(a)
    if not isinstance(a, Var):
        return av * av
    return _node(av * av, (a,), lambda g: (2.0 * g * av,))


def power(a, k):
    """``a ** k`` for a constant exponent ``k``."""
    av = value(a)
    out = av ** k
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g * k * av ** (k - 1),))


def exp(a):
    out = np.exp(value(a))
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    av = value(a)
    out = np.log(av)
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g / av,))


def sqrt(a):
    out = np.sqrt(value(a))
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def sigmoid(a):
    av = value(a)
    e = np.exp(-np.abs(av))
    r = 1.0 / (1.0 + e)
    out = np.where(av >= 0, r, e * r)
    out = out.astype(np.result_type(av, np.float32), copy=False)
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    av = value(a)
    out = np.logaddexp(0.0, av).astype(np.result_type(av, np.float32), copy=False)
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g * sigmoid(av),))


def relu(a):
    av = value(a)
    out = np.maximum(av, 0)
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g * (av > 0),))


def abs(a):  # noqa: A001 - mirrors numpy naming
    av = value(a)
    out = np.abs(av)
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g * np.sign(av),))


def clip(a, lo, hi):
    """Clamp; the gradient passes inside the closed interval ``[lo, hi]``."""
    av = value(a)
    out = np.clip(av, lo, hi)
    if not isinstance(a, Var):
        return out
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    return _node(out, (a,), lambda g: (g * ((av >= lo_) & (av <= hi_)),))


def maximum(a, b):
    av, bv = value(a), value(b)
    out = np.maximum(av, bv)
    if not _any_var(a, b):
        return out
    pick = av >= bv
    return _node(out, (a, b), lambda g: (_unbroadcast(g * pick, np.shape(av)),
                                         _unbroadcast(g * ~pick, np.shape(bv))))


def minimum(a, b):
    av, bv = value(a), value(b)
    out = np.minimum(av, bv)
    if not _any_var(a, b):
        return out
    pick = av <= bv
    return _node(out, (a, b), lambda g: (_unbroadcast(g * pick, np.shape(av)),
                                         _unbroadcast(g * ~pick, np.shape(bv))))


def where(cond, a, b):
    cond = np.asarray(value(cond), dtype=bool)
    av, bv = value(a), value(b)
    out = np.where(cond, av, bv)
    if not _any_var(a, b):
        return out
    return _node(out, (a, b), lambda g: (
        _unbroadcast(np.where(cond, g, 0), np.shape(av)),
        _unbroadcast(np.where(cond, 0, g), np.shape(bv))))


def floor_const(a):
    """Floor as a piecewise-constant (zero-gradient) value."""
    return np.floor(value(a))


# -- reductions and shape ops -----------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001
    av = value(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    if not isinstance(a, Var):
        return out
    shape = av.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return _node(out, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    av = value(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def dot_last(a, b, keepdims=False):
    """Inner product over the last axis."""
    return sum(mul(a, b), axis=-1, keepdims=keepdims)


def normalize(a, eps=1e-12):
    """L2-normalize over the last axis."""
    n = sqrt(maximum(dot_last(a, a, keepdims=True), eps * eps))
    return div(a, n)


def reshape(a, shape):
    av = value(a)
    out = np.reshape(av, shape)
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (np.reshape(g, av.shape),))


def transpose(a, axes=None):
    av = value(a)
    out = np.transpose(av, axes)
    if not isinstance(a, Var):
        return out
    inv = None if axes is None else np.argsort(axes)
    return _node(out, (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx):
    av = value(a)
    out = av[idx]
    if not isinstance(a, Var):
        return out

    basic = all(not isinstance(i, (np.ndarray, list)) for i in
                (idx if isinstance(idx, tuple) else (idx,)))

    def vjp(g):
        full = np.zeros_like(av)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)
    return _node(out, (a,), vjp)


def concatenate(xs, axis=0):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if not _any_var(*xs):
        return out
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return _node(out, tuple(xs), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(xs, axis=0):
    vals = [value(x) for x in xs]
    out = np.stack(vals, axis=axis)
    if not _any_var(*xs):
        return out

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))
    return _node(out, tuple(xs), vjp)


def cumsum(a, axis=-1):
    av = value(a)
    out = np.cumsum(av, axis=axis)
    if not isinstance(a, Var):
        return out

    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)
    return _node(out, (a,), vjp)


def matmul(a, b):
    av, bv = value(a), value(b)
    out = av @ bv
    if not _any_var(a, b):
        return out

    def vjp(g):
        ga = gb = None
        if isinstance(a, Var):
            ga = g @ np.swapaxes(bv, -1, -2) if bv.ndim > 1 else np.outer(g, bv)
            ga = _unbroadcast(ga, av.shape)
        if isinstance(b, Var):
            if av.ndim == 1:
                gb = np.outer(av, g)
            else:
                gb = np.swapaxes(av, -1, -2) @ g
            gb = _unbroadcast(gb, bv.shape)
        return ga, gb
    return _node(out, (a, b), vjp)


def _scatter_rows(idx, g, n_rows):
    """Sum rows of ``g`` into ``n_rows`` buckets given by flat ``idx``."""
    idx = idx.ravel()
    g2 = g.reshape(idx.size, -1)
    out = np.empty((n_rows, g2.shape[1]), dtype=g.dtype)
    for c in range(g2.shape[1]):
        out[:, c] = np.bincount(idx, weights=g2[:, c], minlength=n_rows)
    return out


def take_rows(a, idx):
    """``a[idx]`` for a 2-D ``a`` and integer index array of any shape."""
    av = value(a)
    out = av[idx]
    if not isinstance(a, Var):
        return out
    n, rest = av.shape[0], av.shape[1:]
    return _node(out, (a,), lambda g: (
        _scatter_rows(idx, g, n).reshape((n,) + rest),))


def sparse_dot(m, a, mt=None):
    """``m @ a`` for a constant scipy sparse matrix ``m``.

    Pass the precomputed transpose ``mt`` when the same operator is applied
    repeatedly.
    """
    av = value(a)
    out = np.asarray(m @ av)
    if not isinstance(a, Var):
        return out
    if mt is None:
        mt = m.T.tocsr() if sp.issparse(m) else m.T
    return _node(out, (a,), lambda g: (np.asarray(mt @ g),))
