"""Small reverse-mode autodiff over numpy arrays.

A :class:`Tape` records one node per primitive operation.  Values may be
python floats (scalars) or numpy arrays; all arithmetic broadcasts like
numpy and gradients are summed back to the operand shapes.

Example
-------
>>> tape = Tape()
>>> x = tape.var(3.0)
>>> y = x * x
>>> grads = tape.backward(y)
>>> float(grads[x])
6.0
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# below this norm the derivative of sqrt/norm is defined as zero
NORM_EPS = 1e-300


class UsageError(RuntimeError):
    pass


class NumericalError(FloatingPointError):
    pass


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class Var:
    """A value living on a tape.  ``DiffScalar`` when the value is 0-d."""

    __slots__ = ("value", "tape", "index")
    __array_priority__ = 1000

    def __init__(self, value, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var({self.value!r}, id={self.index})"

    def __float__(self):
        return float(self.value)

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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def sum(self, axis=None):
        return vsum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


DiffScalar = Var


class Gradients(dict):
    """Leaf adjoints keyed by node id; also indexable by the leaf itself."""

    def __getitem__(self, key):
        if isinstance(key, Var):
            key = key.index
        return dict.__getitem__(self, key)

    def get(self, key, default=None):
        if isinstance(key, Var):
            key = key.index
        return dict.get(self, key, default)


class Tape:
    """Dynamic gradient tape.  Rebuild one per evaluation."""

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[Callable | None] = []
        self._shapes: list[tuple] = []
        self.live = True
        # set when a leaky rule took its biased branch with alpha > 0
        self.biased = False

    def __len__(self):
        return len(self._vjps)

    def var(self, value) -> Var:
        """Register a leaf (an input to differentiate with respect to)."""
        if not self.live:
            raise UsageError("tape has been cleared")
        v = value if np.isscalar(value) else np.array(value, dtype=float)
        if np.isscalar(v):
            v = float(v)
        return self._push(v, (), None)

    def _push(self, value, parents, vjp) -> Var:
        idx = len(self._vjps)
        self._parents.append(parents)
        self._vjps.append(vjp)
        self._shapes.append(np.shape(value))
        return Var(value, self, idx)

    def record(self, value, parents: Sequence[Var], vjp: Callable) -> Var:
        """Custom primitive: ``vjp(g)`` returns one cotangent per parent."""
        return self._push(value, tuple(p.index for p in parents), vjp)

    def backward(self, output: Var) -> Gradients:
        if not isinstance(output, Var) or output.tape is not self:
            raise UsageError("output was not computed on this tape")
        if not self.live:
            raise UsageError("tape has been cleared")
        adj: list = [None] * (output.index + 1)
        adj[output.index] = np.ones(self._shapes[output.index])
        grads = Gradients()
        for i in range(output.index, -1, -1):
            g = adj[i]
            if g is None:
                continue
            vjp = self._vjps[i]
            if vjp is None:
                grads[i] = g
                continue
            for p, gp in zip(self._parents[i], vjp(g)):
                if gp is None:
                    continue
                gp = _unbroadcast(gp, self._shapes[p])
                adj[p] = gp if adj[p] is None else adj[p] + gp
        return grads

    def grad(self, output: Var, inputs: Sequence[Var]):
        g = self.backward(output)
        return [np.broadcast_to(g.get(x, 0.0), x.shape).copy() if np.ndim(x.value) else float(g.get(x, 0.0))
                for x in inputs]

    def clear(self):
        self._parents.clear()
        self._vjps.clear()
        self._shapes.clear()
        self.biased = False


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _val(x):
    return x.value if isinstance(x, Var) else x


def _binary(a, b, value, ga, gb):
    tape = _tape_of(a, b)
    if tape is None:
        return value
    parents, fns = [], []
    if isinstance(a, Var):
        parents.append(a)
        fns.append(ga)
    if isinstance(b, Var):
        parents.append(b)
        fns.append(gb)
    return tape.record(value, parents, lambda g: [f(g) for f in fns])


def _unary(x, value, vjp):
    if not isinstance(x, Var):
        return value
    return x.tape.record(value, (x,), lambda g: (vjp(g),))


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    return _binary(a, b, _val(a) + _val(b), lambda g: g, lambda g: g)


def sub(a, b):
    return _binary(a, b, _val(a) - _val(b), lambda g: g, lambda g: -g)


def mul(a, b):
    av, bv = _val(a), _val(b)
    return _binary(a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def div(a, b):
    av, bv = _val(a), _val(b)
    out = av / bv
    return _binary(a, b, out, lambda g: g / bv, lambda g: -g * out / bv)


def neg(x):
    return _unary(x, -_val(x), lambda g: -g)


def power(x, p: float):
    xv = _val(x)
    return _unary(x, xv ** p, lambda g: g * p * xv ** (p - 1))


def matmul(a, b):
    av, bv = _val(a), _val(b)
    a1, b1 = np.ndim(av) == 1, np.ndim(bv) == 1

    def ga(g):
        if a1 and b1:
            return g * bv
        if b1:
            return g[..., :, None] * bv
        if a1:
            return (bv @ g[..., :, None])[..., 0]
        return g @ np.swapaxes(bv, -1, -2)

    def gb(g):
        if a1 and b1:
            return g * av
        if b1:
            return np.einsum("...mk,...m->...k", av, g)
        if a1:
            return av[:, None] * g[..., None, :]
        return np.swapaxes(av, -1, -2) @ g

    return _binary(a, b, av @ bv, ga, gb)


def vsum(x, axis=None, keepdims=False):
    xv = _val(x)
    shape = np.shape(xv)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    return _unary(x, np.sum(xv, axis=axis, keepdims=keepdims), vjp)


def mean(x, axis=None):
    n = np.size(_val(x)) if axis is None else np.shape(_val(x))[axis]
    return vsum(x, axis) * (1.0 / n)


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def getitem(x, idx):
    xv = _val(x)
    shape = np.shape(xv)
    basic = _is_basic(idx)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g  # basic indexing never repeats an element
        else:
            np.add.at(out, idx, g)
        return out

    return _unary(x, xv[idx], vjp)


def take(x, indices, axis=0):
    """Gather along ``axis`` (repeated indices accumulate in backward)."""
    xv = _val(x)
    shape = np.shape(xv)
    indices = np.asarray(indices)

    def vjp(g):
        g0 = np.moveaxis(g, axis, 0)
        n = shape[axis]
        rest = g0.shape[indices.ndim:]
        cols = int(np.prod(rest))
        flat = indices.reshape(-1)[:, None] * cols + np.arange(cols)
        out = np.bincount(flat.ravel(), weights=g0.ravel(), minlength=n * cols)
        return np.moveaxis(out.reshape((n,) + rest), 0, axis)

    return _unary(x, np.take(xv, indices, axis=axis), vjp)


def reshape(x, shape):
    xv = _val(x)
    old = np.shape(xv)
    return _unary(x, np.reshape(xv, shape), lambda g: np.reshape(g, old))


def swapaxes(x, a1, a2):
    return _unary(x, np.swapaxes(_val(x), a1, a2), lambda g: np.swapaxes(g, a1, a2))


def expand_dims(x, axis):
    xv = _val(x)
    return _unary(x, np.expand_dims(xv, axis), lambda g: np.squeeze(g, axis))


def concatenate(xs: Sequence, axis=0):
    vals = [_val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    tape = _tape_of(*xs)
    if tape is None:
        return out
    sizes = np.cumsum([np.shape(v)[axis] for v in vals])[:-1]
    parents = [x for x in xs if isinstance(x, Var)]
    mask = [isinstance(x, Var) for x in xs]

    def vjp(g):
        parts = np.split(g, sizes, axis=axis)
        return [p for p, m in zip(parts, mask) if m]

    return tape.record(out, parents, vjp)


def stack(xs: Sequence, axis=0):
    return concatenate([expand_dims(x, axis) if isinstance(x, Var) else np.expand_dims(x, axis) for x in xs], axis)


# -------------------------------------------------------------- elementwise

def sin(x):
    xv = _val(x)
    return _unary(x, np.sin(xv), lambda g: g * np.cos(xv))


def cos(x):
    xv = _val(x)
    return _unary(x, np.cos(xv), lambda g: -g * np.sin(xv))


def exp(x):
    out = np.exp(_val(x))
    return _unary(x, out, lambda g: g * out)


def absolute(x):
    xv = _val(x)
    return _unary(x, np.abs(xv), lambda g: g * np.sign(xv))


def sqrt(x):
    """Square root whose derivative at 0 is defined as 0."""
    out = np.sqrt(_val(x))

    def vjp(g):
        safe = np.where(out > NORM_EPS, out, 1.0)
        return np.where(out > NORM_EPS, g * 0.5 / safe, 0.0)

    return _unary(x, out, vjp)


def minimum(a, b):
    """Elementwise min; ties send the gradient to ``b`` (so min(x, 0) has slope 0 at 0)."""
    av, bv = _val(a), _val(b)
    pick_a = av < bv
    return _binary(a, b, np.minimum(av, bv), lambda g: g * pick_a, lambda g: g * ~pick_a)


def maximum(a, b):
    av, bv = _val(a), _val(b)
    pick_a = av >= bv
    return _binary(a, b, np.maximum(av, bv), lambda g: g * pick_a, lambda g: g * ~pick_a)


def relu(x):
    """max(x, 0) with zero derivative at the kink."""
    xv = _val(x)
    return _unary(x, np.maximum(xv, 0.0), lambda g: g * (xv > 0))


def clip(x, lo, hi):
    xv = _val(x)
    inside = (xv >= lo) & (xv <= hi)
    return _unary(x, np.clip(xv, lo, hi), lambda g: g * inside)


def where(cond, a, b):
    cond = np.asarray(cond)
    av, bv = _val(a), _val(b)
    return _binary(a, b, np.where(cond, av, bv), lambda g: g * cond, lambda g: g * ~cond)


def sinc(x):
    """sin(x)/x, smooth through 0."""
    xv = np.asarray(_val(x), dtype=float)
    small = np.abs(xv) < 1e-4
    x2 = xv * xv
    safe = np.where(small, 1.0, xv)
    val = np.where(small, 1 - x2 / 6 + x2 * x2 / 120, np.sin(safe) / safe)
    der = np.where(small, -xv / 3 + x2 * xv / 30, (np.cos(safe) * safe - np.sin(safe)) / (safe * safe))
    return _unary(x, val[()] if val.ndim == 0 else val, lambda g: g * der)


def cosc(x):
    """(1 - cos x)/x^2, smooth through 0."""
    xv = np.asarray(_val(x), dtype=float)
    small = np.abs(xv) < 1e-3
    x2 = xv * xv
    safe = np.where(small, 1.0, xv)
    val = np.where(small, 0.5 - x2 / 24 + x2 * x2 / 720, (1 - np.cos(safe)) / (safe * safe))
    der = np.where(small, -xv / 12 + x2 * xv / 180,
                   (safe * np.sin(safe) - 2 * (1 - np.cos(safe))) / safe ** 3)
    return _unary(x, val[()] if val.ndim == 0 else val, lambda g: g * der)


def leaky_min_zero(x, alpha: float):
    """min(x, 0) whose derivative is 1 below zero and ``alpha`` otherwise.

    ``alpha = 0`` is exactly ``min(x, 0)``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    xv = _val(x)
    inside = xv < 0
    out = np.minimum(xv, 0.0)
    if isinstance(x, Var) and alpha > 0 and not np.all(inside):
        x.tape.biased = True
    der = np.where(inside, 1.0, alpha)
    return _unary(x, out, lambda g: g * der)


# ------------------------------------------------------------------- vectors

def norm(x):
    """Euclidean norm of the whole array; derivative at zero is 0."""
    xv = _val(x)
    n = float(np.sqrt(np.sum(np.square(xv))))

    def vjp(g):
        if n <= NORM_EPS:
            return np.zeros_like(xv)
        return g * xv / n

    return _unary(x, n, vjp)


def rownorm(x):
    """Norm along the last axis; derivative at zero rows is 0."""
    xv = _val(x)
    n = np.sqrt(np.sum(np.square(xv), axis=-1))

    def vjp(g):
        safe = np.where(n > NORM_EPS, n, 1.0)
        return np.where((n > NORM_EPS)[..., None], g[..., None] * xv / safe[..., None], 0.0)

    return _unary(x, n, vjp)


def dot(a, b):
    """Inner product along the last axis."""
    return vsum(mul(a, b), axis=-1)


def cross(a, b):
    av, bv = _val(a), _val(b)
    return _binary(a, b, np.cross(av, bv), lambda g: np.cross(bv, g), lambda g: np.cross(g, av))


def vmax(x, axis=-1):
    """Max-reduce; the gradient goes to the first maximal entry."""
    xv = _val(x)
    arg = np.argmax(xv, axis=axis)

    def vjp(g):
        out = np.zeros(np.shape(xv))
        np.put_along_axis(out, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return out

    return _unary(x, np.max(xv, axis=axis), vjp)


def skew(w):
    """Batched cross-product matrix of (..., 3) -> (..., 3, 3)."""
    z = np.zeros(np.shape(_val(w))[:-1])
    w0, w1, w2 = w[..., 0], w[..., 1], w[..., 2]
    rows = [stack([z, -w2, w1], -1), stack([w2, z, -w0], -1), stack([-w1, w0, z], -1)]
    return stack(rows, -2)


def rotvec_to_matrix(w):
    """Rodrigues map for a single rotation vector (3,) -> (3, 3)."""
    theta = norm(w)
    k = skew(w)
    return np.eye(3) + sinc(theta) * k + cosc(theta) * (k @ k)


# ------------------------------------------------------------- FD harness

@dataclass
class FDCheck:
    max_error: float
    worst_index: tuple
    ad_grad: np.ndarray
    fd_grad: np.ndarray
    intentional_bias: bool

    def __float__(self):
        return self.max_error

    def __lt__(self, other):
        return self.max_error < other

    def __le__(self, other):
        return self.max_error <= other

    def __gt__(self, other):
        return self.max_error > other


def _coord(i, shape):
    return tuple(int(k) for k in np.unravel_index(i, shape))


def finite_difference_check(f: Callable[[Tape, Var], Var], x, h: float = 1e-5) -> FDCheck:
    """Compare tape gradients of ``f(tape, x)`` against central differences.

    The error per coordinate is ``|g_ad - g_fd| / max(1, |g_fd|)``.  When the
    function takes a leaky branch the result carries ``intentional_bias``.
    """
    x = np.array(x, dtype=float)
    tape = Tape()
    xv = tape.var(x)
    out = f(tape, xv)
    if not np.isfinite(out.value):
        raise NumericalError("function value is not finite at the base point")
    g = tape.backward(out).get(xv, np.zeros_like(x))
    g_ad = np.broadcast_to(g, x.shape).astype(float)
    biased = tape.biased

    g_fd = np.zeros_like(x)
    flat = g_fd.reshape(-1)
    for i in range(x.size):
        vals = []
        for s in (h, -h):
            xp = x.copy().reshape(-1)
            xp[i] += s
            t = Tape()
            fv = float(_val(f(t, t.var(xp.reshape(x.shape)))))
            if not np.isfinite(fv):
                raise NumericalError(f"non-finite value at coordinate {_coord(i, x.shape)}")
            vals.append(fv)
        flat[i] = (vals[0] - vals[1]) / (2 * h)
    err = np.abs(g_ad - g_fd) / np.maximum(1.0, np.abs(g_fd))
    if not np.all(np.isfinite(g_ad)):
        bad = _coord(int(np.argmax(~np.isfinite(g_ad))), x.shape)
        raise NumericalError(f"non-finite tape gradient at coordinate {bad}")
    worst = np.unravel_index(int(np.argmax(err)), x.shape) if x.size else ()
    return FDCheck(float(err.max()) if x.size else 0.0, tuple(int(i) for i in worst), g_ad, g_fd, biased)
