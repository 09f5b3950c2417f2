"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps an ndarray and records the operation that produced
it; ``backward()`` on a scalar root walks the tape in reverse topological
order and accumulates vector-Jacobian products into ``.grad``.  Inside a
:class:`no_grad` block the same ops run as plain numpy with no recording,
so every numeric routine in the package has a single implementation.

System evaluations enter the tape through the custom ops at the bottom
(:func:`system_field`, :func:`system_curvature`, :func:`grad_potential`),
whose backward rules use the systems' analytic Jacobians rather than
tracing through their internals.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("_value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None):
        self._value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def value(self):
        return self._value

    @value.setter
    def value(self, new):
        # always an ndarray: numpy scalars silently drop in-place writes
        self._value = np.asarray(new, dtype=float)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar root")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, pgrad in zip(node._parents, node._vjp(node.grad)):
                if pgrad is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(pgrad, dtype=float)
                else:
                    parent.grad = parent.grad + pgrad

    # Operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, k):
        return power(self, k)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return tmean(self, axis=axis)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    """A leaf tensor that never receives gradients."""
    return Tensor(x)


def _make(value, parents, vjp):
    if _GRAD_ENABLED:
        return Tensor(value, parents, vjp)
    return Tensor(value)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def vjp(g):
        return _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)

    return _make(av + bv, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def vjp(g):
        return _unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)

    return _make(av - bv, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def vjp(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _make(av * bv, (a, b), vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv

    def vjp(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)

    return _make(out, (a, b), vjp)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def vjp(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), vjp)


def power(a, k):
    a = as_tensor(a)
    av = a.value
    k = float(k)

    def vjp(g):
        return (g * k * av ** (k - 1.0),)

    return _make(av ** k, (a,), vjp)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), vjp)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.value)

    def vjp(g):
        return (0.5 * g / out,)

    return _make(out, (a,), vjp)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    av = a.value
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape).copy(),)

    return _make(out, (a,), vjp)


def tmean(a, axis=None):
    a = as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    values = [t.value for t in tensors]
    sizes = [v.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate(values, axis=axis), tuple(tensors), vjp)


def take_cols(a, indices):
    a = as_tensor(a)
    av = a.value
    idx = np.asarray(indices, dtype=int)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, (slice(None), idx), g)
        return (out,)

    return _make(av[:, idx], (a,), vjp)


def take_rows(a, start, stop):
    """Contiguous row slice a[start:stop]."""
    a = as_tensor(a)
    av = a.value

    def vjp(g):
        out = np.zeros_like(av)
        out[start:stop] = g
        return (out,)

    return _make(av[start:stop], (a,), vjp)


def scatter_cols(a, indices, width):
    """Place the columns of ``a`` at ``indices`` inside a zero (n, width) array."""
    a = as_tensor(a)
    av = a.value
    idx = np.asarray(indices, dtype=int)
    out = np.zeros((av.shape[0], width))
    out[:, idx] = av

    def vjp(g):
        return (g[:, idx],)

    return _make(out, (a,), vjp)


def rows_norm(a, keepdims=True):
    """Euclidean norm of each row."""
    return sqrt(tsum(mul(a, a), axis=1, keepdims=keepdims))


def gated_time(w, t):
    """tanh(w t) / w, with a series branch near w t = 0.

    The limit w -> 0+ recovers t; the series branch (|w t| < 1e-4) keeps the
    value and both partials finite and matches the direct branch to ~1e-12.
    """
    w, t = as_tensor(w), as_tensor(t)
    wv, tv = w.value, t.value
    x = wv * tv
    th = np.tanh(x)
    small = np.abs(x) < 1e-4
    x2 = x * x
    out = np.where(small, tv * (1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0), th / np.where(wv == 0, 1.0, wv))
    dt = 1.0 - th * th
    dw_series = -2.0 * wv * tv ** 3 / 3.0 + 8.0 * wv ** 3 * tv ** 5 / 15.0
    with np.errstate(divide="ignore", invalid="ignore"):
        dw_direct = (tv * dt * wv - th) / (wv * wv)
    dw = np.where(small, dw_series, dw_direct)

    def vjp(g):
        return _unbroadcast(g * dw, wv.shape), _unbroadcast(g * dt, tv.shape)

    return _make(out, (w, t), vjp)


def system_field(system, u, eps=None):
    """f(u) as a tape op; backward contracts with the analytic Jacobian."""
    u = as_tensor(u)
    uv = u.value
    if eps is None:
        fval = system.vector_field(uv)
    else:
        fval = system.vector_field(uv, eps=eps)

    def vjp(g):
        df = system.jacobian(uv) if eps is None else system.jacobian(uv, eps=eps)
        return (np.einsum("nij,ni->nj", df, g),)

    return _make(fval, (u,), vjp)


def system_curvature(system, u, eps=None):
    """Df(u) f(u) as a tape op; backward uses the analytic curvature Jacobian."""
    u = as_tensor(u)
    uv = u.value
    if eps is None:
        val = system.curvature(uv)
    else:
        val = system.curvature(uv, eps=eps)

    def vjp(g):
        dj = system.curvature_jacobian(uv) if eps is None else system.curvature_jacobian(uv, eps=eps)
        return (np.einsum("nij,ni->nj", dj, g),)

    return _make(val, (u,), vjp)


def grad_potential(system, q):
    """grad U(q) for a separable system; backward uses the potential Hessian."""
    q = as_tensor(q)
    qv = q.value
    val = system.grad_potential(qv)

    def vjp(g):
        hess = system.hess_potential(qv)
        return (np.einsum("nij,ni->nj", hess, g),)

    return _make(val, (q,), vjp)


def gradient_check(loss_fn, params, n_probes=50, step=1e-5, rng=None):
    """Max relative gap between reverse-mode and central-difference gradients.

    Probes ``n_probes`` random parameter coordinates.  Coordinates whose
    gradients sit below the finite-difference noise floor (machine epsilon
    times loss scale over step) are treated as agreeing, since the oracle
    cannot resolve them.
    """
    rng = np.random.default_rng(rng)
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.value))
             for name, t in params.items()}

    coords = [(name, i) for name, t in params.items() for i in range(t.value.size)]
    take = min(n_probes, len(coords))
    picked = [coords[k] for k in rng.choice(len(coords), size=take, replace=False)]

    loss_scale = max(abs(float(loss.value)), 1.0)
    grad_scale = max((np.max(np.abs(g)) for g in grads.values()), default=0.0)
    # roundoff of the quotient plus the truncation scale of the stencil,
    # relative to the dominant gradient: below this FD says nothing
    noise_floor = max(50.0 * np.finfo(float).eps * loss_scale / step, 1e-6 * grad_scale)

    worst = 0.0
    for name, i in picked:
        tensor = params[name]
        saved = tensor.value.flat[i]
        with no_grad():
            tensor.value.flat[i] = saved + step
            up = float(loss_fn().value)
            tensor.value.flat[i] = saved - step
            down = float(loss_fn().value)
        tensor.value.flat[i] = saved
        fd = (up - down) / (2.0 * step)
        ad = grads[name].flat[i]
        if abs(ad) + abs(fd) <= noise_floor:
            continue
        worst = max(worst, abs(ad - fd) / (abs(ad) + abs(fd)))
    return worst
