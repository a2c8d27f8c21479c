"""Reverse-mode differentiation over a fixed vocabulary of array operations.

A :class:`Var` wraps an ndarray and remembers which op produced it, its parents
and one gradient rule per parent. :func:`backward` walks the graph in reverse
creation order (node ids increase monotonically, which makes descending id a
valid reverse topological order) and returns the gradient of a scalar loss with
respect to every leaf that requires it.

Every op also accepts plain arrays. When no argument is a :class:`Var` the op
returns a plain ndarray, so the same model code runs with or without a tape.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import ContractError

_ids = itertools.count()


class Var:
    """A node of the computation graph."""

    __slots__ = ("value", "parents", "grad_fns", "requires_grad", "id", "op", "name", "grad")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value)
        self.parents: tuple = ()
        self.grad_fns: tuple | None = None
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.op = "leaf"
        self.name = name
        self.grad: np.ndarray | None = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var<{self.op}{tag} shape={self.value.shape}>"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

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

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def param(value, name: str | None = None) -> Var:
    """A leaf that receives a gradient."""
    return Var(np.array(value, copy=True), requires_grad=True, name=name)


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def _node(out: np.ndarray, parents: Sequence, grad_fns: Sequence[Callable], op: str):
    tracked = [isinstance(p, Var) for p in parents]
    if not any(tracked):
        return out
    v = Var(out)
    v.op = op
    if any(isinstance(p, Var) and p.requires_grad for p in parents):
        v.requires_grad = True
        v.parents = tuple(parents)
        v.grad_fns = tuple(grad_fns)
    return v


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    return _node(out, (a, b), (lambda g: unbroadcast(g, av.shape), lambda g: unbroadcast(g, bv.shape)), "add")


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv
    return _node(out, (a, b), (lambda g: unbroadcast(g, av.shape), lambda g: unbroadcast(-g, bv.shape)), "sub")


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    return _node(
        out, (a, b), (lambda g: unbroadcast(g * bv, av.shape), lambda g: unbroadcast(g * av, bv.shape)), "mul"
    )


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _node(
        out,
        (a, b),
        (lambda g: unbroadcast(g / bv, av.shape), lambda g: unbroadcast(-g * out / bv, bv.shape)),
        "div",
    )


def neg(a):
    return _node(-value(a), (a,), (lambda g: -g,), "neg")


def matmul(a, b):
    av, bv = value(a), value(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise T.DimensionError(f"autodiff matmul needs >= 2-d operands, got {av.shape} @ {bv.shape}")
    out = T.matmul(av, bv)

    def grad_b(g):
        if bv.ndim == 2 and av.ndim > 2:
            # fold the batch into one GEMM instead of summing per-batch products
            return av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)

    return _node(
        out,
        (a, b),
        (lambda g: unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape), grad_b),
        "matmul",
    )


# ----------------------------------------------------------------- pointwise


def exp(a):
    out = T.exp(value(a))
    return _node(out, (a,), (lambda g: g * out,), "exp")


def log(a):
    av = value(a)
    return _node(np.log(av), (a,), (lambda g: g / av,), "log")


def sin(a):
    av = value(a)
    return _node(np.sin(av), (a,), (lambda g: g * np.cos(av),), "sin")


def cos(a):
    av = value(a)
    return _node(np.cos(av), (a,), (lambda g: -g * np.sin(av),), "cos")


def sigmoid(a):
    out = T.sigmoid(value(a))
    return _node(out, (a,), (lambda g: g * out * (1.0 - out),), "sigmoid")


def softplus(a):
    av = value(a)
    return _node(T.softplus(av), (a,), (lambda g: g * T.sigmoid(av),), "softplus")


def silu(a):
    av = value(a)
    s = T.sigmoid(av)
    return _node(av * s, (a,), (lambda g: g * (s + av * s * (1.0 - s)),), "silu")


def sqrt_sumsq(a, axis: int = -1):
    """Euclidean norm along ``axis`` (axis removed)."""
    av = value(a)
    n = np.sqrt(np.sum(av * av, axis=axis))

    def grad(g):
        return np.expand_dims(g / n, axis) * av

    return _node(n, (a,), (grad,), "sqrt_sumsq")


def square(a):
    av = value(a)
    return _node(av * av, (a,), (lambda g: 2.0 * g * av,), "square")


def maximum(a, floor: float):
    """Clamp from below by a constant; gradient is zero where clamped."""
    av = value(a)
    keep = av > floor
    return _node(np.where(keep, av, floor), (a,), (lambda g: g * keep,), "maximum")


def where(cond: np.ndarray, a, b):
    cond = np.asarray(cond, dtype=bool)
    av, bv = value(a), value(b)
    out = np.where(cond, av, bv)
    return _node(
        out,
        (a, b),
        (lambda g: unbroadcast(np.where(cond, g, 0.0), av.shape), lambda g: unbroadcast(np.where(cond, 0.0, g), bv.shape)),
        "where",
    )


def wrap_angle(a):
    """Reduce angles into [-pi, pi); the gradient passes through unchanged."""
    av = value(a)
    out = np.mod(av + np.pi, 2.0 * np.pi) - np.pi
    return _node(out, (a,), (lambda g: g,), "wrap_angle")


# ------------------------------------------------------------ normalisations


def l2norm(a, eps: float = 1e-12):
    """Unit-normalise along the last axis."""
    av = value(a)
    n = np.sqrt(np.sum(av * av, axis=-1, keepdims=True) + eps)
    out = av / n

    def grad(g):
        return g / n - av * (np.sum(g * av, axis=-1, keepdims=True) / n**3)

    return _node(out, (a,), (grad,), "l2norm")


def rmsnorm(a, eps: float = 1e-6):
    av = value(a)
    d = av.shape[-1]
    r = np.sqrt(np.mean(av * av, axis=-1, keepdims=True) + eps)
    out = av / r

    def grad(g):
        return g / r - av * (np.sum(g * av, axis=-1, keepdims=True) / (d * r**3))

    return _node(out, (a,), (grad,), "rmsnorm")


def log_softmax(a, axis: int = -1):
    av = value(a)
    m = np.max(av, axis=axis, keepdims=True)
    shifted = av - m
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse

    def grad(g):
        return g - np.exp(out) * np.sum(g, axis=axis, keepdims=True)

    return _node(out, (a,), (grad,), "log_softmax")


def softmax(a, axis: int = -1):
    av = value(a)
    e = np.exp(av - np.max(av, axis=axis, keepdims=True))
    out = e / np.sum(e, axis=axis, keepdims=True)

    def grad(g):
        return out * (g - np.sum(g * out, axis=axis, keepdims=True))

    return _node(out, (a,), (grad,), "softmax")


# ---------------------------------------------------------------- reductions


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy
    av = value(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape)

    return _node(np.asarray(out), (a,), (grad,), "sum")


def mean(a, axis=None, keepdims: bool = False):
    av = value(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def cumsum(a, axis: int = 0):
    out = T.cumsum(value(a), axis=axis)

    def grad(g):
        return np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)

    return _node(out, (a,), (grad,), "cumsum")


# ------------------------------------------------------------------ plumbing


def reshape(a, shape):
    av = value(a)
    return _node(av.reshape(shape), (a,), (lambda g: g.reshape(av.shape),), "reshape")


def transpose(a, axes):
    av = value(a)
    inv = np.argsort(axes)
    return _node(np.transpose(av, axes), (a,), (lambda g: np.transpose(g, inv),), "transpose")


def swapaxes(a, i, j):
    av = value(a)
    return _node(np.swapaxes(av, i, j), (a,), (lambda g: np.swapaxes(g, i, j),), "swapaxes")


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, idx):
    av = value(a)
    out = av[idx]
    basic = _is_basic(idx)

    def grad(g):
        full = np.zeros(av.shape, dtype=g.dtype)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return full

    return _node(out, (a,), (grad,), "getitem")


def take_along_axis(a, indices: np.ndarray, axis: int = -1):
    av = value(a)
    out = np.take_along_axis(av, indices, axis=axis)

    def grad(g):
        full = np.zeros(av.shape, dtype=g.dtype)
        np.put_along_axis(full, indices, g, axis=axis)
        return full

    return _node(out, (a,), (grad,), "take_along_axis")


def stack(items: Sequence, axis: int = 0):
    vals = [value(x) for x in items]
    out = np.stack(vals, axis=axis)
    fns = [(lambda g, i=i: np.take(g, i, axis=axis)) for i in range(len(items))]
    return _node(out, tuple(items), fns, "stack")


def concat(items: Sequence, axis: int = 0):
    vals = [value(x) for x in items]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def piece(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(bounds[i], bounds[i + 1])
        return lambda g: g[tuple(sl)]

    return _node(out, tuple(items), [piece(i) for i in range(len(items))], "concat")


def causal_conv1d(x, kernel):
    """Depthwise causal convolution; see :func:`linrot.numerics.tensor.causal_conv1d`."""
    xv, kv = value(x), value(kernel)
    out = T.causal_conv1d(xv, kv)
    steps = xv.shape[-2]
    width = kv.shape[0]

    def grad_x(g):
        gx = np.zeros(xv.shape, dtype=g.dtype)
        for lag in range(min(width, steps)):
            if lag == 0:
                gx += kv[0] * g
            else:
                gx[..., : steps - lag, :] += kv[lag] * g[..., lag:, :]
        return gx

    def grad_k(g):
        gk = np.zeros(kv.shape, dtype=g.dtype)
        lead = tuple(range(g.ndim - 1))
        for lag in range(min(width, steps)):
            if lag == 0:
                gk[0] = np.sum(g * xv, axis=lead)
            else:
                gk[lag] = np.sum(g[..., lag:, :] * xv[..., : steps - lag, :], axis=lead)
        return gk

    return _node(out, (x, kernel), (grad_x, grad_k), "causal_conv1d")


# --------------------------------------------------------------- delta rule


def delta_rule(q, k, v, beta):
    """Sequential delta-rule recurrence with a hand-written reverse sweep.

    Shapes: q, k (..., T, dk); v (..., T, dv); beta (..., T). The state is
    S_t = S_{t-1} (I - b_t k_t k_t^T) + b_t v_t k_t^T and the output o_t = S_t q_t.
    """
    qv, kv_, vv, bv = value(q), value(k), value(v), value(beta)
    lead = qv.shape[:-2]
    steps, dk = qv.shape[-2:]
    dv = vv.shape[-1]
    states = np.zeros(lead + (steps + 1, dv, dk), dtype=np.result_type(qv, vv))
    out = np.empty(lead + (steps, dv), dtype=states.dtype)
    S = states[..., 0, :, :]
    for t in range(steps):
        kt = kv_[..., t, :]
        bt = bv[..., t, None]
        err = vv[..., t, :] - np.einsum("...ij,...j->...i", S, kt)
        S = S + (bt * err)[..., :, None] * kt[..., None, :]
        states[..., t + 1, :, :] = S
        out[..., t, :] = np.einsum("...ij,...j->...i", S, qv[..., t, :])

    cache = {}

    def sweep(g):
        if "grads" in cache:
            return cache["grads"]
        gq = np.empty_like(qv)
        gk = np.empty_like(kv_)
        gv = np.empty_like(vv)
        gb = np.empty_like(bv)
        dS = np.zeros(lead + (dv, dk), dtype=states.dtype)
        for t in range(steps - 1, -1, -1):
            S_t = states[..., t + 1, :, :]
            S_prev = states[..., t, :, :]
            qt, kt, vt = qv[..., t, :], kv_[..., t, :], vv[..., t, :]
            bt = bv[..., t]
            gt = g[..., t, :]
            gq[..., t, :] = np.einsum("...ij,...i->...j", S_t, gt)
            dS = dS + gt[..., :, None] * qt[..., None, :]
            # S_t = S_prev + b (v - S_prev k) k^T
            err = vt - np.einsum("...ij,...j->...i", S_prev, kt)
            dS_k = np.einsum("...ij,...j->...i", dS, kt)  # dS k, shape (..., dv)
            gv[..., t, :] = bt[..., None] * dS_k
            gb[..., t] = np.einsum("...i,...i->...", err, dS_k)
            # d/dk of b (v - S_prev k) k^T
            gk[..., t, :] = bt[..., None] * (
                np.einsum("...ij,...i->...j", dS, err) - np.einsum("...ij,...i->...j", S_prev, dS_k)
            )
            dS = dS - bt[..., None, None] * dS_k[..., :, None] * kt[..., None, :]
        cache["grads"] = (gq, gk, gv, gb)
        return cache["grads"]

    return _node(
        out,
        (q, k, v, beta),
        (lambda g: sweep(g)[0], lambda g: sweep(g)[1], lambda g: sweep(g)[2], lambda g: sweep(g)[3]),
        "delta_rule",
    )


def diag_scan(q, k, v, log_decay):
    """Diagonal-decay recurrence ``S_t = S_{t-1} diag(exp(log_decay_t)) + v_t k_t^T``, ``o_t = S_t q_t``.

    Shapes: q, k, log_decay (..., T, dk); v (..., T, dv). ``log_decay`` may be a
    plain zero array for undecayed linear attention.
    """
    qv, kv_, vv = value(q), value(k), value(v)
    ld = value(log_decay)
    alpha = np.exp(ld)
    alpha = np.broadcast_to(alpha, kv_.shape)
    lead = qv.shape[:-2]
    steps, dk = qv.shape[-2:]
    dv = vv.shape[-1]
    dtype = np.result_type(qv, kv_, vv, alpha)
    needs_grad = any(isinstance(x, Var) and x.requires_grad for x in (q, k, v, log_decay))
    states = np.empty((steps,) + lead + (dv, dk), dtype=dtype) if needs_grad else None
    out = np.empty(lead + (steps, dv), dtype=dtype)
    S = np.zeros(lead + (dv, dk), dtype=dtype)
    for t in range(steps):
        S = S * alpha[..., t, None, :] + vv[..., t, :, None] * kv_[..., t, None, :]
        if states is not None:
            states[t] = S
        out[..., t, :] = (S @ qv[..., t, :, None])[..., 0]
    if states is None:
        return _node(out, (q, k, v, log_decay), (None,) * 4, "diag_scan")

    cache = {}

    def sweep(g):
        if "grads" in cache:
            return cache["grads"]
        gq = np.empty(qv.shape, dtype=dtype)
        gk = np.empty(kv_.shape, dtype=dtype)
        gv = np.empty(vv.shape, dtype=dtype)
        galpha = np.empty(kv_.shape, dtype=dtype)
        dS = np.zeros(lead + (dv, dk), dtype=dtype)
        for t in range(steps - 1, -1, -1):
            S_t = states[t]
            gt = g[..., t, :]
            gq[..., t, :] = (gt[..., None, :] @ S_t)[..., 0, :]
            dS = dS + gt[..., :, None] * qv[..., t, None, :]
            gv[..., t, :] = (dS @ kv_[..., t, :, None])[..., 0]
            gk[..., t, :] = (vv[..., t, None, :] @ dS)[..., 0, :]
            if t > 0:
                galpha[..., t, :] = np.sum(states[t - 1] * dS, axis=-2)
            else:
                galpha[..., t, :] = 0.0
            dS = dS * alpha[..., t, None, :]
        cache["grads"] = (gq, gk, gv, unbroadcast(galpha * alpha, ld.shape))
        return cache["grads"]

    return _node(
        out,
        (q, k, v, log_decay),
        (lambda g: sweep(g)[0], lambda g: sweep(g)[1], lambda g: sweep(g)[2], lambda g: sweep(g)[3]),
        "diag_scan",
    )


# ------------------------------------------------------------------ backward


def backward(loss: Var) -> dict[Var, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every reachable leaf that requires one.

    Each leaf also gets its ``grad`` attribute overwritten.
    """
    if not isinstance(loss, Var):
        raise ContractError("backward needs a Var produced on the tape")
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    nodes: dict[int, Var] = {}
    stack_ = [loss]
    while stack_:
        n = stack_.pop()
        if n.id in nodes or not n.requires_grad:
            continue
        nodes[n.id] = n
        stack_.extend(p for p in n.parents if isinstance(p, Var))
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value, dtype=np.result_type(loss.value, np.float32))}
    result: dict[Var, np.ndarray] = {}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node.grad_fns is None:
            g = np.array(g, copy=True).reshape(node.value.shape)
            node.grad = g
            result[node] = g
            continue
        for parent, fn in zip(node.parents, node.grad_fns):
            if isinstance(parent, Var) and parent.requires_grad:
                gp = fn(g)
                prev = grads.get(parent.id)
                grads[parent.id] = gp if prev is None else prev + gp
    return result


def gradcheck(
    fn: Callable[[], Var], params: Sequence[Var], step: float = 1e-5, max_entries: int | None = None, rng=None
) -> float:
    """Largest relative error between tape gradients and central differences.

    ``fn`` must rebuild the loss from the current parameter values each call.
    Per entry the error is ``|a - n| / max(|a|, |n|, 1e-6)``, so gradients
    below 1e-6 are compared in absolute terms.
    """
    loss = fn()
    analytic = backward(loss)
    worst = 0.0
    for p in params:
        a = analytic.get(p, np.zeros_like(p.value))
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            chooser = rng if rng is not None else np.random.default_rng(0)
            idx = chooser.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = float(value(fn()))
            flat[i] = orig - step
            down = float(value(fn()))
            flat[i] = orig
            num = (up - down) / (2 * step)
            ana = float(a.reshape(-1)[i])
            scale = max(abs(ana), abs(num), 1e-6)
            worst = max(worst, abs(ana - num) / scale)
    return worst
