"""Dense float64 tensors with a reverse-mode gradient tape.

Operations record themselves on the innermost active :class:`GradTape` when
any input requires a gradient; outside a tape (or inside :func:`no_grad`)
they are plain numpy calls.  Backward replays the tape in exact reverse
recording order.

The spike step :func:`heaviside` has a surrogate derivative.  Under
:func:`surrogate_forward` the step itself is replaced by the surrogate's
primitive so that finite differences can check the backward rules.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError, NumericDomainError

LOG_EPS = 1e-8
LN_EPS = 1e-5
SURROGATE_ALPHA = 4.0

_state = threading.local()


def _tapes():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
        _state.grad_enabled = True
        _state.soft = False
        _state.strict = False
    return _state.tapes


def _active_tape():
    tapes = _tapes()
    if tapes and _state.grad_enabled:
        return tapes[-1]
    return None


@contextlib.contextmanager
def no_grad():
    _tapes()
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def surrogate_forward(enabled=True):
    """Replace the forward spike step by the surrogate primitive (for gradient checks)."""
    _tapes()
    prev = _state.soft
    _state.soft = enabled
    try:
        yield
    finally:
        _state.soft = prev


def soft_mode():
    _tapes()
    return _state.soft


@contextlib.contextmanager
def strict_mode(enabled=True):
    """Enable runtime assertions on spike binarity and LIF reset."""
    _tapes()
    prev = _state.strict
    _state.strict = enabled
    try:
        yield
    finally:
        _state.strict = prev


def is_strict():
    _tapes()
    return _state.strict


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_leaf", "name", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._leaf = True
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.item())

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        tape = _tapes()[-1] if _tapes() else None
        if tape is None:
            raise RuntimeError("backward() needs an active GradTape")
        tape.backward(self, grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_pool(self, axis, keepdims)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward: object


@dataclass
class GradTape:
    """Ordered record of differentiable operations (single writer)."""

    nodes: list = field(default_factory=list)

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        _tapes().pop()
        return False

    def record(self, out, inputs, backward):
        self.nodes.append(_Node(out, inputs, backward))

    def backward(self, loss, grad=None):
        if grad is None:
            if loss.size != 1:
                raise DimensionError(f"backward() of non-scalar shape {loss.shape} needs a grad")
            grad = np.ones_like(loss.data)
        if loss._leaf:
            if loss.requires_grad:
                _accumulate_leaf(loss, grad)
            return
        pending = {id(loss): np.asarray(grad, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.out), None)
            if g is None:
                continue
            grads = node.backward(g)
            for t, gi in zip(node.inputs, grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if t._leaf:
                    _accumulate_leaf(t, gi)
                else:
                    key = id(t)
                    if key in pending:
                        pending[key] = pending[key] + gi
                    else:
                        pending[key] = gi


def _accumulate_leaf(t, g):
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.data.shape:
        g = np.broadcast_to(g, t.data.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _result(data, inputs, backward):
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NumericDomainError("operation produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._leaf = True
    out.requires_grad = False
    tape = _active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        out._leaf = False
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ----------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(x):
    x = as_tensor(x)
    return _result(-x.data, (x,), lambda g: (-g,))


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def log(x):
    """Natural log with the argument clamped to ``max(x, 1e-8)``."""
    x = as_tensor(x)
    if np.any(np.isnan(x.data)):
        raise NumericDomainError("log of NaN")
    clamped = np.maximum(x.data, LOG_EPS)
    live = x.data > LOG_EPS
    return _result(np.log(clamped), (x,), lambda g: (np.where(live, g / clamped, 0.0),))


def _sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x):
    x = as_tensor(x)
    out = _sigmoid_np(x.data)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x):
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    sig = _sigmoid_np(x.data)
    return _result(out, (x,), lambda g: (g * sig,))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def square(x):
    x = as_tensor(x)
    d = x.data
    return _result(d * d, (x,), lambda g: (2.0 * g * d,))


def clamp(x, lo=None, hi=None):
    x = as_tensor(x)
    d = x.data
    out = np.clip(d, lo, hi)
    inside = np.ones(d.shape, dtype=bool)
    if lo is not None:
        inside &= d >= lo
    if hi is not None:
        inside &= d <= hi
    return _result(out, (x,), lambda g: (g * inside,))


def elementwise(op, *args):
    """Dispatch by name; mirrors the set of published elementwise ops."""
    table = {"add": add, "sub": sub, "mul": mul, "exp": exp, "log": log,
             "sigmoid": sigmoid, "relu": relu, "neg": neg, "scale": scale}
    try:
        fn = table[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# -- structural ---------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not contract")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch extents of {a.shape} and {b.shape} differ") from None
    ad, bd = a.data, b.data
    # batched activations times one weight matrix: fold the batch axes into rows
    flat = bd.ndim == 2 and ad.ndim > 2

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if flat:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    if flat:
        out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))
    else:
        out = ad @ bd
    return _result(out, (a, b), backward)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def swapaxes(x, a, b):
    x = as_tensor(x)
    return _result(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def broadcast_to(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _result(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, old),))


def getitem(x, idx):
    x = as_tensor(x)
    shape = x.shape

    basic = not any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(x.data[idx], (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes {sorted(shapes)} differ")
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _result(out, tuple(tensors),
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# -- reductions ---------------------------------------------------------------

def _check_axis(x, axis):
    if axis is None:
        if x.size == 0:
            raise DimensionError("reduction over an empty tensor")
        return
    axes = axis if isinstance(axis, tuple) else (axis,)
    for ax in axes:
        if not -x.ndim <= ax < x.ndim:
            raise DimensionError(f"axis {ax} out of range for shape {x.shape}")
        if x.shape[ax] == 0:
            raise DimensionError(f"reduction over zero-extent axis {ax} of shape {x.shape}")


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    _check_axis(x, axis)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean_pool(x, axis=None, keepdims=False):
    """Average over ``axis`` (all axes when None)."""
    x = as_tensor(x)
    _check_axis(x, axis)
    shape = x.shape
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([shape[a] for a in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape),)

    return _result(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward)


def _extreme(x, axis, keepdims, fn):
    x = as_tensor(x)
    _check_axis(x, axis)
    d = x.data
    out_k = fn(d, axis=axis, keepdims=True)
    hit = d == out_k
    count = hit.sum(axis=axis, keepdims=True)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None and not keepdims:
            g = np.reshape(g, (1,) * d.ndim)
        return (hit * g / count,)

    out = out_k if keepdims else fn(d, axis=axis, keepdims=False)
    return _result(out, (x,), backward)


def max_(x, axis=None, keepdims=False):
    return _extreme(x, axis, keepdims, np.max)


def min_(x, axis=None, keepdims=False):
    return _extreme(x, axis, keepdims, np.min)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _result(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layer_norm(x, gain=None, bias=None, eps=LN_EPS):
    """Normalise the last axis to zero mean and unit variance, then ``gain * x + bias``."""
    x = as_tensor(x)
    if x.shape[-1] == 0:
        raise DimensionError("layer_norm over a zero-extent axis")
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = d.shape[-1]
    inputs = [x]
    gd = bd = None
    if gain is not None:
        gain = as_tensor(gain)
        gd = gain.data
        inputs.append(gain)
    if bias is not None:
        bias = as_tensor(bias)
        bd = bias.data
        inputs.append(bias)
    out = xhat if gd is None else xhat * gd
    if bd is not None:
        out = out + bd

    def backward(g):
        gx = g if gd is None else g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n)
        grads = [dx]
        if gd is not None:
            grads.append(_unbroadcast(g * xhat, gd.shape))
        if bd is not None:
            grads.append(_unbroadcast(g, bd.shape))
        return tuple(grads)

    return _result(out, tuple(inputs), backward)


def batch_norm(x, gain, bias, mean=None, var=None, eps=LN_EPS):
    """Per-feature normalisation over every leading axis.

    With ``mean``/``var`` given (eval mode) those statistics are constants;
    otherwise batch statistics are used and returned alongside the output.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data
    axes = tuple(range(d.ndim - 1))
    batch_stats = mean is None
    if batch_stats:
        mean = d.mean(axis=axes)
        var = d.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (d - mean) * inv
    n = int(np.prod([d.shape[a] for a in axes])) if axes else 1
    gd = gain.data

    def backward(g):
        gx = g * gd
        if batch_stats:
            dx = inv * (gx - gx.mean(axis=axes) - xhat * (gx * xhat).sum(axis=axes) / n)
        else:
            dx = gx * inv
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = _result(xhat * gd + bias.data, (x, gain, bias), backward)
    return out, mean, var


def dropout(x, p, rng, training=True):
    """Bernoulli mask scaled by ``1/(1-p)`` in training; identity otherwise."""
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# -- spiking ------------------------------------------------------------------

def heaviside(x, kind="sigmoid", alpha=SURROGATE_ALPHA):
    """Spike step ``x >= 0`` whose backward is the surrogate's slope."""
    x = as_tensor(x)
    k = kernels.SURROGATE_KINDS[kind]
    d = x.data
    if soft_mode():
        out = kernels._kernels_py.surrogate_value(d, alpha, k)
    else:
        out = (d >= 0.0).astype(np.float64)
    return _result(out, (x,), lambda g: (g * kernels._kernels_py.surrogate_grad(d, alpha, k),))


heaviside_surrogate = heaviside


def lif_scan(current, theta, tau_m=2.0, resistance=1.0, v_reset=0.0, kind="sigmoid",
             alpha=SURROGATE_ALPHA):
    """Run LIF neurons over the leading time axis of ``current``.

    current: (T, B, ...) input currents; theta: (T, B) per-sample thresholds.
    Returns binary spikes shaped like ``current`` (surrogate-valued in soft mode).
    The whole scan is one tape node whose backward is the fused BPTT kernel.
    """
    current, theta = as_tensor(current), as_tensor(theta)
    if current.ndim < 2 or theta.shape != current.shape[:2]:
        raise DimensionError(f"lif_scan: current {current.shape} vs threshold {theta.shape}")
    T, B = current.shape[:2]
    shape = current.shape
    flat = current.data.reshape(T, B, -1)
    decay = 1.0 - 1.0 / tau_m
    gain = resistance / tau_m
    k = kernels.SURROGATE_KINDS[kind]
    soft = soft_mode()
    v0 = np.full((B, flat.shape[2]), float(v_reset))
    spikes, upre, _ = kernels.lif_forward(flat, theta.data, decay, gain, v_reset, v0,
                                          soft, alpha, k)
    if is_strict() and not soft:
        if not np.all((spikes == 0.0) | (spikes == 1.0)):
            raise AssertionError("LIF output is not binary")
        th = theta.data[:, :, None]
        if not np.array_equal(spikes == 1.0, upre >= th):
            raise AssertionError("LIF spike rule violated")
        # membrane after each step: v_reset where fired, else the charged value
        v_after = np.where(spikes == 1.0, v_reset, upre)
        expected = decay * v_after[:-1] + gain * flat[1:]
        if not np.allclose(upre[1:], expected, rtol=1e-12, atol=1e-12):
            raise AssertionError("LIF reset rule violated")
    th_data = theta.data

    def backward(g):
        g_cur, g_th, _ = kernels.lif_backward(g.reshape(T, B, -1), np.zeros_like(v0), upre,
                                              spikes, th_data, decay, gain, v_reset, alpha, k)
        return g_cur.reshape(shape), g_th

    return _result(spikes.reshape(shape), (current, theta), backward)


# -- gradient checking ----------------------------------------------------------

@dataclass
class GradReport:
    errors: dict

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    def ok(self, tol):
        return self.max_error < tol


def relative_error(analytic, numeric, floor_ratio=1e-3, scale=None):
    """Max elementwise relative error.

    Denominators are floored at ``floor_ratio`` times ``scale`` (default: the
    largest entry of either argument) so entries that are zero up to
    rounding do not dominate.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale_ = scale if scale is not None else max(np.abs(analytic).max(initial=0.0),
                                                 np.abs(numeric).max(initial=0.0))
    floor = max(floor_ratio * scale_, 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max(initial=0.0))


def check_gradients(f, params, h=1e-5, max_coords=None, seed=0):
    """Compare tape gradients of scalar ``f()`` against central differences.

    ``params`` maps names to leaf tensors that require grad.  Returns a
    :class:`GradReport` of per-parameter max relative errors; the error floor
    is set by the largest gradient entry over all parameters.  With
    ``max_coords`` only that many seeded random entries per parameter are
    perturbed and compared.
    """
    pick = np.random.default_rng(seed)
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = None
    with GradTape() as tape:
        loss = f()
        if not np.isfinite(loss.data).all():
            raise NumericDomainError("loss is not finite")
        tape.backward(loss)
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    numerics = {}
    with no_grad():
        for name, p in params.items():
            num = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            nflat = num.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(pick.choice(flat.size, size=max_coords, replace=False))
                mask = np.zeros(flat.size, dtype=bool)
                mask[coords] = True
                analytic[name] = np.where(mask.reshape(p.data.shape), analytic[name], 0.0)
            for i in coords:
                old = flat[i]
                flat[i] = old + h
                fp = float(f().data)
                flat[i] = old - h
                fm = float(f().data)
                flat[i] = old
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise NumericDomainError(f"loss not finite while perturbing {name}")
                nflat[i] = (fp - fm) / (2.0 * h)
            numerics[name] = num
    scale_ = max(max(np.abs(a).max(initial=0.0) for a in analytic.values()),
                 max(np.abs(n).max(initial=0.0) for n in numerics.values()))
    return GradReport({k: relative_error(analytic[k], numerics[k], scale=scale_) for k in params})
