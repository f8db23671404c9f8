"""Parameterised building blocks on top of :mod:`mdst.tensor`."""
from __future__ import annotations

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError


class Module:
    """Owns parameters (leaf tensors), buffers (numpy arrays) and child modules."""

    training = True

    def named_parameters(self, prefix=""):
        out = {}
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, tn.Tensor) and val.requires_grad:
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    out.update(m.named_parameters(f"{name}.{i}."))
        return out

    def named_buffers(self, prefix=""):
        out = {}
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Module):
                out.update(val.named_buffers(name + "."))
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    out.update(m.named_buffers(f"{name}.{i}."))
        for key in getattr(self, "_buffers", ()):
            out[f"{prefix}{key}"] = getattr(self, key)
        return out

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for m in val:
                    yield from m.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        state = {f"param/{k}": v.data.copy() for k, v in self.named_parameters().items()}
        state.update({f"buffer/{k}": np.array(v, copy=True) for k, v in self.named_buffers().items()})
        return state

    def load_state_dict(self, state):
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = {f"param/{k}" for k in params} | {f"buffer/{k}" for k in buffers}
        missing = expected - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)[:5]}")
        for k, p in params.items():
            arr = np.asarray(state[f"param/{k}"], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise DimensionError(f"{k}: saved shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()
        for k in buffers:
            self._set_buffer(k, np.asarray(state[f"buffer/{k}"], dtype=np.float64))

    def _set_buffer(self, dotted, value):
        obj = self
        parts = dotted.split(".")
        for part in parts[:-1]:
            obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
        current = getattr(obj, parts[-1])
        if np.shape(current) != value.shape:
            raise DimensionError(f"{dotted}: saved shape {value.shape} != {np.shape(current)}")
        setattr(obj, parts[-1], value.copy())


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        if d_in <= 0 or d_out <= 0:
            raise ConfigError(f"linear widths must be positive, got {d_in}->{d_out}")
        self.weight = tn.parameter(_uniform(rng, (d_in, d_out), 1.0 / np.sqrt(d_in)))
        self.bias = tn.parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        x = tn.as_tensor(x)
        if x.shape[-1] != self.weight.shape[0]:
            raise DimensionError(f"linear expects width {self.weight.shape[0]}, got input {x.shape}")
        y = tn.matmul(x, self.weight)
        return y if self.bias is None else tn.add(y, self.bias)


class LayerNorm(Module):
    def __init__(self, d):
        self.gain = tn.parameter(np.ones(d))
        self.bias = tn.parameter(np.zeros(d))

    def __call__(self, x):
        return tn.layer_norm(x, self.gain, self.bias)


class BatchNorm(Module):
    """Per-feature normalisation over all leading axes with running statistics."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, d, momentum=0.1):
        self.gain = tn.parameter(np.ones(d))
        self.bias = tn.parameter(np.zeros(d))
        self.running_mean = np.zeros(d)
        self.running_var = np.ones(d)
        self.momentum = momentum

    def __call__(self, x):
        if self.training:
            out, mean, var = tn.batch_norm(x, self.gain, self.bias)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var
            return out
        out, _, _ = tn.batch_norm(x, self.gain, self.bias, self.running_mean, self.running_var)
        return out


def make_norm(kind, d):
    if kind == "batch":
        return BatchNorm(d)
    if kind == "layer":
        return LayerNorm(d)
    raise ConfigError(f"unknown norm kind {kind!r} (expected 'batch' or 'layer')")


class Dropout(Module):
    def __init__(self, p, rng):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def __call__(self, x):
        return tn.dropout(x, self.p, self.rng, self.training)


class MLP(Module):
    def __init__(self, d, hidden, rng, d_out=None):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d if d_out is None else d_out, rng)

    def __call__(self, x):
        return self.fc2(tn.relu(self.fc1(x)))


class Attention(Module):
    """Scaled dot-product attention; query tokens attend over key/value tokens.

    Shapes: query (B, Nq, d), context (B, Nk, d) -> (B, Nq, d).
    """

    def __init__(self, d, rng, n_heads=1, head_dim=None):
        if head_dim is None:
            if d % n_heads:
                raise ConfigError(f"width {d} is not divisible by {n_heads} heads")
            head_dim = d // n_heads
        self.n_heads = n_heads
        self.head_dim = head_dim
        inner = n_heads * head_dim
        self.q = Linear(d, inner, rng, bias=False)
        self.k = Linear(d, inner, rng, bias=False)
        self.v = Linear(d, inner, rng, bias=False)
        self.o = Linear(inner, d, rng, bias=False)

    def _split(self, x):
        B, N, _ = x.shape
        return tn.transpose(tn.reshape(x, (B, N, self.n_heads, self.head_dim)), (0, 2, 1, 3))

    def scores(self, query, context):
        q = self._split(self.q(query))
        k = self._split(self.k(context))
        logits = tn.scale(tn.matmul(q, tn.swapaxes(k, -1, -2)), 1.0 / np.sqrt(self.head_dim))
        return tn.softmax(logits, axis=-1)

    def __call__(self, query, context):
        query, context = tn.as_tensor(query), tn.as_tensor(context)
        if query.shape[-1] != context.shape[-1]:
            raise DimensionError(f"attention widths differ: {query.shape} vs {context.shape}")
        attn = self.scores(query, context)
        v = self._split(self.v(context))
        out = tn.matmul(attn, v)
        B, H, N, dh = out.shape
        out = tn.reshape(tn.transpose(out, (0, 2, 1, 3)), (B, N, H * dh))
        return self.o(out)
