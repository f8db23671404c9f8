"""LIF neurons, spiking layers and the multi-stage spiking bodies.

Layers run layer-major: a layer computes its currents for every timestep
at once and then scans its LIF population over time (``tensor.lif_scan``).
Tensors carry time first: (T, B, N, d) for T steps, B samples, N tokens.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ContractError, DimensionError
from .layers import Linear, Module, make_norm

NORM_EPS = 1e-3


@dataclass(frozen=True)
class LifParams:
    tau_m: float = 2.0
    resistance: float = 1.0
    v_reset: float = 0.0
    v_th_init: float = 1.0
    surrogate: str = "sigmoid"
    alpha: float = tn.SURROGATE_ALPHA

    def __post_init__(self):
        if not self.tau_m > 1:
            raise ConfigError(f"tau_m must exceed 1, got {self.tau_m}")
        if not self.v_th_init > self.v_reset:
            raise ConfigError("initial threshold must exceed the reset potential")

    @property
    def decay(self):
        return 1.0 - 1.0 / self.tau_m

    @property
    def gain(self):
        return self.resistance / self.tau_m


@dataclass
class LifState:
    v: tn.Tensor
    v_th: tn.Tensor
    spikes: tn.Tensor

    @classmethod
    def zeros(cls, shape, params):
        return cls(tn.Tensor(np.full(shape, params.v_reset)),
                   tn.Tensor(np.full(shape, params.v_th_init)),
                   tn.Tensor(np.zeros(shape)))


def lif_step(state, input_current, params):
    """One Euler step (dt = 1) of the LIF membrane followed by fire-and-reset.

    Returns the new state and the emitted spikes.  Firing is inclusive
    (``v >= v_th``); the backward pass uses the surrogate slope.
    """
    current = tn.as_tensor(input_current)
    if current.shape != state.v.shape or state.v_th.shape != state.v.shape:
        raise DimensionError(f"lif_step: v {state.v.shape}, v_th {state.v_th.shape}, input {current.shape}")
    u = tn.add(tn.scale(state.v, params.decay), tn.scale(current, params.gain))
    s = tn.heaviside(tn.sub(u, state.v_th), params.surrogate, params.alpha)
    v = tn.add(tn.mul(u, tn.sub(1.0, s)), tn.scale(s, params.v_reset))
    return LifState(v, state.v_th, s), s


def lif_scan(current, theta, params):
    """Fused multi-step form of :func:`lif_step`; ``theta`` is (T, B)."""
    return tn.lif_scan(current, theta, params.tau_m, params.resistance, params.v_reset,
                       params.surrogate, params.alpha)


def is_binary(x):
    d = x.data if isinstance(x, tn.Tensor) else np.asarray(x)
    return bool(np.all((d == 0.0) | (d == 1.0)))


# -- threshold dynamics ---------------------------------------------------------

def minmax_normalize(x):
    """Per-sample min-max map of (B, ...) onto (eps, 1]; constant samples map to 1."""
    x = tn.as_tensor(x)
    axes = tuple(range(1, x.ndim))
    hi = tn.max_(x, axis=axes, keepdims=True)
    lo = tn.min_(x, axis=axes, keepdims=True)
    span = hi.data - lo.data
    safe = tn.add(tn.sub(hi, lo), np.where(span > 0, 0.0, 1.0))
    return tn.sub(1.0, tn.scale(tn.div(tn.sub(hi, x), safe), 1.0 - NORM_EPS))


def dynamic_threshold(v_th_prev, semantics, motion, v_th_init=1.0, v_min=0.1, v_max=None):
    """Threshold update ``clamp((phi + omega) * v_th_prev)`` per sample.

    v_th_prev: (B,); semantics: (B, ..., D) joint semantics; motion: (B, ..., D')
    event polarities (or any motion estimate).  ``phi`` is the sigmoid of the
    mean semantics; ``omega = mean(-N(S) * log(1/N(S) + m))`` with ``m`` the
    motion's per-feature mean, broadcast over features when ``D' == D`` and
    reduced to a scalar otherwise.
    """
    v_th_prev, semantics, motion = tn.as_tensor(v_th_prev), tn.as_tensor(semantics), tn.as_tensor(motion)
    if np.any(v_th_prev.data <= 0):
        raise ContractError("previous threshold must be positive")
    B = semantics.shape[0]
    if v_max is None:
        v_max = 10.0 * v_th_init
    axes = tuple(range(1, semantics.ndim))
    phi = tn.sigmoid(tn.mean_pool(semantics, axis=axes))
    m = tn.mean_pool(tn.reshape(motion, (B, -1, motion.shape[-1])), axis=1)
    if motion.shape[-1] != semantics.shape[-1]:
        m = tn.mean_pool(m, axis=1, keepdims=True)
    m = tn.reshape(m, (B,) + (1,) * (semantics.ndim - 2) + (m.shape[-1],))
    n = minmax_normalize(semantics)
    omega_el = tn.neg(tn.mul(n, tn.log(tn.add(tn.div(1.0, n), m))))
    omega = tn.mean_pool(omega_el, axis=axes)
    return tn.clamp(tn.mul(tn.add(phi, omega), v_th_prev), v_min, v_max)


def threshold_sequence(n_steps, semantics_steps, motion_frames, v_th_init, v_min=0.1, enabled=True):
    """Run :func:`dynamic_threshold` for ``n_steps`` LIF steps; returns a (T, B) tensor.

    ``semantics_steps`` is a list of (B, ..., D) joint semantics (one per
    recurrent step) and ``motion_frames`` is a (B, F, D') array or tensor; step ``t`` reads the
    semantics and motion frame at the proportional position.
    """
    B = motion_frames.shape[0]
    if not enabled or semantics_steps is None:
        return tn.Tensor(np.full((n_steps, B), v_th_init))
    n_sem = len(semantics_steps)
    n_frames = motion_frames.shape[1]
    v = tn.Tensor(np.full(B, v_th_init))
    out = []
    for t in range(n_steps):
        s = semantics_steps[min(n_sem - 1, t * n_sem // n_steps)]
        f = min(n_frames - 1, t * n_frames // n_steps)
        v = dynamic_threshold(v, s, tn.getitem(motion_frames, (slice(None), f)), v_th_init, v_min)
        out.append(v)
    return tn.stack(out, axis=0)


# -- timestep schedule --------------------------------------------------------

class StageSchedule:
    """Strictly decreasing per-stage timesteps with spiking-unit counts."""

    def __init__(self, stages):
        stages = [(int(t), int(m)) for t, m in stages]
        if not stages:
            raise ContractError("a schedule needs at least one stage")
        for t, m in stages:
            if t < 1 or m < 1:
                raise ContractError(f"stage ({t}, {m}) needs T >= 1 and m >= 1")
        for (t0, _), (t1, _) in zip(stages, stages[1:]):
            if not t1 < t0:
                raise ContractError(f"timesteps must strictly decrease, got {[t for t, _ in stages]}")
        self.stages = stages

    def __len__(self):
        return len(self.stages)

    def __iter__(self):
        return iter(self.stages)

    def __eq__(self, other):
        return isinstance(other, StageSchedule) and self.stages == other.stages

    def __repr__(self):
        return f"StageSchedule({self.stages})"

    @property
    def timesteps(self):
        return [t for t, _ in self.stages]


def average_timestep(schedule):
    """Unit-weighted mean timestep ``sum(m_i T_i) / sum(m_i)``."""
    if not isinstance(schedule, StageSchedule):
        schedule = StageSchedule(schedule)
    num = sum(m * t for t, m in schedule)
    den = sum(m for _, m in schedule)
    return num / den


def bin_sizes(n, n_bins):
    base, extra = divmod(n, n_bins)
    return [base + 1 if i < extra else base for i in range(n_bins)]


def shrink_timesteps(x, t_next):
    """Average ``T`` steps into ``t_next`` contiguous bins (sizes differ by at most 1)."""
    x = tn.as_tensor(x)
    T = x.shape[0]
    if not 1 <= t_next < T:
        raise ContractError(f"shrink needs 1 <= T_next < T, got T={T}, T_next={t_next}")
    weights = np.zeros((t_next, T))
    start = 0
    for i, size in enumerate(bin_sizes(T, t_next)):
        weights[i, start:start + size] = 1.0 / size
        start += size
    rest = x.shape[1:]
    flat = tn.reshape(x, (T, -1))
    return tn.reshape(tn.matmul(tn.Tensor(weights), flat), (t_next,) + rest)


# -- spiking layers -------------------------------------------------------------

class SpikingLinear(Module):
    """Linear -> norm -> LIF, applied to every timestep."""

    def __init__(self, d_in, d_out, rng, params, norm="batch", binary_input=True):
        self.fc = Linear(d_in, d_out, rng)
        self.norm = make_norm(norm, d_out)
        self.params = params
        self.binary_input = binary_input

    def __call__(self, x, theta):
        x = tn.as_tensor(x)
        if tn.is_strict() and self.binary_input and not tn.soft_mode() and not is_binary(x):
            raise ContractError("spiking_linear received a non-binary input in strict mode")
        out = lif_scan(self.norm(self.fc(x)), theta, self.params)
        if tn.is_strict() and not tn.soft_mode() and not is_binary(out):
            raise AssertionError("spiking_linear produced non-binary output")
        return out


def spiking_linear(x, layer, theta=None):
    """Apply a :class:`SpikingLinear` layer to a (T, B, ...) sequence."""
    x = tn.as_tensor(x)
    if theta is None:
        theta = tn.Tensor(np.full(x.shape[:2], layer.params.v_th_init))
    return layer(x, theta)


def attention_core(q, k, v, scale=None):
    """``(Q K^T V) * scale`` over the token axis; scale defaults to ``1/d``."""
    d = q.shape[-1]
    if d == 0:
        raise DimensionError("spiking attention needs a positive width")
    if scale is None:
        scale = 1.0 / d
    qk = tn.matmul(q, tn.swapaxes(k, -1, -2))
    return tn.scale(tn.matmul(qk, v), scale)


class SpikingSelfAttention(Module):
    def __init__(self, d_in, d, rng, params, norm="batch", scale=None, binary_input=True):
        if d <= 0:
            raise DimensionError("spiking attention needs a positive width")
        self.q = SpikingLinear(d_in, d, rng, params, norm, binary_input)
        self.k = SpikingLinear(d_in, d, rng, params, norm, binary_input)
        self.v = SpikingLinear(d_in, d, rng, params, norm, binary_input)
        self.proj = SpikingLinear(d, d, rng, params, norm, binary_input=False)
        self.scale = scale

    def __call__(self, x, theta):
        q, k, v = self.q(x, theta), self.k(x, theta), self.v(x, theta)
        g = attention_core(q, k, v, self.scale)
        return self.proj(g, theta)


def spiking_self_attention(x, block, theta=None):
    """Softmax-free spiking attention on a (T, B, N, d) sequence; output is binary."""
    x = tn.as_tensor(x)
    if x.shape[-1] == 0:
        raise DimensionError("spiking attention needs a positive width")
    if theta is None:
        theta = tn.Tensor(np.full(x.shape[:2], block.q.params.v_th_init))
    return block(x, theta)


class SpikingMLPUnit(Module):
    def __init__(self, d, hidden, rng, params, norm="batch"):
        self.fc1 = SpikingLinear(d, hidden, rng, params, norm)
        self.fc2 = SpikingLinear(hidden, d, rng, params, norm)

    def __call__(self, x, theta):
        return self.fc2(self.fc1(x, theta), theta)


class SpikeFormerUnit(Module):
    """Spiking self-attention followed by a two-layer spiking MLP."""

    def __init__(self, d_in, d, rng, params, norm="batch", mlp_ratio=2.0, scale=None, binary_input=True):
        self.attn = SpikingSelfAttention(d_in, d, rng, params, norm, scale, binary_input)
        self.mlp = SpikingMLPUnit(d, max(1, int(round(d * mlp_ratio))), rng, params, norm)

    def __call__(self, x, theta):
        return self.mlp(self.attn(x, theta), theta)


class SpikingBody(Module):
    """Stacked spiking units split into stages of shrinking timesteps.

    ``kind='mlp'``: every unit is one spiking linear layer (three units in a
    single stage reproduce the plain spiking MLP).  ``kind='spikeformer'``:
    every unit is a :class:`SpikeFormerUnit`.  The input is a static (B, N, d_in)
    grid repeated over the first stage's timesteps.
    """

    def __init__(self, kind, d_in, d, schedule, rng, params, norm="batch", mlp_ratio=2.0, scale=None):
        if not isinstance(schedule, StageSchedule):
            schedule = StageSchedule(schedule)
        self.kind = kind
        self.schedule = schedule
        self.params = params
        self.stages = []
        for i, (_, n_units) in enumerate(schedule):
            units = []
            for j in range(n_units):
                width_in = d_in if i == j == 0 else d
                # a stage's first layer sees real values: the event grid or shrunk rates
                binary_input = j > 0
                if kind == "mlp":
                    unit = SpikingLinear(width_in, d, rng, params, norm, binary_input)
                elif kind == "spikeformer":
                    unit = SpikeFormerUnit(width_in, d, rng, params, norm, mlp_ratio, scale, binary_input)
                else:
                    raise ConfigError(f"unknown spiking body {kind!r}")
                units.append(unit)
            self.stages.append(_Stage(units))

    def __call__(self, x, thetas):
        """Run every stage.

        x: (B, N, d_in) static input; thetas: one (T_i, B) threshold tensor per stage.
        Returns per-stage firing rates (B, d), each the time-and-token mean of
        that stage's output after shrinking to the next stage's timesteps.
        """
        x = tn.as_tensor(x)
        T1 = self.schedule.timesteps[0]
        seq = tn.broadcast_to(x, (T1,) + x.shape)
        rates = []
        timesteps = self.schedule.timesteps
        for i, stage in enumerate(self.stages):
            for unit in stage.units:
                seq = unit(seq, thetas[i])
            if i + 1 < len(self.stages):
                seq = shrink_timesteps(seq, timesteps[i + 1])
            rates.append(tn.mean_pool(seq, axis=(0, 2)))
        return rates


class _Stage(Module):
    def __init__(self, units):
        self.units = units


def spikeformer_forward(events, body, thetas=None):
    """Firing-rate output ``j`` (B, d) of a spiking body on an event grid (B, N, d_in).

    Returns ``(j, per_stage_rates)``; ``j`` is the final stage's rate.
    """
    events = tn.as_tensor(events)
    if thetas is None:
        B = events.shape[0]
        thetas = [tn.Tensor(np.full((t, B), body.params.v_th_init)) for t in body.schedule.timesteps]
    rates = body(events, thetas)
    return rates[-1], rates
