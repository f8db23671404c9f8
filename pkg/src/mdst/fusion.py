"""Audio discrepancy block, cross-modal reasoning, and projection heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError
from .layers import MLP, Attention, Dropout, LayerNorm, Linear, Module, make_norm

# softplus(_BETA_RAW_INIT) == 1.0
_BETA_RAW_INIT = float(np.log(np.e - 1.0))


class DabParams(Module):
    """Learnable positive width ``beta_a`` of the discrepancy kernel (softplus-parameterised)."""

    def __init__(self, beta=1.0):
        raw = _BETA_RAW_INIT if beta == 1.0 else float(np.log(np.expm1(beta)))
        self.beta_raw = tn.parameter(np.array(raw))

    @property
    def beta(self):
        return tn.softplus(self.beta_raw)


def align_events(events, n_tokens, width=None):
    """Match the event grid to the audio layout.

    The time axis is kept when it has ``n_tokens`` rows and mean-pooled
    otherwise; a feature width other than ``width`` is mean-pooled too.
    """
    ev = np.asarray(events.data if isinstance(events, tn.Tensor) else events, dtype=np.float64)
    if ev.shape[-2] != n_tokens:
        ev = ev.mean(axis=-2, keepdims=True)
    if width is not None and ev.shape[-1] != width:
        ev = ev.mean(axis=-1, keepdims=True)
    return ev


def dab(a, events, beta):
    """``E_a = a + (1 - exp(-((E_v - a) / beta)^2))`` elementwise."""
    a = tn.as_tensor(a)
    ev = align_events(events, a.shape[-2], a.shape[-1]) if a.ndim >= 2 else np.asarray(events, dtype=np.float64)
    try:
        np.broadcast_shapes(ev.shape, a.shape)
    except ValueError:
        raise DimensionError(f"DAB: events {ev.shape} do not broadcast against audio {a.shape}") from None
    beta = beta.beta if isinstance(beta, DabParams) else tn.as_tensor(beta)
    z = tn.div(tn.sub(ev, a), beta)
    return tn.add(a, tn.sub(1.0, tn.exp(tn.neg(tn.square(z)))))


class FusionBlock(Module):
    """``R = CA(sem, sem * sigmoid(j))``, ``P = MLP(LN(R)) + R``."""

    def __init__(self, d, rng, mlp_ratio=2.0):
        self.ca = Attention(d, rng)
        self.ln = LayerNorm(d)
        self.mlp = MLP(d, max(1, int(round(d * mlp_ratio))), rng)

    def __call__(self, semantic, j):
        return crm_fuse(semantic, j, self)


def crm_fuse(semantic, j, block):
    """Gate semantics (B, N, d) with the pooled spike rate ``j`` (B, d), then cross-attend."""
    semantic, j = tn.as_tensor(semantic), tn.as_tensor(j)
    if semantic.shape[-1] != j.shape[-1]:
        raise DimensionError(f"semantic width {semantic.shape} vs spike output {j.shape}")
    gate = tn.sigmoid(j)
    if gate.ndim == semantic.ndim - 1:
        gate = tn.reshape(gate, gate.shape[:-1] + (1, gate.shape[-1]))
    gated = tn.mul(semantic, gate)
    r = block.ca(semantic, gated)
    return tn.add(block.mlp(block.ln(r)), r)


class CrossModalTransformer(Module):
    def __init__(self, d, rng, n_heads=8, head_dim=64, mlp_ratio=2.0):
        if d % n_heads:
            raise ConfigError(f"width {d} does not divide into {n_heads} heads")
        self.mhca = Attention(d, rng, n_heads=n_heads, head_dim=head_dim)
        self.ln = LayerNorm(d)
        self.mlp = MLP(d, max(1, int(round(d * mlp_ratio))), rng)

    def __call__(self, p_v, p_a):
        return cross_modal_transformer(p_v, p_a, self)


def cross_modal_transformer(p_v, p_a, block):
    """``Z = P_v + MHCA(P_v, P_a)`` (visual queries), ``F = MLP(LN(Z)) + Z``.

    The query residual makes this a standard transformer layer; without it
    the visual stream would reach the output only through attention weights.
    """
    p_v, p_a = tn.as_tensor(p_v), tn.as_tensor(p_a)
    if p_v.shape[-1] != p_a.shape[-1]:
        raise DimensionError(f"P_v {p_v.shape} and P_a {p_a.shape} widths differ")
    z = tn.add(p_v, block.mhca(p_v, p_a))
    return tn.add(block.mlp(block.ln(z)), z)


@dataclass(frozen=True)
class ProjectionSpec:
    t_emb: int = 512
    t_hid: int = 512
    t_fin: int = 300
    word_dim: int = 300
    t_proj: int = 64
    d_proj: float = 0.20
    d_wproj: float = 0.10

    def __post_init__(self):
        if min(self.t_emb, self.t_hid, self.t_fin, self.word_dim, self.t_proj) <= 0:
            raise ConfigError("projection widths must be positive")


class Head(Module):
    """Two blocks of linear -> norm -> ReLU -> dropout."""

    def __init__(self, d_in, d_hid, d_out, dropout, rng, norm="batch"):
        self.f1 = Linear(d_in, d_hid, rng)
        self.n1 = make_norm(norm, d_hid)
        self.f2 = Linear(d_hid, d_out, rng)
        self.n2 = make_norm(norm, d_out)
        self.drop = Dropout(dropout, rng)
        self.d_in = d_in

    def __call__(self, x):
        x = tn.as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"head expects width {self.d_in}, got {x.shape}")
        x = self.drop(tn.relu(self.n1(self.f1(x))))
        return self.drop(tn.relu(self.n2(self.f2(x))))


class Heads(Module):
    """Audio-visual projection, word projection and reconstruction heads."""

    def __init__(self, spec, rng, norm="batch"):
        self.spec = spec
        self.av_proj = Head(spec.t_emb, spec.t_hid, spec.t_fin, spec.d_proj, rng, norm)
        self.w_proj = Head(spec.word_dim, spec.t_proj, spec.t_fin, spec.d_wproj, rng, norm)
        self.av_rec = Head(spec.t_fin, spec.t_hid, spec.t_fin, spec.d_proj, rng, norm)

    def project(self, f_av):
        return self.av_proj(f_av)

    def project_words(self, w):
        return self.w_proj(w)

    def reconstruct(self, o_av):
        return self.av_rec(o_av)
