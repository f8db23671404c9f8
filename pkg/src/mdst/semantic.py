"""Modality encoders and the recurrent joint learning unit (RJLU).

The RJLU walks the encoded audio/visual token sequences in windows of
``window`` tokens.  At every step it gates the previous joint knowledge
``h`` with cross-attention of pooled modality features against pooled
``h``, self-attends over ``[a; h; v]``, and moves ``h`` along a convex
combination towards the (token-pooled) fused result.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ContractError, DimensionError
from .layers import MLP, Attention, Dropout, LayerNorm, Linear, Module, make_norm


@dataclass(frozen=True)
class EncoderSpec:
    t_in: int = 512
    t_hid: int = 512
    t_emb: int = 512
    dropout: float = 0.25

    def __post_init__(self):
        if min(self.t_in, self.t_hid, self.t_emb) <= 0:
            raise ConfigError("encoder widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("encoder dropout must lie in [0, 1)")


class Encoder(Module):
    """Two blocks of linear -> norm -> ReLU -> dropout."""

    def __init__(self, spec, rng, norm="batch"):
        self.spec = spec
        self.f1 = Linear(spec.t_in, spec.t_hid, rng)
        self.n1 = make_norm(norm, spec.t_hid)
        self.f2 = Linear(spec.t_hid, spec.t_emb, rng)
        self.n2 = make_norm(norm, spec.t_emb)
        self.drop = Dropout(spec.dropout, rng)

    def __call__(self, raw):
        raw = tn.as_tensor(raw)
        if raw.shape[-1] != self.spec.t_in:
            raise DimensionError(f"encoder expects width {self.spec.t_in}, got {raw.shape}")
        x = self.drop(tn.relu(self.n1(self.f1(raw))))
        return self.drop(tn.relu(self.n2(self.f2(x))))


def encode(raw, encoder):
    return encoder(raw)


@dataclass
class JointKnowledge:
    h: tn.Tensor
    step: int


class RJLU(Module):
    def __init__(self, d, rng, window=1, mlp_ratio=2.0, learn_h0=False):
        if window < 1:
            raise ConfigError("RJLU window must be >= 1")
        self.d = d
        self.window = window
        self.ca_a = Attention(d, rng)
        self.ca_v = Attention(d, rng)
        self.sa = Attention(d, rng)
        self.ln = LayerNorm(d)
        self.mlp = MLP(d, max(1, int(round(d * mlp_ratio))), rng)
        self.h0 = tn.parameter(np.zeros((window, d))) if learn_h0 else None

    def initial(self, batch):
        if self.h0 is not None:
            return JointKnowledge(tn.broadcast_to(self.h0, (batch, self.window, self.d)), 0)
        return JointKnowledge(tn.Tensor(np.zeros((batch, self.window, self.d))), 0)

    def gates(self, a, v, h_prev):
        return rjlu_gates(a, v, h_prev, self)

    def fuse(self, a, h_prev, v):
        return rjlu_fuse(a, h_prev, v, self)

    def __call__(self, a_seq, v_seq):
        """Run over (B, F, d) sequences; returns (h list, S_ahv list), one per window."""
        a_seq, v_seq = tn.as_tensor(a_seq), tn.as_tensor(v_seq)
        if a_seq.shape != v_seq.shape:
            raise DimensionError(f"audio {a_seq.shape} and visual {v_seq.shape} tokens differ")
        B, F, _ = a_seq.shape
        if F % self.window:
            raise ContractError(f"{F} tokens do not split into windows of {self.window}")
        state = self.initial(B)
        hs, ss = [], []
        for start in range(0, F, self.window):
            a = a_seq[:, start:start + self.window]
            v = v_seq[:, start:start + self.window]
            c_a, c_v = self.gates(a, v, state.h)
            s = self.fuse(a, state.h, v)
            state = JointKnowledge(rjlu_update(state.h, c_a, c_v, s), state.step + 1)
            hs.append(state.h)
            ss.append(s)
        return hs, ss


def rjlu_gates(a, v, h_prev, unit):
    """Sigmoid gates from cross-attention of token-pooled modality features onto pooled h."""
    a, v, h_prev = tn.as_tensor(a), tn.as_tensor(v), tn.as_tensor(h_prev)
    if not a.shape[-1] == v.shape[-1] == h_prev.shape[-1]:
        raise DimensionError(f"widths differ: a {a.shape}, v {v.shape}, h {h_prev.shape}")
    ph = tn.mean_pool(h_prev, axis=1, keepdims=True)
    c_a = tn.sigmoid(unit.ca_a(tn.mean_pool(a, axis=1, keepdims=True), ph))
    c_v = tn.sigmoid(unit.ca_v(tn.mean_pool(v, axis=1, keepdims=True), ph))
    return c_a, c_v


def rjlu_fuse(a, h_prev, v, unit):
    """``S = MLP(LN(SA(C))) + SA(C)`` with ``C = [a; h; v]`` along tokens."""
    a, h_prev, v = tn.as_tensor(a), tn.as_tensor(h_prev), tn.as_tensor(v)
    if not a.shape == h_prev.shape == v.shape:
        raise DimensionError(f"shapes differ: a {a.shape}, h {h_prev.shape}, v {v.shape}")
    c = tn.concat([a, h_prev, v], axis=1)
    sa = unit.sa(c, c)
    return tn.add(unit.mlp(unit.ln(sa)), sa)


def pool_joint(s, n_tokens):
    """Average the a/h/v thirds of ``S_ahv`` back onto h's token layout."""
    B, N3, d = s.shape
    if N3 != 3 * n_tokens:
        raise DimensionError(f"S_ahv has {N3} tokens, expected {3 * n_tokens}")
    return tn.mean_pool(tn.reshape(s, (B, 3, n_tokens, d)), axis=1)


def rjlu_update(h_prev, c_a, c_v, s):
    """``h = g * h_prev + (1 - g) * pool(S)`` with ``g = (C_a + C_v) / 2``."""
    h_prev = tn.as_tensor(h_prev)
    g = tn.scale(tn.add(c_a, c_v), 0.5)
    pooled = pool_joint(tn.as_tensor(s), h_prev.shape[1])
    return tn.add(tn.mul(g, h_prev), tn.mul(tn.sub(1.0, g), pooled))


def semantic_streams(a_seq, v_seq, hs):
    """Per-modality semantics: encoded tokens plus the joint knowledge of their window."""
    h_all = tn.concat(hs, axis=1)
    return tn.add(a_seq, h_all), tn.add(v_seq, h_all)
