"""Finite-difference gradient suites, one per module, on tiny random problems.

Spiking paths are checked under :func:`tensor.surrogate_forward`, where the
forward pass uses the same smooth step whose slope the backward pass uses.
Every case is a scalar ``sum(w * f(params))`` with a fixed random ``w``.
"""
from __future__ import annotations

import numpy as np

from . import tensor as tn
from .config import Config
from .errors import ConfigError
from .fusion import CrossModalTransformer, DabParams, FusionBlock, Heads, ProjectionSpec, dab
from .layers import Attention, BatchNorm
from .model import MDST
from .semantic import RJLU, Encoder, EncoderSpec
from .spiking import (LifParams, SpikingBody, SpikingLinear, SpikingSelfAttention, dynamic_threshold,
                      shrink_timesteps)
from .training import batch_losses, projection_loss, reconstruction_loss, stage_total, triplet_loss

TOLERANCE = 1e-4
STEP = 1e-6
# entries sampled per parameter in the whole-model checks
END_TO_END_COORDS = 3


def _weighted(fn, rng):
    """Wrap ``fn`` into a scalar loss with a fixed random readout of its output."""
    cache = {}

    def f():
        out = tn.as_tensor(fn())
        if "w" not in cache:
            cache["w"] = rng.normal(size=out.shape)
        return tn.sum_(tn.mul(out, cache["w"]))
    return f


def _leaf(rng, shape, lo=None, hi=None):
    data = rng.normal(size=shape) if lo is None else rng.uniform(lo, hi, size=shape)
    return tn.parameter(data)


def _check(fn, params, rng, soft=False):
    f = _weighted(fn, rng)
    with tn.surrogate_forward(soft):
        return tn.check_gradients(f, params, h=STEP)


# -- per-module cases -----------------------------------------------------------

def _tensorcore(rng):
    x = _leaf(rng, (3, 4))
    y = _leaf(rng, (3, 4))
    pos = _leaf(rng, (3, 4), 0.5, 2.0)
    m = _leaf(rng, (4, 2))
    g, b = _leaf(rng, (4,)), _leaf(rng, (4,))
    bn = BatchNorm(4)
    cases = {
        "add": (lambda: tn.add(x, y), {"x": x, "y": y}),
        "sub": (lambda: tn.sub(x, y), {"x": x, "y": y}),
        "mul": (lambda: tn.mul(x, y), {"x": x, "y": y}),
        "div": (lambda: tn.div(x, pos), {"x": x, "pos": pos}),
        "exp": (lambda: tn.exp(x), {"x": x}),
        "log": (lambda: tn.log(pos), {"pos": pos}),
        "sigmoid": (lambda: tn.sigmoid(x), {"x": x}),
        "softplus": (lambda: tn.softplus(x), {"x": x}),
        "relu": (lambda: tn.relu(x), {"x": x}),
        "square": (lambda: tn.square(x), {"x": x}),
        "clamp": (lambda: tn.clamp(x, -0.5, 0.5), {"x": x}),
        "matmul": (lambda: tn.matmul(x, m), {"x": x, "m": m}),
        "broadcast": (lambda: tn.add(x, g), {"x": x, "g": g}),
        "reshape_transpose": (lambda: tn.transpose(tn.reshape(x, (2, 6)), (1, 0)), {"x": x}),
        "getitem": (lambda: tn.getitem(x, (slice(None), np.array([0, 2, 2]))), {"x": x}),
        "concat_stack": (lambda: tn.stack([tn.concat([x, y], axis=1), tn.concat([y, x], axis=1)]),
                         {"x": x, "y": y}),
        "sum_mean": (lambda: tn.add(tn.sum_(x, axis=0), tn.mean_pool(y, axis=0)), {"x": x, "y": y}),
        "max_min": (lambda: tn.add(tn.max_(x, axis=1), tn.min_(y, axis=1)), {"x": x, "y": y}),
        "softmax": (lambda: tn.softmax(x, axis=-1), {"x": x}),
        "layer_norm": (lambda: tn.layer_norm(x, g, b), {"x": x, "g": g, "b": b}),
        "batch_norm": (lambda: bn(x), {"x": x, **bn.named_parameters()}),
    }
    return {name: _check(fn, params, rng) for name, (fn, params) in cases.items()}


def _lif_params():
    return LifParams(tau_m=2.0, v_th_init=1.0)


def _spiking(rng):
    params = _lif_params()
    cur = _leaf(rng, (5, 2, 3), 0.0, 3.0)
    theta = _leaf(rng, (5, 2), 0.5, 1.5)
    x_seq = tn.Tensor(rng.uniform(0, 1, size=(4, 2, 3, 3)))
    lin = SpikingLinear(3, 4, rng, params, norm="layer")
    ssa = SpikingSelfAttention(3, 4, rng, params, norm="layer")
    body = SpikingBody("spikeformer", 3, 4, [(3, 1), (2, 1)], rng, params, norm="layer", mlp_ratio=1.0)
    th_lin = tn.Tensor(np.ones((4, 2)))
    thetas = [tn.Tensor(np.ones((3, 2))), tn.Tensor(np.ones((2, 2)))]
    static = tn.Tensor(rng.uniform(0, 1, size=(2, 3, 3)))
    v_prev = _leaf(rng, (2,), 0.8, 1.2)
    sem = _leaf(rng, (2, 3, 4))
    motion = _leaf(rng, (2, 3, 4), 0.0, 1.0)
    seq = _leaf(rng, (5, 2, 3))
    cases = {
        "lif_scan": (lambda: tn.lif_scan(cur, theta, 2.0), {"current": cur, "theta": theta}),
        "spiking_linear": (lambda: lin(x_seq, th_lin), lin.named_parameters()),
        "spiking_self_attention": (lambda: ssa(x_seq, th_lin), ssa.named_parameters()),
        "spiking_body": (lambda: stage_sum(body(static, thetas)), body.named_parameters()),
        "shrink_timesteps": (lambda: shrink_timesteps(seq, 2), {"seq": seq}),
        "dynamic_threshold": (lambda: dynamic_threshold(v_prev, sem, motion),
                              {"v_prev": v_prev, "sem": sem, "motion": motion}),
    }
    return {name: _check(fn, p, rng, soft=True) for name, (fn, p) in cases.items()}


def stage_sum(rates):
    out = rates[0]
    for r in rates[1:]:
        out = tn.add(out, r)
    return out


def _semantic(rng):
    enc = Encoder(EncoderSpec(3, 4, 4, 0.0), rng, norm="layer")
    raw = tn.Tensor(rng.normal(size=(2, 4, 3)))
    unit = RJLU(4, rng, window=2, mlp_ratio=1.0, learn_h0=True)
    a, v = _leaf(rng, (2, 4, 4)), _leaf(rng, (2, 4, 4))
    attn = Attention(4, rng, n_heads=2)
    q, c = _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 5, 4))

    def rjlu_out():
        hs, ss = unit(a, v)
        return tn.add(tn.sum_(tn.concat(hs, axis=1)), tn.sum_(tn.concat(ss, axis=1)))
    cases = {
        "attention": (lambda: attn(q, c), {"q": q, "c": c, **attn.named_parameters()}),
        "encoder": (lambda: enc(raw), enc.named_parameters()),
        "rjlu": (rjlu_out, {"a": a, "v": v, **unit.named_parameters()}),
    }
    return {name: _check(fn, p, rng) for name, (fn, p) in cases.items()}


def _fusion(rng):
    d = DabParams()
    a = _leaf(rng, (2, 3, 4))
    ev = rng.choice([-1.0, 0.0, 1.0], size=(2, 3, 4))
    block = FusionBlock(4, rng, mlp_ratio=1.0)
    sem, j = _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 4))
    cmt = CrossModalTransformer(4, rng, n_heads=2, head_dim=2, mlp_ratio=1.0)
    p_v, p_a = _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 3, 4))
    heads = Heads(ProjectionSpec(4, 4, 4, 6, 4, 0.0, 0.0), rng, norm="layer")
    w = _leaf(rng, (3, 6))
    cases = {
        "dab": (lambda: dab(a, ev, d), {"a": a, **d.named_parameters()}),
        "crm_fuse": (lambda: block(sem, j), {"sem": sem, "j": j, **block.named_parameters()}),
        "cross_modal_transformer": (lambda: cmt(p_v, p_a), {"p_v": p_v, "p_a": p_a, **cmt.named_parameters()}),
        "project_cmt": (lambda: heads.reconstruct(heads.project(tn.mean_pool(cmt(p_v, p_a), axis=1))),
                        {"p_v": p_v, **heads.named_parameters(), **cmt.named_parameters()}),
        "project_words": (lambda: heads.project_words(w), {"w": w}),
    }
    return {name: _check(fn, p, rng) for name, (fn, p) in cases.items()}


def _training(rng):
    o1, o2, o3, o4 = (_leaf(rng, (4, 5)) for _ in range(4))
    leaves = {"av_pos": o1, "w_pos": o2, "av_neg": o3, "w_neg": o4}
    cases = {
        # margin large enough that both hinges stay active
        "triplet_loss": (lambda: triplet_loss(o1, o2, o3, o4, gamma=50.0), leaves),
        "projection_loss": (lambda: projection_loss(o1, o2), {"av_pos": o1, "w_pos": o2}),
        "reconstruction_loss": (lambda: reconstruction_loss(o3, o2), {"av_neg": o3, "w_pos": o2}),
    }
    return {name: _check(fn, p, rng) for name, (fn, p) in cases.items()}


def toy_config(model="mdst"):
    """4-wide model with layer norms and no dropout, for end-to-end checks."""
    return Config(model=model, t_hid=4, t_emb=4, t_proj=4, t_fin=4, word_dim=6, n_heads=2, head_dim=2,
                  rjlu_window=2, d_enc=0.0, d_proj=0.0, d_wproj=0.0, norm="layer", spiking_norm="layer",
                  stages=[[3, 1], [2, 1]], timesteps=3, mlp_layers=2, mlp_ratio=1.0)


def end_to_end_report(model="mdst", seed=0):
    rng = np.random.default_rng(seed)
    net = MDST(toy_config(model), 3, 3, rng)
    audio = rng.normal(size=(3, 4, 3))
    visual = rng.uniform(1.0, 2.0, size=(3, 4, 3))
    events = rng.choice([-1.0, 0.0, 1.0], size=(3, 4, 3))
    words = rng.normal(size=(3, 6))
    targets, negatives = np.array([0, 1, 2]), np.array([1, 2, 0])

    def loss():
        out = net(audio, visual, events)
        terms = batch_losses(net, out, net.embed_words(words), targets, negatives, 1.0)
        return stage_total([t.total for t in terms])
    with tn.surrogate_forward():
        return tn.check_gradients(loss, net.named_parameters(), h=STEP, max_coords=END_TO_END_COORDS, seed=seed)


def _model(rng):
    return {f"end_to_end_{name}": end_to_end_report(name) for name in ("mdst", "mdstpp")}


SUITES = {
    "tensorcore": _tensorcore,
    "spiking": _spiking,
    "semantic": _semantic,
    "fusion": _fusion,
    "training": _training,
    "model": _model,
}


def run(module, seed=0):
    """Max relative error per case for one module (``all`` runs every suite)."""
    if module == "all":
        out = {}
        for name in SUITES:
            out.update({f"{name}.{k}": v for k, v in run(name, seed).items()})
        return out
    if module not in SUITES:
        raise ConfigError(f"no gradient suite for {module!r}; choose from {sorted(SUITES) + ['all']}")
    return {k: rep.max_error for k, rep in SUITES[module](np.random.default_rng(seed)).items()}
