"""End-to-end audio-visual zero-shot model: event, semantic and spiking streams fused into a word space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .config import Config
from .errors import DimensionError
from .fusion import CrossModalTransformer, DabParams, FusionBlock, Heads, ProjectionSpec, dab
from .layers import Linear, Module
from .semantic import RJLU, Encoder, EncoderSpec, semantic_streams
from .spiking import LifParams, SpikingBody, threshold_sequence


@dataclass
class ModelOutput:
    """Per-stage projections ``o_av`` and reconstructions ``o_rec``, each (B, T_fin)."""

    o_av: list
    o_rec: list
    rates_a: list
    rates_v: list

    @property
    def final(self):
        return self.o_av[-1]


def on_off_channels(events):
    """Split a signed event grid (..., D) into binary ON and OFF spike channels (..., 2D)."""
    events = np.asarray(events)
    return np.concatenate([(events > 0), (events < 0)], axis=-1).astype(np.float64)


class MDST(Module):
    """Both model variants; ``config.model`` and ``config.body`` pick the spiking body and schedule."""

    def __init__(self, config: Config, d_audio: int, d_visual: int, rng=None):
        if rng is None:
            rng = np.random.default_rng(config.seed)
        c = config
        self.config = c
        self.d_audio, self.d_visual = d_audio, d_visual
        d = c.t_emb
        self.enc_a = Encoder(EncoderSpec(d_audio, c.t_hid, d, c.d_enc), rng, c.norm)
        self.enc_v = Encoder(EncoderSpec(d_visual, c.t_hid, d, c.d_enc), rng, c.norm)
        self.rjlu = RJLU(d, rng, c.rjlu_window, c.mlp_ratio, c.learn_h0)
        self.dab = DabParams()
        self.lif = LifParams(c.tau_m, c.resistance, c.v_reset, c.v_th_init, c.surrogate, c.surrogate_alpha)
        self.schedule = c.schedule()
        if c.use_mim:
            self.body_a = SpikingBody(c.body, d_audio, d, self.schedule, rng, self.lif,
                                      c.spiking_norm, c.mlp_ratio, c.attention_scale)
            self.body_v = SpikingBody(c.body, 2 * d_visual, d, self.schedule, rng, self.lif,
                                      c.spiking_norm, c.mlp_ratio, c.attention_scale)
            # real-valued readout of the firing rates so the fusion gate spans (0, 1)
            self.readout_a = Linear(d, d, rng)
            self.readout_v = Linear(d, d, rng)
        self.fuse_a = FusionBlock(d, rng, c.mlp_ratio)
        self.fuse_v = FusionBlock(d, rng, c.mlp_ratio)
        self.cmt = CrossModalTransformer(d, rng, c.n_heads, c.head_dim, c.mlp_ratio)
        self.heads = Heads(ProjectionSpec(d, c.t_hid, c.t_fin, c.word_dim, c.t_proj, c.d_proj, c.d_wproj),
                           rng, c.norm)

    def embed_words(self, words):
        """Project class vectors (C, word_dim) to (C, T_fin)."""
        return self.heads.project_words(words)

    def _thresholds(self, semantics_steps, motion):
        c = self.config
        return [threshold_sequence(t, semantics_steps, motion, c.v_th_init, c.v_th_min, c.dynamic_threshold)
                for t in self.schedule.timesteps]

    def __call__(self, audio, visual, events_v):
        """audio (B, F, D_a), visual (B, F, D_v), visual event grid (B, F, D_v)."""
        audio, visual = tn.as_tensor(audio), tn.as_tensor(visual)
        events_v = np.asarray(events_v, dtype=np.float64)
        if audio.ndim != 3 or visual.ndim != 3 or audio.shape[:2] != visual.shape[:2]:
            raise DimensionError(f"audio {audio.shape} and visual {visual.shape} must be (B, F, D) alike")
        if events_v.shape != visual.shape:
            raise DimensionError(f"event grid {events_v.shape} does not match visual {visual.shape}")
        B = audio.shape[0]

        a_tok, v_tok = self.enc_a(audio), self.enc_v(visual)
        hs, s_ahv = self.rjlu(a_tok, v_tok)
        sem_a, sem_v = semantic_streams(a_tok, v_tok, hs)

        n_stages = len(self.schedule)
        if self.config.use_mim:
            events_a = dab(audio, events_v, self.dab)
            audio_motion = tn.sub(events_a, audio)
            rates_a = self.body_a(events_a, self._thresholds(s_ahv, audio_motion))
            rates_v = self.body_v(on_off_channels(events_v), self._thresholds(s_ahv, events_v))
        else:
            zero = tn.Tensor(np.zeros((B, self.config.t_emb)))
            rates_a = rates_v = [zero] * n_stages

        o_av, o_rec = [], []
        for r_a, r_v in zip(rates_a, rates_v):
            j_a, j_v = (self.readout_a(r_a), self.readout_v(r_v)) if self.config.use_mim else (r_a, r_v)
            p_a = self.fuse_a(sem_a, j_a)
            p_v = self.fuse_v(sem_v, j_v)
            f_av = tn.mean_pool(self.cmt(p_v, p_a), axis=1)
            o = self.heads.project(f_av)
            o_av.append(o)
            o_rec.append(self.heads.reconstruct(o))
        return ModelOutput(o_av, o_rec, rates_a, rates_v)
