"""Embedding losses, Adam, the training loops for both variants, and ZSL/GZSL evaluation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .config import Config
from .errors import ConfigError, DataError
from .model import MDST

# -- losses -----------------------------------------------------------------------


def squared_distance(x, y):
    """Per-sample squared Euclidean distance over the last axis."""
    return tn.sum_(tn.square(tn.sub(x, y)), axis=-1)


def triplet_loss(o_av_pos, o_w_pos, o_av_neg, o_w_neg, gamma=1.0):
    """Two-anchor margin loss, batch-averaged.

    ``[gamma + d(av+, w+) - d(av-, w+)]_+ + [gamma + d(av+, w+) - d(av+, w-)]_+``
    with ``d`` the squared Euclidean distance.
    """
    if gamma <= 0:
        raise ConfigError("triplet margin must be positive")
    pos = squared_distance(o_av_pos, o_w_pos)
    neg_av = squared_distance(o_av_neg, o_w_pos)
    neg_w = squared_distance(o_av_pos, o_w_neg)
    hinge = tn.add(tn.relu(tn.add(tn.sub(pos, neg_av), gamma)), tn.relu(tn.add(tn.sub(pos, neg_w), gamma)))
    return tn.mean_pool(hinge)


def projection_loss(o_av, o_w):
    """Batch mean of per-sample squared distances."""
    return tn.mean_pool(squared_distance(o_av, o_w))


def reconstruction_loss(o_rec, o_w):
    return tn.mean_pool(squared_distance(o_rec, o_w))


@dataclass
class LossTerms:
    l_n: tn.Tensor
    l_p: tn.Tensor
    l_r: tn.Tensor

    @property
    def total(self):
        return total_loss(self.l_n, self.l_p, self.l_r)


def total_loss(l_n, l_p, l_r):
    return tn.add(tn.add(l_n, l_p), l_r)


def stage_total(stage_losses, weights=None):
    """Weighted sum of per-stage totals; all weights 1 by default."""
    if weights is None:
        weights = [1.0] * len(stage_losses)
    if len(weights) != len(stage_losses):
        raise ConfigError(f"{len(weights)} stage weights for {len(stage_losses)} stages")
    out = tn.scale(stage_losses[0], float(weights[0]))
    for w, l in zip(weights[1:], stage_losses[1:]):
        out = tn.add(out, tn.scale(l, float(w)))
    return out


# -- optimiser --------------------------------------------------------------------


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * p.grad
            self.v[k] = b2 * self.v[k] + (1 - b2) * p.grad ** 2
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# -- training ---------------------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    L_n: float
    L_p: float
    L_r: float
    L_total: float
    per_stage: list

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    model: MDST
    history: list = field(default_factory=list)
    seen_classes: list = field(default_factory=list)


def sample_negatives(labels, rng):
    """One in-batch negative per anchor, uniform over samples of other classes."""
    labels = np.asarray(labels)
    out = np.empty(len(labels), dtype=np.int64)
    for i, c in enumerate(labels):
        cand = np.flatnonzero(labels != c)
        if cand.size == 0:
            cand = np.delete(np.arange(len(labels)), i)
        out[i] = rng.choice(cand)
    return out


def batch_losses(model, out, o_w_classes, targets, negatives, gamma):
    """Per-stage :class:`LossTerms` for one forward pass; ``targets`` index ``o_w_classes``."""
    o_w = tn.getitem(o_w_classes, targets)
    o_w_neg = tn.getitem(o_w_classes, targets[negatives])
    terms = []
    for o_av, o_rec in zip(out.o_av, out.o_rec):
        o_av_neg = tn.getitem(o_av, negatives)
        terms.append(LossTerms(triplet_loss(o_av, o_w, o_av_neg, o_w_neg, gamma),
                               projection_loss(o_av, o_w),
                               reconstruction_loss(o_rec, o_w)))
    return terms


def _batches(order, batch_size):
    n_batches = max(1, len(order) // batch_size)
    return np.array_split(order, n_batches)


def train(dataset, config: Config, on_epoch=None):
    """Train either variant on the seen-class training split.

    Every stage contributes its own loss on its rate output; the single-stage
    variant therefore trains on one loss.  ``on_epoch`` receives each
    :class:`EpochMetrics` as it is produced.
    """
    if config.stage_weights is not None and len(config.stage_weights) != len(config.schedule()):
        raise ConfigError("stage_weights must have one entry per stage")
    train_idx = dataset.split_indices("train")
    if train_idx.size == 0:
        raise DataError("training split is empty")
    rng = np.random.default_rng(config.seed)
    model = MDST(config, dataset.audio.shape[-1], dataset.visual.shape[-1], rng)
    events = dataset.event_grid(config.egm_threshold)
    seen = sorted(set(int(c) for c in dataset.labels[train_idx]))
    to_row = {c: i for i, c in enumerate(seen)}
    words = dataset.class_vectors[seen]
    opt = Adam(model.named_parameters(), config.lr, config.beta1, config.beta2, config.adam_eps)
    result = TrainResult(model, [], seen)

    for epoch in range(1, config.epochs + 1):
        model.train()
        sums, per_stage_sum, count = np.zeros(4), None, 0
        for b in _batches(rng.permutation(train_idx), config.batch_size):
            targets = np.array([to_row[int(c)] for c in dataset.labels[b]])
            negatives = sample_negatives(targets, rng)
            opt.zero_grad()
            with tn.GradTape() as tape:
                out = model(dataset.audio[b], dataset.visual[b], events[b])
                terms = batch_losses(model, out, model.embed_words(words), targets, negatives, config.gamma)
                loss = stage_total([t.total for t in terms], config.stage_weights)
                tape.backward(loss)
            opt.step()
            n = len(b)
            sums += n * np.array([sum(t.l_n.item() for t in terms), sum(t.l_p.item() for t in terms),
                                  sum(t.l_r.item() for t in terms), loss.item()])
            stage_vals = np.array([t.total.item() for t in terms])
            per_stage_sum = n * stage_vals if per_stage_sum is None else per_stage_sum + n * stage_vals
            count += n
        sums /= count
        m = EpochMetrics(epoch, float(sums[0]), float(sums[1]), float(sums[2]), float(sums[3]),
                         [float(x) for x in per_stage_sum / count])
        result.history.append(m)
        if on_epoch is not None:
            on_epoch(m)
    model.eval()
    return result


def train_mdst(dataset, config: Config, on_epoch=None):
    if config.model != "mdst":
        config = config.replace(model="mdst", body=None)
    return train(dataset, config, on_epoch)


def train_mdstpp(dataset, config: Config, on_epoch=None):
    if config.model != "mdstpp":
        config = config.replace(model="mdstpp", body=None)
    return train(dataset, config, on_epoch)


# -- evaluation -------------------------------------------------------------------


def harmonic_mean(seen, unseen):
    if seen < 0 or unseen < 0:
        raise ValueError("accuracies must be non-negative")
    if seen + unseen == 0:
        return 0.0
    return 2.0 * seen * unseen / (seen + unseen)


@dataclass
class EvalReport:
    seen_acc: float
    unseen_acc: float
    hm: float
    zsl_acc: float

    @classmethod
    def from_accuracies(cls, seen, unseen, zsl):
        return cls(seen, unseen, harmonic_mean(seen, unseen), zsl)

    def to_dict(self):
        return asdict(self)


def nearest_class(o_av, o_w, candidates):
    """Index into ``candidates`` of the nearest class embedding per row (squared Euclidean)."""
    o_w = o_w[candidates]
    d = (o_av ** 2).sum(1)[:, None] - 2.0 * o_av @ o_w.T + (o_w ** 2).sum(1)[None, :]
    return np.asarray(candidates)[np.argmin(d, axis=1)]


def class_mean_accuracy(pred, labels):
    """Mean over classes of per-class accuracy, in percent."""
    classes = np.unique(labels)
    if classes.size == 0:
        return 0.0
    return float(100.0 * np.mean([np.mean(pred[labels == c] == c) for c in classes]))


def embed_samples(model, dataset, idx, threshold, batch_size=256):
    out = []
    events = dataset.event_grid(threshold)
    with tn.no_grad():
        for start in range(0, len(idx), batch_size):
            b = idx[start:start + batch_size]
            out.append(model(dataset.audio[b], dataset.visual[b], events[b]).final.data)
    return np.concatenate(out) if out else np.zeros((0, model.config.t_fin))


def evaluate(model, dataset, mode="zsl"):
    """ZSL restricts candidates to unseen classes on unseen samples; GZSL scores all classes."""
    if mode not in ("zsl", "gzsl"):
        raise ValueError(f"mode must be 'zsl' or 'gzsl', got {mode!r}")
    if dataset.splits is None:
        raise DataError("dataset has no splits")
    model.eval()
    splits = dataset.splits
    unseen_idx = dataset.split_indices("test_unseen")
    if unseen_idx.size == 0:
        raise DataError("test_unseen split is empty")
    threshold = model.config.egm_threshold
    with tn.no_grad():
        o_w = model.embed_words(dataset.class_vectors).data
    o_unseen = embed_samples(model, dataset, unseen_idx, threshold)
    y_unseen = dataset.labels[unseen_idx]
    test_classes = sorted(set(int(c) for c in y_unseen))
    zsl = class_mean_accuracy(nearest_class(o_unseen, o_w, test_classes), y_unseen)
    if mode == "zsl":
        return EvalReport(seen_acc=0.0, unseen_acc=zsl, hm=0.0, zsl_acc=zsl)

    seen_idx = dataset.split_indices("test_seen")
    if seen_idx.size == 0:
        raise DataError("test_seen split is empty")
    candidates = sorted(set(splits.seen_classes) | set(test_classes))
    o_seen = embed_samples(model, dataset, seen_idx, threshold)
    s = class_mean_accuracy(nearest_class(o_seen, o_w, candidates), dataset.labels[seen_idx])
    u = class_mean_accuracy(nearest_class(o_unseen, o_w, candidates), y_unseen)
    return EvalReport.from_accuracies(s, u, zsl)
