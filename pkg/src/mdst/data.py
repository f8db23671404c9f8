"""Synthetic background-confounded dataset, feature-directory ingestion and class-level splits.

Synthetic classes are the product of ``n_background_groups`` scene
backgrounds and ``n_motions`` motion signatures.  Classes that share a
background differ only in how their features move over time, so a model
that ignores temporal change cannot tell them apart.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import io
from .errors import ConfigError, DataError
from .events import feature_egm_batch


@dataclass(frozen=True)
class SyntheticSpec:
    n_seen_classes: int = 8
    n_unseen_classes: int = 4
    samples_per_class: int = 40
    frames: int = 16
    feature_dim: int = 64
    audio_dim: int | None = None        # defaults to feature_dim
    n_background_groups: int = 4
    n_motions: int = 3
    noise_sigma: float = 0.05
    background_range: tuple = (1.5, 3.0)
    motion_amplitude: float = 1.0
    motion_frequencies: tuple | None = None   # cycles per clip; default 1, 2, 4, ...
    word_dim: int = 300
    word_background_weight: float = 1.0
    test_seen_fraction: float = 0.2

    def __post_init__(self):
        n_classes = self.n_background_groups * self.n_motions
        if self.n_seen_classes + self.n_unseen_classes != n_classes:
            raise ConfigError(f"{self.n_seen_classes}+{self.n_unseen_classes} classes != "
                              f"{self.n_background_groups} backgrounds x {self.n_motions} motions")
        if self.n_motions < 2:
            raise ConfigError("every background must be shared by at least two classes")
        if self.n_unseen_classes < 1 or self.n_seen_classes < 1:
            raise ConfigError("need at least one seen and one unseen class")
        if self.n_unseen_classes > len(self.unseen_candidates()):
            raise ConfigError(f"at most {len(self.unseen_candidates())} unseen classes keep every "
                              "unseen background and motion present among the seen classes")
        if self.frames < 2 or self.feature_dim < 1 or self.samples_per_class < 2:
            raise ConfigError("need >= 2 frames, >= 1 feature and >= 2 samples per class")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        lo, hi = self.background_range
        if not 0 < lo <= hi or self.motion_amplitude + 4 * self.noise_sigma >= lo:
            raise ConfigError("backgrounds must stay positive and dominate motion plus noise")
        freqs = self.frequencies()
        if len(freqs) != self.n_motions or len(set(freqs)) != len(freqs):
            raise ConfigError("need one distinct frequency per motion")
        if not all(0 < f < self.frames / 2 for f in freqs):
            raise ConfigError(f"motion frequencies must lie in (0, {self.frames / 2}) cycles per clip")
        if not 0 < self.test_seen_fraction < 1:
            raise ConfigError("test_seen_fraction must lie in (0, 1)")

    @property
    def n_classes(self):
        return self.n_background_groups * self.n_motions

    def frequencies(self):
        if self.motion_frequencies is not None:
            return tuple(float(f) for f in self.motion_frequencies)
        return tuple(float(2 ** m) for m in range(self.n_motions))

    def unseen_candidates(self):
        """Classes (g, m) whose background and motion both recur in other, seen classes."""
        return [(g, m) for g in range(self.n_background_groups // 2) for m in range(self.n_motions - 1)]

    def class_id(self, group, motion):
        return group * self.n_motions + motion

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("background_range", "motion_frequencies"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad synthetic data settings: {exc}") from None


@dataclass
class DatasetSplits:
    train: list
    val_unseen: list
    test_seen: list
    test_unseen: list
    seen_classes: list
    unseen_classes: list

    def __post_init__(self):
        parts = [set(self.train), set(self.val_unseen), set(self.test_seen), set(self.test_unseen)]
        total = sum(len(p) for p in parts)
        if len(set().union(*parts)) != total:
            raise DataError("splits overlap")
        if set(self.seen_classes) & set(self.unseen_classes):
            raise DataError("a class is both seen and unseen")

    def to_dict(self):
        return {k: list(v) for k, v in vars(self).items()}


@dataclass
class Dataset:
    """Per-sample feature sequences (N, F, D) with class ids and class word vectors (C, word_dim)."""

    audio: np.ndarray
    visual: np.ndarray
    labels: np.ndarray
    sample_ids: list
    class_names: list
    class_vectors: np.ndarray
    splits: DatasetSplits | None = None
    _events: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = len(self.sample_ids)
        if n == 0:
            raise DataError("dataset has no samples")
        if self.audio.shape[0] != n or self.visual.shape[0] != n or self.labels.shape != (n,):
            raise DataError("audio, visual, labels and sample ids disagree on the sample count")
        if self.audio.shape[1] != self.visual.shape[1]:
            raise DataError(f"audio has {self.audio.shape[1]} frames, visual {self.visual.shape[1]}")
        if len(set(self.sample_ids)) != n:
            raise DataError("duplicate sample ids")
        self._index = {s: i for i, s in enumerate(self.sample_ids)}

    @property
    def n_classes(self):
        return len(self.class_names)

    def indices(self, ids):
        try:
            return np.array([self._index[s] for s in ids], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unknown sample id {exc.args[0]!r}") from None

    def split_indices(self, name):
        if self.splits is None:
            raise DataError("dataset has no splits")
        ids = getattr(self.splits, name, None)
        if ids is None:
            raise DataError(f"unknown split {name!r}")
        return self.indices(ids)

    def event_grid(self, threshold):
        """Visual event grids (N, F, D_v), cached per contrast threshold."""
        key = float(threshold)
        if key not in self._events:
            self._events[key] = feature_egm_batch(self.visual, threshold)
        return self._events[key]


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def generate_synthetic(spec=None, seed=0):
    """Draw a confounded dataset; features are float32-representable so SPKT round trips are exact."""
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)
    G, M, F, D = spec.n_background_groups, spec.n_motions, spec.frames, spec.feature_dim
    Da = spec.audio_dim or D
    lo, hi = spec.background_range

    backgrounds = rng.uniform(lo, hi, size=(G, D))
    direction = rng.uniform(0.5, 1.0, size=D) * spec.motion_amplitude
    audio_mix = rng.normal(0.0, 1.0, size=Da)
    bg_codes = _unit(rng.normal(size=(G, spec.word_dim)))
    motion_codes = _unit(rng.normal(size=(M, spec.word_dim)))

    freqs = spec.frequencies()
    t = np.arange(F)
    audio, visual, labels, ids = [], [], [], []
    for g in range(G):
        for m in range(M):
            c = spec.class_id(g, m)
            for k in range(spec.samples_per_class):
                phase = rng.uniform(0.0, 2 * np.pi)
                wave = np.sin(2 * np.pi * freqs[m] * t / F + phase)
                vis = backgrounds[g] + wave[:, None] * direction
                vis = vis + rng.normal(0.0, spec.noise_sigma, size=(F, D))
                aud = wave[:, None] * audio_mix
                aud = aud + rng.normal(0.0, spec.noise_sigma, size=(F, Da))
                visual.append(vis)
                audio.append(aud)
                labels.append(c)
                ids.append(f"c{c:03d}_s{k:04d}")

    names = [f"bg{g}_motion{m}" for g in range(G) for m in range(M)]
    wb = spec.word_background_weight
    vectors = np.stack([_unit(wb * bg_codes[g] + motion_codes[m]) for g in range(G) for m in range(M)])
    ds = Dataset(
        audio=np.asarray(audio, dtype=np.float32).astype(np.float64),
        visual=np.asarray(visual, dtype=np.float32).astype(np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        sample_ids=ids,
        class_names=names,
        class_vectors=vectors.astype(np.float32).astype(np.float64),
    )
    ds.splits = _synthetic_splits(ds, spec, rng)
    return ds


def _synthetic_splits(ds, spec, rng):
    unseen = sorted(spec.class_id(g, m) for g, m in spec.unseen_candidates()[:spec.n_unseen_classes])
    seen = [c for c in range(spec.n_classes) if c not in unseen]
    n_test = int(round(spec.samples_per_class * spec.test_seen_fraction))
    train, test_seen, test_unseen = [], [], []
    for c in seen:
        members = [ds.sample_ids[i] for i in np.flatnonzero(ds.labels == c)]
        order = rng.permutation(len(members))
        test_seen += [members[i] for i in sorted(order[:n_test])]
        train += [members[i] for i in sorted(order[n_test:])]
    for c in unseen:
        test_unseen += [ds.sample_ids[i] for i in np.flatnonzero(ds.labels == c)]
    return DatasetSplits(train, [], test_seen, test_unseen, seen, unseen)


def _apportion(total, ratios):
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or ratios.sum() <= 0:
        raise ConfigError("ratios must be three non-negative numbers (seen, val unseen, test unseen)")
    exact = ratios / ratios.sum() * total
    counts = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - counts), kind="stable")[: total - counts.sum()]:
        counts[i] += 1
    return [int(c) for c in counts]


def make_splits(dataset, seed=0, ratios=(30, 12, 6), test_seen_fraction=0.2):
    """Class-level split into seen / validation-unseen / test-unseen classes.

    Seen-class samples are further divided into train and test-seen.
    """
    rng = np.random.default_rng(seed)
    classes = np.unique(dataset.labels)
    n_seen, n_val, n_test = _apportion(len(classes), ratios)
    if n_seen == 0 or n_test == 0:
        raise DataError(f"{len(classes)} classes cannot fill seen and test-unseen splits with ratios {ratios}")
    order = [int(c) for c in rng.permutation(classes)]
    seen = sorted(order[:n_seen])
    val = sorted(order[n_seen:n_seen + n_val])
    test = sorted(order[n_seen + n_val:])
    ids = np.asarray(dataset.sample_ids, dtype=object)
    train, test_seen = [], []
    for c in seen:
        members = list(ids[dataset.labels == c])
        perm = rng.permutation(len(members))
        k = int(round(len(members) * test_seen_fraction))
        test_seen += [members[i] for i in sorted(perm[:k])]
        train += [members[i] for i in sorted(perm[k:])]
    val_ids = [s for c in val for s in ids[dataset.labels == c]]
    test_ids = [s for c in test for s in ids[dataset.labels == c]]
    return DatasetSplits(train, val_ids, test_seen, test_ids, seen, val + test)


# -- files ----------------------------------------------------------------------

MANIFEST = "manifest.jsonl"
CLASSES = "classes.jsonl"
SPLITS = "splits.json"


def save_dataset(dataset, root):
    """Write SPKT tensors, the sample manifest, class embeddings and (if present) splits under ``root``."""
    tdir = os.path.join(root, "tensors")
    os.makedirs(tdir, exist_ok=True)
    with open(os.path.join(root, MANIFEST), "w") as fh:
        for i, sid in enumerate(dataset.sample_ids):
            a_file, v_file = f"tensors/{sid}_audio.spkt", f"tensors/{sid}_visual.spkt"
            io.save_tensor(os.path.join(root, a_file), dataset.audio[i])
            io.save_tensor(os.path.join(root, v_file), dataset.visual[i])
            fh.write(json.dumps({"sample_id": sid, "class_id": int(dataset.labels[i]),
                                 "audio_file": a_file, "visual_file": v_file}) + "\n")
    with open(os.path.join(root, CLASSES), "w") as fh:
        for c, name in enumerate(dataset.class_names):
            fh.write(json.dumps({"class_id": c, "name": name,
                                 "vector": [float(x) for x in dataset.class_vectors[c]]}) + "\n")
    if dataset.splits is not None:
        with open(os.path.join(root, SPLITS), "w") as fh:
            json.dump(dataset.splits.to_dict(), fh)


def _read_jsonl(path, what):
    if not os.path.exists(path):
        raise DataError(f"missing {what}: {path}")
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def load_features(root, split_seed=0):
    """Load a feature directory written by :func:`save_dataset` or by an external extractor.

    Without ``splits.json`` the classes are split by :func:`make_splits`.
    """
    classes = _read_jsonl(os.path.join(root, CLASSES), "class-embedding file")
    if not classes:
        raise DataError(f"{root}: no class embeddings")
    classes.sort(key=lambda r: r["class_id"])
    ids = [r["class_id"] for r in classes]
    if ids != list(range(len(ids))):
        raise DataError(f"{root}: class ids must be 0..{len(ids) - 1}, got {ids}")
    vectors = np.asarray([r["vector"] for r in classes], dtype=np.float64)
    if vectors.ndim != 2:
        raise DataError(f"{root}: class vectors have differing lengths")

    records = _read_jsonl(os.path.join(root, MANIFEST), "manifest")
    if not records:
        raise DataError(f"{root}: manifest is empty")
    audio, visual, labels, sids = [], [], [], []
    for rec in records:
        missing = {"sample_id", "class_id", "audio_file", "visual_file"} - set(rec)
        if missing:
            raise DataError(f"manifest record {rec} lacks {sorted(missing)}")
        if not 0 <= rec["class_id"] < len(classes):
            raise DataError(f"sample {rec['sample_id']}: unknown class {rec['class_id']}")
        a = io.load_tensor(os.path.join(root, rec["audio_file"]))
        v = io.load_tensor(os.path.join(root, rec["visual_file"]))
        if audio and (a.shape != audio[0].shape or v.shape != visual[0].shape):
            raise DataError(f"sample {rec['sample_id']}: shapes {a.shape}/{v.shape} differ from "
                            f"{audio[0].shape}/{visual[0].shape}")
        audio.append(a)
        visual.append(v)
        labels.append(rec["class_id"])
        sids.append(rec["sample_id"])

    ds = Dataset(np.stack(audio), np.stack(visual), np.asarray(labels, dtype=np.int64), sids,
                 [r["name"] for r in classes], vectors)
    split_path = os.path.join(root, SPLITS)
    if os.path.exists(split_path):
        with open(split_path) as fh:
            ds.splits = DatasetSplits(**json.load(fh))
        for name in ("train", "val_unseen", "test_seen", "test_unseen"):
            ds.split_indices(name)
    else:
        ds.splits = make_splits(ds, split_seed)
    return ds
