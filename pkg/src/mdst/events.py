"""Frame-to-event conversion with a per-pixel log-contrast threshold.

Each pixel keeps the log intensity at which it last fired.  Whenever the
current log intensity differs from that reference by at least ``C`` an
event of polarity ``sign(diff)`` is emitted and the reference moves by
``p * C``; large jumps therefore emit several events in the same frame.
Timestamps are integer frame indices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, InsufficientFramesError, NumericDomainError

LOG_FLOOR = 1e-3
DEFAULT_THRESHOLD = 0.30


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int
    p: int

    def __post_init__(self):
        if self.p not in (-1, 1):
            raise ContractError(f"polarity must be -1 or +1, got {self.p}")


@dataclass
class EventStream:
    """Columnar events ordered by (t, y, x) on a ``height x width`` sensor."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    height: int
    width: int
    n_frames: int

    def __len__(self):
        return int(self.t.size)

    def __iter__(self):
        for t, x, y, p in zip(self.t, self.x, self.y, self.p):
            yield Event(int(x), int(y), int(t), int(p))

    @classmethod
    def from_events(cls, events, height, width, n_frames):
        events = list(events)
        cols = np.array([(e.t, e.x, e.y, e.p) for e in events], dtype=np.int64).reshape(-1, 4)
        return cls(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3], height, width, n_frames)


@dataclass
class EgmState:
    """Streaming form of the generator: one reference log intensity per pixel."""

    last_log_intensity: np.ndarray
    contrast_threshold: float

    def __post_init__(self):
        if not self.contrast_threshold > 0:
            raise ContractError(f"contrast threshold must be positive, got {self.contrast_threshold}")

    @classmethod
    def from_first_frame(cls, frame, threshold=DEFAULT_THRESHOLD):
        return cls(log_intensity(frame).copy(), float(threshold))

    def step(self, frame, t):
        """Consume one frame and return its events as a list of :class:`Event`."""
        cur = log_intensity(frame)
        if cur.shape != self.last_log_intensity.shape:
            raise DimensionError(f"frame shape {cur.shape} != sensor shape {self.last_log_intensity.shape}")
        ref = self.last_log_intensity
        c = self.contrast_threshold
        out = []
        height, width = cur.shape
        for yy in range(height):
            for xx in range(width):
                d = cur[yy, xx] - ref[yy, xx]
                while abs(d) >= c:
                    p = 1 if d > 0.0 else -1
                    ref[yy, xx] += p * c
                    out.append(Event(xx, yy, t, p))
                    d = cur[yy, xx] - ref[yy, xx]
        return out


def log_intensity(frame):
    """``log(frame + 1e-3)`` for a non-negative intensity grid."""
    arr = np.asarray(frame, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise NumericDomainError("intensity frames must be non-negative")
    return np.log(arr + LOG_FLOOR)


def _as_video(frames):
    try:
        video = np.asarray(frames, dtype=np.float64)
    except ValueError:
        shapes = {np.shape(f) for f in frames}
        raise DimensionError(f"frames have mismatched extents: {sorted(shapes)}") from None
    if video.ndim == 2:
        video = video[:, None, :]
    if video.ndim != 3:
        raise DimensionError(f"expected frames shaped (F, H, W), got {video.shape}")
    return video


def generate_events(frames, threshold=DEFAULT_THRESHOLD, return_reference=False, backend=None):
    """Convert a frame sequence (F, H, W) into an :class:`EventStream`.

    With ``return_reference`` also returns the per-pixel reference log
    intensity after each frame, shape (F, H, W).
    """
    if not threshold > 0:
        raise ContractError(f"contrast threshold must be positive, got {threshold}")
    video = _as_video(frames)
    n_frames, height, width = video.shape
    if n_frames < 2:
        raise InsufficientFramesError(f"need at least 2 frames, got {n_frames}")
    logs = log_intensity(video).reshape(n_frames, height * width)
    t, pix, pol, refs = kernels.egm_emit(logs, threshold, backend=backend)
    stream = EventStream(t, pix % width, pix // width, pol, height, width, n_frames)
    if return_reference:
        return stream, refs.reshape(n_frames, height, width)
    return stream


def rasterize(stream, target_shape=None):
    """Dense (T, H, W) grid of polarities; the last event at a cell wins."""
    if target_shape is None:
        target_shape = (stream.n_frames, stream.height, stream.width)
    T, H, W = target_shape
    grid = np.zeros((T, H, W), dtype=np.float64)
    if len(stream) == 0:
        return grid
    t, x, y, p = (np.asarray(a, dtype=np.int64) for a in (stream.t, stream.x, stream.y, stream.p))
    bad = (t < 0) | (t >= T) | (x < 0) | (x >= W) | (y < 0) | (y >= H)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise IndexError(f"event (x={x[i]}, y={y[i]}, t={t[i]}) outside grid {target_shape}")
    cell = (t * H + y) * W + x
    # last occurrence per cell: unique over the reversed order
    _, first_rev = np.unique(cell[::-1], return_index=True)
    last = cell.size - 1 - first_rev
    grid.reshape(-1)[cell[last]] = p[last]
    return grid


def feature_egm(features, threshold=DEFAULT_THRESHOLD, backend=None):
    """Event grid (T, D) for a feature sequence, each dimension a pixel and each row a frame.

    ``|features|`` serves as the pseudo-brightness.
    """
    feats = np.asarray(features.data if hasattr(features, "data") else features, dtype=np.float64)
    if feats.ndim != 2:
        raise DimensionError(f"feature_egm expects (T, D), got {feats.shape}")
    if feats.shape[0] < 2:
        raise InsufficientFramesError(f"need at least 2 feature rows, got {feats.shape[0]}")
    stream = generate_events(np.abs(feats)[:, None, :], threshold, backend=backend)
    return rasterize(stream)[:, 0, :]


def feature_egm_batch(features, threshold=DEFAULT_THRESHOLD, backend=None):
    """:func:`feature_egm` over a leading batch axis: (B, T, D) -> (B, T, D)."""
    feats = np.asarray(features, dtype=np.float64)
    return np.stack([feature_egm(f, threshold, backend=backend) for f in feats])


def write_event_file(path, stream):
    """Text lines ``t x y p`` sorted by t."""
    order = np.argsort(stream.t, kind="stable")
    with open(path, "w") as fh:
        for i in order:
            fh.write(f"{stream.t[i]} {stream.x[i]} {stream.y[i]} {stream.p[i]}\n")


def read_event_file(path, height, width, n_frames):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 't x y p'")
            rows.append([int(v) for v in parts])
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    if arr.size and np.any(np.diff(arr[:, 0]) < 0):
        raise ContractError(f"{path}: events not sorted by t")
    if arr.size and not np.all(np.isin(arr[:, 3], (-1, 1))):
        raise ContractError(f"{path}: polarity must be -1 or +1")
    return EventStream(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], height, width, n_frames)
