"""Frame-to-event conversion, rasterisation and the feature-space generator."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdst.errors import ContractError, DimensionError, InsufficientFramesError, NumericDomainError
from mdst.events import (Event, EgmState, EventStream, feature_egm, generate_events, log_intensity,
                         rasterize, read_event_file, write_event_file)


def scalar_events(log_seq, c):
    """Reference: one pixel, repeated-subtraction emission, returns [(t, p)] and final reference."""
    ref = log_seq[0]
    out = []
    for t in range(1, len(log_seq)):
        d = log_seq[t] - ref
        while abs(d) >= c:
            p = 1 if d > 0 else -1
            ref += p * c
            out.append((t, p))
            d = log_seq[t] - ref
    return out, ref


def frames_from_logs(logs):
    return (np.exp(np.asarray(logs, dtype=np.float64)) - 1e-3).reshape(-1, 1, 1)


class TestLogIntensity:
    def test_constant_one(self):
        np.testing.assert_allclose(log_intensity(np.ones((2, 2))), np.log(1.001))

    def test_zero_hits_floor(self):
        assert log_intensity(np.zeros((1, 1)))[0, 0] == pytest.approx(-6.907755, abs=1e-6)

    def test_negative_rejected(self):
        with pytest.raises(NumericDomainError):
            log_intensity(np.array([[-1.0]]))

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_monotone(self, seed):
        f = np.random.default_rng(seed).uniform(0, 10, size=(4, 4)).ravel()
        order = np.argsort(f)
        assert np.all(np.diff(log_intensity(f[order])) >= 0)


class TestGenerateEvents:
    def test_single_crossing(self):
        stream, refs = generate_events(frames_from_logs([0.0, 0.15, 0.35]), 0.30, return_reference=True)
        assert [(int(t), int(p)) for t, p in zip(stream.t, stream.p)] == [(2, 1)]
        assert refs[-1, 0, 0] == pytest.approx(0.30, abs=1e-9)

    def test_large_jump_emits_two_events(self):
        stream = generate_events(frames_from_logs([0.0, 0.65]), 0.30)
        assert list(stream.t) == [1, 1] and list(stream.p) == [1, 1]

    def test_constant_video_is_silent(self):
        assert len(generate_events(np.full((5, 3, 3), 2.0))) == 0

    def test_errors(self):
        with pytest.raises(InsufficientFramesError):
            generate_events(np.ones((1, 2, 2)))
        with pytest.raises(DimensionError):
            generate_events([np.ones((2, 2)), np.ones((3, 3))])
        with pytest.raises(ContractError):
            generate_events(np.ones((3, 2, 2)), threshold=0.0)

    @given(st.lists(st.floats(-2.0, 2.0), min_size=2, max_size=12), st.sampled_from([0.1, 0.3, 0.5]))
    @settings(max_examples=60, deadline=None)
    def test_matches_scalar_reference(self, logs, c):
        # round-trip through intensities so both sides see identical log values
        frames = frames_from_logs(logs)
        exact = list(log_intensity(frames).ravel())
        stream = generate_events(frames, c)
        expected, _ = scalar_events(exact, c)
        assert [(int(t), int(p)) for t, p in zip(stream.t, stream.p)] == expected

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_reference_within_threshold_and_polarity(self, seed):
        rng = np.random.default_rng(seed)
        video = rng.uniform(0, 5, size=(6, 3, 4))
        c = 0.3
        stream, refs = generate_events(video, c, return_reference=True)
        assert np.all(np.abs(refs - log_intensity(video)) < c)
        assert set(np.unique(stream.p)) <= {-1, 1}
        assert np.all(np.diff(stream.t) >= 0)

    def test_deterministic(self):
        video = np.random.default_rng(1).uniform(0, 5, size=(5, 2, 2))
        a, b = generate_events(video), generate_events(video)
        for col in ("t", "x", "y", "p"):
            np.testing.assert_array_equal(getattr(a, col), getattr(b, col))

    def test_streaming_state_matches_batch(self):
        video = np.random.default_rng(2).uniform(0, 5, size=(5, 2, 3))
        state = EgmState.from_first_frame(video[0], 0.3)
        events = [e for t in range(1, 5) for e in state.step(video[t], t)]
        stream = generate_events(video, 0.3)
        assert [(e.t, e.y, e.x, e.p) for e in events] == list(zip(stream.t, stream.y, stream.x, stream.p))


class TestRasterize:
    def test_empty(self):
        stream = EventStream.from_events([], 2, 2, 1)
        np.testing.assert_array_equal(rasterize(stream), np.zeros((1, 2, 2)))

    def test_single_write(self):
        stream = EventStream.from_events([Event(x=1, y=0, t=0, p=-1)], 2, 2, 1)
        np.testing.assert_array_equal(rasterize(stream)[0], [[0, -1], [0, 0]])

    def test_last_event_wins(self):
        stream = EventStream.from_events([Event(0, 0, 0, 1), Event(0, 0, 0, -1)], 1, 1, 1)
        assert rasterize(stream)[0, 0, 0] == -1

    def test_out_of_range(self):
        stream = EventStream.from_events([Event(x=5, y=0, t=0, p=1)], 1, 2, 1)
        with pytest.raises(IndexError):
            rasterize(stream)

    def test_bad_polarity(self):
        with pytest.raises(ContractError):
            Event(0, 0, 0, 0)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_density_bounded_by_count(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(0, 30))
        events = sorted((Event(int(rng.integers(3)), int(rng.integers(2)), int(rng.integers(4)),
                               int(rng.choice([-1, 1]))) for _ in range(n)), key=lambda e: e.t)
        grid = rasterize(EventStream.from_events(events, 2, 3, 4))
        assert np.count_nonzero(grid) <= n
        assert set(np.unique(grid)) <= {-1.0, 0.0, 1.0}


class TestFeatureEgm:
    def test_constant_sequence(self):
        np.testing.assert_array_equal(feature_egm(np.full((4, 3), 2.0)), np.zeros((4, 3)))

    def test_step(self):
        feats = np.array([[0.0, 1.0], [5.0, 1.1]])
        grid = feature_egm(feats, 0.3)
        jump = np.log(5.001) - np.log(0.001)
        assert grid[1, 0] == 1.0 and jump >= 0.3
        assert grid[1, 1] == 0.0  # log(1.1001/1.001) < 0.3

    def test_too_few_rows(self):
        with pytest.raises(InsufficientFramesError):
            feature_egm(np.ones((1, 3)))

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_entries_are_polarities(self, seed):
        feats = np.random.default_rng(seed).normal(size=(6, 5))
        assert set(np.unique(feature_egm(feats))) <= {-1.0, 0.0, 1.0}


def test_event_file_round_trip(tmp_path):
    stream = generate_events(np.random.default_rng(0).uniform(0, 5, size=(5, 2, 3)))
    path = tmp_path / "events.txt"
    write_event_file(path, stream)
    back = read_event_file(path, 2, 3, 5)
    for col in ("t", "x", "y", "p"):
        np.testing.assert_array_equal(getattr(back, col), getattr(stream, col))
