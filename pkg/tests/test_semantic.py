"""Encoders and the recurrent joint learning unit."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdst import tensor as tn
from mdst.errors import ConfigError, ContractError, DimensionError
from mdst.semantic import (RJLU, Encoder, EncoderSpec, encode, pool_joint, rjlu_fuse, rjlu_gates, rjlu_update,
                           semantic_streams)


def unit(d=4, seed=0, window=1):
    return RJLU(d, np.random.default_rng(seed), window=window)


class TestEncoder:
    def test_zero_input_zero_output(self):
        enc = Encoder(EncoderSpec(5, 6, 4, 0.25), np.random.default_rng(0))
        enc.eval()
        assert np.all(encode(np.zeros((2, 3, 5)), enc).data == 0.0)

    def test_output_width(self):
        enc = Encoder(EncoderSpec(5, 6, 7, 0.0), np.random.default_rng(0))
        for n in (1, 4, 9):
            assert enc(np.ones((2, n, 5))).shape == (2, n, 7)

    def test_eval_deterministic(self):
        enc = Encoder(EncoderSpec(5, 6, 4, 0.5), np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(3, 2, 5))
        enc(x)  # one training call to move the running stats
        enc.eval()
        np.testing.assert_array_equal(enc(x).data, enc(x).data)

    def test_errors(self):
        with pytest.raises(DimensionError):
            Encoder(EncoderSpec(5, 6, 4), np.random.default_rng(0))(np.ones((1, 2, 3)))
        with pytest.raises(ConfigError):
            EncoderSpec(dropout=1.0)
        with pytest.raises(ConfigError):
            EncoderSpec(t_in=0)


class TestGates:
    def test_zero_history_gives_half(self):
        u = unit()
        rng = np.random.default_rng(1)
        c_a, c_v = rjlu_gates(rng.normal(size=(2, 1, 4)), rng.normal(size=(2, 1, 4)), np.zeros((2, 1, 4)), u)
        np.testing.assert_array_equal(c_a.data, 0.5)
        np.testing.assert_array_equal(c_v.data, 0.5)

    def test_symmetric_when_inputs_match(self):
        u = unit()
        u.ca_v = u.ca_a
        rng = np.random.default_rng(2)
        a, h = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
        c_a, c_v = rjlu_gates(a, a, h, u)
        np.testing.assert_array_equal(c_a.data, c_v.data)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_range(self, seed):
        rng = np.random.default_rng(seed)
        c_a, c_v = rjlu_gates(rng.normal(size=(2, 2, 4)), rng.normal(size=(2, 2, 4)),
                              rng.normal(size=(2, 2, 4)), unit(seed=seed % 7))
        for c in (c_a, c_v):
            assert np.all((c.data > 0) & (c.data < 1))

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            rjlu_gates(np.ones((1, 1, 4)), np.ones((1, 1, 3)), np.ones((1, 1, 4)), unit())


class TestFuse:
    def test_zero_inputs(self):
        z = np.zeros((2, 3, 4))
        assert np.all(rjlu_fuse(z, z, z, unit()).data == 0.0)

    def test_token_count(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 3, 4))
        assert rjlu_fuse(x, x, x, unit()).shape == (2, 9, 4)

    def test_zero_mlp_leaves_attention(self):
        u = unit()
        for lin in (u.mlp.fc1, u.mlp.fc2):
            lin.weight.data[:] = 0.0
        rng = np.random.default_rng(3)
        a, h, v = (rng.normal(size=(1, 2, 4)) for _ in range(3))
        c = np.concatenate([a, h, v], axis=1)
        np.testing.assert_array_equal(rjlu_fuse(a, h, v, u).data, u.sa(c, c).data)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            rjlu_fuse(np.ones((1, 2, 4)), np.ones((1, 1, 4)), np.ones((1, 2, 4)), unit())


class TestUpdate:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.h = rng.normal(size=(2, 3, 4))
        self.s = rng.normal(size=(2, 9, 4))
        self.pooled = self.s.reshape(2, 3, 3, 4).mean(axis=1)

    def test_gate_one_keeps_history(self):
        one = np.ones((2, 1, 4))
        np.testing.assert_array_equal(rjlu_update(self.h, one, one, self.s).data, self.h)

    def test_gate_zero_takes_fused(self):
        zero = np.zeros((2, 1, 4))
        np.testing.assert_allclose(rjlu_update(self.h, zero, zero, self.s).data, self.pooled, rtol=1e-15)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_convex_interval(self, seed):
        rng = np.random.default_rng(seed)
        c_a, c_v = rng.uniform(0, 1, size=(2, 2, 1, 4))
        h = rjlu_update(self.h, c_a, c_v, self.s).data
        lo, hi = np.minimum(self.h, self.pooled), np.maximum(self.h, self.pooled)
        assert np.all(h >= lo - 1e-12) and np.all(h <= hi + 1e-12)

    def test_pool_joint_shape_check(self):
        with pytest.raises(DimensionError):
            pool_joint(tn.Tensor(np.ones((1, 5, 4))), 2)


class TestRecurrence:
    def test_window_count_and_shapes(self):
        u = unit(window=2)
        x = np.random.default_rng(0).normal(size=(2, 6, 4))
        hs, ss = u(x, x)
        assert len(hs) == len(ss) == 3
        assert hs[0].shape == (2, 2, 4) and ss[0].shape == (2, 6, 4)
        a, v = semantic_streams(x, x, hs)
        assert a.shape == v.shape == (2, 6, 4)

    def test_first_step_gates_are_half(self):
        u = unit(window=2)
        x = np.random.default_rng(0).normal(size=(1, 4, 4))
        c_a, c_v = u.gates(x[:, :2], x[:, :2], u.initial(1).h)
        np.testing.assert_array_equal(c_a.data, 0.5)

    def test_ragged_windows_rejected(self):
        with pytest.raises(ContractError):
            unit(window=3)(np.ones((1, 4, 4)), np.ones((1, 4, 4)))
        with pytest.raises(ConfigError):
            unit(window=0)

    def test_eval_determinism(self):
        u = unit(window=2)
        x = np.random.default_rng(5).normal(size=(2, 4, 4))
        np.testing.assert_array_equal(u(x, x)[0][-1].data, u(x, x)[0][-1].data)
