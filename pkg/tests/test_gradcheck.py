"""The finite-difference checker itself and the per-module suites."""
import numpy as np
import pytest

from mdst import gradcheck
from mdst import tensor as tn


def wrong_square(x):
    # forward x^2, backward claims 3x: a checker worth having must flag this
    return tn._result(x.data ** 2, (x,), lambda g: (3.0 * x.data * g,))


def test_detects_wrong_gradient():
    p = tn.parameter(np.array([0.5, -1.0, 2.0]))
    rep = tn.check_gradients(lambda: tn.sum_(wrong_square(p)), {"p": p}, h=1e-6)
    assert rep.max_error > 0.1


def test_accepts_right_gradient():
    p = tn.parameter(np.array([0.5, -1.0, 2.0]))
    assert tn.check_gradients(lambda: tn.sum_(tn.square(p)), {"p": p}, h=1e-6).max_error < 1e-8


def test_sampled_coordinates():
    p = tn.parameter(np.random.default_rng(0).normal(size=(5, 6)))
    full = tn.check_gradients(lambda: tn.sum_(wrong_square(p)), {"p": p}, h=1e-6)
    sampled = tn.check_gradients(lambda: tn.sum_(wrong_square(p)), {"p": p}, h=1e-6, max_coords=4, seed=1)
    assert sampled.max_error > 0.1 and full.max_error > 0.1
    ok = tn.check_gradients(lambda: tn.sum_(tn.exp(p)), {"p": p}, h=1e-6, max_coords=4, seed=1)
    assert ok.max_error < 1e-6


@pytest.mark.parametrize("module", ["tensorcore", "spiking", "semantic", "fusion", "training"])
def test_module_suite(module):
    errors = gradcheck.run(module)
    assert errors and max(errors.values()) < gradcheck.TOLERANCE


def test_toy_model_is_four_wide():
    c = gradcheck.toy_config("mdstpp")
    assert c.t_emb == c.t_hid == c.t_fin == 4 and len(c.schedule()) == 2
