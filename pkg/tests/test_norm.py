import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_highlight import autograd as ag
from adaptive_highlight.autograd import ShapeError, Value
from adaptive_highlight.gradcheck import grad_check
from adaptive_highlight.norm import (
    AffineParams,
    TainConfig,
    UnconditionalTIN,
    identity_norm,
    t_ain,
    temporal_stats,
)


def v(x, grad=False):
    return Value(np.asarray(x, dtype=np.float64), requires_grad=grad)


def affine(gamma, delta):
    return AffineParams(v(np.atleast_1d(gamma)), v(np.atleast_1d(delta)))


def test_stats_examples():
    s = temporal_stats(v([[[1.0, 2.0, 3.0]]]))
    np.testing.assert_allclose(s.mean, [2.0])
    np.testing.assert_allclose(s.variance, [2.0 / 3.0])
    s = temporal_stats(v([[[5.0, 5.0, 5.0, 5.0]]]))
    assert s.mean[0] == 5.0 and s.variance[0] == 0.0
    s = temporal_stats(v([[[-2.5]]]))
    assert s.mean[0] == -2.5 and s.variance[0] == 0.0


def test_t_ain_hand_value():
    # eps must be positive in the config; 1e-300 is zero at double precision here
    out = t_ain(v([[[1.0, 2.0, 3.0]]]), affine(1.0, 0.0), TainConfig(1, 1e-300))
    np.testing.assert_allclose(out.data[0, 0], [-1.224744871391589, 0.0, 1.224744871391589], rtol=1e-12)


def test_t_ain_zero_gamma():
    x = v(np.random.default_rng(0).normal(size=(1, 1, 9)))
    np.testing.assert_array_equal(t_ain(x, affine(0.0, 7.0), TainConfig(1)).data, np.full((1, 1, 9), 7.0))


def test_t_ain_constant_channel():
    out = t_ain(v(np.full((1, 1, 6), 4.2)), affine(5.0, 3.0), TainConfig(1))
    np.testing.assert_allclose(out.data, 3.0)


def test_t_ain_shape_mismatch():
    with pytest.raises(ShapeError):
        t_ain(v(np.ones((1, 3, 4))), affine([1.0, 1.0], [0.0, 0.0]), TainConfig(3))
    with pytest.raises(ValueError):
        TainConfig(3, epsilon=0.0)


def test_unconditional_init_matches_t_ain_identity():
    x = v(np.random.default_rng(1).normal(size=(1, 4, 10)))
    cfg = TainConfig(4)
    layer = UnconditionalTIN(cfg, dtype=np.float64)
    np.testing.assert_array_equal(layer(x).data, t_ain(x, affine(np.ones(4), np.zeros(4)), cfg).data)
    np.testing.assert_array_equal(layer(x).data, identity_norm(x, cfg).data)


def test_unconditional_after_update_uses_current_params():
    x = v(np.random.default_rng(2).normal(size=(1, 2, 7)))
    layer = UnconditionalTIN(TainConfig(2), dtype=np.float64)
    layer.gamma.data[:] = [0.5, 2.0]
    layer.delta.data[:] = [-1.0, 0.3]
    np.testing.assert_array_equal(layer(x).data, t_ain(x, affine([0.5, 2.0], [-1.0, 0.3]), TainConfig(2)).data)


def test_affine_gradients_match_closed_form():
    rng = np.random.default_rng(3)
    x = v(rng.normal(size=(1, 3, 8)))
    gamma, delta = v(rng.normal(size=3), grad=True), v(rng.normal(size=3), grad=True)
    cfg = TainConfig(3)
    up = rng.normal(size=(1, 3, 8))
    ag.total(ag.mul(t_ain(x, AffineParams(gamma, delta), cfg), v(up))).backward()
    normalized = identity_norm(x, cfg).data
    np.testing.assert_allclose(delta.grad, up[0].sum(axis=1), rtol=1e-12)
    np.testing.assert_allclose(gamma.grad, (up * normalized)[0].sum(axis=1), rtol=1e-12)


def test_t_ain_gradcheck_all_inputs():
    rng = np.random.default_rng(4)
    x0, g0, d0 = rng.normal(size=(1, 3, 6)), rng.normal(size=3), rng.normal(size=3)
    up = v(rng.normal(size=(1, 3, 6)))
    cfg = TainConfig(3)
    f = lambda x, g, d: ag.total(ag.mul(t_ain(x, AffineParams(g, d), cfg), up))
    assert grad_check(lambda x: f(x, v(g0), v(d0)), x0) < 1e-4
    assert grad_check(lambda g: f(v(x0), g, v(d0)), g0) < 1e-6
    assert grad_check(lambda d: f(v(x0), v(g0), d), d0) < 1e-6


def test_identity_norm_moments():
    rng = np.random.default_rng(5)
    x = v(rng.normal(scale=[[0.01], [1.0], [30.0]], size=(3, 50))[None])
    cfg = TainConfig(3)
    out = identity_norm(x, cfg).data[0]
    var_in = temporal_stats(x).variance
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=1), var_in / (var_in + cfg.epsilon), rtol=1e-10)
    assert np.all(out.var(axis=1) <= 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(2, 64), st.integers(0, 2**32 - 1))
def test_normalization_removes_channel_shift_and_scale(c, t, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, c, t)) * 3.0
    # the epsilon term breaks exact invariance by about epsilon / variance
    if temporal_stats(x).variance.min() < 1.0:
        return
    a = rng.uniform(0.5, 4.0, size=(c, 1))
    b = rng.normal(scale=10.0, size=(c, 1))
    aff = affine(rng.normal(size=c), rng.normal(size=c))
    cfg = TainConfig(c)
    np.testing.assert_allclose(t_ain(v(a * x + b), aff, cfg).data, t_ain(v(x), aff, cfg).data, atol=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_temporal_permutation_equivariance(c, t, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, c, t))
    perm = rng.permutation(t)
    aff = affine(rng.normal(size=c), rng.normal(size=c))
    cfg = TainConfig(c)
    np.testing.assert_allclose(t_ain(v(x[:, :, perm]), aff, cfg).data, t_ain(v(x), aff, cfg).data[:, :, perm],
                               rtol=1e-12, atol=1e-12)


def test_float32_stays_float32():
    x = Value(np.random.default_rng(6).normal(size=(1, 2, 5)).astype(np.float32))
    out = t_ain(x, AffineParams.identity(2), TainConfig(2))
    assert out.dtype == np.float32
