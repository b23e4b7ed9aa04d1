import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clearreg import icnn
from clearreg.autodiff import LayerSpec, ShapeError, finite_difference_check
from clearreg.icnn import ArchSpec, DenseArchSpec


def _randomized(net, seed=0):
    # random biases and random non-negative constrained weights, so the
    # convexity checks do not rely on a benign initialization
    rng = np.random.default_rng(seed)
    out = net.copy()
    for p, m in zip(out.params, out.clip_mask):
        for k in p:
            draw = rng.standard_normal(p[k].shape) * 0.3
            p[k][...] = np.abs(draw) if m[k] else draw
    return out


def _small_arch():
    return ArchSpec(input_shape=(2, 32, 32), stem_channels=4, widths=(4, 4, 8, 8, 8, 8))


# build ---------------------------------------------------------------------------

def test_masked_params_nonnegative_at_init():
    net = icnn.build(ArchSpec(), seed=0)
    assert net.min_clipped_weight() >= 0.0


def test_same_seed_bit_identical():
    a, b = icnn.build(ArchSpec(), seed=7), icnn.build(ArchSpec(), seed=7)
    for pa, pb in zip(a.params, b.params):
        for k in pa:
            assert pa[k].tobytes() == pb[k].tobytes()


def _count_by_formula(c_in, stem, widths, k=3, h=32):
    conv = lambda a, b, ks: b * a * ks * ks + b  # noqa: E731
    total = conv(c_in, stem, k)
    prev = stem
    for w in widths:
        total += conv(prev, w, k) + conv(w, w, k)
        if w != prev:
            total += conv(prev, w, 1)
        prev = w
    side = h // 2 ** (len(widths) - 1)
    return total + prev * side * side + 1


def test_default_param_count_matches_formula():
    net = icnn.build(ArchSpec(), seed=0)
    assert net.param_count == _count_by_formula(2, 8, (8, 16, 16, 32, 32, 64))
    assert net.param_count == 100121


def test_inconsistent_arch_rejected():
    with pytest.raises(icnn.ArchError):
        icnn.build(ArchSpec(widths=(8, 16)), seed=0)
    with pytest.raises(icnn.ArchError):
        icnn.build(ArchSpec(widths=(8, 16, 16, 32, 32, 64), three_conv=(False,) * 6), seed=0)
    with pytest.raises(icnn.ArchError):
        icnn.build(ArchSpec(input_shape=(2, 24, 24)), seed=0)


def test_topology_first_free_head_constrained():
    spec = ArchSpec().layers()
    assert spec[0].kind == "conv2d" and not spec[0].nonneg
    assert spec[-1].kind == "linear" and spec[-1].nonneg and spec[-1].out_size == 1
    assert sum(layer.kind == "avg-pool" for layer in spec) == 5


def test_unclear_topology_identical():
    a = icnn.build(ArchSpec(), seed=0, mode="CLEAR")
    b = icnn.build(ArchSpec(), seed=0, mode="UNCLEAR")
    assert a.spec == b.spec
    assert all(pa[k].tobytes() == pb[k].tobytes()
               for pa, pb in zip(a.params, b.params) for k in pa)


# forward ---------------------------------------------------------------------------

def test_zero_net_is_zero():
    arch = _small_arch()
    spec = arch.layers()
    net = icnn.from_spec(spec, [{k: np.zeros(s) for k, s in l.param_shapes().items()} for l in spec],
                         input_shape=arch.input_shape)
    x = np.random.default_rng(0).standard_normal((3, 2, 32, 32))
    np.testing.assert_array_equal(net.forward(x), 0.0)


def test_forward_repeatable():
    net = _randomized(icnn.build(_small_arch(), seed=1))
    x = np.random.default_rng(1).standard_normal((2, 32, 32))
    assert net.forward(x) == net.forward(x)


def test_forward_shape_mismatch():
    net = icnn.build(_small_arch(), seed=0)
    with pytest.raises(ShapeError):
        net.forward(np.zeros((2, 16, 16)))


def test_single_and_batch_agree():
    net = _randomized(icnn.build(_small_arch(), seed=2))
    x = np.random.default_rng(2).standard_normal((4, 2, 32, 32))
    batch = net.forward(x)
    for i in range(4):
        assert net.forward(x[i]) == pytest.approx(batch[i], rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_random_clear_net_midpoint_convex(seed):
    net = _randomized(icnn.build(_small_arch(), seed=seed), seed)
    rep = icnn.check_midpoint_convexity(net, n_pairs=1000, tol=1e-6, seed=seed)
    assert rep.violations == 0


def test_default_arch_midpoint_convex():
    net = _randomized(icnn.build(ArchSpec(), seed=0))
    assert icnn.check_midpoint_convexity(net, 1000, 1e-6, seed=3).violations == 0


# clip_weights ------------------------------------------------------------------------

def test_clip_examples():
    spec = [LayerSpec("linear", 2, 2), LayerSpec("relu"), LayerSpec("linear", 2, 1, nonneg=True)]
    params = [{"weight": np.array([[-1.0, 2.0], [0.5, -0.5]]), "bias": np.array([-1.0, 1.0])}, {},
              {"weight": np.array([[-0.5, 0.3]]), "bias": np.array([-2.0])}]
    res = icnn.clip_weights(icnn.from_spec(spec, params, input_shape=(2,)))
    assert res.applied
    np.testing.assert_array_equal(res.net.params[2]["weight"], [[0.0, 0.3]])
    # unconstrained parameters and biases untouched
    np.testing.assert_array_equal(res.net.params[0]["weight"], params[0]["weight"])
    assert res.net.params[2]["bias"][0] == -2.0


def test_clip_idempotent():
    net = icnn.build(_small_arch(), seed=0)
    for p, m in zip(net.params, net.clip_mask):
        for k in p:
            p[k] -= 0.01
    once = icnn.clip_weights(net).net
    twice = icnn.clip_weights(once).net
    for pa, pb in zip(once.params, twice.params):
        for k in pa:
            assert pa[k].tobytes() == pb[k].tobytes()
    assert once.min_clipped_weight() >= 0.0


def test_clip_in_unclear_mode_is_noop():
    net = icnn.build(_small_arch(), seed=0, mode="UNCLEAR")
    net.params[-1]["weight"][...] = -1.0
    res = icnn.clip_weights(net)
    assert not res.applied
    assert np.all(res.net.params[-1]["weight"] == -1.0)
    with pytest.warns(RuntimeWarning):
        assert net.clip_() is False


# check_midpoint_convexity --------------------------------------------------------------

def test_affine_net_has_no_violation_at_zero_tol():
    spec = [LayerSpec("linear", 3, 1)]
    # a single power-of-two weight keeps every product and sum exact
    net = icnn.from_spec(spec, [{"weight": np.array([[2.0, 0.0, 0.0]]), "bias": np.zeros(1)}],
                         input_shape=(3,))
    rep = icnn.check_midpoint_convexity(net, 1000, 0.0, seed=0)
    assert rep.violations == 0 and rep.max_violation == 0.0


def test_general_affine_net_within_rounding():
    spec = [LayerSpec("linear", 3, 1)]
    net = icnn.from_spec(spec, [{"weight": np.array([[1.0, -2.0, 0.5]]), "bias": np.array([0.25])}],
                         input_shape=(3,))
    assert icnn.check_midpoint_convexity(net, 1000, 1e-12, seed=0).violations == 0


def test_unclear_negative_weight_violates():
    # -relu composed with a free first layer is concave along many directions
    spec = [LayerSpec("linear", 2, 8), LayerSpec("relu"), LayerSpec("linear", 8, 1, nonneg=True)]
    rng = np.random.default_rng(0)
    params = [{"weight": rng.standard_normal((8, 2)), "bias": rng.standard_normal(8)}, {},
              {"weight": -np.abs(rng.standard_normal((1, 8))), "bias": np.zeros(1)}]
    net = icnn.from_spec(spec, params, mode="UNCLEAR", input_shape=(2,))
    rep = icnn.check_midpoint_convexity(net, 10_000, 1e-6, seed=0)
    assert rep.violations >= 1 and rep.max_violation > 1e-6


def test_bad_arguments():
    net = icnn.build(_small_arch(), seed=0)
    with pytest.raises(ValueError):
        icnn.check_midpoint_convexity(net, 0)
    with pytest.raises(ValueError):
        icnn.check_midpoint_convexity(net, 10, tol=-1.0)


# input_gradient ----------------------------------------------------------------------------

def test_zero_net_gradient_is_zero():
    spec = DenseArchSpec(3, (4,)).layers()
    net = icnn.from_spec(spec, [{k: np.zeros(s) for k, s in l.param_shapes().items()} for l in spec],
                         input_shape=(3,))
    np.testing.assert_array_equal(net.input_gradient(np.ones(3)), 0.0)


def test_gradient_matches_finite_differences():
    net = _randomized(icnn.build(_small_arch(), seed=4), 4)
    x = np.random.default_rng(4).standard_normal((2, 32, 32))
    assert finite_difference_check(net.params, net.spec, x, 1e-5) < 1e-4


def test_subgradient_monotone_on_1000_pairs():
    net = _randomized(icnn.build(_small_arch(), seed=5), 5)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1000, 2, 32, 32))
    y = rng.standard_normal((1000, 2, 32, 32))
    gx, gy = net.input_gradient(x), net.input_gradient(y)
    inner = np.sum((gx - gy) * (x - y), axis=(1, 2, 3))
    assert inner.min() >= -1e-8


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.floats(0.0, 1.0))
def test_dense_net_convex_along_chords(seed, t):
    net = _randomized(icnn.build(DenseArchSpec(4, (16, 16)), seed=seed), seed)
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 4)) * 2.0
    lhs = net.forward(t * x + (1 - t) * y)
    assert lhs <= t * net.forward(x) + (1 - t) * net.forward(y) + 1e-9


def test_module_functions_delegate():
    net = _randomized(icnn.build(DenseArchSpec(2, (8,)), seed=0))
    x = np.array([0.3, -0.7])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert icnn.forward(net, x) == net.forward(x)
        np.testing.assert_array_equal(icnn.input_gradient(net, x), net.input_gradient(x))
