import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clearreg import forward_model as fm
from clearreg.forward_model import MaskError, SamplingMask


def _dft_oracle(z):
    # centered unitary DFT by direct summation: output index u is frequency u - H//2
    h, w = z.shape
    out = np.zeros((h, w), dtype=complex)
    m, n = np.arange(h)[:, None], np.arange(w)[None, :]
    for u in range(h):
        for v in range(w):
            fu, fv = u - h // 2, v - w // 2
            out[u, v] = np.sum(z * np.exp(-2j * np.pi * (fu * m / h + fv * n / w)))
    return out / np.sqrt(h * w)


def _idft_oracle(k):
    h, w = k.shape
    out = np.zeros((h, w), dtype=complex)
    u, v = np.arange(h)[:, None] - h // 2, np.arange(w)[None, :] - w // 2
    for m in range(h):
        for n in range(w):
            out[m, n] = np.sum(k * np.exp(2j * np.pi * (u * m / h + v * n / w)))
    return out / np.sqrt(h * w)


def _random_case(seed, h=8, w=8, density=0.4):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, h, w))
    mask = rng.random((h, w)) < density
    mask[0, 0] = True
    return rng, x, mask


# make_mask --------------------------------------------------------------------------

def test_uniform_stride_three_on_36_columns():
    m = fm.make_mask("uniform-1d", (10, 36), 3, acs_fraction=0.0)
    cols = np.flatnonzero(m.data[0])
    assert len(cols) == 12
    assert np.all(np.diff(cols) == 3)
    assert np.all(m.data.sum(axis=1) == 12)


@pytest.mark.parametrize("kind", fm.MASK_KINDS)
@pytest.mark.parametrize("accel", [2, 3, 4, 6])
@pytest.mark.parametrize("shape", [(32, 32), (48, 40)])
def test_achieved_acceleration_within_ten_percent(kind, accel, shape):
    m = fm.make_mask(kind, shape, accel, acs_fraction=0.08, seed=1)
    assert 0.9 * accel <= m.acceleration <= 1.1 * accel


@pytest.mark.parametrize("kind", fm.MASK_KINDS)
def test_masks_deterministic_per_seed(kind):
    a = fm.make_mask(kind, (32, 32), 4, seed=5)
    b = fm.make_mask(kind, (32, 32), 4, seed=5)
    np.testing.assert_array_equal(a.data, b.data)


def test_one_d_masks_keep_center_band():
    for kind in ("uniform-1d", "random-1d"):
        m = fm.make_mask(kind, (32, 50), 3, acs_fraction=0.1, seed=0)
        assert m.data[:, 23:28].all()
        assert (m.data == m.data[0]).all()


def test_two_d_masks_keep_center_square():
    for kind in ("poisson-2d", "gaussian-2d"):
        m = fm.make_mask(kind, (40, 40), 4, acs_fraction=0.1, seed=0)
        assert m.data[18:22, 18:22].all()


def test_infeasible_center_band_rejected():
    with pytest.raises(MaskError):
        fm.make_mask("uniform-1d", (32, 32), 8, acs_fraction=0.5)


@pytest.mark.parametrize("args", [("spiral", (8, 8), 2), ("uniform-1d", (8, 8), 1.0)])
def test_bad_mask_requests(args):
    with pytest.raises(MaskError):
        fm.make_mask(*args)


def test_mask_type_validates_entries():
    with pytest.raises(MaskError):
        SamplingMask(np.zeros((4, 4)))
    with pytest.raises(MaskError):
        SamplingMask(np.full((4, 4), 0.5))


# apply_A / adjoint -------------------------------------------------------------------------

def test_full_mask_parseval():
    x = np.random.default_rng(0).standard_normal((2, 16, 16))
    b = fm.apply_A(np.ones((16, 16)), x)
    assert abs(np.linalg.norm(b) - np.linalg.norm(x)) < 1e-10


def test_delta_single_coefficient():
    x = np.zeros((2, 6, 10))
    x[0, 0, 0] = 1.0
    mask = np.zeros((6, 10), dtype=bool)
    mask[2, 7] = True
    b = fm.apply_A(mask, x)
    assert np.count_nonzero(b) == 1
    assert b[2, 7] == pytest.approx(_dft_oracle(x[0])[2, 7], abs=1e-14)
    assert b[2, 7] == pytest.approx(1 / np.sqrt(60), abs=1e-14)


def test_zero_in_zero_out():
    mask = fm.make_mask("random-1d", (8, 8), 2, seed=0)
    np.testing.assert_array_equal(fm.apply_A(mask, np.zeros((2, 8, 8))), 0)
    np.testing.assert_array_equal(fm.apply_A_adjoint(mask, np.zeros((8, 8), complex)), 0)


def test_full_mask_round_trip():
    x = np.random.default_rng(1).standard_normal((2, 12, 9))
    full = np.ones((12, 9))
    np.testing.assert_allclose(fm.apply_A_adjoint(full, fm.apply_A(full, x)), x, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_forward_and_adjoint_match_direct_dft(seed):
    _, x, mask = _random_case(seed, 4, 4, 0.5)
    b = fm.apply_A(mask, x)
    np.testing.assert_allclose(b, np.where(mask, _dft_oracle(x[0] + 1j * x[1]), 0), atol=1e-10)
    zf = fm.apply_A_adjoint(mask, b)
    ref = _idft_oracle(np.where(mask, b, 0))
    np.testing.assert_allclose(zf, np.stack([ref.real, ref.imag]), atol=1e-10)


def test_odd_size_matches_direct_dft():
    _, x, mask = _random_case(9, 5, 7, 0.6)
    np.testing.assert_allclose(fm.apply_A(mask, x),
                               np.where(mask, _dft_oracle(x[0] + 1j * x[1]), 0), atol=1e-10)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        fm.apply_A(np.ones((4, 4)), np.zeros((2, 4, 5)))
    with pytest.raises(ValueError):
        fm.apply_A_adjoint(np.ones((4, 4)), np.zeros((5, 4)))
    with pytest.raises(ValueError):
        fm.project_data_consistency(np.ones((4, 4)), np.zeros((4, 4)), np.zeros((2, 3, 4)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_adjointness(seed):
    rng, x, mask = _random_case(seed)
    y = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    lhs = np.vdot(y, fm.apply_A(mask, x))
    aty = fm.apply_A_adjoint(mask, y)
    rhs = np.vdot(aty[0] + 1j * aty[1], x[0] + 1j * x[1])
    assert abs(lhs - rhs) < 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_dft_round_trip(seed):
    z = np.random.default_rng(seed).standard_normal((2, 10, 6))
    back = fm.ifft2c(fm.fft2c(z[0] + 1j * z[1]))
    assert np.max(np.abs(back - (z[0] + 1j * z[1]))) < 1e-10


# project_data_consistency ----------------------------------------------------------------

def test_feasible_point_unchanged():
    _, x, mask = _random_case(0)
    b = fm.apply_A(mask, x)
    np.testing.assert_allclose(fm.project_data_consistency(mask, b, x), x, atol=1e-12)


def test_projection_matches_replacement_oracle():
    rng, x, mask = _random_case(2)
    b = fm.apply_A(mask, rng.standard_normal((2, 8, 8)))
    p = fm.project_data_consistency(mask, b, x)
    k = _dft_oracle(x[0] + 1j * x[1])
    k[mask] = b[mask]
    ref = _idft_oracle(k)
    np.testing.assert_allclose(p, np.stack([ref.real, ref.imag]), atol=1e-10)
    assert np.linalg.norm(fm.apply_A(mask, p) - b) < 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_projection_properties(seed):
    rng, x, mask = _random_case(seed)
    b = fm.apply_A(mask, rng.standard_normal((2, 8, 8)))
    p = fm.project_data_consistency(mask, b, x)
    assert np.linalg.norm(fm.apply_A(mask, p) - b) < 1e-10
    np.testing.assert_allclose(fm.project_data_consistency(mask, b, p), p, atol=1e-12)
    # closest feasible point: compare against feasible points z = P(random)
    d = np.linalg.norm(p - x)
    for _ in range(100):
        z = fm.project_data_consistency(mask, b, rng.standard_normal((2, 8, 8)) * 3)
        assert d <= np.linalg.norm(z - x) + 1e-10
    y = rng.standard_normal((2, 8, 8))
    py = fm.project_data_consistency(mask, b, y)
    assert np.linalg.norm(p - py) <= np.linalg.norm(x - y) + 1e-10


def test_operator_class_agrees_with_functions():
    rng, x, mask = _random_case(3)
    op = fm.MaskedFourier(mask)
    b = fm.apply_A(mask, rng.standard_normal((2, 8, 8)))
    np.testing.assert_array_equal(op.forward(x), fm.apply_A(mask, x))
    np.testing.assert_array_equal(op.adjoint(b), fm.apply_A_adjoint(mask, b))
    np.testing.assert_array_equal(op.project(x, b), fm.project_data_consistency(mask, b, x))
    assert op.residual(op.project(x, b), b) < 1e-10


def test_coordinate_selector_projection():
    op = fm.CoordinateSelector(np.array([True, False]))
    np.testing.assert_array_equal(op.project(np.array([1.0, 2.0]), np.array([5.0, 0.0])), [5.0, 2.0])


# add_noise ---------------------------------------------------------------------------------

def test_zero_level_unchanged():
    _, x, mask = _random_case(4)
    b = fm.apply_A(mask, x)
    np.testing.assert_array_equal(fm.add_noise(b, 0.0, seed=1, mask=mask), b)


def test_off_support_stays_zero_and_deterministic():
    _, x, mask = _random_case(5)
    b = fm.apply_A(mask, x)
    n1 = fm.add_noise(b, 0.3, seed=7, mask=mask)
    n2 = fm.add_noise(b, 0.3, seed=7, mask=mask)
    assert np.all(n1[~mask] == 0)
    np.testing.assert_array_equal(n1, n2)


def test_noise_statistics():
    rng = np.random.default_rng(0)
    b = rng.standard_normal((100, 100)) + 1j * rng.standard_normal((100, 100))
    mask = np.ones((100, 100), dtype=bool)
    out = fm.add_noise(b, 0.5, seed=3, mask=mask)
    rms = np.sqrt(np.mean(np.abs(b) ** 2))
    std = np.sqrt(np.mean(np.abs(out - b) ** 2))
    assert abs(std - 0.5 * rms) <= 0.05 * 0.5 * rms


def test_negative_level_rejected():
    with pytest.raises(ValueError):
        fm.add_noise(np.ones((2, 2)), -0.1)


# image helpers ----------------------------------------------------------------------------

def test_complex_round_trip_and_magnitude():
    x = np.random.default_rng(6).standard_normal((2, 3, 4))
    np.testing.assert_array_equal(fm.from_complex(fm.to_complex(x)), x)
    np.testing.assert_allclose(fm.magnitude(x), np.abs(x[0] + 1j * x[1]))
    assert fm.real_image(np.ones((2, 2)))[1].sum() == 0
    with pytest.raises(ValueError):
        fm.to_complex(np.zeros((3, 2, 2)))
