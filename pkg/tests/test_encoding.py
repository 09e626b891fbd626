import numpy as np
import pytest
from hypothesis import given, strategies as st

from illumsplat.encoding import (FOURIER_DIM, IDE_DIM, fourier_backward, fourier_encode,
                                 ide_attenuation, ide_backward, ide_encode, real_sh)
from illumsplat.errors import InvalidInputError
from illumsplat.oracles import central_difference, real_sh_scipy, relative_error

seeds = st.integers(0, 2**31 - 1)
BLOCKS = [slice(0, 3), slice(3, 8), slice(8, 17)]


def unit(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_dimensions():
    assert IDE_DIM == 17 and FOURIER_DIM == 24


def test_real_sh_matches_scipy(rng):
    d = unit(rng, 200)
    assert np.allclose(real_sh(d), real_sh_scipy(d), atol=1e-12)


def test_y10_on_z_axis():
    # sqrt(3 / (4 pi)), evaluated independently
    assert real_sh(np.array([0.0, 0.0, 1.0]))[0, 1] == pytest.approx(0.4886025119029199, abs=1e-12)


def test_zero_roughness_is_plain_sh(rng):
    d = unit(rng, 20)
    assert np.allclose(ide_encode(d, np.full(20, 1e-12)), real_sh_scipy(d), atol=1e-9)


def test_huge_roughness_vanishes(rng):
    d = unit(rng, 5)
    assert np.max(np.abs(ide_encode(d, np.full(5, 1e4)))) < 1e-300


def test_zero_direction_rejected():
    with pytest.raises(InvalidInputError):
        ide_encode(np.zeros(3), 0.5)
    with pytest.raises(InvalidInputError):
        fourier_encode(np.zeros(3))


@given(seeds, st.floats(0, 5), st.floats(0, 5))
def test_attenuation_monotone_per_degree(seed, r1, r2):
    rng = np.random.default_rng(seed)
    d = unit(rng, 1)[0]
    lo, hi = sorted((r1, r2))
    a, b = ide_encode(d, lo), ide_encode(d, hi)
    for blk in BLOCKS:
        assert np.linalg.norm(b[blk]) <= np.linalg.norm(a[blk]) + 1e-15


def _fit_rotation(R, rng):
    # least-squares SH rotation from the scipy oracle: Y(R d) = D Y(d)
    d = unit(rng, 400)
    Y = real_sh_scipy(d)
    YR = real_sh_scipy(d @ R.T)
    D, *_ = np.linalg.lstsq(Y, YR, rcond=None)
    return D.T


@given(seeds, st.floats(-np.pi, np.pi))
def test_z_rotation_consistency(seed, angle):
    rng = np.random.default_rng(seed)
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    D = _fit_rotation(R, rng)
    # degree-wise: the fitted rotation is block diagonal
    for i, bi in enumerate(BLOCKS):
        for j, bj in enumerate(BLOCKS):
            if i != j:
                assert np.max(np.abs(D[bi, bj])) < 1e-8
    d = unit(rng, 10)
    r = rng.uniform(0.01, 2, 10)
    assert np.allclose(ide_encode(d @ R.T, r), ide_encode(d, r) @ D.T, atol=1e-8)


def test_zero_upstream_zero_gradient(rng):
    d_dir, d_r = ide_backward(unit(rng, 4), rng.uniform(0.1, 1, 4), np.zeros((4, 17)))
    assert not np.any(d_dir) and not np.any(d_r)


def test_ide_backward_matches_finite_differences(rng):
    for _ in range(50):
        d = unit(rng, 3)
        r = rng.uniform(0.05, 2, 3)
        up = rng.normal(size=(3, 17))
        g_d, g_r = ide_backward(d, r, up)
        assert relative_error(g_d, central_difference(lambda x: np.sum(ide_encode(x, r) * up), d, 1e-6),
                              floor=1e-4) < 1e-3
        assert relative_error(g_r, central_difference(lambda x: np.sum(ide_encode(d, x) * up), r, 1e-6),
                              floor=1e-4) < 1e-3


@given(seeds, st.floats(0.01, 3))
def test_roughness_gradient_shrinks_magnitude(seed, r):
    rng = np.random.default_rng(seed)
    d = unit(rng, 1)
    enc = ide_encode(d, np.array([r]))
    # upstream = enc gives d(|enc|^2 / 2)/dr, which must be <= 0
    _, g_r = ide_backward(d, np.array([r]), enc)
    assert g_r[0] <= 0
    expected = -np.sum(enc ** 2 * -np.log(ide_attenuation(1.0)))
    assert g_r[0] == pytest.approx(expected, rel=1e-9, abs=1e-300)


def test_fourier_axis_example():
    enc = fourier_encode(np.array([1.0, 0.0, 0.0]))
    assert enc.shape == (24,)
    assert enc[0] == pytest.approx(0.0, abs=1e-12)  # sin(pi * 1)
    assert enc[3] == pytest.approx(-1.0)  # cos(pi * 1)


def test_fourier_backward_matches_finite_differences(rng):
    for _ in range(20):
        d = unit(rng, 3)
        up = rng.normal(size=(3, 24))
        g = fourier_backward(d, up)
        num = central_difference(lambda x: np.sum(fourier_encode(x) * up), d, 1e-6)
        assert relative_error(g, num, floor=1e-4) < 1e-3
