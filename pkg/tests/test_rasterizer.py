import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_camera
from illumsplat.oracles import central_difference, relative_error
from illumsplat.rasterizer import (ALPHA_MIN, SplatList, rasterize, rasterize_backward,
                                   rasterize_reference, set_workers, splat_extent)
from illumsplat.selfcheck import near_threshold, random_splats

seeds = st.integers(0, 2**31 - 1)


def one(mean, conic, colour, opacity, depth=1.0, source=0):
    return dict(mean2d=[mean], conic=[conic], colour=[colour], opacity=[opacity], depth=[depth],
                source=[source])


def splats_from(*items):
    keys = items[0].keys()
    return SplatList(**{k: np.concatenate([np.asarray(it[k], dtype=float) for it in items])
                        for k in keys})


def test_half_red_over_white():
    view = make_camera(8, 8)
    sp = SplatList(**one([3.5, 3.5], [1e4, 0, 1e4], [1, 0, 0], 0.5))
    img = rasterize(sp, view, (1, 1, 1))[0].rgb
    assert np.allclose(img[3, 3], [1.0, 0.5, 0.5])
    assert np.allclose(img[0, 0], [1, 1, 1])


def test_two_coincident_full_coverage_splats():
    view = make_camera(8, 8)
    wide = [1e-9, 0, 1e-9]
    sp = splats_from(one([4, 4], wide, [1, 0, 0], 0.5, depth=1.0, source=0),
                     one([4, 4], wide, [0, 0, 1], 1.0, depth=2.0, source=1))
    img = rasterize(sp, view, (0, 0, 0))[0].rgb
    # the back splat's opacity is capped at 0.99: 0.5 * 0.99 of blue reaches the pixel
    assert np.allclose(img, [0.5, 0.0, 0.495], atol=1e-6)


def test_opaque_splat_caps_at_099():
    view = make_camera(8, 8)
    sp = SplatList(**one([4, 4], [1e-9, 0, 1e-9], [0.2, 0.4, 0.6], 1.0))
    bg = np.array([1.0, 0.0, 0.5])
    for fn in (lambda: rasterize(sp, view, bg)[0], lambda: rasterize_reference(sp, view, bg)):
        assert np.allclose(fn().rgb, 0.99 * np.array([0.2, 0.4, 0.6]) + 0.01 * bg, atol=1e-6)


def test_empty_list_is_background():
    view = make_camera(20, 12)
    sp = SplatList(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros(0))
    bg = (0.1, 0.2, 0.3)
    for img in (rasterize(sp, view, bg)[0], rasterize_reference(sp, view, bg)):
        assert img.rgb.shape == (12, 20, 3)
        assert np.allclose(img.rgb, bg)


def test_non_finite_conic_dropped_and_counted():
    view = make_camera(8, 8)
    sp = splats_from(one([4, 4], [np.nan, 0, 1], [1, 0, 0], 0.5),
                     one([4, 4], [1, 2, 1], [1, 0, 0], 0.5, source=1),  # not positive definite
                     one([4, 4], [0.5, 0, 0.5], [0, 1, 0], 0.5, source=2))
    img, rec = rasterize(sp, view)
    assert rec.dropped == 2
    assert np.all(np.isfinite(img.rgb))
    g = rasterize_backward(rec, np.ones((8, 8, 3)))
    assert not np.any(g.colour[:2]) and np.any(g.colour[2])


@given(seeds)
def test_matches_reference(seed):
    rng = np.random.default_rng(seed)
    view = make_camera(32, 32)
    sp = random_splats(rng, int(rng.integers(0, 51)))
    bg = rng.uniform(0, 1, 3)
    a, _ = rasterize(sp, view, bg)
    b = rasterize_reference(sp, view, bg)
    assert np.max(np.abs(a.rgb - b.rgb)) <= 1e-5
    assert np.max(np.abs(a.transmittance - b.transmittance)) <= 1e-5


def test_matches_reference_when_transmittance_runs_out(rng):
    # many dense opaque splats drive T below the stop threshold
    view = make_camera(32, 32)
    sp = random_splats(rng, 50)
    sp.opacity[:] = 0.98
    a, _ = rasterize(sp, view)
    b = rasterize_reference(sp, view)
    assert np.min(b.transmittance) < 1e-3
    assert np.max(np.abs(a.rgb - b.rgb)) <= 1e-5


@given(seeds)
def test_energy_bound_black_background(seed):
    rng = np.random.default_rng(seed)
    sp = random_splats(rng, int(rng.integers(1, 30)))
    img, _ = rasterize(sp, make_camera(32, 32), (0, 0, 0))
    assert np.all(img.rgb <= sp.colour.max(axis=0) + 1e-12)
    assert np.all((img.transmittance >= 0) & (img.transmittance <= 1))


def test_disjoint_splats_commute():
    view = make_camera(32, 32)
    a = one([5, 5], [1, 0, 1], [1, 0, 0], 0.8, depth=1.0, source=0)
    b = one([27, 27], [1, 0, 1], [0, 1, 0], 0.8, depth=2.0, source=1)
    img1 = rasterize(splats_from(a, b), view)[0].rgb
    a["depth"], b["depth"] = [2.0], [1.0]
    img2 = rasterize(splats_from(a, b), view)[0].rgb
    assert np.array_equal(img1, img2)


def test_depth_ties_broken_by_source():
    sp = SplatList(np.zeros((3, 2)), np.ones((3, 3)), np.zeros((3, 3)), np.ones(3),
                   depth=[1.0, 1.0, 0.5], source=[7, 3, 9])
    assert sp.sort_order().tolist() == [2, 1, 0]


@given(seeds)
def test_extent_bounds_visible_weight(seed):
    rng = np.random.default_rng(seed)
    sp = random_splats(rng, 10)
    r = splat_extent(sp.conic, sp.opacity)
    ang = rng.uniform(0, 2 * np.pi, 10)
    d = np.stack([np.cos(ang), np.sin(ang)], 1) * r[:, None]
    a_, b_, c_ = sp.conic.T
    power = -0.5 * (a_ * d[:, 0] ** 2 + c_ * d[:, 1] ** 2) - b_ * d[:, 0] * d[:, 1]
    assert np.all(sp.opacity * np.exp(power) < ALPHA_MIN)


def test_zero_upstream_zero_gradient(rng):
    sp = random_splats(rng, 10)
    _, rec = rasterize(sp, make_camera())
    g = rasterize_backward(rec, np.zeros((32, 32, 3)))
    for arr in (g.colour, g.opacity, g.mean2d, g.conic):
        assert not np.any(arr)


def test_single_splat_colour_gradient_closed_form():
    view = make_camera(8, 8)
    sp = SplatList(**one([3.2, 4.1], [0.3, 0.05, 0.2], [0.3, 0.6, 0.9], 0.7))
    _, rec = rasterize(sp, view)
    up = np.zeros((8, 8, 3))
    up[2, 5, 1] = 1.0
    g = rasterize_backward(rec, up)
    dx, dy = 5.5 - 3.2, 2.5 - 4.1
    weight = 0.7 * np.exp(-0.5 * (0.3 * dx * dx + 0.2 * dy * dy) - 0.05 * dx * dy)
    assert g.colour[0] == pytest.approx([0.0, weight, 0.0], abs=1e-15)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(11)
    view = make_camera(20, 20)
    done = 0
    while done < 100:
        sp = random_splats(rng, int(rng.integers(1, 21)), 20, 20)
        sp.opacity = rng.uniform(0.1, 0.9, len(sp))
        if near_threshold(sp, view):
            continue
        up = rng.normal(size=(20, 20, 3))
        _, rec = rasterize(sp, view)
        g = rasterize_backward(rec, up)

        def loss(**kw):
            s = SplatList(**{**dict(mean2d=sp.mean2d, conic=sp.conic, colour=sp.colour,
                                    opacity=sp.opacity, depth=sp.depth, source=sp.source), **kw})
            return float(np.sum(rasterize_reference(s, view).rgb * up))

        for name in ("colour", "opacity", "mean2d", "conic"):
            num = central_difference(lambda x: loss(**{name: x}), getattr(sp, name), 1e-7)
            assert relative_error(getattr(g, name), num, floor=1e-3) < 1e-3, name
        done += 1


def test_bit_identical_across_worker_counts(rng):
    import numba

    sp = random_splats(rng, 50)
    view = make_camera(48, 48)
    up = rng.normal(size=(48, 48, 3))
    results = []
    for n in sorted({1, numba.config.NUMBA_NUM_THREADS}):
        set_workers(n)
        img, rec = rasterize(sp, view, (1, 1, 1))
        g = rasterize_backward(rec, up)
        results.append((img.rgb, g.mean2d, g.conic, g.colour, g.opacity))
    set_workers(1)
    for other in results[1:]:
        assert all(np.array_equal(a, b) for a, b in zip(results[0], other))
