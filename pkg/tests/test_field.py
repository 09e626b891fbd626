import numpy as np
import pytest
from hypothesis import given, strategies as st

from illumsplat.errors import InvalidFieldError
from illumsplat.field import (FACTOR_NAMES, IlluminationField, eval_field, eval_field_backward,
                              init_field, shrink_resample)
from illumsplat.oracles import (central_difference, dense_field_tensor, relative_error,
                                trilinear_oracle)


def field64(rng, res=4, R=2, P=3, lo=(-1, -1, -1), hi=(1, 1, 1)):
    return init_field(lo, hi, res, R, P, rng=rng, amplitude=1.0, dtype=np.float64)


def test_constant_factors_give_three_r():
    R, n, P = 3, 5, 4
    f = IlluminationField(np.zeros(3), np.ones(3), *[np.ones((R, n))] * 3,
                          *[np.ones((R, n, n))] * 3, np.ones((3 * R, P)))
    out = eval_field(np.array([[0.3, 0.7, 0.1], [2.0, -1.0, 0.5]]), f)
    assert np.allclose(out, 3 * R)


def test_node_query_matches_dense_tensor(rng):
    f = field64(rng)
    dense = dense_field_tensor(f)
    nodes = np.linspace(-1, 1, 4)
    for i, j, k in [(0, 0, 0), (1, 2, 3), (3, 3, 3), (2, 0, 1)]:
        p = np.array([nodes[i], nodes[j], nodes[k]])
        assert np.allclose(eval_field(p, f), dense[i, j, k], rtol=1e-12, atol=1e-12)


def test_interior_matches_trilinear_oracle(rng):
    f = field64(rng)
    pts = rng.uniform(-1, 1, (50, 3))
    ref = trilinear_oracle(dense_field_tensor(f), f.bbox_min, f.bbox_max, pts)
    assert relative_error(eval_field(pts, f), ref, floor=1e-3) < 1e-10


def test_outside_points_are_clamped(rng):
    f = field64(rng)
    assert np.allclose(eval_field(np.array([5.0, 0.2, -9.0]), f),
                       eval_field(np.array([1.0, 0.2, -1.0]), f))


def test_degenerate_bbox_rejected(rng):
    with pytest.raises(InvalidFieldError):
        init_field((0, 0, 0), (1, 0, 1), 4, 1, 2, rng=rng)


@given(st.integers(2, 8), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_oracle_equivalence_property(res, R, seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-2, 0, 3)
    hi = lo + rng.uniform(0.2, 3, 3)
    f = init_field(lo, hi, res, R, 5, rng=rng, amplitude=1.0, dtype=np.float64)
    pts = rng.uniform(lo, hi, (20, 3))
    ref = trilinear_oracle(dense_field_tensor(f), lo, hi, pts)
    assert relative_error(eval_field(pts, f), ref, floor=1e-3) < 1e-6


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linear_in_basis_and_factors(seed, a, b):
    rng = np.random.default_rng(seed)
    f1, f2 = field64(rng), field64(rng)
    pts = rng.uniform(-1, 1, (5, 3))
    mix = f1.copy()
    mix.basis = a * f1.basis + b * f2.basis
    assert np.allclose(eval_field(pts, mix),
                       a * eval_field(pts, f1) + b * eval_field(pts, replace_basis(f1, f2.basis)),
                       atol=1e-9)
    mix = f1.copy()
    mix.mat_xz = a * f1.mat_xz + b * f2.mat_xz
    g1 = f1.copy()
    g1.mat_xz = np.zeros_like(f1.mat_xz)
    base = eval_field(pts, g1)
    g2 = g1.copy()
    g2.mat_xz = f2.mat_xz
    h1 = g1.copy()
    h1.mat_xz = f1.mat_xz
    expected = base + a * (eval_field(pts, h1) - base) + b * (eval_field(pts, g2) - base)
    assert np.allclose(eval_field(pts, mix), expected, atol=1e-9)


def replace_basis(f, basis):
    g = f.copy()
    g.basis = basis
    return g


def test_zero_upstream_zero_grads(rng):
    f = field64(rng)
    g = eval_field_backward(rng.uniform(-1, 1, (4, 3)), f, np.zeros((4, 3)))
    for arr in list(g.factors().values()) + [g.basis, g.points]:
        assert not np.any(arr)


def _interior_points(rng, n, res):
    # away from cell faces where the interpolant has kinks
    h = 2.0 / (res - 1)
    cell = rng.integers(0, res - 1, (n, 3))
    return -1 + h * (cell + rng.uniform(0.1, 0.9, (n, 3)))


@pytest.mark.parametrize("name", FACTOR_NAMES + ("basis",))
def test_factor_gradients_match_finite_differences(rng, name):
    for _ in range(5):
        f = field64(rng)
        pts = _interior_points(rng, 3, 4)
        up = rng.normal(size=(3, 3))
        analytic = getattr(eval_field_backward(pts, f, up), name)

        def fn(x):
            g = f.copy()
            setattr(g, name, x)
            return float(np.sum(eval_field(pts, g) * up))

        numeric = central_difference(fn, getattr(f, name), eps=1e-4)
        assert relative_error(analytic, numeric, floor=1e-4) < 1e-3


def test_point_gradient_matches_finite_differences(rng):
    for _ in range(10):
        f = field64(rng)
        pts = _interior_points(rng, 4, 4)
        up = rng.normal(size=(4, 3))
        analytic = eval_field_backward(pts, f, up).points
        numeric = central_difference(lambda x: float(np.sum(eval_field(x, f) * up)), pts, 1e-4)
        assert relative_error(analytic, numeric, floor=1e-4) < 1e-3


def test_gradient_is_sparse_on_stencil(rng):
    f = field64(rng, res=6, R=2)
    g = eval_field_backward(np.array([0.1, -0.3, 0.55]), f, np.ones(3))
    assert all(np.count_nonzero(v[r]) <= 2 for v in (g.vec_x, g.vec_y, g.vec_z) for r in range(2))
    assert all(np.count_nonzero(m[r]) <= 4 for m in (g.mat_yz, g.mat_xz, g.mat_xy) for r in range(2))


def test_node_point_uses_lower_cell_one_sided_gradient(rng):
    f = field64(rng, res=5)
    node_x = 0.0  # node index 2 of linspace(-1, 1, 5)
    p = np.array([node_x, 0.23, -0.41])
    up = rng.normal(size=3)
    grad = eval_field_backward(p, f, up).points[0]

    def val(x):
        q = p.copy()
        q[0] = x
        return float(eval_field(q, f) @ up)

    h = 1e-6
    left = (val(node_x) - val(node_x - h)) / h
    right = (val(node_x + h) - val(node_x)) / h
    assert abs(left - right) > 1e-3  # a genuine kink, so the convention matters
    assert grad == pytest.approx(left, rel=1e-4, abs=1e-6)


@given(st.integers(0, 2**31 - 1), st.floats(1e-9, 1e-6))
def test_continuity_across_cell_face(seed, eps):
    rng = np.random.default_rng(seed)
    f = field64(rng, res=5)
    p = rng.uniform(-0.9, 0.9, 3)
    p[1] = 0.5  # a node plane
    a, b = p.copy(), p.copy()
    a[1] -= eps
    b[1] += eps
    assert np.max(np.abs(eval_field(a, f) - eval_field(b, f))) < 1e3 * eps


def test_shrink_identity(rng):
    f = field64(rng)
    g = shrink_resample(f, f.bbox_min, f.bbox_max)
    for name in FACTOR_NAMES + ("basis",):
        assert np.allclose(getattr(g, name), getattr(f, name), atol=1e-14)


def test_shrink_constant_field_stays_constant():
    R, n = 2, 6
    f = IlluminationField(-np.ones(3), np.ones(3), *[np.full((R, n), 0.5)] * 3,
                          *[np.full((R, n, n), 2.0)] * 3, np.ones((3 * R, 2)))
    g = shrink_resample(f, [-0.3, 0.0, 0.1], [0.4, 0.9, 0.2])
    for name in FACTOR_NAMES:
        assert np.allclose(getattr(g, name), getattr(f, name))


def test_shrink_half_box_matches_dense_resampling_oracle(rng):
    f = field64(rng, res=8, R=3, P=4)
    lo, hi = np.array([-0.5, -0.2, 0.0]), np.array([0.5, 0.8, 1.0])
    g = shrink_resample(f, lo, hi)
    # the new dense grid must equal the old interpolant sampled at the new nodes
    axes = np.meshgrid(*[np.linspace(lo[a], hi[a], 8) for a in range(3)], indexing="ij")
    nodes = np.stack([ax.ravel() for ax in axes], axis=-1)
    old_at_nodes = trilinear_oracle(dense_field_tensor(f), f.bbox_min, f.bbox_max, nodes)
    # interpolating each factor separately is exact for a separable product
    new_dense = dense_field_tensor(g).reshape(-1, 4)
    assert np.max(np.abs(new_dense - old_at_nodes)) < 1e-12
    pts = rng.uniform(lo, hi, (100, 3))
    before = eval_field(pts, f)
    after = eval_field(pts, g)
    resampled = trilinear_oracle(old_at_nodes.reshape(8, 8, 8, 4), lo, hi, pts)
    assert np.max(np.abs(after - resampled)) < 1e-12
    # what the coarser node spacing loses is bounded by the oracle's own resampling error
    assert np.max(np.abs(after - before)) <= np.max(np.abs(resampled - before)) + 1e-12


def test_shrink_rejects_larger_box(rng):
    f = field64(rng)
    with pytest.raises(InvalidFieldError):
        shrink_resample(f, [-1.5, -1, -1], [1, 1, 1])
