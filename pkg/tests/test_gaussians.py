import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_camera
from illumsplat.errors import InvalidParameterError
from illumsplat.gaussians import (CameraView, GaussianSet, build_covariance, covariance_backward,
                                  project_backward, project_gaussians, random_gaussians)
from illumsplat.oracles import central_difference, projection_jacobian_fd, relative_error

seeds = st.integers(0, 2**31 - 1)


def test_identity_covariance():
    assert np.allclose(build_covariance([1, 0, 0, 0], np.zeros(3)), np.eye(3))


def test_quarter_turn_about_z():
    q = [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)]
    cov = build_covariance(q, np.log([2.0, 1.0, 1.0]))
    assert np.allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-12)


def test_zero_quaternion_rejected():
    with pytest.raises(InvalidParameterError):
        build_covariance([0, 0, 0, 0], np.zeros(3))


@given(seeds)
def test_covariance_eigenvalues_are_squared_scales(seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-2, 1, 3)
    cov = build_covariance(rng.normal(size=4), s)
    assert np.allclose(cov, cov.T)
    assert np.allclose(np.sort(np.linalg.eigvalsh(cov)), np.sort(np.exp(2 * s)), rtol=1e-9)


@given(seeds)
def test_covariance_invariant_to_quaternion_sign(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    s = rng.uniform(-1, 1, 3)
    assert np.allclose(build_covariance(q, s), build_covariance(-q, s))


def test_axis_projection_no_dilation():
    view = make_camera(64, 64, f=100.0, distance=2.0)
    p = project_gaussians(np.zeros(3), np.eye(3), view, dilation=0.0)
    assert np.allclose(p.cov2d[0], np.diag([2500.0, 2500.0]))
    assert np.allclose(p.mean2d[0], [32, 32])
    assert p.view_depth[0] == pytest.approx(2.0)
    assert np.allclose(p.view_dir[0], [0, 0, 1])


def test_axis_projection_with_dilation():
    view = make_camera(64, 64, f=100.0, distance=2.0)
    p = project_gaussians(np.zeros(3), np.eye(3), view)
    assert np.allclose(p.cov2d[0], np.diag([2500.3, 2500.3]))


def _random_view(rng, width=48, height=40):
    from illumsplat.data import camera_from_c2w, look_at

    eye = rng.normal(size=3)
    eye *= rng.uniform(3, 5) / np.linalg.norm(eye)
    f = rng.uniform(30, 60)
    return camera_from_c2w(look_at(eye, rng.uniform(-0.2, 0.2, 3)), f, f * rng.uniform(0.9, 1.1),
                           width / 2, height / 2, width, height)


@given(seeds)
def test_projected_covariance_matches_fd_jacobian(seed):
    rng = np.random.default_rng(seed)
    view = _random_view(rng)
    mean = rng.uniform(-0.5, 0.5, 3)
    cov = build_covariance(rng.normal(size=4), rng.uniform(-4, -3, 3))
    J = projection_jacobian_fd(mean, view)
    ref = J @ view.rotation @ cov @ view.rotation.T @ J.T
    p = project_gaussians(mean, cov, view, dilation=0.0)
    assert relative_error(p.cov2d[0], ref, floor=1e-3 * np.max(np.abs(ref))) < 1e-2


@given(seeds)
def test_projected_covariance_symmetric_positive_definite(seed):
    rng = np.random.default_rng(seed)
    view = _random_view(rng)
    mean = rng.uniform(-0.5, 0.5, (5, 3))
    cov = build_covariance(rng.normal(size=(5, 4)), rng.uniform(-6, 0, (5, 3)))
    p = project_gaussians(mean, cov, view)
    assert np.allclose(p.cov2d, np.swapaxes(p.cov2d, 1, 2))
    assert np.all(np.linalg.eigvalsh(p.cov2d) > 0)


@given(seeds, st.floats(0.1, 10))
def test_depth_order_independent_of_focal_scale(seed, k):
    rng = np.random.default_rng(seed)
    view = _random_view(rng)
    scaled = CameraView(view.world_to_camera, view.fx * k, view.fy * k, view.cx, view.cy,
                        view.width, view.height)
    mean = rng.uniform(-1, 1, (10, 3))
    cov = np.broadcast_to(np.eye(3) * 0.01, (10, 3, 3))
    a = project_gaussians(mean, cov, view).view_depth
    b = project_gaussians(mean, cov, scaled).view_depth
    assert np.array_equal(np.argsort(a, kind="stable"), np.argsort(b, kind="stable"))


def test_zero_upstream_zero_gradient(rng):
    view = _random_view(rng)
    p = project_gaussians(rng.uniform(-0.5, 0.5, (3, 3)), np.broadcast_to(np.eye(3), (3, 3, 3)), view)
    d_mean, d_cov = project_backward(p, view)
    assert not np.any(d_mean) and not np.any(d_cov)


def test_culled_gaussian_gets_zero_gradient(rng):
    view = make_camera(distance=4.0)
    mean = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 5.0]])  # second is behind the camera
    p = project_gaussians(mean, np.broadcast_to(np.eye(3) * 0.1, (2, 3, 3)), view)
    assert p.valid.tolist() == [True, False]
    d_mean, d_cov = project_backward(p, view, rng.normal(size=(2, 2)), rng.normal(size=(2, 2, 2)),
                                     rng.normal(size=2), rng.normal(size=(2, 3)))
    assert not np.any(d_mean[1]) and not np.any(d_cov[1])
    assert np.any(d_mean[0])


def test_projection_backward_matches_finite_differences(rng):
    for _ in range(20):
        view = _random_view(rng)
        mean = rng.uniform(-0.5, 0.5, (2, 3))
        q = rng.normal(size=(2, 4))
        s = rng.uniform(-3, -1, (2, 3))
        up = [rng.normal(size=(2, 2)), rng.normal(size=(2, 2, 2)), rng.normal(size=2),
              rng.normal(size=(2, 3))]

        def loss(m, qq, ss):
            p = project_gaussians(m, build_covariance(qq, ss), view)
            return float(np.sum(p.mean2d * up[0]) + np.sum(p.cov2d * up[1])
                         + np.sum(p.view_depth * up[2]) + np.sum(p.view_dir * up[3]))

        p = project_gaussians(mean, build_covariance(q, s), view)
        d_mean, d_cov = project_backward(p, view, *up)
        d_q, d_s = covariance_backward(q, s, d_cov)
        assert relative_error(d_mean, central_difference(lambda x: loss(x, q, s), mean, 1e-6),
                              floor=1e-4) < 1e-3
        assert relative_error(d_q, central_difference(lambda x: loss(mean, x, s), q, 1e-6),
                              floor=1e-4) < 1e-3
        assert relative_error(d_s, central_difference(lambda x: loss(mean, q, x), s, 1e-6),
                              floor=1e-4) < 1e-3


def test_random_gaussians_shapes_and_activations(rng):
    g = random_gaussians(50, rng, (-1, -1, -1), (1, 1, 1))
    assert len(g) == 50
    assert np.allclose(g.opacity, 0.1, atol=1e-6)
    assert np.all(g.scale > 0)
    assert np.allclose(np.linalg.norm(g.rotation, axis=1), 1)
    assert np.all(g.roughness > 0)
    assert len(g.concat(GaussianSet.empty())) == 50
