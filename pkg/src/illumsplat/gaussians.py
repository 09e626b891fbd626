"""Per-Gaussian parameters, covariance construction and perspective projection.

Camera convention: right-handed camera frame looking down -z with +y up
(the Blender/OpenGL convention).  Pixel (col, row) has its centre at
(col + 0.5, row + 0.5); image rows grow downward, so

    u = cx + fx * x / d,    v = cy - fy * y / d,    d = -z.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

N_BRDF = 48
DILATION = 0.3


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


@dataclass
class GaussianSet:
    """Structure-of-arrays Gaussian parameters, all in raw (pre-activation) form."""

    mean: np.ndarray  # (N, 3)
    rotation: np.ndarray  # (N, 4) quaternion (w, x, y, z)
    log_scale: np.ndarray  # (N, 3)
    opacity_logit: np.ndarray  # (N,)
    diffuse_raw: np.ndarray  # (N, 3)
    brdf_features: np.ndarray  # (N, 48)
    base_colour_raw: np.ndarray  # (N, 3)
    roughness_raw: np.ndarray  # (N,)

    def __len__(self):
        return self.mean.shape[0]

    @classmethod
    def names(cls):
        return tuple(f.name for f in fields(cls))

    def arrays(self) -> dict:
        return {name: getattr(self, name) for name in self.names()}

    @classmethod
    def empty(cls, dtype=np.float32):
        return cls(
            mean=np.zeros((0, 3), dtype), rotation=np.zeros((0, 4), dtype),
            log_scale=np.zeros((0, 3), dtype), opacity_logit=np.zeros(0, dtype),
            diffuse_raw=np.zeros((0, 3), dtype), brdf_features=np.zeros((0, N_BRDF), dtype),
            base_colour_raw=np.zeros((0, 3), dtype), roughness_raw=np.zeros(0, dtype),
        )

    def copy(self):
        return replace(self, **{k: v.copy() for k, v in self.arrays().items()})

    def astype(self, dtype):
        return replace(self, **{k: np.asarray(v, dtype=dtype) for k, v in self.arrays().items()})

    def select(self, index):
        return replace(self, **{k: v[index] for k, v in self.arrays().items()})

    def concat(self, other: "GaussianSet"):
        return replace(self, **{k: np.concatenate([v, getattr(other, k)])
                                for k, v in self.arrays().items()})

    @property
    def opacity(self):
        return sigmoid(self.opacity_logit)

    @property
    def scale(self):
        return np.exp(self.log_scale)

    @property
    def diffuse(self):
        return sigmoid(self.diffuse_raw)

    @property
    def tint(self):
        return sigmoid(self.base_colour_raw)

    @property
    def roughness(self):
        return softplus(self.roughness_raw)

    def normalize_rotations(self):
        norm = np.linalg.norm(self.rotation, axis=-1, keepdims=True)
        self.rotation = (self.rotation / np.maximum(norm, 1e-12)).astype(self.rotation.dtype)


@dataclass
class CameraView:
    world_to_camera: np.ndarray  # (4, 4) rigid
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.world_to_camera.shape != (4, 4):
            raise InvalidInputError("world_to_camera must be 4x4")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("image dimensions must be positive")

    @property
    def rotation(self):
        return self.world_to_camera[:3, :3]

    @property
    def translation(self):
        return self.world_to_camera[:3, 3]

    @property
    def center(self):
        return -self.rotation.T @ self.translation


@dataclass
class ProjectedGaussian:
    """Screen-space footprint of a batch of Gaussians.  ``valid`` marks unculled ones."""

    mean2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2)
    view_depth: np.ndarray  # (N,)
    view_dir: np.ndarray  # (N, 3)
    valid: np.ndarray  # (N,) bool
    # cached for the backward pass
    cam_points: np.ndarray = None
    jacobian: np.ndarray = None
    cov3d: np.ndarray = None
    view_dist: np.ndarray = None


def quat_to_rotmat(q):
    """Rotation matrices (..., 3, 3) from unit quaternions (..., 4) in (w, x, y, z) order."""
    w, x, y, z = np.moveaxis(np.asarray(q), -1, 0)
    R = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return R.reshape(R.shape[:-1] + (3, 3))


def _rotmat_backward(q, dR):
    """Gradient on the (already unit) quaternion given dL/dR."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    g = lambda i, j: dR[..., i, j]  # noqa: E731
    dw = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1))
    dx = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2)
              + z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2))
    dy = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
              - w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2))
    dz = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1)
              + y * g(1, 2) + x * g(2, 0) + y * g(2, 1))
    return np.stack([dw, dx, dy, dz], axis=-1)


def _normalize_quat(rotation):
    q = np.asarray(rotation)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise InvalidParameterError("zero quaternion cannot define a rotation")
    return q / norm, norm


def build_covariance(rotation, log_scale):
    """Sigma = R S S^T R^T for quaternion(s) ``rotation`` and per-axis log scales."""
    qn, _ = _normalize_quat(rotation)
    M = quat_to_rotmat(qn) * np.exp(np.asarray(log_scale))[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


def covariance_backward(rotation, log_scale, d_cov):
    """Gradients on (rotation, log_scale) of ``sum(d_cov * build_covariance(...))``."""
    qn, norm = _normalize_quat(rotation)
    R = quat_to_rotmat(qn)
    s = np.exp(np.asarray(log_scale))
    M = R * s[..., None, :]
    dM = (d_cov + np.swapaxes(d_cov, -1, -2)) @ M
    d_log_scale = np.einsum("...ij,...ij->...j", dM, R) * s
    dqn = _rotmat_backward(qn, dM * s[..., None, :])
    d_rot = (dqn - qn * np.sum(qn * dqn, axis=-1, keepdims=True)) / norm
    return d_rot, d_log_scale


def project_gaussians(mean, cov3d, view: CameraView, dilation=DILATION) -> ProjectedGaussian:
    """EWA projection of world-space Gaussians to pixel space.

    Gaussians at or in front of the near plane (or beyond far) are flagged in
    ``valid`` and their outputs are meaningless but finite.
    """
    mean = np.atleast_2d(np.asarray(mean, dtype=np.float64))
    cov3d = np.asarray(cov3d, dtype=np.float64).reshape(-1, 3, 3)
    Wr, Wt = view.rotation, view.translation
    t = mean @ Wr.T + Wt
    depth = -t[:, 2]
    valid = (depth > view.near) & (depth < view.far)
    d = np.where(valid, depth, 1.0)
    inv_d = 1.0 / d

    mean2d = np.stack([view.cx + view.fx * t[:, 0] * inv_d,
                       view.cy - view.fy * t[:, 1] * inv_d], axis=-1)
    J = np.zeros((len(mean), 2, 3))
    J[:, 0, 0] = view.fx * inv_d
    J[:, 0, 2] = view.fx * t[:, 0] * inv_d ** 2
    J[:, 1, 1] = -view.fy * inv_d
    J[:, 1, 2] = -view.fy * t[:, 1] * inv_d ** 2
    T = J @ Wr
    cov2d = T @ cov3d @ np.swapaxes(T, -1, -2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, -1, -2)) + dilation * np.eye(2)

    offset = view.center - mean
    dist = np.linalg.norm(offset, axis=-1)
    view_dir = offset / np.maximum(dist, 1e-12)[:, None]
    return ProjectedGaussian(mean2d=mean2d, cov2d=cov2d, view_depth=depth, view_dir=view_dir,
                             valid=valid, cam_points=t, jacobian=J, cov3d=cov3d, view_dist=dist)


def project_backward(proj: ProjectedGaussian, view: CameraView, d_mean2d=None, d_cov2d=None,
                     d_depth=None, d_view_dir=None):
    """Gradients on world means and 3D covariances.  Culled Gaussians get zero."""
    N = len(proj.valid)
    zeros = lambda *s: np.zeros((N,) + s)  # noqa: E731
    d_mean2d = zeros(2) if d_mean2d is None else np.asarray(d_mean2d, dtype=np.float64)
    d_cov2d = zeros(2, 2) if d_cov2d is None else np.asarray(d_cov2d, dtype=np.float64)
    d_depth = zeros() if d_depth is None else np.asarray(d_depth, dtype=np.float64)

    Wr = view.rotation
    t = proj.cam_points
    J = proj.jacobian
    d = np.where(proj.valid, proj.view_depth, 1.0)
    inv_d = 1.0 / d
    fx, fy = view.fx, view.fy

    T = J @ Wr
    G = 0.5 * (d_cov2d + np.swapaxes(d_cov2d, -1, -2))
    d_cov3d = np.swapaxes(T, -1, -2) @ G @ T
    dT = 2.0 * G @ T @ proj.cov3d
    dJ = dT @ Wr.T

    dt = np.zeros((N, 3))
    dt[:, 0] = d_mean2d[:, 0] * fx * inv_d
    dt[:, 1] = -d_mean2d[:, 1] * fy * inv_d
    dt[:, 2] = (d_mean2d[:, 0] * fx * t[:, 0] - d_mean2d[:, 1] * fy * t[:, 1]) * inv_d ** 2
    dt[:, 2] -= d_depth
    dt[:, 0] += dJ[:, 0, 2] * fx * inv_d ** 2
    dt[:, 1] -= dJ[:, 1, 2] * fy * inv_d ** 2
    dt[:, 2] += (dJ[:, 0, 0] * fx * inv_d ** 2
                 + dJ[:, 0, 2] * 2 * fx * t[:, 0] * inv_d ** 3
                 - dJ[:, 1, 1] * fy * inv_d ** 2
                 - dJ[:, 1, 2] * 2 * fy * t[:, 1] * inv_d ** 3)
    d_mean = dt @ Wr

    if d_view_dir is not None:
        w = proj.view_dir
        g = np.asarray(d_view_dir, dtype=np.float64)
        tangential = g - w * np.sum(w * g, axis=-1, keepdims=True)
        d_mean -= tangential / np.maximum(proj.view_dist, 1e-12)[:, None]

    mask = proj.valid[:, None]
    return np.where(mask, d_mean, 0.0), np.where(mask[..., None], d_cov3d, 0.0)


def view_directions(mean, view: CameraView):
    offset = view.center - np.atleast_2d(mean)
    return offset / np.linalg.norm(offset, axis=-1, keepdims=True)


def random_gaussians(n, rng, box_min=(-1, -1, -1), box_max=(1, 1, 1), init_opacity=0.1,
                     init_roughness=0.5, dtype=np.float32) -> GaussianSet:
    """Random initialisation: uniform means, isotropic scales from nearest-neighbour spacing."""
    from scipy.spatial import cKDTree

    box_min = np.asarray(box_min, dtype=np.float64)
    box_max = np.asarray(box_max, dtype=np.float64)
    mean = rng.uniform(box_min, box_max, size=(n, 3))
    if n > 1:
        k = min(4, n)
        dist, _ = cKDTree(mean).query(mean, k=k)
        nn = np.sqrt(np.mean(dist[:, 1:] ** 2, axis=1))
    else:
        nn = np.full(n, 0.1 * np.linalg.norm(box_max - box_min))
    nn = np.maximum(nn, 1e-7)
    log_scale = np.repeat(np.log(nn)[:, None], 3, axis=1)
    rotation = np.zeros((n, 4))
    rotation[:, 0] = 1.0
    return GaussianSet(
        mean=mean.astype(dtype),
        rotation=rotation.astype(dtype),
        log_scale=log_scale.astype(dtype),
        opacity_logit=np.full(n, logit(init_opacity), dtype=dtype),
        diffuse_raw=rng.normal(0.0, 0.1, size=(n, 3)).astype(dtype),
        brdf_features=rng.normal(0.0, 0.1, size=(n, N_BRDF)).astype(dtype),
        base_colour_raw=np.zeros((n, 3), dtype=dtype),
        roughness_raw=np.full(n, inverse_softplus(init_roughness), dtype=dtype),
    )
