"""Independent reference computations used by the test suite and ``selfcheck``.

None of these share code paths with the implementations they check.
"""
from __future__ import annotations

import numpy as np
from scipy.interpolate import RegularGridInterpolator


def dense_field_tensor(field) -> np.ndarray:
    """Materialise the factorised field as an (n, n, n, P) array over [x, y, z]."""
    vx, vy, vz = (np.asarray(v, dtype=np.float64) for v in field.vectors)
    myz, mxz, mxy = (np.asarray(m, dtype=np.float64) for m in field.matrices)
    basis = np.asarray(field.basis, dtype=np.float64)
    n = vx.shape[1]
    dense = np.zeros((n, n, n, basis.shape[1]))
    for r in range(vx.shape[0]):
        ax = np.einsum("i,jk->ijk", vx[r], myz[r])
        ay = np.einsum("j,ik->ijk", vy[r], mxz[r])
        az = np.einsum("k,ij->ijk", vz[r], mxy[r])
        dense += ax[..., None] * basis[3 * r] + ay[..., None] * basis[3 * r + 1] \
            + az[..., None] * basis[3 * r + 2]
    return dense


def trilinear_oracle(dense, bbox_min, bbox_max, points) -> np.ndarray:
    """Trilinear interpolation of a node-aligned dense grid (points clamped into the box)."""
    n = dense.shape[0]
    lo = np.asarray(bbox_min, dtype=np.float64)
    hi = np.asarray(bbox_max, dtype=np.float64)
    axes = tuple(np.linspace(lo[a], hi[a], n) for a in range(3))
    interp = RegularGridInterpolator(axes, dense, method="linear")
    pts = np.clip(np.atleast_2d(points), lo, hi)
    return interp(pts)


def central_difference(fn, x, eps=1e-4):
    """Gradient of the scalar ``fn`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = fn(x)
        flat[i] = old - eps
        fm = fn(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic, numeric, floor=1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor), taken elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def projection_jacobian_fd(mean, view, eps=1e-6):
    """Finite-difference Jacobian (2x3) of pixel position w.r.t. camera-space point."""
    def pix(t):
        d = -t[2]
        return np.array([view.cx + view.fx * t[0] / d, view.cy - view.fy * t[1] / d])

    t0 = view.rotation @ np.asarray(mean, dtype=np.float64) + view.translation
    J = np.zeros((2, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = eps
        J[:, k] = (pix(t0 + e) - pix(t0 - e)) / (2 * eps)
    return J


def real_sh_scipy(dirs, degrees=(1, 2, 4)) -> np.ndarray:
    """Real SH built from scipy's complex harmonics (Condon-Shortley phase removed)."""
    from scipy.special import sph_harm_y

    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    theta = np.arccos(np.clip(d[:, 2], -1, 1))
    phi = np.arctan2(d[:, 1], d[:, 0])
    cols = []
    for l in degrees:
        for m in range(-l, l + 1):
            y = sph_harm_y(l, abs(m), theta, phi)
            if m > 0:
                cols.append(np.sqrt(2) * (-1) ** m * y.real)
            elif m < 0:
                cols.append(np.sqrt(2) * (-1) ** m * y.imag)
            else:
                cols.append(y.real)
    return np.stack(cols, axis=-1)
