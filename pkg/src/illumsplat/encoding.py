"""View-direction encodings for the shader.

``ide_encode`` evaluates real spherical harmonics of degrees 1, 2 and 4
(17 values, ordered m = -l..l within each degree) and attenuates degree l by
``exp(-l (l + 1) / (2 kappa))`` with ``kappa = 1 / roughness``.

``fourier_encode`` is the roughness-free alternative used by the "no-ide"
variant: sin/cos at frequencies 2^k pi, k = 0..3, per axis (24 values).
"""
from __future__ import annotations

import math

import numpy as np

from .errors import InvalidInputError

DEGREES = (1, 2, 4)
IDE_DIM = sum(2 * l + 1 for l in DEGREES)
FOURIER_FREQS = 4
FOURIER_DIM = 3 * 2 * FOURIER_FREQS

_PI = math.pi

# Each basis function is sum(coef * x^a y^b z^c) over (coef, (a, b, c)) terms,
# written as homogeneous harmonic polynomials (exact SH on the unit sphere).
_C1 = math.sqrt(3 / (4 * _PI))
_C2a = 0.5 * math.sqrt(15 / _PI)
_C2b = 0.25 * math.sqrt(5 / _PI)
_C2c = 0.25 * math.sqrt(15 / _PI)
_C4 = (
    0.75 * math.sqrt(35 / _PI),
    0.75 * math.sqrt(35 / (2 * _PI)),
    0.75 * math.sqrt(5 / _PI),
    0.75 * math.sqrt(5 / (2 * _PI)),
    (3 / 16) * math.sqrt(1 / _PI),
    0.75 * math.sqrt(5 / (2 * _PI)),
    (3 / 8) * math.sqrt(5 / _PI),
    0.75 * math.sqrt(35 / (2 * _PI)),
    (3 / 16) * math.sqrt(35 / _PI),
)

_SH_POLY = [
    # l = 1
    [(_C1, (0, 1, 0))],
    [(_C1, (0, 0, 1))],
    [(_C1, (1, 0, 0))],
    # l = 2
    [(_C2a, (1, 1, 0))],
    [(_C2a, (0, 1, 1))],
    [(2 * _C2b, (0, 0, 2)), (-_C2b, (2, 0, 0)), (-_C2b, (0, 2, 0))],
    [(_C2a, (1, 0, 1))],
    [(_C2c, (2, 0, 0)), (-_C2c, (0, 2, 0))],
    # l = 4
    [(1, (3, 1, 0)), (-1, (1, 3, 0))],
    [(3, (2, 1, 1)), (-1, (0, 3, 1))],
    [(6, (1, 1, 2)), (-1, (3, 1, 0)), (-1, (1, 3, 0))],
    [(4, (0, 1, 3)), (-3, (2, 1, 1)), (-3, (0, 3, 1))],
    [(8, (0, 0, 4)), (3, (4, 0, 0)), (3, (0, 4, 0)), (6, (2, 2, 0)),
     (-24, (2, 0, 2)), (-24, (0, 2, 2))],
    [(4, (1, 0, 3)), (-3, (3, 0, 1)), (-3, (1, 2, 1))],
    [(6, (2, 0, 2)), (-6, (0, 2, 2)), (-1, (4, 0, 0)), (1, (0, 4, 0))],
    [(1, (3, 0, 1)), (-3, (1, 2, 1))],
    [(1, (4, 0, 0)), (-6, (2, 2, 0)), (1, (0, 4, 0))],
]
for _i, _k in enumerate(_C4):
    _SH_POLY[8 + _i] = [(_k * c, p) for c, p in _SH_POLY[8 + _i]]

_DEGREE_OF = np.array([l for l in DEGREES for _ in range(2 * l + 1)], dtype=np.float64)
_ATTEN_RATE = 0.5 * _DEGREE_OF * (_DEGREE_OF + 1)


def _check_dirs(dirs):
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    if d.shape[-1] != 3:
        raise InvalidInputError(f"directions must be 3-vectors, got shape {d.shape}")
    if np.any(np.linalg.norm(d, axis=-1) == 0):
        raise InvalidInputError("zero-length direction")
    return d


def _powers(d, max_pow=4):
    # pw[p][:, axis] = d[:, axis] ** p
    pw = [np.ones_like(d)]
    for _ in range(max_pow):
        pw.append(pw[-1] * d)
    return pw


def real_sh(dirs) -> np.ndarray:
    """Unattenuated real SH of degrees 1, 2, 4: (N, 3) -> (N, 17)."""
    d = _check_dirs(dirs)
    pw = _powers(d)
    out = np.zeros((len(d), IDE_DIM))
    for j, poly in enumerate(_SH_POLY):
        for c, (a, b, e) in poly:
            out[:, j] += c * pw[a][:, 0] * pw[b][:, 1] * pw[e][:, 2]
    return out


def real_sh_jacobian(dirs) -> np.ndarray:
    """d real_sh / d dir: (N, 17, 3)."""
    d = _check_dirs(dirs)
    pw = _powers(d)
    jac = np.zeros((len(d), IDE_DIM, 3))
    for j, poly in enumerate(_SH_POLY):
        for c, (a, b, e) in poly:
            if a:
                jac[:, j, 0] += c * a * pw[a - 1][:, 0] * pw[b][:, 1] * pw[e][:, 2]
            if b:
                jac[:, j, 1] += c * b * pw[a][:, 0] * pw[b - 1][:, 1] * pw[e][:, 2]
            if e:
                jac[:, j, 2] += c * e * pw[a][:, 0] * pw[b][:, 1] * pw[e - 1][:, 2]
    return jac


def ide_attenuation(roughness) -> np.ndarray:
    r = np.atleast_1d(np.asarray(roughness, dtype=np.float64))
    return np.exp(-_ATTEN_RATE[None, :] * r[:, None])


def ide_encode(dirs, roughness) -> np.ndarray:
    """Integrated directional encoding, (N, 3) x (N,) -> (N, 17); (3,) x () -> (17,)."""
    single = np.asarray(dirs).ndim == 1
    r = np.asarray(roughness, dtype=np.float64)
    if np.any(r < 0):
        raise InvalidInputError("roughness must be non-negative")
    out = real_sh(dirs) * ide_attenuation(r)
    return out[0] if single else out


def ide_backward(dirs, roughness, upstream):
    """Gradients (d_dirs, d_roughness) of ``sum(upstream * ide_encode(dirs, roughness))``."""
    single = np.asarray(dirs).ndim == 1
    g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    att = ide_attenuation(roughness)
    ga = g * att
    d_dirs = np.einsum("nj,njk->nk", ga, real_sh_jacobian(dirs))
    d_rough = -np.sum(ga * real_sh(dirs) * _ATTEN_RATE[None, :], axis=-1)
    if single:
        return d_dirs[0], d_rough[0]
    return d_dirs, d_rough


def _fourier_args(dirs):
    d = _check_dirs(dirs)
    freqs = (2.0 ** np.arange(FOURIER_FREQS)) * _PI
    return d, freqs[None, :, None] * d[:, None, :]  # (N, K, 3)


def fourier_encode(dirs) -> np.ndarray:
    """Layout per frequency k: [sin(2^k pi d_xyz), cos(2^k pi d_xyz)]."""
    single = np.asarray(dirs).ndim == 1
    d, arg = _fourier_args(dirs)
    out = np.concatenate([np.sin(arg), np.cos(arg)], axis=-1).reshape(len(d), FOURIER_DIM)
    return out[0] if single else out


def fourier_backward(dirs, upstream):
    single = np.asarray(dirs).ndim == 1
    d, arg = _fourier_args(dirs)
    g = np.atleast_2d(np.asarray(upstream, dtype=np.float64)).reshape(len(d), FOURIER_FREQS, 6)
    freqs = (2.0 ** np.arange(FOURIER_FREQS)) * _PI
    d_arg = g[..., :3] * np.cos(arg) - g[..., 3:] * np.sin(arg)
    d_dirs = np.sum(d_arg * freqs[None, :, None], axis=1)
    return d_dirs[0] if single else d_dirs
