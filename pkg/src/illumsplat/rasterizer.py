"""Tile-based front-to-back alpha compositing of 2D Gaussian splats.

Per pixel, splats are visited in ascending depth.  Each contributes
``a = min(0.99, opacity * exp(-0.5 d^T conic d))``; splats with ``a < 1/255``
are skipped, and the loop stops (without the current splat) once the
transmittance would drop below ``1e-4``.  The remaining transmittance
multiplies the background.

A splat is binned into every 16x16 tile whose pixel centres fall inside the
box where ``a`` can still reach 1/255, so tiling never changes the result
compared with visiting every splat at every pixel.

Tiles are independent work units.  The backward pass writes per-(tile, splat)
partial gradients and reduces them in tile order, so gradients do not depend
on the number of worker threads.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .errors import InvalidInputError

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the system TBB is too old for numba; workqueue is always available
    numba.config.THREADING_LAYER = "workqueue"

TILE = 16
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
T_MIN = 1e-4


@dataclass
class SplatList:
    mean2d: np.ndarray  # (M, 2) pixels
    conic: np.ndarray  # (M, 3): (a, b, c) of [[a, b], [b, c]] = cov2d^-1
    colour: np.ndarray  # (M, 3)
    opacity: np.ndarray  # (M,)
    depth: np.ndarray  # (M,)
    source: np.ndarray = None  # (M,) int, index into the Gaussian set

    def __post_init__(self):
        self.mean2d = np.asarray(self.mean2d, dtype=np.float64).reshape(-1, 2)
        self.conic = np.asarray(self.conic, dtype=np.float64).reshape(-1, 3)
        self.colour = np.asarray(self.colour, dtype=np.float64).reshape(-1, 3)
        self.opacity = np.asarray(self.opacity, dtype=np.float64).reshape(-1)
        self.depth = np.asarray(self.depth, dtype=np.float64).reshape(-1)
        if self.source is None:
            self.source = np.arange(len(self.opacity))
        self.source = np.asarray(self.source, dtype=np.int64).reshape(-1)
        m = len(self.opacity)
        for name in ("mean2d", "conic", "colour", "depth", "source"):
            if len(getattr(self, name)) != m:
                raise InvalidInputError(f"SplatList.{name} has {len(getattr(self, name))} rows, expected {m}")

    def __len__(self):
        return len(self.opacity)

    def sort_order(self):
        """Stable ascending depth, ties broken by source index."""
        return np.lexsort((self.source, self.depth))


@dataclass
class ImageBuffer:
    rgb: np.ndarray  # (H, W, 3)
    transmittance: np.ndarray = None  # (H, W)

    @property
    def height(self):
        return self.rgb.shape[0]

    @property
    def width(self):
        return self.rgb.shape[1]


@dataclass
class RasterRecord:
    """State saved by :func:`rasterize` for :func:`rasterize_backward`."""

    width: int
    height: int
    background: np.ndarray
    kept: np.ndarray  # indices into the input SplatList, in depth order
    mean2d: np.ndarray  # the following are gathered in ``kept`` order
    conic: np.ndarray
    colour: np.ndarray
    opacity: np.ndarray
    tile_start: np.ndarray
    tile_end: np.ndarray
    pair_splat: np.ndarray
    final_T: np.ndarray
    n_contrib: np.ndarray
    n_input: int
    dropped: int


@dataclass
class SplatGrads:
    colour: np.ndarray
    opacity: np.ndarray
    mean2d: np.ndarray
    conic: np.ndarray


def conic_from_cov2d(cov2d):
    cov2d = np.asarray(cov2d, dtype=np.float64)
    a, b, c = cov2d[..., 0, 0], cov2d[..., 0, 1], cov2d[..., 1, 1]
    det = a * c - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.stack([c / det, -b / det, a / det], axis=-1)


def conic_backward(cov2d, d_conic):
    """dL/dcov2d (full symmetric 2x2) from dL/d(a, b, c) of the conic."""
    conic = conic_from_cov2d(cov2d)
    a, b, c = conic[..., 0], conic[..., 1], conic[..., 2]
    Q = np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)
    g = np.asarray(d_conic, dtype=np.float64)
    G = np.stack([np.stack([g[..., 0], 0.5 * g[..., 1]], -1),
                  np.stack([0.5 * g[..., 1], g[..., 2]], -1)], -2)
    return -Q @ G @ Q


def _valid_conic(conic):
    a, b, c = conic[:, 0], conic[:, 1], conic[:, 2]
    finite = np.all(np.isfinite(conic), axis=1)
    with np.errstate(invalid="ignore"):
        return finite & (a > 0) & (c > 0) & (a * c - b * b > 0)


def splat_extent(conic, opacity):
    """Pixel radius beyond which a splat's blend weight is below 1/255 (-1: never visible)."""
    a, b, c = conic[:, 0], conic[:, 1], conic[:, 2]
    det = a * c - b * b
    # eigenvalues of the covariance = inverse eigenvalues of the conic
    lam_min_conic = 0.5 * (a + c) - np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    lam_min_conic = np.maximum(lam_min_conic, det / np.maximum(a + c, 1e-300))
    peak = np.minimum(opacity, ALPHA_MAX)
    with np.errstate(divide="ignore"):
        m2 = 2.0 * np.log(peak / ALPHA_MIN)
    radius = np.sqrt(np.maximum(m2, 0.0) / lam_min_conic)
    radius = radius * (1 + 1e-6) + 1e-6
    return np.where(peak >= ALPHA_MIN, radius, -1.0)


def _bin_tiles(mean2d, radius, width, height):
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    vis = radius >= 0
    x0 = np.ceil(mean2d[:, 0] - radius - 0.5)
    x1 = np.floor(mean2d[:, 0] + radius - 0.5)
    y0 = np.ceil(mean2d[:, 1] - radius - 0.5)
    y1 = np.floor(mean2d[:, 1] + radius - 0.5)
    x0 = np.clip(x0, 0, width - 1)
    x1 = np.clip(x1, -1, width - 1)
    y0 = np.clip(y0, 0, height - 1)
    y1 = np.clip(y1, -1, height - 1)
    vis &= (x1 >= x0) & (y1 >= y0) & np.isfinite(mean2d).all(axis=1)
    vis &= (mean2d[:, 0] + radius >= 0) & (mean2d[:, 0] - radius <= width)
    vis &= (mean2d[:, 1] + radius >= 0) & (mean2d[:, 1] - radius <= height)
    tx0 = np.where(vis, x0 // TILE, 0).astype(np.int64)
    tx1 = np.where(vis, x1 // TILE, -1).astype(np.int64)
    ty0 = np.where(vis, y0 // TILE, 0).astype(np.int64)
    ty1 = np.where(vis, y1 // TILE, -1).astype(np.int64)
    nx = np.maximum(tx1 - tx0 + 1, 0)
    ny = np.maximum(ty1 - ty0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    splat = np.repeat(np.arange(len(counts)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    nx_r = np.repeat(nx, counts)
    tile = (np.repeat(ty0, counts) + local // np.maximum(nx_r, 1)) * tiles_x \
        + np.repeat(tx0, counts) + local % np.maximum(nx_r, 1)
    order = np.argsort(tile, kind="stable")
    tile = tile[order]
    splat = splat[order]
    n_tiles = tiles_x * tiles_y
    start = np.searchsorted(tile, np.arange(n_tiles), side="left")
    end = np.searchsorted(tile, np.arange(n_tiles), side="right")
    return tiles_x, start.astype(np.int64), end.astype(np.int64), splat.astype(np.int64)


@njit(parallel=True, cache=True)
def _forward_kernel(width, height, tiles_x, tile_start, tile_end, pair_splat,
                    mean2d, conic, colour, opacity, background, out, final_T, n_contrib):
    n_tiles = tile_start.shape[0]
    for t in prange(n_tiles):
        tx = t % tiles_x
        ty = t // tiles_x
        s0 = tile_start[t]
        s1 = tile_end[t]
        for py in range(ty * 16, min(ty * 16 + 16, height)):
            for px in range(tx * 16, min(tx * 16 + 16, width)):
                fx = px + 0.5
                fy = py + 0.5
                T = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                last = s0
                for k in range(s0, s1):
                    j = pair_splat[k]
                    dx = fx - mean2d[j, 0]
                    dy = fy - mean2d[j, 1]
                    power = -0.5 * (conic[j, 0] * dx * dx + conic[j, 2] * dy * dy) \
                        - conic[j, 1] * dx * dy
                    a = opacity[j] * np.exp(power)
                    if a > 0.99:
                        a = 0.99
                    if a < 1.0 / 255.0:
                        continue
                    test_T = T * (1.0 - a)
                    if test_T < 1e-4:
                        break
                    w = a * T
                    r += colour[j, 0] * w
                    g += colour[j, 1] * w
                    b += colour[j, 2] * w
                    T = test_T
                    last = k + 1
                out[py, px, 0] = r + T * background[0]
                out[py, px, 1] = g + T * background[1]
                out[py, px, 2] = b + T * background[2]
                final_T[py, px] = T
                n_contrib[py, px] = last - s0


@njit(parallel=True, cache=True)
def _backward_kernel(width, height, tiles_x, tile_start, tile_end, pair_splat,
                     mean2d, conic, colour, opacity, background, final_T, d_out, pair_grad):
    n_tiles = tile_start.shape[0]
    for t in prange(n_tiles):
        tx = t % tiles_x
        ty = t // tiles_x
        s0 = tile_start[t]
        s1 = tile_end[t]
        n = s1 - s0
        if n == 0:
            continue
        ks = np.empty(n, np.int64)
        alphas = np.empty(n)
        Ts = np.empty(n)
        gauss = np.empty(n)
        capped = np.empty(n, np.bool_)
        for py in range(ty * 16, min(ty * 16 + 16, height)):
            for px in range(tx * 16, min(tx * 16 + 16, width)):
                fx = px + 0.5
                fy = py + 0.5
                # replay the forward pass to recover the contributor list
                T = 1.0
                m = 0
                for k in range(s0, s1):
                    j = pair_splat[k]
                    dx = fx - mean2d[j, 0]
                    dy = fy - mean2d[j, 1]
                    power = -0.5 * (conic[j, 0] * dx * dx + conic[j, 2] * dy * dy) \
                        - conic[j, 1] * dx * dy
                    G = np.exp(power)
                    a = opacity[j] * G
                    cap = False
                    if a > 0.99:
                        a = 0.99
                        cap = True
                    if a < 1.0 / 255.0:
                        continue
                    test_T = T * (1.0 - a)
                    if test_T < 1e-4:
                        break
                    ks[m] = k
                    alphas[m] = a
                    Ts[m] = T
                    gauss[m] = G
                    capped[m] = cap
                    m += 1
                    T = test_T
                g0 = d_out[py, px, 0]
                g1 = d_out[py, px, 1]
                g2 = d_out[py, px, 2]
                if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                    continue
                Tf = final_T[py, px]
                # contribution of everything behind the current splat
                s_r = Tf * background[0]
                s_g = Tf * background[1]
                s_b = Tf * background[2]
                for i in range(m - 1, -1, -1):
                    k = ks[i]
                    j = pair_splat[k]
                    a = alphas[i]
                    Ti = Ts[i]
                    w = a * Ti
                    pair_grad[k, 0] += w * g0
                    pair_grad[k, 1] += w * g1
                    pair_grad[k, 2] += w * g2
                    inv = 1.0 / (1.0 - a)
                    d_a = g0 * (Ti * colour[j, 0] - s_r * inv) \
                        + g1 * (Ti * colour[j, 1] - s_g * inv) \
                        + g2 * (Ti * colour[j, 2] - s_b * inv)
                    s_r += colour[j, 0] * w
                    s_g += colour[j, 1] * w
                    s_b += colour[j, 2] * w
                    if capped[i]:
                        continue
                    G = gauss[i]
                    pair_grad[k, 3] += G * d_a
                    d_G = opacity[j] * d_a
                    dx = fx - mean2d[j, 0]
                    dy = fy - mean2d[j, 1]
                    ca = conic[j, 0]
                    cb = conic[j, 1]
                    cc = conic[j, 2]
                    pair_grad[k, 4] += d_G * G * (ca * dx + cb * dy)
                    pair_grad[k, 5] += d_G * G * (cb * dx + cc * dy)
                    pair_grad[k, 6] += -0.5 * d_G * G * dx * dx
                    pair_grad[k, 7] += -d_G * G * dx * dy
                    pair_grad[k, 8] += -0.5 * d_G * G * dy * dy


@njit(cache=True)
def _reduce_pairs(pair_splat, pair_grad, out):
    for k in range(pair_splat.shape[0]):
        j = pair_splat[k]
        for c in range(9):
            out[j, c] += pair_grad[k, c]


def _prepare(splats: SplatList):
    valid = _valid_conic(splats.conic)
    dropped = int(np.count_nonzero(~valid))
    order = splats.sort_order()
    kept = order[valid[order]]
    return kept, dropped


def _background(background):
    bg = np.asarray(background, dtype=np.float64).reshape(-1)
    if bg.shape != (3,):
        raise InvalidInputError("background must be an RGB triple")
    return bg


def rasterize(splats: SplatList, view, background=(0.0, 0.0, 0.0)):
    """Render ``splats`` into a ``view.height x view.width`` image.

    Returns ``(ImageBuffer, RasterRecord)``; ``record.dropped`` counts splats
    discarded for a non-finite or non-positive-definite conic.
    """
    width, height = int(view.width), int(view.height)
    if width <= 0 or height <= 0:
        raise InvalidInputError("image dimensions must be positive")
    bg = _background(background)
    kept, dropped = _prepare(splats)
    mean2d = np.ascontiguousarray(splats.mean2d[kept])
    conic = np.ascontiguousarray(splats.conic[kept])
    colour = np.ascontiguousarray(splats.colour[kept])
    opacity = np.ascontiguousarray(splats.opacity[kept])
    radius = splat_extent(conic, opacity)
    tiles_x, start, end, pair_splat = _bin_tiles(mean2d, radius, width, height)

    out = np.empty((height, width, 3))
    final_T = np.empty((height, width))
    n_contrib = np.empty((height, width), dtype=np.int64)
    _forward_kernel(width, height, tiles_x, start, end, pair_splat,
                    mean2d, conic, colour, opacity, bg, out, final_T, n_contrib)
    record = RasterRecord(width=width, height=height, background=bg, kept=kept,
                          mean2d=mean2d, conic=conic, colour=colour, opacity=opacity,
                          tile_start=start, tile_end=end, pair_splat=pair_splat,
                          final_T=final_T, n_contrib=n_contrib, n_input=len(splats),
                          dropped=dropped)
    return ImageBuffer(rgb=out, transmittance=final_T), record


def rasterize_backward(record: RasterRecord, d_image) -> SplatGrads:
    """Exact gradients of ``sum(d_image * rgb)`` w.r.t. every input splat.

    The 0.99 opacity cap, the 1/255 skip and the transmittance stop act as
    stop-gradients.  Dropped splats receive zero gradient.
    """
    d_out = np.ascontiguousarray(np.asarray(d_image, dtype=np.float64))
    if d_out.shape != (record.height, record.width, 3):
        raise InvalidInputError(f"upstream gradient shape {d_out.shape} does not match the image")
    tiles_x = (record.width + TILE - 1) // TILE
    pair_grad = np.zeros((len(record.pair_splat), 9))
    _backward_kernel(record.width, record.height, tiles_x, record.tile_start, record.tile_end,
                     record.pair_splat, record.mean2d, record.conic, record.colour,
                     record.opacity, record.background, record.final_T, d_out, pair_grad)
    per_kept = np.zeros((len(record.kept), 9))
    _reduce_pairs(record.pair_splat, pair_grad, per_kept)
    full = np.zeros((record.n_input, 9))
    full[record.kept] = per_kept
    return SplatGrads(colour=full[:, 0:3], opacity=full[:, 3], mean2d=full[:, 4:6],
                      conic=full[:, 6:9])


def rasterize_reference(splats: SplatList, view, background=(0.0, 0.0, 0.0)) -> ImageBuffer:
    """Brute-force compositor: every pixel visits the full depth-sorted list, no tiling.

    Vectorised over pixels; same blending rules as :func:`rasterize`.
    """
    width, height = int(view.width), int(view.height)
    if width <= 0 or height <= 0:
        raise InvalidInputError("image dimensions must be positive")
    bg = _background(background)
    kept, _ = _prepare(splats)
    ys, xs = np.mgrid[0:height, 0:width]
    px = xs.ravel() + 0.5
    py = ys.ravel() + 0.5
    C = np.zeros((px.size, 3))
    T = np.ones(px.size)
    active = np.ones(px.size, dtype=bool)
    for j in kept:
        dx = px - splats.mean2d[j, 0]
        dy = py - splats.mean2d[j, 1]
        a_, b_, c_ = splats.conic[j]
        power = -0.5 * (a_ * dx * dx + c_ * dy * dy) - b_ * dx * dy
        alpha = np.minimum(splats.opacity[j] * np.exp(power), ALPHA_MAX)
        use = active & (alpha >= ALPHA_MIN)
        test_T = T * (1.0 - alpha)
        stop = use & (test_T < T_MIN)
        active &= ~stop
        use &= ~stop
        C[use] += splats.colour[j] * (alpha[use] * T[use])[:, None]
        T = np.where(use, test_T, T)
    C += T[:, None] * bg
    return ImageBuffer(rgb=C.reshape(height, width, 3), transmittance=T.reshape(height, width))


def set_workers(n: int):
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
