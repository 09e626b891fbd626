"""Vector-matrix factorised illumination grid.

The grid stores, for each of ``r_components`` components, one line factor per
axis and one plane factor for the complementary axis pair.  A query point is
mapped to ``3 * r_components`` scalars (line value times plane value, ordered
x, y, z per component) which a basis matrix projects to ``feature_dim``
illumination features.

Grid nodes sit on the box corners (``resolution`` nodes per axis, spacing
``extent / (resolution - 1)``).  Points outside the box are clamped onto it.
A point lying exactly on an interior node is interpolated in the cell below
that node, which fixes the one-sided derivative reported by
:func:`eval_field_backward`.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .errors import InvalidFieldError

FACTOR_NAMES = ("vec_x", "vec_y", "vec_z", "mat_yz", "mat_xz", "mat_xy")

# (line axis, plane axes) for the three terms of every component
_TERMS = ((0, (1, 2)), (1, (0, 2)), (2, (0, 1)))


@dataclass
class IlluminationField:
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    vec_x: np.ndarray  # (R, n)
    vec_y: np.ndarray
    vec_z: np.ndarray
    mat_yz: np.ndarray  # (R, n, n) indexed [r, y, z]
    mat_xz: np.ndarray  # [r, x, z]
    mat_xy: np.ndarray  # [r, x, y]
    basis: np.ndarray  # (3R, P)

    @property
    def resolution(self) -> int:
        return self.vec_x.shape[1]

    @property
    def r_components(self) -> int:
        return self.vec_x.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def vectors(self):
        return (self.vec_x, self.vec_y, self.vec_z)

    @property
    def matrices(self):
        return (self.mat_yz, self.mat_xz, self.mat_xy)

    def factors(self) -> dict:
        return {name: getattr(self, name) for name in FACTOR_NAMES}

    def copy(self) -> "IlluminationField":
        return replace(self, **{k: np.array(v, copy=True) for k, v in self.arrays().items()})

    def arrays(self) -> dict:
        out = {"bbox_min": self.bbox_min, "bbox_max": self.bbox_max}
        out.update(self.factors())
        out["basis"] = self.basis
        return out

    def astype(self, dtype) -> "IlluminationField":
        return replace(self, **{k: np.asarray(v, dtype=dtype) for k, v in self.arrays().items()})

    def validate(self) -> None:
        lo = np.asarray(self.bbox_min, dtype=np.float64)
        hi = np.asarray(self.bbox_max, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise InvalidFieldError("bbox corners must be 3-vectors")
        if not np.all(hi > lo):
            raise InvalidFieldError(f"degenerate bbox: min={lo}, max={hi}")
        R, n = self.vec_x.shape
        if n < 2:
            raise InvalidFieldError("resolution must be at least 2")
        for v in self.vectors:
            if v.shape != (R, n):
                raise InvalidFieldError(f"line factor shape {v.shape}, expected {(R, n)}")
        for m in self.matrices:
            if m.shape != (R, n, n):
                raise InvalidFieldError(f"plane factor shape {m.shape}, expected {(R, n, n)}")
        if self.basis.ndim != 2 or self.basis.shape[0] != 3 * R:
            raise InvalidFieldError(f"basis shape {self.basis.shape}, expected ({3 * R}, P)")
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise InvalidFieldError(f"non-finite values in {name}")


@dataclass
class FieldGrads:
    vec_x: np.ndarray
    vec_y: np.ndarray
    vec_z: np.ndarray
    mat_yz: np.ndarray
    mat_xz: np.ndarray
    mat_xy: np.ndarray
    basis: np.ndarray
    points: np.ndarray = dc_field(default=None)

    def factors(self) -> dict:
        return {name: getattr(self, name) for name in FACTOR_NAMES}


def init_field(bbox_min, bbox_max, resolution=32, r_components=16, feature_dim=24,
               rng=None, amplitude=0.1, dtype=np.float32) -> IlluminationField:
    """Random field: factors ~ U(-amplitude, amplitude), basis ~ U(-0.1, 0.1)."""
    rng = np.random.default_rng() if rng is None else rng
    R, n = r_components, resolution

    def uni(*shape):
        return rng.uniform(-amplitude, amplitude, size=shape).astype(dtype)

    f = IlluminationField(
        bbox_min=np.asarray(bbox_min, dtype=dtype).copy(),
        bbox_max=np.asarray(bbox_max, dtype=dtype).copy(),
        vec_x=uni(R, n), vec_y=uni(R, n), vec_z=uni(R, n),
        mat_yz=uni(R, n, n), mat_xz=uni(R, n, n), mat_xy=uni(R, n, n),
        basis=rng.uniform(-0.1, 0.1, size=(3 * R, feature_dim)).astype(dtype),
    )
    f.validate()
    return f


def _stencil(points, lo, hi, n):
    """Per-axis cell index, in-cell weight, and d(grid coord)/d(world coord)."""
    scale = (n - 1) / (hi - lo)
    clamped = np.clip(points, lo, hi)
    u = (clamped - lo) * scale
    i0 = np.clip(np.ceil(u) - 1, 0, n - 2).astype(np.int64)
    w = u - i0
    inside = (points >= lo) & (points <= hi)
    du = np.where(inside, scale, 0.0)
    return i0, w, du


def _lerp(vec, i, w):
    # vec (R, n); i, w (N,) -> (R, N)
    return vec[:, i] * (1.0 - w) + vec[:, i + 1] * w


def _bilerp(mat, ia, wa, ib, wb):
    m00 = mat[:, ia, ib]
    m10 = mat[:, ia + 1, ib]
    m01 = mat[:, ia, ib + 1]
    m11 = mat[:, ia + 1, ib + 1]
    return ((1 - wa) * (1 - wb) * m00 + wa * (1 - wb) * m10
            + (1 - wa) * wb * m01 + wa * wb * m11)


def _prepare(points, field):
    field.validate()
    pts = np.asarray(points)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 3:
        raise InvalidFieldError(f"points must have trailing dimension 3, got {pts.shape}")
    lo = np.asarray(field.bbox_min, dtype=pts.dtype if pts.dtype.kind == "f" else np.float64)
    hi = np.asarray(field.bbox_max, dtype=lo.dtype)
    st = [_stencil(pts[:, a], lo[a], hi[a], field.resolution) for a in range(3)]
    return single, st


def component_scalars(points, field):
    """Line-times-plane values, shape (N, 3R) ordered [x_0, y_0, z_0, x_1, ...]."""
    _, st = _prepare(points, field)
    terms = []
    for (ax, (pa, pb)), vec, mat in zip(_TERMS, field.vectors, field.matrices):
        line = _lerp(vec, st[ax][0], st[ax][1])
        plane = _bilerp(mat, st[pa][0], st[pa][1], st[pb][0], st[pb][1])
        terms.append(line * plane)
    return np.stack(terms, axis=-1).transpose(1, 0, 2).reshape(len(st[0][0]), -1)


def eval_field(points, field: IlluminationField) -> np.ndarray:
    """Illumination features at ``points``: (3,) -> (P,), (N, 3) -> (N, P)."""
    single = np.asarray(points).ndim == 1
    feats = component_scalars(points, field) @ field.basis
    return feats[0] if single else feats


def eval_field_backward(points, field: IlluminationField, upstream) -> FieldGrads:
    """Gradients of ``sum(upstream * eval_field(points, field))``.

    Only the two line entries and four plane entries touched by each point's
    stencil receive gradient.  Point gradients are zero along clamped axes.
    """
    single, st = _prepare(points, field)
    g = np.atleast_2d(np.asarray(upstream))
    N = len(st[0][0])
    R, n = field.r_components, field.resolution
    dtype = np.result_type(g.dtype, field.basis.dtype, st[0][1].dtype)

    lines, planes = [], []
    for (ax, (pa, pb)), vec, mat in zip(_TERMS, field.vectors, field.matrices):
        lines.append(_lerp(vec, st[ax][0], st[ax][1]))
        planes.append(_bilerp(mat, st[pa][0], st[pa][1], st[pb][0], st[pb][1]))
    scalars = np.stack([l * p for l, p in zip(lines, planes)], axis=-1)  # (R, N, 3)
    scalars = scalars.transpose(1, 0, 2).reshape(N, 3 * R)

    d_basis = scalars.T @ g
    d_scalars = (g @ field.basis.T).reshape(N, R, 3).transpose(2, 1, 0)  # (3, R, N)

    r_idx = np.arange(R)[:, None]
    grads_vec, grads_mat = [], []
    d_points = np.zeros((N, 3), dtype=dtype)
    for k, ((ax, (pa, pb)), vec, mat) in enumerate(zip(_TERMS, field.vectors, field.matrices)):
        ds = d_scalars[k]
        d_line = ds * planes[k]
        d_plane = ds * lines[k]

        i, w, du = st[ax]
        idx = np.concatenate([(r_idx * n + i).ravel(), (r_idx * n + i + 1).ravel()])
        wts = np.concatenate([(d_line * (1 - w)).ravel(), (d_line * w).ravel()])
        grads_vec.append(np.bincount(idx, wts, minlength=R * n).reshape(R, n).astype(dtype))
        slope = vec[:, i + 1] - vec[:, i]
        d_points[:, ax] += (d_line * slope).sum(axis=0) * du

        ia, wa, dua = st[pa]
        ib, wb, dub = st[pb]
        base = r_idx * n * n
        corners = (
            (ia, ib, (1 - wa) * (1 - wb)),
            (ia + 1, ib, wa * (1 - wb)),
            (ia, ib + 1, (1 - wa) * wb),
            (ia + 1, ib + 1, wa * wb),
        )
        idx = np.concatenate([(base + ca * n + cb).ravel() for ca, cb, _ in corners])
        wts = np.concatenate([(d_plane * cw).ravel() for _, _, cw in corners])
        grads_mat.append(np.bincount(idx, wts, minlength=R * n * n).reshape(R, n, n).astype(dtype))
        m00 = mat[:, ia, ib]
        m10 = mat[:, ia + 1, ib]
        m01 = mat[:, ia, ib + 1]
        m11 = mat[:, ia + 1, ib + 1]
        dpa = (1 - wb) * (m10 - m00) + wb * (m11 - m01)
        dpb = (1 - wa) * (m01 - m00) + wa * (m11 - m10)
        d_points[:, pa] += (d_plane * dpa).sum(axis=0) * dua
        d_points[:, pb] += (d_plane * dpb).sum(axis=0) * dub

    return FieldGrads(
        vec_x=grads_vec[0], vec_y=grads_vec[1], vec_z=grads_vec[2],
        mat_yz=grads_mat[0], mat_xz=grads_mat[1], mat_xy=grads_mat[2],
        basis=d_basis, points=d_points[0] if single else d_points,
    )


def shrink_resample(field: IlluminationField, new_min, new_max, atol=1e-6) -> IlluminationField:
    """Resample the field onto a smaller box with the same node count.

    Line factors are re-read at the new node coordinates by linear
    interpolation and plane factors by bilinear interpolation; the basis is
    kept.  The result is the old field restricted to the new nodes, so the new
    field equals trilinear interpolation of the old dense grid's values there.
    """
    field.validate()
    old_lo = np.asarray(field.bbox_min, dtype=np.float64)
    old_hi = np.asarray(field.bbox_max, dtype=np.float64)
    lo = np.asarray(new_min, dtype=np.float64)
    hi = np.asarray(new_max, dtype=np.float64)
    if not np.all(hi > lo):
        raise InvalidFieldError(f"degenerate bbox: min={lo}, max={hi}")
    if np.any(lo < old_lo - atol) or np.any(hi > old_hi + atol):
        raise InvalidFieldError(
            f"new bbox [{lo}, {hi}] is not contained in [{old_lo}, {old_hi}]"
        )
    lo = np.maximum(lo, old_lo)
    hi = np.minimum(hi, old_hi)
    n = field.resolution
    nodes = [np.linspace(lo[a], hi[a], n) for a in range(3)]
    st = [_stencil(nodes[a], old_lo[a], old_hi[a], n) for a in range(3)]
    dtype = field.vec_x.dtype

    new_vecs = [_lerp(v.astype(np.float64), st[a][0], st[a][1]).astype(dtype)
                for a, v in enumerate(field.vectors)]
    new_mats = []
    for (_, (pa, pb)), mat in zip(_TERMS, field.matrices):
        ia, wa, _ = st[pa]
        ib, wb, _ = st[pb]
        m = mat.astype(np.float64)
        A, B = ia[:, None], ib[None, :]
        WA, WB = wa[:, None], wb[None, :]
        res = ((1 - WA) * (1 - WB) * m[:, A, B] + WA * (1 - WB) * m[:, A + 1, B]
               + (1 - WA) * WB * m[:, A, B + 1] + WA * WB * m[:, A + 1, B + 1])
        new_mats.append(res.astype(dtype))

    bdt = field.bbox_min.dtype
    return IlluminationField(
        bbox_min=lo.astype(bdt), bbox_max=hi.astype(bdt),
        vec_x=new_vecs[0], vec_y=new_vecs[1], vec_z=new_vecs[2],
        mat_yz=new_mats[0], mat_xz=new_mats[1], mat_xy=new_mats[2],
        basis=field.basis.copy(),
    )
