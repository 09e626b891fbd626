"""Datasets, images and checkpoints.

Checkpoint layout (little-endian throughout)::

    header   "ILSP", u32 version, u32 iteration, u32 n_gaussians, u32 variant code,
             u32 n_shader_layers, u32 * (n_layers + 1) layer widths
    gauss    f32 arrays in GaussianSet field order (mean, rotation, log_scale, ...)
    field    f32 bbox_min[3], f32 bbox_max[3], u32 resolution, u32 R, u32 P,
             f32 vec_x, vec_y, vec_z, mat_yz, mat_xz, mat_xy, basis
    shader   f32 w0, b0, w1, b1, ... (weights stored (fan_in, fan_out), row-major)
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CheckpointFormatError, CheckpointTruncatedError, DatasetError
from .field import FACTOR_NAMES, IlluminationField
from .gaussians import N_BRDF, CameraView, GaussianSet, build_covariance, project_gaussians
from .rasterizer import SplatList, conic_from_cov2d, rasterize_reference
from .shader import VARIANTS, NeuralShader

MAGIC = b"ILSP"
VERSION = 1


@dataclass
class Dataset:
    train: list  # [(CameraView, (H, W, 3) float32 image)]
    test: list = dc_field(default_factory=list)
    extent: float = 1.0  # radius of the camera rig, used to scale position learning rates
    scene_box: tuple = ((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5))
    background: tuple = (1.0, 1.0, 1.0)

    def split(self, name):
        if name not in ("train", "test"):
            raise DatasetError(f"unknown split {name!r}")
        return getattr(self, name)


# -- cameras -----------------------------------------------------------------

# Blender cameras already look down -z with +y up, which is the internal
# convention; the conversion is kept explicit so other conventions slot in.
_BLENDER_TO_INTERNAL = np.eye(4)


def camera_from_c2w(c2w, fx, fy, cx, cy, width, height, near=0.01, far=100.0, rigid_tol=1e-4):
    c2w = np.asarray(c2w, dtype=np.float64) @ _BLENDER_TO_INTERNAL
    R = c2w[:3, :3]
    if not np.allclose(R.T @ R, np.eye(3), atol=rigid_tol) or np.linalg.det(R) <= 0:
        raise DatasetError("camera-to-world transform is not a rigid rotation")
    w2c = np.eye(4)
    w2c[:3, :3] = R.T
    w2c[:3, 3] = -R.T @ c2w[:3, 3]
    return CameraView(w2c, fx, fy, cx, cy, width, height, near, far)


def c2w_from_camera(view: CameraView):
    R = view.rotation
    c2w = np.eye(4)
    c2w[:3, :3] = R.T
    c2w[:3, 3] = -R.T @ view.translation
    return c2w @ np.linalg.inv(_BLENDER_TO_INTERNAL)


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)):
    """Camera-to-world matrix of a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(fwd, up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    c2w = np.eye(4)
    c2w[:3, 0] = right
    c2w[:3, 1] = true_up
    c2w[:3, 2] = -fwd
    c2w[:3, 3] = eye
    return c2w


def focal_from_fov(fov_x, width):
    return width / (2.0 * np.tan(0.5 * fov_x))


def camera_extent(views):
    centers = np.stack([v.center for v in views])
    return 1.1 * float(np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1)))


# -- images ------------------------------------------------------------------

def composite_rgba(rgba_u8, background=(1.0, 1.0, 1.0)):
    arr = np.asarray(rgba_u8, dtype=np.float32) / 255.0
    if arr.shape[-1] == 3:
        return arr
    rgb, a = arr[..., :3], arr[..., 3:4]
    return (rgb * a + np.asarray(background, dtype=np.float32) * (1.0 - a)).astype(np.float32)


def load_image(path, background=(1.0, 1.0, 1.0), size=None):
    try:
        img = Image.open(path)
        img.load()
    except OSError as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    img = img.convert("RGBA") if img.mode in ("RGBA", "LA", "P") else img.convert("RGB")
    if size is not None and img.size != size:
        img = img.resize(size, Image.BOX)
    return composite_rgba(np.asarray(img), background)


def to_uint8(rgb):
    return np.round(np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, rgb):
    Image.fromarray(to_uint8(rgb), mode="RGB").save(path)


# -- NeRF-synthetic ------------------------------------------------------------

def load_nerf_synthetic(root, split="train", background=(1.0, 1.0, 1.0), downscale=1) -> Dataset:
    """Load ``transforms_<split>.json`` and its frames from ``root``."""
    root = Path(root)
    manifest = root / f"transforms_{split}.json"
    if not manifest.is_file():
        raise DatasetError(f"missing camera manifest {manifest}")
    try:
        meta = json.loads(manifest.read_text())
        fov_x = float(meta["camera_angle_x"])
        frames = meta["frames"]
    except (KeyError, ValueError, TypeError) as exc:
        raise DatasetError(f"malformed camera manifest {manifest}: {exc}") from exc

    pairs = []
    shape = None
    for frame in frames:
        rel = frame["file_path"]
        path = root / rel
        if path.suffix == "":
            path = path.with_suffix(".png")
        if not path.is_file():
            raise DatasetError(f"missing image {path}")
        with Image.open(path) as probe:
            full_w, full_h = probe.size
        w, h = max(1, full_w // downscale), max(1, full_h // downscale)
        if shape is None:
            shape = (h, w)
        elif shape != (h, w):
            raise DatasetError(f"image {path} is {w}x{h}, expected {shape[1]}x{shape[0]}")
        img = load_image(path, background, size=(w, h))
        fx = focal_from_fov(fov_x, w)
        try:
            view = camera_from_c2w(frame["transform_matrix"], fx, fx, 0.5 * w, 0.5 * h, w, h)
        except DatasetError as exc:
            raise DatasetError(f"{manifest} ({rel}): {exc}") from exc
        pairs.append((view, img))
    ds = Dataset(train=[], test=[], background=tuple(background))
    setattr(ds, split, pairs)
    if pairs:
        ds.extent = camera_extent([v for v, _ in pairs])
    return ds


def load_dataset(root, background=(1.0, 1.0, 1.0), downscale=1) -> Dataset:
    """Train split plus test split when present."""
    ds = load_nerf_synthetic(root, "train", background, downscale)
    if (Path(root) / "transforms_test.json").is_file():
        ds.test = load_nerf_synthetic(root, "test", background, downscale).test
    return ds


# -- probe scene ---------------------------------------------------------------

@dataclass
class ProbeTruth:
    """Ground-truth Gaussians with colour = base + tint * max(0, view_dir . axis) ** exponent."""

    mean: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity: np.ndarray
    base: np.ndarray
    tint: np.ndarray
    axis: np.ndarray
    exponent: np.ndarray

    def __len__(self):
        return len(self.mean)

    def colours(self, view_dir):
        lobe = np.maximum(np.sum(view_dir * self.axis, axis=-1), 0.0) ** self.exponent
        return np.clip(self.base + self.tint * lobe[:, None], 0.0, 1.0)

    def render(self, view: CameraView, background):
        if len(self) == 0:
            return rasterize_reference(SplatList(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros((0, 3)),
                                                 np.zeros(0), np.zeros(0)), view, background).rgb
        cov = build_covariance(self.rotation, self.log_scale)
        proj = project_gaussians(self.mean, cov, view)
        v = proj.valid
        splats = SplatList(proj.mean2d[v], conic_from_cov2d(proj.cov2d[v]),
                           self.colours(proj.view_dir)[v], self.opacity[v], proj.view_depth[v],
                           source=np.flatnonzero(v))
        return rasterize_reference(splats, view, background).rgb


def _orbit_views(dirs, radius, fov, res):
    f = focal_from_fov(fov, res)
    return [camera_from_c2w(look_at(radius * d), f, f, 0.5 * res, 0.5 * res, res, res)
            for d in dirs]


def _sphere_dirs(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _fibonacci_dirs(n, offset=0.0):
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i + offset
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def probe_truth(seed=0, n_gaussians=200, radius=0.7, specular=0.6):
    """Flat Gaussians tiling a sphere, each with its own specular lobe.

    Lobe axes are per-Gaussian random perturbations of the surface normal,
    exponents span broad to sharp lobes, and tints are random colours, so the
    specular response varies from Gaussian to Gaussian.
    """
    rng = np.random.default_rng(seed)
    n = n_gaussians
    normals = _fibonacci_dirs(n) if n else np.zeros((0, 3))
    mean = radius * normals
    # rotation taking +z to the normal, so the thin (z) axis is the normal
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z, normals)
    s = np.linalg.norm(axis, axis=1)
    c = normals @ z
    half = np.arctan2(s, c) / 2
    axis = np.where(s[:, None] > 1e-9, axis / np.maximum(s, 1e-12)[:, None], np.array([1.0, 0, 0]))
    rotation = np.concatenate([np.cos(half)[:, None], np.sin(half)[:, None] * axis], axis=1)
    spacing = radius * np.sqrt(4 * np.pi / max(n, 1))
    log_scale = np.log(np.column_stack([np.full(n, 0.55 * spacing), np.full(n, 0.55 * spacing),
                                        np.full(n, 0.08 * spacing)]))
    lobe_axis = normals + 0.6 * rng.normal(size=(n, 3))
    lobe_axis /= np.maximum(np.linalg.norm(lobe_axis, axis=1, keepdims=True), 1e-12)
    base = rng.uniform(0.1, 0.4, size=(n, 3))
    tint = specular * rng.uniform(0.3, 1.0, size=(n, 3))
    return ProbeTruth(mean=mean, rotation=rotation, log_scale=log_scale,
                      opacity=np.full(n, 0.95), base=base, tint=tint, axis=lobe_axis,
                      exponent=np.exp(rng.uniform(np.log(2.0), np.log(40.0), size=n)))


def generate_probe_scene(seed=0, n_gaussians=200, n_train=20, n_test=10, resolution=64,
                         background=(1.0, 1.0, 1.0), camera_radius=3.0, fov=0.75, specular=0.6):
    """Synthetic dataset with known, strongly view-dependent appearance.

    Returns ``(Dataset, ProbeTruth)``.  Train cameras sit on a Fibonacci
    sphere; test cameras are drawn at random directions.
    """
    truth = probe_truth(seed, n_gaussians, specular=specular)
    rng = np.random.default_rng([seed, 1])
    train_views = _orbit_views(_fibonacci_dirs(n_train, offset=0.3), camera_radius, fov, resolution)
    test_views = _orbit_views(_sphere_dirs(rng, n_test), camera_radius, fov, resolution)
    bg = tuple(float(x) for x in background)
    ds = Dataset(
        train=[(v, truth.render(v, bg).astype(np.float32)) for v in train_views],
        test=[(v, truth.render(v, bg).astype(np.float32)) for v in test_views],
        extent=camera_extent(train_views),
        scene_box=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),
        background=bg,
    )
    return ds, truth


# -- checkpoints ---------------------------------------------------------------

class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(self.pos, n, len(self.buf) - self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals if count > 1 else vals[0]

    def f32(self, shape):
        count = int(np.prod(shape))
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)


def _f32(arr):
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def checkpoint_bytes(gaussians: GaussianSet, field: IlluminationField, shader: NeuralShader,
                     iteration=0) -> bytes:
    dims = [shader.weights[0].shape[0]] + [w.shape[1] for w in shader.weights]
    parts = [MAGIC, struct.pack("<5I", VERSION, iteration, len(gaussians),
                                VARIANTS.index(shader.variant), len(shader.weights)),
             struct.pack(f"<{len(dims)}I", *dims)]
    parts += [_f32(arr) for arr in gaussians.arrays().values()]
    parts += [_f32(field.bbox_min), _f32(field.bbox_max),
              struct.pack("<3I", field.resolution, field.r_components, field.feature_dim)]
    parts += [_f32(getattr(field, name)) for name in FACTOR_NAMES]
    parts.append(_f32(field.basis))
    for w, b in zip(shader.weights, shader.biases):
        parts += [_f32(w), _f32(b)]
    return b"".join(parts)


def save_checkpoint(path, gaussians, field, shader, iteration=0):
    data = checkpoint_bytes(gaussians, field, shader, iteration)
    Path(path).write_bytes(data)
    return len(data)


def parse_checkpoint(buf: bytes):
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError("not a checkpoint: bad magic")
    version, iteration, n, variant_code, n_layers = r.u32(5)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    if variant_code >= len(VARIANTS):
        raise CheckpointFormatError(f"unknown variant code {variant_code}")
    if n_layers < 1:
        raise CheckpointFormatError("shader must have at least one layer")
    dims = list(r.u32(n_layers + 1))

    widths = {"mean": 3, "rotation": 4, "log_scale": 3, "opacity_logit": None, "diffuse_raw": 3,
              "brdf_features": N_BRDF, "base_colour_raw": 3, "roughness_raw": None}
    garr = {name: r.f32((n,) if w is None else (n, w)) for name, w in widths.items()}
    gaussians = GaussianSet(**garr)

    bmin, bmax = r.f32((3,)), r.f32((3,))
    res, R, P = r.u32(3)
    fac = {}
    for name in FACTOR_NAMES:
        fac[name] = r.f32((R, res) if name.startswith("vec") else (R, res, res))
    field = IlluminationField(bbox_min=bmin, bbox_max=bmax, basis=r.f32((3 * R, P)), **fac)

    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(r.f32((fan_in, fan_out)))
        biases.append(r.f32((fan_out,)))
    if r.pos != len(buf):
        raise CheckpointFormatError(f"{len(buf) - r.pos} trailing bytes after checkpoint payload")
    shader = NeuralShader(variant=VARIANTS[variant_code], weights=weights, biases=biases)
    return gaussians, field, shader, iteration


def load_checkpoint(path):
    """Returns ``(GaussianSet, IlluminationField, NeuralShader, iteration)``."""
    return parse_checkpoint(Path(path).read_bytes())
