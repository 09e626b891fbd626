"""Optimisation loop: diffuse warm-up, specular phase, density control, grid shrink."""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from .errors import NumericalError
from .field import FACTOR_NAMES, IlluminationField, init_field, shrink_resample
from .gaussians import GaussianSet, logit, quat_to_rotmat, random_gaussians
from .losses import LossConfig, l1_loss, psnr, total_loss
from .render import render, render_backward
from .shader import NeuralShader, init_shader

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-15
SPLIT_CHILDREN = 2
SPLIT_SCALE_DIVISOR = 1.6
RESET_OPACITY = 0.01
SHRINK_PADDING = 0.05


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named subsystem ("init", "views", "densify", ...)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


@dataclass
class LearningRates:
    mean: float = 1.6e-4
    mean_final: float = 1.6e-6
    opacity_logit: float = 0.05
    log_scale: float = 5e-3
    rotation: float = 1e-3
    appearance: float = 2.5e-3  # diffuse, BRDF features, tint, roughness
    field: float = 2e-2
    basis: float = 1e-3
    shader: float = 1e-3


@dataclass
class TrainSchedule:
    total_iters: int = 3000
    specular_start: int | None = None  # default: 10% of total_iters
    shrink_at: int | None = None  # default: total_iters // 2
    densify_interval: int = 100
    densify_from: int = 500
    densify_until: int | None = None  # default: total_iters // 2
    opacity_reset_every: int = 3000
    grad_threshold: float = 2e-4
    prune_opacity: float = 0.005
    percent_dense: float = 0.01
    lr: LearningRates = dc_field(default_factory=LearningRates)

    def __post_init__(self):
        if self.specular_start is None:
            self.specular_start = round(0.1 * self.total_iters)
        if self.shrink_at is None:
            self.shrink_at = self.total_iters // 2
        if self.densify_until is None:
            self.densify_until = self.total_iters // 2
        if not 0 <= self.specular_start <= self.total_iters:
            raise ValueError("specular_start must lie within [0, total_iters]")

    def specular_on(self, iteration):
        return iteration > self.specular_start

    def in_densify_window(self, iteration):
        return self.densify_from < iteration < self.densify_until

    def mean_lr(self, iteration, extent):
        t = np.clip(iteration / max(self.total_iters, 1), 0.0, 1.0)
        lr0, lr1 = self.lr.mean * extent, self.lr.mean_final * extent
        if lr0 <= 0 or lr1 <= 0:
            return (1 - t) * lr0 + t * lr1
        return float(np.exp((1 - t) * np.log(lr0) + t * np.log(lr1)))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_update(param, grad, state: AdamState, lr, betas=ADAM_BETAS, eps=ADAM_EPS):
    """One bias-corrected Adam step; returns the new parameter (same dtype)."""
    b1, b2 = betas
    g = np.asarray(grad, dtype=np.float64)
    state.step += 1
    state.m = b1 * state.m + (1 - b1) * g
    state.v = b2 * state.v + (1 - b2) * g * g
    m_hat = state.m / (1 - b1 ** state.step)
    v_hat = state.v / (1 - b2 ** state.step)
    new = np.asarray(param, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new.astype(np.asarray(param).dtype)


def _zeros_state(arr):
    return AdamState(np.zeros(arr.shape), np.zeros(arr.shape))


@dataclass
class TrainState:
    moments: dict  # "g/<name>", "f/<name>", "s/<name>" -> AdamState
    iteration: int = 0
    grad_accum: np.ndarray = None
    grad_count: np.ndarray = None

    @classmethod
    def create(cls, gaussians, field, shader):
        moments = {f"g/{k}": _zeros_state(v) for k, v in gaussians.arrays().items()}
        moments.update({f"f/{k}": _zeros_state(v) for k, v in field.factors().items()})
        moments["f/basis"] = _zeros_state(field.basis)
        moments.update({f"s/{k}": _zeros_state(v) for k, v in shader.params().items()})
        n = len(gaussians)
        return cls(moments=moments, grad_accum=np.zeros(n), grad_count=np.zeros(n))

    def gaussian_keys(self):
        return [k for k in self.moments if k.startswith("g/")]

    def remap_gaussians(self, keep, n_new):
        """Keep moment rows ``keep`` and append ``n_new`` zero rows."""
        for key in self.gaussian_keys():
            st = self.moments[key]
            tail = (n_new,) + st.m.shape[1:]
            st.m = np.concatenate([st.m[keep], np.zeros(tail)])
            st.v = np.concatenate([st.v[keep], np.zeros(tail)])
        self.grad_accum = np.zeros(len(keep) + n_new)
        self.grad_count = np.zeros(len(keep) + n_new)


@dataclass
class TrainConfig:
    variant: str = "full"
    n_init: int = 1000
    init_roughness: float = 0.5
    grid_res: int = 32
    r_components: int = 16
    feature_dim: int = 24
    seed: int = 0
    workers: int = 1
    freeze_field_in_warmup: bool = True
    schedule: TrainSchedule = dc_field(default_factory=TrainSchedule)
    loss: LossConfig = dc_field(default_factory=LossConfig)


# -- density control -------------------------------------------------------------

def densify_and_prune(gaussians: GaussianSet, state: TrainState, schedule: TrainSchedule,
                      extent: float, rng: np.random.Generator) -> GaussianSet:
    """Clone small / split large high-gradient Gaussians, then prune transparent ones.

    New Gaussians start with zero optimiser moments; the densification
    statistics are reset.
    """
    n = len(gaussians)
    grads = np.where(state.grad_count > 0, state.grad_accum / np.maximum(state.grad_count, 1), 0.0)
    selected = grads > schedule.grad_threshold
    big = np.max(gaussians.scale, axis=1) > schedule.percent_dense * extent
    clone_idx = np.flatnonzero(selected & ~big)
    split_idx = np.flatnonzero(selected & big)

    clones = gaussians.select(clone_idx)

    parents = gaussians.select(np.repeat(split_idx, SPLIT_CHILDREN))
    if len(parents):
        std = parents.scale.astype(np.float64)
        offsets = rng.normal(size=std.shape) * std
        R = quat_to_rotmat(parents.rotation / np.linalg.norm(parents.rotation, axis=1, keepdims=True))
        parents.mean = (parents.mean + np.einsum("nij,nj->ni", R, offsets)).astype(gaussians.mean.dtype)
        parents.log_scale = np.log(std / SPLIT_SCALE_DIVISOR).astype(gaussians.log_scale.dtype)

    keep = np.setdiff1d(np.arange(n), split_idx)
    out = gaussians.select(keep).concat(clones).concat(parents)
    state.remap_gaussians(keep, len(clones) + len(parents))

    alive = np.flatnonzero(out.opacity >= schedule.prune_opacity)
    if len(alive) < len(out):
        out = out.select(alive)
        state.remap_gaussians(alive, 0)
    return out


def reset_opacity(gaussians: GaussianSet, state: TrainState | None = None) -> GaussianSet:
    """Cap every opacity at 0.01; opacity moments restart from zero."""
    out = gaussians.copy()
    cap = logit(RESET_OPACITY)
    out.opacity_logit = np.minimum(out.opacity_logit, cap).astype(gaussians.opacity_logit.dtype)
    if state is not None:
        state.moments["g/opacity_logit"] = _zeros_state(out.opacity_logit)
    return out


def fitted_bbox(gaussians: GaussianSet, field: IlluminationField):
    """Bounds of the Gaussian means padded by 5% of their extent, clipped to the field box."""
    old_lo = np.asarray(field.bbox_min, dtype=np.float64)
    old_hi = np.asarray(field.bbox_max, dtype=np.float64)
    if len(gaussians) == 0:
        return old_lo, old_hi
    mean = gaussians.mean.astype(np.float64)
    lo, hi = mean.min(axis=0), mean.max(axis=0)
    span = hi - lo
    pad = SHRINK_PADDING * np.where(span > 0, span, old_hi - old_lo)
    new_lo = np.maximum(lo - pad, old_lo)
    new_hi = np.minimum(hi + pad, old_hi)
    # a box collapsed by clipping (means outside the grid) keeps the old bounds
    bad = new_hi <= new_lo
    return np.where(bad, old_lo, new_lo), np.where(bad, old_hi, new_hi)


def shrink_grid_event(field: IlluminationField, gaussians: GaussianSet,
                      state: TrainState | None = None) -> IlluminationField:
    lo, hi = fitted_bbox(gaussians, field)
    new = shrink_resample(field, lo, hi)
    if state is not None:
        for name in FACTOR_NAMES:
            state.moments[f"f/{name}"] = _zeros_state(getattr(new, name))
    return new


# -- training ----------------------------------------------------------------------

@dataclass
class Model:
    gaussians: GaussianSet
    field: IlluminationField
    shader: NeuralShader


def init_model(config: TrainConfig, scene_box) -> Model:
    rng = rng_stream(config.seed, "init")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in scene_box)
    gaussians = random_gaussians(config.n_init, rng, lo, hi, init_roughness=config.init_roughness)
    field = init_field(lo, hi, config.grid_res, config.r_components, config.feature_dim, rng=rng)
    shader = init_shader(config.variant, config.feature_dim, rng=rng)
    return Model(gaussians, field, shader)


def _apply(arr, grad, state, lr):
    return adam_update(arr, grad, state, lr) if lr > 0 else arr


def train_step(model: Model, view, target, config: TrainConfig, state: TrainState,
               extent=1.0, background=(1.0, 1.0, 1.0), view_id=None, rng=None) -> dict:
    """One optimisation step on one view; returns a loss record.

    Post-step events (density control, opacity reset, grid shrink) fire here
    according to the schedule.  ``model`` is updated in place.
    """
    sch = config.schedule
    it = state.iteration + 1
    specular = sch.specular_on(it)
    out = render(model.gaussians, model.field, model.shader, view, background, specular=specular)
    loss, d_img = total_loss(out.rgb, target, config.loss)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss at iteration {it} on view {view_id}", view_id=view_id)
    grads = render_backward(out, d_img)
    for part in ([grads.gaussians] + [grads.shader or {}]):
        for key, g in part.items():
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient {key} at iteration {it} on view {view_id}",
                                     view_id=view_id)

    if it < sch.densify_until:
        state.grad_accum[out.visible] += grads.mean2d_norm[out.visible]
        state.grad_count[out.visible] += 1

    lr = sch.lr
    g = model.gaussians
    group_lr = {"mean": sch.mean_lr(it, extent), "rotation": lr.rotation, "log_scale": lr.log_scale,
                "opacity_logit": lr.opacity_logit, "diffuse_raw": lr.appearance,
                "brdf_features": lr.appearance, "base_colour_raw": lr.appearance,
                "roughness_raw": lr.appearance}
    for name, glr in group_lr.items():
        if name in ("brdf_features", "base_colour_raw", "roughness_raw") and not specular:
            continue
        setattr(g, name, _apply(getattr(g, name), grads.gaussians[name], state.moments[f"g/{name}"], glr))
    if lr.rotation > 0:
        g.normalize_rotations()

    if specular and grads.shader is not None:
        params = model.shader.params()
        for name, arr in params.items():
            params[name] = _apply(arr, grads.shader[name], state.moments[f"s/{name}"], lr.shader)
        model.shader.set_params(params)
    if specular or not config.freeze_field_in_warmup:
        if grads.field is not None:
            f = model.field
            for name in FACTOR_NAMES:
                setattr(f, name, _apply(getattr(f, name), getattr(grads.field, name),
                                        state.moments[f"f/{name}"], lr.field))
            f.basis = _apply(f.basis, grads.field.basis, state.moments["f/basis"], lr.basis)

    state.iteration = it
    events = []
    if it < sch.densify_until:
        if it > sch.densify_from and it % sch.densify_interval == 0:
            model.gaussians = densify_and_prune(model.gaussians, state, sch, extent,
                                                rng if rng is not None else rng_stream(config.seed, "densify"))
            events.append("densify")
        if sch.opacity_reset_every > 0 and it % sch.opacity_reset_every == 0:
            model.gaussians = reset_opacity(model.gaussians, state)
            events.append("reset_opacity")
    if it == sch.shrink_at:
        model.field = shrink_grid_event(model.field, model.gaussians, state)
        events.append("shrink")

    l1, _ = l1_loss(out.rgb, target)
    shader_norm = 0.0 if grads.shader is None else float(
        np.sqrt(sum(np.sum(np.square(v)) for v in grads.shader.values())))
    f = model.field
    volume = float(np.prod(np.asarray(f.bbox_max, np.float64) - np.asarray(f.bbox_min, np.float64)))
    return {"iteration": it, "view": view_id, "loss": loss, "l1": l1, "psnr": psnr(out.rgb, target),
            "n_gaussians": len(model.gaussians), "specular": bool(specular), "events": events,
            "shader_grad_norm": shader_norm, "grid_volume": volume}


class Trainer:
    """Drives ``train_step`` over a dataset with per-epoch shuffled views."""

    def __init__(self, dataset, config: TrainConfig, model: Model | None = None):
        from .rasterizer import set_workers

        set_workers(config.workers)
        self.dataset = dataset
        self.config = config
        self.model = model or init_model(config, dataset.scene_box)
        self.state = TrainState.create(self.model.gaussians, self.model.field, self.model.shader)
        self.view_rng = rng_stream(config.seed, "views")
        self.densify_rng = rng_stream(config.seed, "densify")
        self._queue = []
        self.log = []

    def next_view(self):
        if not self._queue:
            self._queue = list(self.view_rng.permutation(len(self.dataset.train)))
        return int(self._queue.pop(0))

    def step(self):
        vid = self.next_view()
        view, target = self.dataset.train[vid]
        rec = train_step(self.model, view, target, self.config, self.state,
                         extent=self.dataset.extent, background=self.dataset.background,
                         view_id=vid, rng=self.densify_rng)
        self.log.append(rec)
        return rec

    def run(self, iters=None, callback=None):
        total = self.config.schedule.total_iters if iters is None else iters
        while self.state.iteration < total:
            rec = self.step()
            if callback is not None:
                callback(rec, self)
        return self.log


def evaluate(model: Model, pairs, background=(1.0, 1.0, 1.0), specular=True, cfg=None):
    """Per-view PSNR / SSIM / loss records."""
    from .losses import ssim

    records = []
    for i, (view, target) in enumerate(pairs):
        img = render(model.gaussians, model.field, model.shader, view, background, specular).rgb
        if img.shape != np.asarray(target).shape:
            from .errors import InvalidInputError
            raise InvalidInputError(f"view {i}: render {img.shape} vs target {np.asarray(target).shape}")
        records.append({"view": i, "psnr": psnr(img, target), "ssim": ssim(img, target),
                        "loss": total_loss(img, target, cfg)[0]})
    return records


def records_to_jsonl(records) -> str:
    return "".join(json.dumps(r) + "\n" for r in records)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)


__all__ = [
    "AdamState", "LearningRates", "Model", "TrainConfig", "TrainSchedule", "TrainState", "Trainer",
    "adam_update", "densify_and_prune", "evaluate", "init_model", "reset_opacity", "rng_stream",
    "shrink_grid_event", "train_step",
]
