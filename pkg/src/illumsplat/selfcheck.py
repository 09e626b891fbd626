"""Small-size oracle suites behind ``illumsplat selfcheck``.

Each check compares an implementation against an independent reference
(dense tensor, brute-force compositor, central differences) and returns the
worst error seen.  ``inject`` names checks whose analytic backward output is
negated before comparison, so a test can confirm the harness catches it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import ide_backward, ide_encode
from .field import FACTOR_NAMES, eval_field, eval_field_backward, init_field
from .gaussians import (CameraView, build_covariance, covariance_backward, project_backward,
                        project_gaussians)
from .losses import dssim_loss
from .oracles import central_difference, dense_field_tensor, relative_error, trilinear_oracle
from .rasterizer import ALPHA_MIN, SplatList, rasterize, rasterize_backward, rasterize_reference
from .shader import init_shader, shader_backward, specular_color

GRAD_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tol)


def _flip(name, inject):
    return -1.0 if name in inject else 1.0


def _camera(width=32, height=32, f=40.0):
    w2c = np.eye(4)
    w2c[2, 3] = -4.0
    return CameraView(w2c, f, f, width / 2, height / 2, width, height)


def random_splats(rng, n, width=32, height=32):
    """Splats with well-conditioned conics scattered over (and a bit beyond) the image."""
    mean2d = rng.uniform(-4, [width + 4, height + 4], size=(n, 2))
    sx = rng.uniform(1.0, 5.0, n)
    sy = rng.uniform(1.0, 5.0, n)
    rho = rng.uniform(-0.6, 0.6, n)
    cov = np.stack([np.stack([sx * sx, rho * sx * sy], -1),
                    np.stack([rho * sx * sy, sy * sy], -1)], -2)
    inv = np.linalg.inv(cov)
    conic = np.stack([inv[:, 0, 0], inv[:, 0, 1], inv[:, 1, 1]], -1)
    return SplatList(mean2d=mean2d, conic=conic, colour=rng.uniform(0, 1, (n, 3)),
                     opacity=rng.uniform(0.05, 0.95, n), depth=rng.uniform(1, 10, n),
                     source=np.arange(n))


def check_rasterizer_oracle(rng, n_scenes=20, inject=()):
    worst = 0.0
    view = _camera()
    for _ in range(n_scenes):
        sp = random_splats(rng, int(rng.integers(0, 51)))
        bg = rng.uniform(0, 1, 3)
        a = rasterize(sp, view, bg)[0].rgb
        b = rasterize_reference(sp, view, bg).rgb
        worst = max(worst, float(np.max(np.abs(a - b))))
    return CheckResult("rasterizer vs reference", worst, 1e-5)


def check_field_oracle(rng, n_fields=10, inject=()):
    worst = 0.0
    for _ in range(n_fields):
        lo = rng.uniform(-2, 0, 3)
        hi = lo + rng.uniform(0.5, 3, 3)
        field = init_field(lo, hi, int(rng.integers(2, 9)), int(rng.integers(1, 5)), 6,
                           rng=rng, amplitude=1.0, dtype=np.float64)
        pts = rng.uniform(lo - 0.1, hi + 0.1, (100, 3))
        ref = trilinear_oracle(dense_field_tensor(field), lo, hi, pts)
        worst = max(worst, relative_error(eval_field(pts, field), ref, floor=1e-3))
    return CheckResult("field vs dense tensor", worst, 1e-6)


def _grad_check(name, rng, n, build, inject):
    """``build`` returns [(fn, x, analytic), ...]; worst relative error over n instances."""
    worst = 0.0
    for _ in range(n):
        for fn, x, analytic in build(rng):
            numeric = central_difference(fn, x, eps=1e-6)
            worst = max(worst, relative_error(_flip(name, inject) * analytic, numeric, floor=1e-4))
    return CheckResult(f"grad: {name}", worst, GRAD_TOL)


def _interior_points(rng, n, res=5):
    # keep points away from cell faces where the interpolant has kinks
    h = 2.0 / (res - 1)
    cell = rng.integers(0, res - 1, (n, 3))
    return -1 + h * (cell + rng.uniform(0.1, 0.9, (n, 3)))


def _field_case(rng):
    field = init_field((-1, -1, -1), (1, 1, 1), 5, 2, 4, rng=rng, amplitude=1.0, dtype=np.float64)
    pts = _interior_points(rng, 4)
    up = rng.normal(size=(4, 4))
    g = eval_field_backward(pts, field, up)
    cases = [(lambda x: float(np.sum(eval_field(x, field) * up)), pts, g.points)]
    for name in FACTOR_NAMES + ("basis",):
        def fn(x, name=name):
            f = field.copy()
            setattr(f, name, x)
            return float(np.sum(eval_field(pts, f) * up))
        cases.append((fn, getattr(field, name), getattr(g, name)))
    return cases


def _projection_case(rng):
    view = _camera(48, 40, 50.0)
    mean = rng.uniform(-0.8, 0.8, (3, 3))
    cov = build_covariance(rng.normal(size=(3, 4)), rng.uniform(-2.5, -1.0, (3, 3)))
    d2 = rng.normal(size=(3, 2))
    dc = rng.normal(size=(3, 2, 2))
    dd = rng.normal(size=3)
    dv = rng.normal(size=(3, 3))
    p = project_gaussians(mean, cov, view)
    d_mean, d_cov = project_backward(p, view, d_mean2d=d2, d_cov2d=dc, d_depth=dd, d_view_dir=dv)

    def fn(m, c):
        pp = project_gaussians(m, c, view)
        return float(np.sum(pp.mean2d * d2) + np.sum(pp.cov2d * dc) + np.sum(pp.view_depth * dd)
                     + np.sum(pp.view_dir * dv))

    return [(lambda x: fn(x, cov), mean, d_mean), (lambda x: fn(mean, x), cov, d_cov)]


def _covariance_case(rng):
    q = rng.normal(size=(3, 4))
    s = rng.uniform(-2, 0.5, (3, 3))
    up = rng.normal(size=(3, 3, 3))
    d_q, d_s = covariance_backward(q, s, up)
    return [(lambda x: float(np.sum(build_covariance(x, s) * up)), q, d_q),
            (lambda x: float(np.sum(build_covariance(q, x) * up)), s, d_s)]


def _ide_case(rng):
    d = rng.normal(size=(5, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(0.05, 1.0, 5)
    up = rng.normal(size=(5, 17))
    g_d, g_r = ide_backward(d, r, up)
    return [(lambda x: float(np.sum(ide_encode(x, r) * up)), d, g_d),
            (lambda x: float(np.sum(ide_encode(d, x) * up)), r, g_r)]


def _shader_case(rng):
    shader = init_shader("full", 6, hidden=8, rng=rng, dtype=np.float64)
    for b in shader.biases:
        b += rng.normal(size=b.shape)
    rho = rng.normal(size=(4, 48))
    L = rng.normal(size=(4, 6))
    enc = rng.normal(size=(4, 17))
    tint = rng.uniform(0.1, 0.9, (4, 3))
    up = rng.normal(size=(4, 3))
    g = shader_backward(rho, L, enc, tint, shader, up)

    def f(r=rho, l=L, e=enc, t=tint, sh=shader):
        return float(np.sum(specular_color(r, l, e, t, sh) * up))

    cases = [(lambda x: f(r=x), rho, g.rho), (lambda x: f(l=x), L, g.illumination),
             (lambda x: f(e=x), enc, g.encoding), (lambda x: f(t=x), tint, g.tint)]
    for name, val in shader.params().items():
        def fp(x, name=name):
            sh = shader.copy()
            params = sh.params()
            params[name] = x
            sh.set_params(params)
            return f(sh=sh)
        cases.append((fp, val, g.params[name]))
    return cases


def near_threshold(splats, view, margin=2e-4, cap_margin=0.985):
    """True if some pixel sits near the 1/255 skip or the 0.99 cap of some splat."""
    ys, xs = np.mgrid[0:view.height, 0:view.width]
    px, py = xs.ravel() + 0.5, ys.ravel() + 0.5
    for j in range(len(splats)):
        dx, dy = px - splats.mean2d[j, 0], py - splats.mean2d[j, 1]
        a_, b_, c_ = splats.conic[j]
        alpha = splats.opacity[j] * np.exp(-0.5 * (a_ * dx * dx + c_ * dy * dy) - b_ * dx * dy)
        if np.any(np.abs(alpha - ALPHA_MIN) < margin) or np.any(alpha > cap_margin):
            return True
    return False


def _raster_case(rng):
    view = _camera(20, 20)
    while True:
        sp = random_splats(rng, int(rng.integers(1, 21)), 20, 20)
        sp.opacity = rng.uniform(0.1, 0.9, len(sp))
        if not near_threshold(sp, view):
            break
    up = rng.normal(size=(20, 20, 3))
    _, rec = rasterize(sp, view)
    g = rasterize_backward(rec, up)
    base = dict(mean2d=sp.mean2d, conic=sp.conic, colour=sp.colour, opacity=sp.opacity,
                depth=sp.depth, source=sp.source)

    def fn(name, x):
        return float(np.sum(rasterize_reference(SplatList(**{**base, name: x}), view).rgb * up))

    return [(lambda x, name=name: fn(name, x), getattr(sp, name), getattr(g, name))
            for name in ("colour", "opacity", "mean2d", "conic")]


def _dssim_case(rng):
    a = rng.uniform(0, 1, (8, 8, 3))
    b = rng.uniform(0, 1, (8, 8, 3))
    _, g = dssim_loss(a, b)
    return [(lambda x: dssim_loss(x, b)[0], a, g)]


GRADIENT_CASES = {
    "field": _field_case,
    "projection": _projection_case,
    "covariance": _covariance_case,
    "ide": _ide_case,
    "shader": _shader_case,
    "rasterizer": _raster_case,
    "dssim": _dssim_case,
}


def run_selfcheck(seed=0, inject=(), instances=5):
    """Run every suite; returns a list of CheckResult."""
    rng = np.random.default_rng(seed)
    results = [check_rasterizer_oracle(rng, inject=inject), check_field_oracle(rng, inject=inject)]
    for name, case in GRADIENT_CASES.items():
        results.append(_grad_check(name, rng, instances, case, inject))
    return results


def format_report(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'error':>10}  {'tol':>8}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.error:10.3e}  {r.tol:8.1e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


__all__ = ["CheckResult", "GRADIENT_CASES", "near_threshold", "format_report", "random_splats",
           "run_selfcheck"]
