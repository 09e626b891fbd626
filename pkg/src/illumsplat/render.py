"""Full differentiable render of one view.

Forward chain per Gaussian: covariance -> projection -> (illumination query,
view encoding, shader) -> colour, then tile rasterisation.  The backward pass
walks the same chain in reverse, including the view-direction path
mean -> view_dir -> encoding -> shader.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import fourier_backward, fourier_encode, ide_backward, ide_encode
from .field import FieldGrads, eval_field, eval_field_backward
from .gaussians import (DILATION, CameraView, GaussianSet, build_covariance,
                        covariance_backward, project_backward, project_gaussians, sigmoid)
from .rasterizer import SplatList, conic_backward, conic_from_cov2d, rasterize, rasterize_backward
from .shader import shade, shade_backward, shader_backward, specular_color, uses_ide


@dataclass
class RenderOutput:
    rgb: np.ndarray
    transmittance: np.ndarray
    visible: np.ndarray  # indices of Gaussians handed to the rasteriser
    cache: dict


@dataclass
class Gradients:
    gaussians: dict  # name -> array shaped like the GaussianSet field
    field: FieldGrads | None
    shader: dict | None
    mean2d_norm: np.ndarray  # (N,) screen-space positional gradient norm, NDC units


def render(gaussians: GaussianSet, field, shader, view: CameraView, background=(1.0, 1.0, 1.0),
           specular=True, dilation=DILATION) -> RenderOutput:
    g = gaussians.astype(np.float64)
    cov3d = build_covariance(g.rotation, g.log_scale) if len(g) else np.zeros((0, 3, 3))
    proj = project_gaussians(g.mean, cov3d, view, dilation=dilation)
    vis = np.flatnonzero(proj.valid)

    mean = g.mean[vis]
    view_dir = proj.view_dir[vis]
    rough = g.roughness[vis]
    tint = g.tint[vis]
    if specular and len(vis):
        f64 = field.astype(np.float64)
        s64 = shader.astype(np.float64)
        illum = eval_field(mean, f64)
        enc = ide_encode(view_dir, rough) if uses_ide(shader.variant) else fourier_encode(view_dir)
        c_s = specular_color(g.brdf_features[vis], illum, enc, tint, s64)
    else:
        f64 = s64 = illum = enc = None
        c_s = np.zeros((len(vis), 3))
    rad = shade(g.diffuse_raw[vis], c_s, warmup=not specular)

    cov2d = proj.cov2d[vis]
    splats = SplatList(mean2d=proj.mean2d[vis], conic=conic_from_cov2d(cov2d), colour=rad.colour,
                       opacity=g.opacity[vis], depth=proj.view_depth[vis], source=vis)
    image, record = rasterize(splats, view, background)
    cache = dict(g=g, proj=proj, vis=vis, cov2d=cov2d, illum=illum, enc=enc, c_s=c_s,
                 specular=specular, field=f64, shader=s64, record=record, view=view)
    return RenderOutput(rgb=image.rgb, transmittance=image.transmittance, visible=vis, cache=cache)


def render_backward(out: RenderOutput, d_image) -> Gradients:
    c = out.cache
    g, proj, vis, view = c["g"], c["proj"], c["vis"], c["view"]
    N = len(g)
    grads = {name: np.zeros(arr.shape) for name, arr in g.arrays().items()}
    sg = rasterize_backward(c["record"], d_image)

    d_diffuse_raw, d_cs = shade_backward(g.diffuse_raw[vis], c["c_s"], sg.colour,
                                         warmup=not c["specular"])
    grads["diffuse_raw"][vis] = d_diffuse_raw
    alpha = g.opacity[vis]
    grads["opacity_logit"][vis] = sg.opacity * alpha * (1.0 - alpha)

    d_mean_vis = np.zeros((len(vis), 3))
    d_view_dir_vis = np.zeros((len(vis), 3))
    field_grads = shader_grads = None
    if c["specular"] and len(vis):
        shader, field = c["shader"], c["field"]
        tint = g.tint[vis]
        sh = shader_backward(g.brdf_features[vis], c["illum"], c["enc"], tint, shader, d_cs)
        shader_grads = sh.params
        grads["brdf_features"][vis] = sh.rho
        grads["base_colour_raw"][vis] = sh.tint * tint * (1.0 - tint)
        field_grads = eval_field_backward(g.mean[vis], field, sh.illumination)
        d_mean_vis += field_grads.points
        view_dir = proj.view_dir[vis]
        if uses_ide(shader.variant):
            d_dir, d_rough = ide_backward(view_dir, g.roughness[vis], sh.encoding)
            grads["roughness_raw"][vis] = d_rough * sigmoid(g.roughness_raw[vis])
        else:
            d_dir = fourier_backward(view_dir, sh.encoding)
        d_view_dir_vis = d_dir

    d_cov2d = np.zeros((N, 2, 2))
    d_cov2d[vis] = conic_backward(c["cov2d"], sg.conic)
    d_mean2d = np.zeros((N, 2))
    d_mean2d[vis] = sg.mean2d
    d_view_dir = np.zeros((N, 3))
    d_view_dir[vis] = d_view_dir_vis
    d_mean, d_cov3d = project_backward(proj, view, d_mean2d=d_mean2d, d_cov2d=d_cov2d,
                                       d_view_dir=d_view_dir)
    d_mean[vis] += d_mean_vis
    grads["mean"] = d_mean
    if N:
        grads["rotation"], grads["log_scale"] = covariance_backward(g.rotation, g.log_scale, d_cov3d)

    ndc = d_mean2d * np.array([0.5 * view.width, 0.5 * view.height])
    return Gradients(gaussians=grads, field=field_grads, shader=shader_grads,
                     mean2d_norm=np.linalg.norm(ndc, axis=-1))
