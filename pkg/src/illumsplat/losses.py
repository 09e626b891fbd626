"""Photometric training loss and evaluation metrics on (H, W, 3) images in [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidInputError

PSNR_CAP = 99.0


@dataclass
class LossConfig:
    lam: float = 0.2
    window: int = 11
    sigma: float = 1.5
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidInputError(f"lambda must lie in [0, 1], got {self.lam}")


def _pair(a, b):
    a = np.asarray(getattr(a, "rgb", a), dtype=np.float64)
    b = np.asarray(getattr(b, "rgb", b), dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - size // 2
    w = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _blur(img, w):
    # separable, zero padded, "same" size; symmetric kernel so it is its own adjoint
    out = correlate1d(img, w, axis=0, mode="constant")
    return correlate1d(out, w, axis=1, mode="constant")


def l1_loss(a, b):
    """Mean absolute difference and its gradient w.r.t. ``a`` (zero at ties)."""
    a, b = _pair(a, b)
    diff = a - b
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def _ssim_terms(a, b, cfg):
    w = gaussian_window(cfg.window, cfg.sigma)
    mu_a = _blur(a, w)
    mu_b = _blur(b, w)
    e_aa = _blur(a * a, w)
    e_bb = _blur(b * b, w)
    e_ab = _blur(a * b, w)
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = e_aa - mu_aa
    var_b = e_bb - mu_bb
    cov = e_ab - mu_ab
    num1 = 2 * mu_ab + cfg.c1
    num2 = 2 * cov + cfg.c2
    den1 = mu_aa + mu_bb + cfg.c1
    den2 = var_a + var_b + cfg.c2
    return w, mu_a, mu_b, num1, num2, den1, den2


def ssim_map(a, b, cfg: LossConfig | None = None) -> np.ndarray:
    """Per-pixel, per-channel SSIM.  Borders see the zero padding of the window."""
    cfg = cfg or LossConfig()
    a, b = _pair(a, b)
    _, _, _, num1, num2, den1, den2 = _ssim_terms(a, b, cfg)
    return (num1 * num2) / (den1 * den2)


def ssim(a, b, cfg: LossConfig | None = None) -> float:
    """Mean SSIM over pixels and channels (11x11 Gaussian window, sigma 1.5)."""
    return float(np.mean(ssim_map(a, b, cfg)))


def dssim_loss(a, b, cfg: LossConfig | None = None):
    """1 - SSIM and its gradient w.r.t. ``a``."""
    cfg = cfg or LossConfig()
    a, b = _pair(a, b)
    w, mu_a, mu_b, num1, num2, den1, den2 = _ssim_terms(a, b, cfg)
    den = den1 * den2
    smap = num1 * num2 / den
    # d(-mean(S)) with S = num1 num2 / (den1 den2)
    g = -1.0 / smap.size
    d_num1 = g * num2 / den
    d_num2 = g * num1 / den
    d_den1 = -g * smap / den1
    d_den2 = -g * smap / den2
    # num1 = 2 mu_a mu_b + c1, num2 = 2 (E[ab] - mu_a mu_b) + c2,
    # den1 = mu_a^2 + mu_b^2 + c1, den2 = E[aa] - mu_a^2 + E[bb] - mu_b^2 + c2
    d_mu_a = 2 * mu_b * d_num1 - 2 * mu_b * d_num2 + 2 * mu_a * d_den1 - 2 * mu_a * d_den2
    d_e_ab = 2 * d_num2
    d_e_aa = d_den2
    grad = _blur(d_mu_a, w) + b * _blur(d_e_ab, w) + 2 * a * _blur(d_e_aa, w)
    return 1.0 - float(np.mean(smap)), grad


def total_loss(a, b, cfg: LossConfig | None = None):
    """(1 - lam) * L1 + lam * D-SSIM, with the matching gradient w.r.t. ``a``."""
    cfg = cfg or LossConfig()
    l1, g1 = l1_loss(a, b)
    ds, gd = dssim_loss(a, b, cfg)
    return (1.0 - cfg.lam) * l1 + cfg.lam * ds, (1.0 - cfg.lam) * g1 + cfg.lam * gd


def psnr(a, b) -> float:
    """10 log10(1 / MSE); identical images report ``PSNR_CAP``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))
