"""Self-supervised stereo objective: appearance, smoothness and left-right terms.

The term definitions follow the usual left-right consistency formulation:
3x3 box-filter SSIM mixed with L1 (alpha = 0.85), edge-aware first-order
disparity smoothness, and an L1 left-right disparity consistency, with
horizontal bilinear warping that clamps at the image border. Evaluation is
single-scale; multi-scale totals are plain sums of per-scale reports.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.ndimage import uniform_filter

from .grid import GridError, as_disparity, as_grid, resize_bilinear

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    alpha_ap: float = 1.0
    alpha_ds: float = 0.5
    alpha_lr: float = 1.0

    def __post_init__(self):
        for name in ("alpha_ap", "alpha_ds", "alpha_lr"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class LossReport:
    c_ap: float
    c_ds: float
    c_lr: float
    c_total: float

    def as_dict(self):
        return {"c_ap": self.c_ap, "c_ds": self.c_ds, "c_lr": self.c_lr, "c_total": self.c_total}


def _check_spatial(a, b, names):
    if a.shape[:2] != b.shape[:2]:
        raise GridError(f"shape mismatch: {names[0]} {a.shape} vs {names[1]} {b.shape}")


def warp_horizontal(src, d, direction: Literal["sample_left", "sample_right"] = "sample_left"):
    """Resample ``src`` along rows at ``x - d*W`` (sample_left) or ``x + d*W`` (sample_right).

    ``sample_left`` rebuilds the left view from the right image using the left
    disparity. Sample positions are clamped to ``[0, W - 1]``.
    """
    src = as_grid(src, "src")
    d = as_disparity(d)
    _check_spatial(src, d, ("src", "disparity"))
    if direction == "sample_left":
        sign = -1.0
    elif direction == "sample_right":
        sign = 1.0
    else:
        raise ValueError(f"unknown direction {direction!r}")

    H, W = d.shape
    xs = np.clip(np.arange(W)[None, :] + sign * d * W, 0.0, W - 1)
    x0 = np.floor(xs).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    frac = xs - x0
    rows = np.arange(H)[:, None]
    if src.ndim == 3:
        frac = frac[..., None]
    return src[rows, x0] * (1.0 - frac) + src[rows, x1] * frac


def _box3(x):
    size = (3, 3) + (1,) * (x.ndim - 2)
    return uniform_filter(x, size=size, mode="mirror")


def ssim_map(a, b, c1=SSIM_C1, c2=SSIM_C2):
    """Per-pixel SSIM over 3x3 windows (mirror-padded), clipped to [-1, 1]."""
    a = as_grid(a, "a")
    b = as_grid(b, "b")
    if a.shape != b.shape:
        raise GridError(f"shape mismatch: a {a.shape} vs b {b.shape}")
    mu_a = _box3(a)
    mu_b = _box3(b)
    var_a = _box3(a * a) - mu_a * mu_a
    var_b = _box3(b * b) - mu_b * mu_b
    cov = _box3(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return np.clip(num / den, -1.0, 1.0)


def appearance_loss(image, recon, alpha=0.85):
    """Mean of ``alpha * (1 - SSIM) / 2 + (1 - alpha) * |I - I_hat|``."""
    image = as_grid(image, "image")
    recon = as_grid(recon, "recon")
    if image.shape != recon.shape:
        raise GridError(f"shape mismatch: image {image.shape} vs recon {recon.shape}")
    dssim = np.clip((1.0 - ssim_map(image, recon)) / 2.0, 0.0, 1.0)
    return float(np.mean(alpha * dssim + (1.0 - alpha) * np.abs(image - recon)))


def _mean_or_zero(x):
    return float(np.mean(x)) if x.size else 0.0


def smoothness_loss(d, image):
    """Edge-aware smoothness with forward differences.

    ``mean(|dx d| * exp(-mean_c |dx I|)) + mean(|dy d| * exp(-mean_c |dy I|))``;
    each term covers only the pixels that have a forward neighbour.
    """
    d = as_disparity(d)
    image = as_grid(image, "image")
    _check_spatial(image, d, ("image", "disparity"))
    img = image if image.ndim == 3 else image[..., None]

    gx_d = np.abs(np.diff(d, axis=1))
    gy_d = np.abs(np.diff(d, axis=0))
    gx_i = np.mean(np.abs(np.diff(img, axis=1)), axis=2)
    gy_i = np.mean(np.abs(np.diff(img, axis=0)), axis=2)
    return _mean_or_zero(gx_d * np.exp(-gx_i)) + _mean_or_zero(gy_d * np.exp(-gy_i))


def lr_consistency_loss(d_l, d_r, side: Literal["left", "right"] = "left"):
    """L1 distance between a disparity map and the other view's map warped onto it.

    ``side="left"``: ``mean |d_l(x) - d_r(x - d_l(x) * W)|``; ``"right"`` is the mirror.
    """
    d_l = as_disparity(d_l, "d_l")
    d_r = as_disparity(d_r, "d_r")
    _check_spatial(d_l, d_r, ("d_l", "d_r"))
    if side == "left":
        projected = warp_horizontal(d_r, d_l, "sample_left")
        return float(np.mean(np.abs(d_l - projected)))
    if side == "right":
        projected = warp_horizontal(d_l, d_r, "sample_right")
        return float(np.mean(np.abs(d_r - projected)))
    raise ValueError(f"unknown side {side!r}")


def total_loss(c_ap, c_ds, c_lr, weights=LossWeights()):
    return weights.alpha_ap * c_ap + weights.alpha_ds * c_ds + weights.alpha_lr * c_lr


def compute_losses(image_l, image_r, disp_l, disp_r, weights=LossWeights(), alpha=0.85):
    """All three terms for one scale, summed over the left and right views."""
    image_l = as_grid(image_l, "image_l")
    image_r = as_grid(image_r, "image_r")
    disp_l = as_disparity(disp_l, "disp_l")
    disp_r = as_disparity(disp_r, "disp_r")
    if image_l.shape != image_r.shape:
        raise GridError(f"shape mismatch: image_l {image_l.shape} vs image_r {image_r.shape}")
    _check_spatial(image_l, disp_l, ("image_l", "disp_l"))
    _check_spatial(image_l, disp_r, ("image_l", "disp_r"))

    recon_l = warp_horizontal(image_r, disp_l, "sample_left")
    recon_r = warp_horizontal(image_l, disp_r, "sample_right")
    c_ap = appearance_loss(image_l, recon_l, alpha) + appearance_loss(image_r, recon_r, alpha)
    c_ds = smoothness_loss(disp_l, image_l) + smoothness_loss(disp_r, image_r)
    c_lr = lr_consistency_loss(disp_l, disp_r, "left") + lr_consistency_loss(disp_l, disp_r, "right")
    return LossReport(c_ap, c_ds, c_lr, total_loss(c_ap, c_ds, c_lr, weights))


def sum_reports(reports):
    reports = list(reports)
    return LossReport(
        sum(r.c_ap for r in reports),
        sum(r.c_ds for r in reports),
        sum(r.c_lr for r in reports),
        sum(r.c_total for r in reports),
    )


def image_pyramid(image, levels=4):
    """``levels`` images, each half the size of the previous (bilinear)."""
    image = as_grid(image, "image")
    out = [image]
    for _ in range(levels - 1):
        h, w = out[-1].shape[:2]
        out.append(resize_bilinear(out[-1], max(1, h // 2), max(1, w // 2)))
    return out


def multiscale_losses(image_l, image_r, disps_l, disps_r, weights=LossWeights(), alpha=0.85):
    """Sum of per-scale reports; images are resized to each disparity's shape."""
    if len(disps_l) != len(disps_r):
        raise ValueError("need the same number of left and right disparity scales")
    reports = []
    for d_l, d_r in zip(disps_l, disps_r):
        h, w = np.shape(d_l)
        reports.append(compute_losses(
            resize_bilinear(image_l, h, w), resize_bilinear(image_r, h, w), d_l, d_r, weights, alpha))
    return sum_reports(reports)
