"""KITTI-style depth evaluation.

Predictions are clamped to ``[min_depth, max_depth]``; ground truth is never
clamped, only filtered to the same open interval. Crop fractions and the
D1-all outlier rule (error > 3 px and > 5 % of ground truth) follow the
standard KITTI evaluation protocol.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import Literal

import numpy as np

from .grid import GridError, as_grid, resize_bilinear

GARG_CROP = (0.40810811, 0.99189189, 0.03594771, 0.96405229)
D1_ABS_PX = 3.0
D1_REL = 0.05


class MetricError(ValueError):
    """Raised when a metric cannot be computed (e.g. no valid pixels)."""


@dataclass(frozen=True)
class CameraModel:
    focal_px: float
    baseline_m: float
    width_px: float

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be > 0, got {getattr(self, f.name)}")


KITTI_CAMERA = CameraModel(focal_px=721.5377, baseline_m=0.54, width_px=1242)


@dataclass(frozen=True)
class EvalConfig:
    min_depth_m: float = 1e-3
    max_depth_m: float = 80.0
    crop: Literal["none", "garg"] = "none"
    median_scale: bool = False

    def __post_init__(self):
        if not 0 < self.min_depth_m < self.max_depth_m:
            raise ValueError(f"need 0 < min_depth < max_depth, got {self.min_depth_m}, {self.max_depth_m}")
        if self.crop not in ("none", "garg"):
            raise ValueError(f"crop must be 'none' or 'garg', got {self.crop!r}")


@dataclass(frozen=True)
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse_m: float
    rmse_log: float
    d1_all_pct: float
    delta1: float
    delta2: float
    delta3: float
    n_valid: int = 0

    COLUMNS = ("ARD", "SRD", "RMSE", "RMSE(log)", "D1-all", "d<1.25", "d<1.25^2", "d<1.25^3")

    def values(self):
        return astuple(self)[:8]


def disparity_to_depth(d, cam, cfg=EvalConfig()):
    """Depth in metres from normalized disparity, clamped to the config range.

    Zero disparity maps to ``max_depth``.
    """
    d = as_grid(d, "disparity")
    denom = d * cam.width_px
    depth = np.full_like(d, np.inf)
    np.divide(cam.focal_px * cam.baseline_m, denom, out=depth, where=denom > 0)
    return np.clip(depth, cfg.min_depth_m, cfg.max_depth_m)


def garg_crop_mask(height, width, crop="garg"):
    """Boolean evaluation mask; all-true for ``crop="none"``."""
    if height < 1 or width < 1:
        raise GridError(f"mask size must be >= 1, got {height}x{width}")
    if crop == "none":
        return np.ones((height, width), dtype=bool)
    if crop != "garg":
        raise ValueError(f"unknown crop {crop!r}")
    top, bottom, left, right = (
        int(GARG_CROP[0] * height), int(GARG_CROP[1] * height),
        int(GARG_CROP[2] * width), int(GARG_CROP[3] * width),
    )
    mask = np.zeros((height, width), dtype=bool)
    mask[top:bottom, left:right] = True
    return mask


def _select(pred, gt, valid):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise GridError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    valid = np.ones(gt.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if valid.shape != gt.shape:
        raise GridError(f"shape mismatch: valid {valid.shape} vs gt {gt.shape}")
    if not valid.any():
        raise MetricError("no valid pixels")
    return pred[valid], gt[valid]


def depth_metrics(pred, gt, valid=None):
    """Error and accuracy terms over the valid pixels.

    Returns a dict with abs_rel, sq_rel, rmse_m, rmse_log, delta1..3 and n_valid.
    """
    p, g = _select(pred, gt, valid)
    if np.any(g <= 0) or np.any(p <= 0):
        raise MetricError("depths must be > 0 on valid pixels")
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return {
        "abs_rel": float(np.mean(np.abs(diff) / g)),
        "sq_rel": float(np.mean(diff ** 2 / g)),
        "rmse_m": float(np.sqrt(np.mean(diff ** 2))),
        "rmse_log": float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        "delta1": float(np.mean(ratio < 1.25)),
        "delta2": float(np.mean(ratio < 1.25 ** 2)),
        "delta3": float(np.mean(ratio < 1.25 ** 3)),
        "n_valid": int(g.size),
    }


def d1_all(pred_disp_px, gt_disp_px, valid=None):
    """Percentage of valid pixels whose error exceeds both 3 px and 5 % of ground truth."""
    p, g = _select(pred_disp_px, gt_disp_px, valid)
    err = np.abs(p - g)
    outlier = (err > D1_ABS_PX) & (err > D1_REL * np.abs(g))
    return 100.0 * float(np.mean(outlier))


def evaluate_disparity(pred_disp_px, gt_disp_px, cam=KITTI_CAMERA, cfg=EvalConfig(), gt_valid=None):
    """Full metric report for one predicted / ground-truth disparity pair (pixel units).

    A prediction at a different resolution is bilinearly resized to the ground
    truth and its disparities rescaled by the width ratio. Ground-truth pixels
    with zero disparity are invalid.
    """
    pred = as_grid(pred_disp_px, "pred")
    gt = as_grid(gt_disp_px, "gt")
    if pred.ndim != 2 or gt.ndim != 2:
        raise GridError("disparity maps must be single-channel")
    H, W = gt.shape
    if pred.shape != gt.shape:
        pred = resize_bilinear(pred, H, W) * (W / pred.shape[1])

    fb = cam.focal_px * cam.baseline_m
    valid = gt > 0
    if gt_valid is not None:
        valid &= np.asarray(gt_valid, dtype=bool)
    valid &= garg_crop_mask(H, W, cfg.crop)
    gt_depth = np.zeros_like(gt)
    np.divide(fb, gt, out=gt_depth, where=gt > 0)
    valid &= (gt_depth > cfg.min_depth_m) & (gt_depth < cfg.max_depth_m)
    if not valid.any():
        raise MetricError("no valid pixels")

    pred_depth = np.full_like(pred, np.inf)
    np.divide(fb, pred, out=pred_depth, where=pred > 0)
    pred_disp = pred
    if cfg.median_scale:
        raw = np.clip(pred_depth, cfg.min_depth_m, cfg.max_depth_m)
        scale = float(np.median(gt_depth[valid]) / np.median(raw[valid]))
        pred_depth = pred_depth * scale
        pred_disp = pred / scale
    pred_depth = np.clip(pred_depth, cfg.min_depth_m, cfg.max_depth_m)

    m = depth_metrics(pred_depth, gt_depth, valid)
    return MetricReport(
        abs_rel=m["abs_rel"], sq_rel=m["sq_rel"], rmse_m=m["rmse_m"], rmse_log=m["rmse_log"],
        d1_all_pct=d1_all(pred_disp, gt, valid),
        delta1=m["delta1"], delta2=m["delta2"], delta3=m["delta3"], n_valid=m["n_valid"],
    )


def aggregate(reports):
    """Unweighted per-file mean of every metric; n_valid is summed."""
    reports = list(reports)
    if not reports:
        raise MetricError("no reports to aggregate")
    vals = np.array([r.values() for r in reports], dtype=np.float64)
    mean = vals.mean(axis=0)
    return MetricReport(*map(float, mean), n_valid=sum(r.n_valid for r in reports))


def format_header(name_width=0):
    cols = "  ".join(f"{c:>9}" for c in MetricReport.COLUMNS)
    return (f"{'file':<{name_width}}  " if name_width else "") + cols


def format_report(report, name="", name_width=0, precision=4):
    """One fixed-point line in the order ARD SRD RMSE RMSE(log) D1-all d1 d2 d3."""
    if precision is None:
        cols = "  ".join(repr(float(v)) for v in report.values())
    else:
        cols = "  ".join(f"{v:>9.{precision}f}" for v in report.values())
    return (f"{name:<{name_width}}  " if name_width else (f"{name}  " if name else "")) + cols
