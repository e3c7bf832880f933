"""Synthetic dis-occlusion scenes with known fading geometry.

A scene is a vertical-gradient background plane plus constant-disparity
rectangles. The left-view prediction ``d_l`` gets linear ramps on the left of
every occluder and a fade-in at the left image border; the flipped-back
prediction ``d_flip2`` gets the mirrored damage. Comparing post-processed
output to the sharp ground truth makes PP quality measurable.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .edge_guided import PPConfig, conventional_pp, edge_guided_pp
from .grid import GridError, as_disparity, flip_horizontal

METHODS = ("raw", "pp", "egpp")


class SceneError(ValueError):
    """Invalid scene geometry or parameters."""


@dataclass(frozen=True)
class SceneParams:
    height: int = 64
    width: int = 128
    n_occluders: int = 3
    bg_range: tuple = (0.02, 0.08)        # background disparity, top row -> bottom row
    occluder_range: tuple = (0.15, 0.30)  # occluder disparities drawn uniformly here
    occluder_width: tuple = (12, 32)      # pixels, inclusive
    occluder_height: tuple = (16, 48)
    fade_px: int = 8
    border_fade_px: int = 6
    seed: int = 0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.height < 1 or self.width < 2:
            raise SceneError(f"scene must be at least 1x2, got {self.height}x{self.width}")
        if self.n_occluders < 0:
            raise SceneError("n_occluders must be >= 0")
        if self.fade_px < 0 or self.border_fade_px < 0:
            raise SceneError("fade widths must be >= 0")
        if self.border_fade_px > self.width:
            raise SceneError("border fade wider than the image")
        lo, hi = self.bg_range
        olo, ohi = self.occluder_range
        if not 0 <= lo <= hi:
            raise SceneError(f"bad background range {self.bg_range}")
        if not hi < olo <= ohi:
            raise SceneError("occluder disparities must exceed every background disparity")
        wlo, whi = self.occluder_width
        hlo, hhi = self.occluder_height
        if self.n_occluders and not (1 <= wlo <= whi <= self.width and 1 <= hlo <= hhi <= self.height):
            raise SceneError("occluder size range does not fit the image")
        if self.noise_sigma < 0:
            raise SceneError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class Rect:
    top: int
    left: int
    bottom: int  # exclusive
    right: int   # exclusive
    disparity: float


@dataclass
class SyntheticScene:
    gt: np.ndarray
    d_l: np.ndarray
    d_flip2: np.ndarray
    edges: np.ndarray       # bool (H, W): True at x where gt[y, x] != gt[y, x - 1]
    rects: list = field(default_factory=list)


def step_edges(gt):
    """Boolean map marking the first column after every horizontal discontinuity."""
    gt = np.asarray(gt)
    edges = np.zeros(gt.shape, dtype=bool)
    edges[:, 1:] = gt[:, 1:] != gt[:, :-1]
    return edges


def _background(p):
    lo, hi = p.bg_range
    col = np.linspace(lo, hi, p.height) if p.height > 1 else np.array([lo])
    return np.repeat(col[:, None], p.width, axis=1)


def generate_scene(p: SceneParams) -> SyntheticScene:
    """Draw a scene; the same params always give bit-identical arrays."""
    rng = np.random.default_rng(p.seed)
    gt = _background(p)
    rects = []
    for _ in range(p.n_occluders):
        w = int(rng.integers(p.occluder_width[0], p.occluder_width[1] + 1))
        h = int(rng.integers(p.occluder_height[0], p.occluder_height[1] + 1))
        left = int(rng.integers(0, p.width - w + 1))
        top = int(rng.integers(0, p.height - h + 1))
        disp = float(rng.uniform(*p.occluder_range))
        rects.append(Rect(top, left, top + h, left + w, disp))
    # farther (smaller disparity) first so nearer occluders cover them
    for r in sorted(rects, key=lambda r: r.disparity):
        gt[r.top:r.bottom, r.left:r.right] = r.disparity

    d_l = apply_occlusion_fading(gt, "left", p.fade_px, p.border_fade_px)
    d_flip2 = apply_occlusion_fading(gt, "right", p.fade_px, p.border_fade_px)
    if p.noise_sigma > 0:
        d_l = np.maximum(d_l + rng.normal(0.0, p.noise_sigma, d_l.shape), 0.0)
        d_flip2 = np.maximum(d_flip2 + rng.normal(0.0, p.noise_sigma, d_flip2.shape), 0.0)
    return SyntheticScene(gt, d_l, d_flip2, step_edges(gt), rects)


def linear_ramp(k, L):
    """Fraction of the step reached ``k`` columns before the edge (k = 1..L)."""
    return (L + 1 - k) / (L + 1)


def _fade_left(gt, L, L_b, ramp):
    out = gt.copy()
    H, W = gt.shape
    if L > 0:
        ys, xs = np.nonzero(gt[:, 1:] > gt[:, :-1])
        xs = xs + 1  # first column of the nearer surface
        for y, e in zip(ys, xs):
            occ = gt[y, e]
            for k in range(1, min(L, e) + 1):
                bg = gt[y, e - k]
                if bg >= occ:
                    break
                out[y, e - k] = max(out[y, e - k], bg + (occ - bg) * ramp(k, L))
    if L_b > 0:
        out[:, :L_b] *= (np.arange(L_b) / L_b)[None, :]
    return out


def apply_occlusion_fading(gt, side: Literal["left", "right"], L, L_b=0, ramp=linear_ramp):
    """Simulate the dis-occlusion fading of a self-supervised prediction.

    ``side="left"``: the ``L`` columns left of every step-up edge are raised
    along a ramp from the background value towards the occluder value, and the
    first ``L_b`` columns are scaled by ``c / L_b``. ``side="right"`` mirrors it.
    A ramp stops early if it meets a surface at least as near as the occluder.
    """
    gt = as_disparity(gt, "gt")
    if L < 0 or L_b < 0:
        raise SceneError("fade widths must be >= 0")
    if side == "left":
        return _fade_left(gt, L, L_b, ramp)
    if side == "right":
        return flip_horizontal(_fade_left(flip_horizontal(gt), L, L_b, ramp))
    raise ValueError(f"unknown side {side!r}")


def band_mask(edges, band_px):
    """Pixels within ``band_px`` columns of an edge in the same row."""
    edges = np.asarray(edges, dtype=bool)
    if band_px < 1:
        raise ValueError("band_px must be >= 1")
    if not edges.any():
        raise SceneError("no edges: the evaluation band is empty")
    return maximum_filter1d(edges.astype(np.uint8), size=2 * band_px + 1, axis=1, mode="constant") > 0


def halo_metric(out, gt, edges, band_px):
    """Mean excursion of ``out`` outside the row-local ground-truth envelope, over the edge band."""
    out = np.asarray(out, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if out.shape != gt.shape:
        raise GridError(f"shape mismatch: out {out.shape} vs gt {gt.shape}")
    band = band_mask(edges, band_px)
    size = 2 * band_px + 1
    hi = maximum_filter1d(gt, size=size, axis=1, mode="nearest")
    lo = minimum_filter1d(gt, size=size, axis=1, mode="nearest")
    excess = np.maximum(0.0, out - hi) + np.maximum(0.0, lo - out)
    return float(excess[band].mean())


def band_rmse(out, gt, edges, band_px):
    band = band_mask(edges, band_px)
    diff = np.asarray(out, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(np.sqrt(np.mean(diff[band] ** 2)))


def rmse(out, gt):
    diff = np.asarray(out, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(np.sqrt(np.mean(diff ** 2)))


@dataclass(frozen=True)
class SuiteRow:
    seed: int
    method: str
    rmse: float
    band_rmse: float
    halo: float


@dataclass
class SuiteReport:
    rows: list

    def by_method(self, method):
        return [r for r in self.rows if r.method == method]

    def aggregate(self):
        """Mean rmse, band_rmse and halo per method, in ``METHODS`` order."""
        out = {}
        for m in METHODS:
            rows = self.by_method(m)
            if rows:
                out[m] = SuiteRow(-1, m, *(float(np.mean([getattr(r, f) for r in rows]))
                                           for f in ("rmse", "band_rmse", "halo")))
        return out

    def to_text(self, sep="\t", precision: Optional[int] = None, aggregate=True):
        fmt = repr if precision is None else (lambda v: f"{v:.{precision}f}")
        lines = [sep.join(("seed", "method", "rmse", "band_rmse", "halo"))]
        rows = list(self.rows)
        if aggregate:
            rows += list(self.aggregate().values())
        for r in rows:
            seed = "mean" if r.seed < 0 else str(r.seed)
            lines.append(sep.join((seed, r.method, fmt(r.rmse), fmt(r.band_rmse), fmt(r.halo))))
        return "\n".join(lines) + "\n"


def evaluate_scene(scene, cfg=PPConfig(), band_px=None, threads=1):
    """Rows for raw d_l, conventional PP and edge-guided PP on one scene (seed left at 0)."""
    band = 2 * cfg.radius if band_px is None else band_px
    outputs = {
        "raw": scene.d_l,
        "pp": conventional_pp(scene.d_l, scene.d_flip2),
        "egpp": edge_guided_pp(scene.d_l, scene.d_flip2, cfg, threads=threads),
    }
    rows = []
    for m in METHODS:
        o = outputs[m]
        rows.append(SuiteRow(0, m, rmse(o, scene.gt), band_rmse(o, scene.gt, scene.edges, band),
                             halo_metric(o, scene.gt, scene.edges, band)))
    return rows


def run_suite(params=SceneParams(), cfg=PPConfig(), n_scenes=20, band_px=None, threads=1):
    """Evaluate ``n_scenes`` scenes with seeds ``params.seed + i``."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    rows = []
    for i in range(n_scenes):
        seed = params.seed + i
        scene = generate_scene(replace(params, seed=seed))
        rows += [replace(r, seed=seed) for r in evaluate_scene(scene, cfg, band_px, threads)]
    return SuiteReport(rows)
