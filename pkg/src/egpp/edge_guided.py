"""Flip-average and edge-guided post-processing of left-view disparity maps.

Naming used throughout:

* ``d_l``   disparity predicted from the input image.
* ``d_pp``  disparity predicted from the mirrored image, flipped back so it is
  aligned with ``d_l``. Its occlusion fading sits on the right of occluders
  and on the right image border, whereas ``d_l`` fades on the left.

Disparities are in normalized units (fraction of image width), which is what
makes the default sigmoid offset/gain meaningful at any resolution.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Literal, NamedTuple

import numpy as np
from scipy.special import expit

from ._kernels import egpp_rows
from .grid import GridError, as_disparity, check_same_shape, correlate2d, flip_horizontal

Direction = Literal["right_edge", "left_edge"]

# boundary condition used for mask checks; 0.05 + 1/20 must count as 0.10
_MASK_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid post-processing parameters."""


def _check_mask_geometry(rng, ramp_slope):
    if not 0 <= rng < 0.5:
        raise ConfigError(f"rng must lie in [0, 0.5), got {rng}")
    if not ramp_slope > 0:
        raise ConfigError(f"ramp_slope must be > 0, got {ramp_slope}")
    if rng + 1.0 / ramp_slope > 0.5 + _MASK_TOL:
        raise ConfigError(
            f"rng + 1/ramp_slope = {rng + 1.0 / ramp_slope:g} > 0.5: left and right masks would overlap"
        )


@dataclass(frozen=True)
class PPConfig:
    """Edge-guided post-processing parameters.

    radius: detection radius N of the gradient filter, in pixels.
    gain, offset: sigmoid gain ``a`` and offset ``b`` applied to the filter response.
    rng: reserved boundary range as a fraction of the width.
    ramp_slope: slope of the boundary mask ramp in normalized-width units.
    eps: floor below which ``E + E''`` falls back to equal weights.
    """

    radius: int = 10
    gain: float = 32.0
    offset: float = 0.5
    rng: float = 0.02
    ramp_slope: float = 20.0
    eps: float = 1e-12

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ConfigError(f"radius must be an integer >= 1, got {self.radius}")
        if not self.gain > 0:
            raise ConfigError(f"gain must be > 0, got {self.gain}")
        if not 0 <= self.rng < 0.5:
            raise ConfigError(f"rng must lie in [0, 0.5), got {self.rng}")
        if not self.ramp_slope > 0:
            raise ConfigError(f"ramp_slope must be > 0, got {self.ramp_slope}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        _check_mask_geometry(self.rng, self.ramp_slope)

    def with_overrides(self, **kwargs):
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


CONVENTIONAL_RNG = 0.05


class WeightPair(NamedTuple):
    w: np.ndarray
    w_pp: np.ndarray


# --------------------------------------------------------------------------
# gradient filter and confidences


def build_gradient_filter(radius):
    """Wide horizontal gradient kernel of shape (3, 2N).

    The left N columns carry +1/(6N) and the right N columns -1/(6N), so a unit
    step down (1 on the left, 0 on the right) centred under the kernel gives a
    response of exactly +0.5 for any radius.
    """
    if int(radius) != radius or radius < 1:
        raise ConfigError(f"radius must be an integer >= 1, got {radius}")
    n = int(radius)
    k = np.empty((3, 2 * n))
    k[:, :n] = 1.0
    k[:, n:] = -1.0
    return k / (6 * n)


def _detector(radius, direction):
    """Kernel and anchor for one edge direction.

    The left-edge detector is the mirror image of the right-edge one: kernel
    columns reversed and the anchor mirrored with them, which keeps the two
    detectors exactly dual under a horizontal flip of the input.
    """
    k = build_gradient_filter(radius)
    n = int(radius)
    if direction == "right_edge":
        return k, (1, n)
    if direction == "left_edge":
        return k[:, ::-1].copy(), (1, n - 1)
    raise ValueError(f"unknown direction {direction!r}")


def gradient_response_reference(d, radius, direction="right_edge"):
    """Filter response via the generic correlation primitive (slow, for checking)."""
    k, anchor = _detector(radius, direction)
    return correlate2d(d, k, anchor=anchor, allow_oversize=True)


def _row_response(d, n, direction):
    """Horizontal part of the separable detector, unscaled (row sums of +-1 taps).

    Prefix sums over each edge-padded row; every row is processed
    independently, so results do not depend on how rows are batched.
    """
    H, W = d.shape
    s = np.empty((H, W + 2 * n + 1))
    s[:, 0] = 0.0
    s[:, 1:n + 1] = d[:, :1]
    s[:, n + 1:n + 1 + W] = d
    s[:, n + 1 + W:] = d[:, -1:]
    np.cumsum(s[:, 1:], axis=1, out=s[:, 1:])
    if direction == "right_edge":
        # sum d[x-N..x-1] - sum d[x..x+N-1]
        out = s[:, n:n + W] * 2.0
        out -= s[:, 0:W]
        out -= s[:, 2 * n:2 * n + W]
    else:
        # sum d[x+1..x+N] - sum d[x-N+1..x]
        out = s[:, n + 1:n + 1 + W] * -2.0
        out += s[:, 2 * n + 1:2 * n + 1 + W]
        out += s[:, 1:1 + W]
    return out


def _vertical_sum(h, lo, hi, ext_lo, height):
    """3-row box sum with replicate padding for output rows ``lo..hi-1``.

    ``h`` holds rows ``ext_lo..`` of the full (``height``-row) array and must
    include one halo row on each side unless that side is the image border.
    Each output row is ``(up + mid) + down`` in that order everywhere.
    """
    n = hi - lo
    m0 = lo - ext_lo
    out = np.empty((n, h.shape[1]))
    start = 1 if lo == 0 else 0
    stop = n - 1 if hi == height else n
    if stop > start:
        np.add(h[m0 + start - 1:m0 + stop - 1], h[m0 + start:m0 + stop], out=out[start:stop])
        out[start:stop] += h[m0 + start + 1:m0 + stop + 1]
    if lo == 0:
        down = h[m0 + 1] if height > 1 else h[m0]
        out[0] = (h[m0] + h[m0]) + down
    if hi == height and n - 1 >= start:
        last = m0 + n - 1
        up = h[last - 1] if height > 1 else h[last]
        out[n - 1] = (up + h[last]) + h[last]
    return out


def gradient_response(d, radius, direction="right_edge"):
    """Response of the 3 x 2N gradient detector with replicate padding.

    Equivalent to :func:`gradient_response_reference` but O(1) per pixel in
    the radius.
    """
    d = as_disparity(d)
    n = int(radius)
    _detector(n, direction)  # validates radius and direction
    h = _row_response(d, n, direction)
    return _vertical_sum(h, 0, d.shape[0], 0, d.shape[0]) / (6 * n)


def edge_confidence(d, cfg=PPConfig(), direction="right_edge"):
    """Regional-edge confidence ``sigmoid((d * f - b) * a)`` in [0, 1].

    ``right_edge`` fires on the low side of a drop in disparity (reliable right
    edges of occluders in ``d_l``); ``left_edge`` is its mirror and is applied
    to ``d_pp``.
    """
    r = gradient_response(d, cfg.radius, direction)
    return expit((r - cfg.offset) * cfg.gain)


def normalize_weights(e, e_pp, eps=1e-12):
    """``w = E / (E + E'')`` and ``w'' = E'' / (E + E'')``; 0.5 each where the sum < eps."""
    e = np.asarray(e, dtype=np.float64)
    e_pp = np.asarray(e_pp, dtype=np.float64)
    check_same_shape(("E", e), ("E''", e_pp))
    total = e + e_pp
    degenerate = total < eps
    safe = np.where(degenerate, 1.0, total)
    w = np.where(degenerate, 0.5, e / safe)
    w_pp = np.where(degenerate, 0.5, e_pp / safe)
    return WeightPair(w, w_pp)


def _envelope(value, a, b):
    # all stages are convex combinations; this only removes rounding overshoot
    return np.clip(value, np.minimum(a, b), np.maximum(a, b))


def edge_guided_combine(d_l, d_pp, cfg=PPConfig()):
    """Per-pixel blend of ``d_l`` and ``d_pp`` by normalized edge confidences."""
    d_l = as_disparity(d_l, "d_l")
    d_pp = as_disparity(d_pp, "d_pp")
    check_same_shape(("d_l", d_l), ("d_pp", d_pp))
    e = edge_confidence(d_l, cfg, "right_edge")
    e_pp = edge_confidence(d_pp, cfg, "left_edge")
    w, w_pp = normalize_weights(e, e_pp, cfg.eps)
    return _envelope(w * d_l + w_pp * d_pp, d_l, d_pp)


# --------------------------------------------------------------------------
# boundary-preserving synthesis


def _column_masks(width, rng, ramp_slope):
    _check_mask_geometry(rng, ramp_slope)
    # a single column has no left/right side; place it mid-image so both masks vanish
    j = np.arange(width) / (width - 1) if width > 1 else np.full(1, 0.5)
    m_left = np.clip(1.0 - ramp_slope * (j - rng), 0.0, 1.0)
    return m_left, m_left[::-1].copy()


def boundary_masks(height, width, rng, ramp_slope=20.0):
    """Left/right reserve masks of shape (H, W).

    With ``j = x / (W - 1)``, ``m_left = clamp(1 - ramp_slope * (j - rng), 0, 1)``
    and ``m_right`` is its horizontal mirror.
    """
    if height < 1 or width < 1:
        raise GridError(f"mask size must be >= 1, got {height}x{width}")
    m_left, m_right = _column_masks(width, rng, ramp_slope)
    return (np.broadcast_to(m_left, (height, width)).copy(),
            np.broadcast_to(m_right, (height, width)).copy())


def synthesize(d_l, d_pp, center, masks):
    """``m_left * d_pp + m_right * d_l + (1 - m_left - m_right) * center``.

    The left reserve takes ``d_pp`` because that is the prediction whose left
    side is free of fading; the right reserve takes ``d_l`` for the same reason.
    """
    m_left, m_right = masks
    d_l = np.asarray(d_l, dtype=np.float64)
    d_pp = np.asarray(d_pp, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    check_same_shape(("d_l", d_l), ("d_pp", d_pp), ("center", center))
    m_left = np.broadcast_to(m_left, d_l.shape)
    m_right = np.broadcast_to(m_right, d_l.shape)
    return m_left * d_pp + m_right * d_l + (1.0 - m_left - m_right) * center


def _aligned_pair(d_l, d_pp):
    d_l = as_disparity(d_l, "d_l")
    d_pp = as_disparity(d_pp, "d_pp")
    check_same_shape(("d_l", d_l), ("d_pp", d_pp))
    return d_l, d_pp


def conventional_pp(d_l, d_pp, rng=CONVENTIONAL_RNG, ramp_slope=20.0):
    """Flip-average post-processing: mean of the two maps with reserved borders."""
    d_l, d_pp = _aligned_pair(d_l, d_pp)
    masks = _column_masks(d_l.shape[1], rng, ramp_slope)
    out = synthesize(d_l, d_pp, 0.5 * (d_l + d_pp), masks)
    return _envelope(out, d_l, d_pp)


def _row_blocks(height, threads):
    n = max(1, min(int(threads), height))
    return [(height * k // n, height * (k + 1) // n) for k in range(n)]


def edge_guided_pp(d_l, d_pp, cfg=PPConfig(), threads=1):
    """Edge-guided post-processing with boundary reserves at ``cfg.rng``.

    Same result as ``synthesize(d_l, d_pp, edge_guided_combine(d_l, d_pp, cfg),
    boundary_masks(...))`` up to rounding, computed in a single compiled pass.

    ``threads > 1`` splits rows across a thread pool. Every output value is
    computed by the same sequence of operations regardless of the split, so the
    result is bitwise identical for any thread count.
    """
    d_l, d_pp = _aligned_pair(d_l, d_pp)
    d_l = np.ascontiguousarray(d_l)
    d_pp = np.ascontiguousarray(d_pp)
    H, W = d_l.shape
    m_left, m_right = _column_masks(W, cfg.rng, cfg.ramp_slope)
    out = np.empty_like(d_l)

    def run(block):
        lo, hi = block
        egpp_rows(d_l, d_pp, lo, hi, cfg.radius, float(cfg.gain), float(cfg.offset),
                  float(cfg.eps), m_left, m_right, out[lo:hi])

    blocks = _row_blocks(H, threads)
    if len(blocks) == 1:
        run(blocks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            list(pool.map(run, blocks))
    return out


# --------------------------------------------------------------------------
# full pipeline from a pair of network outputs


MODES = ("none", "pp", "egpp")


def post_process(d_l, d_flipped_pred, mode="egpp", cfg=None, threads=1):
    """Run post-processing from the two raw predictions.

    ``d_flipped_pred`` is the disparity predicted from the mirrored input image;
    it is flipped back here before blending.
    """
    d_l = as_disparity(d_l, "d_l")
    if mode == "none":
        return d_l.copy()
    d_pp = flip_horizontal(as_disparity(d_flipped_pred, "d_flipped_pred"))
    if mode == "pp":
        rng = cfg.rng if cfg is not None else CONVENTIONAL_RNG
        slope = cfg.ramp_slope if cfg is not None else 20.0
        return conventional_pp(d_l, d_pp, rng=rng, ramp_slope=slope)
    if mode == "egpp":
        return edge_guided_pp(d_l, d_pp, cfg or PPConfig(), threads=threads)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
