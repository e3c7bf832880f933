"""2-D float grids: validation, flips, bilinear resizing and cross-correlation.

Grids are plain numpy arrays of shape (H, W) or (H, W, C), row-major, indexed
as ``g[y, x]`` / ``g[y, x, c]``. Every function here is pure: inputs are never
modified and a new array is returned.
"""
from __future__ import annotations

import numpy as np


class GridError(ValueError):
    """Raised for malformed grids or incompatible grid/kernel shapes."""


def as_grid(g, name="grid"):
    """Return ``g`` as a float64 array after checking shape and finiteness."""
    arr = np.asarray(g, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise GridError(f"{name}: expected (H, W) or (H, W, C), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1 or (arr.ndim == 3 and arr.shape[2] < 1):
        raise GridError(f"{name}: empty grid {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GridError(f"{name}: contains NaN or Inf")
    return arr


def as_disparity(d, name="disparity"):
    arr = as_grid(d, name)
    if arr.ndim != 2:
        raise GridError(f"{name}: disparity maps are single-channel (H, W), got {arr.shape}")
    if np.any(arr < 0):
        raise GridError(f"{name}: disparity values must be >= 0")
    return arr


def check_same_shape(*pairs):
    """``pairs`` is a sequence of (name, array); all arrays must share a shape."""
    ref_name, ref = pairs[0]
    for name, arr in pairs[1:]:
        if arr.shape != ref.shape:
            raise GridError(f"shape mismatch: {ref_name} {ref.shape} vs {name} {arr.shape}")


def flip_horizontal(g):
    """Mirror columns: ``out[y, x] = g[y, W - 1 - x]``."""
    return np.array(np.asarray(g)[:, ::-1], copy=True)


def correlate2d(g, kernel, anchor=None, allow_oversize=False):
    """Cross-correlate ``g`` with ``kernel`` using replicate (clamp-to-edge) padding.

    ``out[p] = sum_k kernel[k] * g[clamp(p + k - anchor)]``. The anchor defaults
    to ``(rows // 2, cols // 2)``. Multi-channel grids are filtered per channel.
    A kernel larger than the grid is rejected unless ``allow_oversize`` is set;
    clamped sampling still defines the result in that case.
    """
    g = as_grid(g)
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] < 1 or k.shape[1] < 1:
        raise GridError(f"kernel must be 2-D and non-empty, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise GridError("kernel contains NaN or Inf")
    rows, cols = k.shape
    if not allow_oversize and (rows > g.shape[0] or cols > g.shape[1]):
        raise GridError(f"kernel {k.shape} larger than grid {g.shape[:2]}")
    ay, ax = anchor if anchor is not None else (rows // 2, cols // 2)
    if not (0 <= ay < rows and 0 <= ax < cols):
        raise GridError(f"anchor {(ay, ax)} outside kernel {k.shape}")

    H, W = g.shape[:2]
    pad = [(ay, rows - 1 - ay), (ax, cols - 1 - ax)] + [(0, 0)] * (g.ndim - 2)
    padded = np.pad(g, pad, mode="edge")
    out = np.zeros_like(g)
    for dy in range(rows):
        for dx in range(cols):
            w = k[dy, dx]
            if w != 0.0:
                out += w * padded[dy:dy + H, dx:dx + W]
    return out


def _linear_taps(n_in, n_out):
    # half-pixel alignment: src = (dst + 0.5) * n_in / n_out - 0.5, clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(g, height, width):
    """Bilinear resize with half-pixel-centre sampling (align_corners=False)."""
    g = as_grid(g)
    if height < 1 or width < 1:
        raise GridError(f"target size must be >= 1, got {height}x{width}")
    H, W = g.shape[:2]
    if (H, W) == (height, width):
        return g.copy()

    y0, y1, fy = _linear_taps(H, height)
    x0, x1, fx = _linear_taps(W, width)
    extra = (1,) * (g.ndim - 2)
    fy = fy.reshape((-1, 1) + extra)
    fx = fx.reshape((1, -1) + extra)

    rows = g[y0] * (1.0 - fy) + g[y1] * fy
    out = rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx
    # convex weights can round a hair outside the input envelope
    return np.clip(out, g.min(), g.max())
