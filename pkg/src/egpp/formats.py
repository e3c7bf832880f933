"""Disparity map I/O (PFM, KITTI 16-bit PNG) and evaluation manifests."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .metrics import KITTI_CAMERA, CameraModel


class FormatError(ValueError):
    """A file could not be parsed; the message carries the byte or line offset."""


# --------------------------------------------------------------------------
# PFM


def _read_token_line(data, pos):
    end = data.find(b"\n", pos)
    if end < 0:
        raise FormatError(f"truncated PFM header at byte {pos}")
    return data[pos:end].decode("ascii", errors="replace").strip(), end + 1


def read_pfm(path, channels: Optional[int] = None):
    """Read a PFM file and return a top-to-bottom float32 array.

    ``Pf`` files give (H, W); ``PF`` files give (H, W, 3). If ``channels`` is
    given, a file with a different channel count raises :class:`FormatError`.
    """
    data = Path(path).read_bytes()
    magic, pos = _read_token_line(data, 0)
    if magic == "Pf":
        nc = 1
    elif magic == "PF":
        nc = 3
    else:
        raise FormatError(f"{path}: bad PFM magic {magic!r} at byte 0")
    if channels is not None and channels != nc:
        raise FormatError(f"{path}: expected {channels} channel(s), header {magic!r} has {nc}")

    dims_at = pos
    dims, pos = _read_token_line(data, pos)
    m = re.fullmatch(r"(\d+)\s+(\d+)", dims)
    if not m:
        raise FormatError(f"{path}: malformed dimensions {dims!r} at byte {dims_at}")
    width, height = int(m.group(1)), int(m.group(2))
    if width < 1 or height < 1:
        raise FormatError(f"{path}: non-positive dimensions {width}x{height} at byte {dims_at}")

    scale_at = pos
    scale_txt, pos = _read_token_line(data, pos)
    try:
        scale = float(scale_txt)
    except ValueError:
        raise FormatError(f"{path}: malformed scale {scale_txt!r} at byte {scale_at}") from None
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(f"{path}: invalid scale {scale_txt!r} at byte {scale_at}")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")

    count = width * height * nc
    need = count * 4
    if len(data) - pos < need:
        raise FormatError(
            f"{path}: truncated payload, need {need} bytes from byte {pos}, have {len(data) - pos}")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise FormatError(f"{path}: non-finite value at byte {pos + 4 * bad}")
    shape = (height, width) if nc == 1 else (height, width, 3)
    # rows are stored bottom-to-top
    return np.ascontiguousarray(arr.reshape(shape)[::-1]).astype(np.float32)


def write_pfm(path, grid):
    """Write a (H, W) or (H, W, 3) grid as little-endian PFM (scale -1.0)."""
    arr = np.asarray(grid)
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    elif arr.ndim == 3 and arr.shape[2] == 1:
        magic, arr = b"Pf", arr[..., 0]
    else:
        raise FormatError(f"cannot write shape {arr.shape} as PFM")
    arr = arr.astype("<f4")
    if not np.all(np.isfinite(arr)):
        raise FormatError("refusing to write non-finite values to PFM")
    height, width = arr.shape[:2]
    header = magic + b"\n" + f"{width} {height}\n".encode("ascii") + b"-1.0\n"
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(arr[::-1]).tobytes())


# --------------------------------------------------------------------------
# KITTI 16-bit PNG disparity


def read_png16_disparity(path):
    """Return ``(disparity_px, valid)``; stored value / 256, with 0 meaning invalid."""
    with Image.open(path) as im:
        if im.format != "PNG":
            raise FormatError(f"{path}: not a PNG file")
        if im.mode not in ("I;16", "I;16B", "I;16L", "I"):
            raise FormatError(f"{path}: expected 16-bit single-channel PNG, got mode {im.mode!r}")
        raw = np.array(im)
    if raw.ndim != 2:
        raise FormatError(f"{path}: expected a single channel, got shape {raw.shape}")
    if raw.min() < 0 or raw.max() > 65535:
        raise FormatError(f"{path}: values outside the 16-bit range")
    raw = raw.astype(np.uint16)
    valid = raw > 0
    return raw.astype(np.float64) / 256.0, valid


def write_png16_disparity(path, disp_px, valid=None):
    """Write ``round(disp * 256)`` as a 16-bit PNG; invalid or non-positive pixels store 0."""
    disp = np.asarray(disp_px, dtype=np.float64)
    if disp.ndim != 2:
        raise FormatError(f"16-bit disparity PNG needs a (H, W) array, got {disp.shape}")
    ok = np.isfinite(disp) & (disp > 0)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    stored = np.zeros(disp.shape, dtype=np.uint16)
    stored[ok] = np.clip(np.round(disp[ok] * 256.0), 1, 65535).astype(np.uint16)
    Image.fromarray(stored).save(path, format="PNG")


# --------------------------------------------------------------------------
# generic readers used by the CLI


def read_disparity(path):
    """Read a disparity file by extension. Returns ``(array, valid, units)``.

    PNG files are in pixels; PFM files are returned as stored and reported as
    ``"raw"`` so the caller decides their unit.
    """
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        disp, valid = read_png16_disparity(path)
        return disp, valid, "px"
    if suffix == ".pfm":
        disp = read_pfm(path, channels=1).astype(np.float64)
        return disp, np.ones(disp.shape, dtype=bool), "raw"
    raise FormatError(f"{path}: unsupported extension {suffix!r} (expected .pfm or .png)")


def read_image(path):
    """Read an image as float64 in [0, 1]: PFM as stored, PNG/JPEG scaled by bit depth."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path).astype(np.float64)
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            return np.array(im).astype(np.float64) / 65535.0
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


# --------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    pred_path: Path
    gt_path: Path
    camera: CameraModel
    tag: str = ""
    line: int = 0


@dataclass
class Manifest:
    """Evaluation file list.

    One record per line, tab-separated::

        pred<TAB>gt[<TAB>focal_px<TAB>baseline_m<TAB>width_px][<TAB>tag]

    Blank lines and lines starting with ``#`` are ignored. Relative paths are
    resolved against ``base_dir`` (the manifest's directory).
    """

    entries: list = field(default_factory=list)
    base_dir: Path = Path(".")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def _parse_camera(parts, path, lineno):
    try:
        f, b, w = (float(x) for x in parts)
        return CameraModel(f, b, w)
    except ValueError as exc:
        raise FormatError(f"{path}:{lineno}: bad camera override {parts!r}: {exc}") from None


def load_manifest(path, camera=KITTI_CAMERA):
    """Parse and validate a manifest; camera overrides replace the preset per entry."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    entries = []
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in raw.rstrip("\n").split("\t")]
        tag = ""
        cam = camera
        if len(parts) == 2:
            pass
        elif len(parts) == 3:
            tag = parts[2]
        elif len(parts) in (5, 6):
            cam = _parse_camera(parts[2:5], path, lineno)
            tag = parts[5] if len(parts) == 6 else ""
        else:
            raise FormatError(
                f"{path}:{lineno}: expected 2, 3, 5 or 6 tab-separated fields, got {len(parts)}")
        if not parts[0] or not parts[1]:
            raise FormatError(f"{path}:{lineno}: empty path")
        pred, gt = base / parts[0], base / parts[1]
        key = (str(pred), str(gt))
        if key in seen:
            raise FormatError(
                f"{path}:{lineno}: duplicate pair {parts[0]!r}, {parts[1]!r} (first on line {seen[key]})")
        seen[key] = lineno
        entries.append(ManifestEntry(pred, gt, cam, tag, lineno))
    return Manifest(entries, base)
