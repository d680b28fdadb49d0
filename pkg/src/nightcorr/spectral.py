"""Color composition of monochromatic reconstructions, plus image export.

Each normalized channel map is tinted with the RGB primary of its display
wavelength and the tinted layers are added and clamped. Composition happens
in linear intensity; an sRGB transfer function is optional at PNG export so
metric computation stays linear.

Wavelength -> RGB uses a piecewise-linear approximation of the visible
spectrum. Breakpoints (nm), linear interpolation inside each segment:

    segment      R                G                B
    380 - 440    (440-w)/60       0                1
    440 - 490    0                (w-440)/50       1
    490 - 510    0                1                (510-w)/20
    510 - 580    (w-510)/70       1                0
    580 - 645    1                (645-w)/65       0
    645 - 780    1                0                0

plus an intensity ramp multiplying all components: 0.3 -> 1.0 over
380 - 420 nm and 1.0 -> 0.3 over 700 - 780 nm, 1.0 between.

Raw float image layout (little-endian, documented also in the README):

    offset  size        field
    0       8           magic  b"NVCORRI1"
    8       4           format version, uint32 (currently 1)
    12      4           components per pixel, uint32 (1 gray / 3 RGB)
    16      8           height, uint64
    24      8           width, uint64
    32      8           display wavelength in nm, float64 (NaN if n/a)
    40      8*H*W*C     float64 row-major, components interleaved
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

IMAGE_MAGIC = b"NVCORRI1"
IMAGE_VERSION = 1
_IMG_HEADER = struct.Struct("<8sII QQ d")

VISIBLE_RANGE_NM = (380.0, 780.0)


@dataclass(frozen=True)
class WavelengthPrimary:
    """RGB primary assigned to one display wavelength."""

    wavelength_nm: float
    rgb: tuple[float, float, float]


@dataclass
class ColorImage:
    """Composed RGB image, components in [0, 1]."""

    rgb: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.rgb, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError("ColorImage expects an (H, W, 3) array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("ColorImage contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("ColorImage components must lie in [0, 1]")
        self.rgb = arr

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


def wavelength_to_rgb(wavelength_nm: float) -> tuple[float, float, float]:
    """Linear-intensity RGB primary for a visible wavelength (see module table)."""
    w = float(wavelength_nm)
    lo, hi = VISIBLE_RANGE_NM
    if not lo <= w <= hi:
        raise ValueError(f"wavelength {w} nm outside visible range [{lo}, {hi}]")

    if w < 440.0:
        r, g, b = (440.0 - w) / 60.0, 0.0, 1.0
    elif w < 490.0:
        r, g, b = 0.0, (w - 440.0) / 50.0, 1.0
    elif w < 510.0:
        r, g, b = 0.0, 1.0, (510.0 - w) / 20.0
    elif w < 580.0:
        r, g, b = (w - 510.0) / 70.0, 1.0, 0.0
    elif w < 645.0:
        r, g, b = 1.0, (645.0 - w) / 65.0, 0.0
    else:
        r, g, b = 1.0, 0.0, 0.0

    if w < 420.0:
        att = 0.3 + 0.7 * (w - 380.0) / 40.0
    elif w > 700.0:
        att = 0.3 + 0.7 * (780.0 - w) / 80.0
    else:
        att = 1.0
    return (att * r, att * g, att * b)


def compose(channels: Sequence[tuple[np.ndarray, float]]) -> ColorImage:
    """Additive color composition of (normalized map, display wavelength) layers.

    rgb(x) = clamp(sum_i map_i(x) * primary(lambda_i), 0, 1).
    """
    if len(channels) < 1:
        raise ValueError("compose needs at least one channel")
    maps = [np.asarray(m, dtype=np.float64) for m, _ in channels]
    shape = maps[0].shape
    if any(m.ndim != 2 for m in maps):
        raise ValueError("channel maps must be 2D")
    if any(m.shape != shape for m in maps):
        raise ValueError(f"channel maps disagree on dimensions: {[m.shape for m in maps]}")
    out = np.zeros(shape + (3,), dtype=np.float64)
    for m, (_, wl) in zip(maps, channels):
        if not np.all(np.isfinite(m)):
            raise ValueError("channel map contains non-finite values")
        out += m[:, :, None] * np.asarray(wavelength_to_rgb(wl))
    return ColorImage(rgb=np.clip(out, 0.0, 1.0))


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    """Linear [0, 1] intensity -> sRGB transfer (still [0, 1])."""
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def save_png(path: str | Path, image: ColorImage | np.ndarray, srgb: bool = False) -> None:
    """8-bit PNG export of a gray map or color image; optional sRGB transfer."""
    arr = image.rgb if isinstance(image, ColorImage) else np.asarray(image, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValueError("expected a 2D gray map or (H, W, 3) color image")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    if srgb:
        arr = srgb_encode(arr)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="L" if arr.ndim == 2 else "RGB").save(path, format="PNG")


def save_raw(path: str | Path, image: ColorImage | np.ndarray, display_wavelength_nm: float = math.nan) -> None:
    """Byte-exact float64 export (layout in the module docstring)."""
    arr = image.rgb if isinstance(image, ColorImage) else np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        ncomp = 1
    elif arr.ndim == 3 and arr.shape[2] == 3:
        ncomp = 3
    else:
        raise ValueError("expected a 2D gray map or (H, W, 3) color image")
    h, w = arr.shape[0], arr.shape[1]
    with open(path, "wb") as f:
        f.write(_IMG_HEADER.pack(IMAGE_MAGIC, IMAGE_VERSION, ncomp, h, w, float(display_wavelength_nm)))
        f.write(arr.astype("<f8", copy=False).tobytes())


def load_raw(path: str | Path) -> tuple[np.ndarray, float]:
    """Read a raw float image; returns (array, display_wavelength_nm)."""
    raw = Path(path).read_bytes()
    if len(raw) < _IMG_HEADER.size:
        raise ValueError(f"{path}: truncated raw image")
    magic, version, ncomp, h, w, wl = _IMG_HEADER.unpack_from(raw, 0)
    if magic != IMAGE_MAGIC:
        raise ValueError(f"{path}: not a raw float image (bad magic)")
    if version != IMAGE_VERSION:
        raise ValueError(f"{path}: unsupported raw image version {version}")
    if ncomp not in (1, 3):
        raise ValueError(f"{path}: unsupported component count {ncomp}")
    count = h * w * ncomp
    if len(raw) != _IMG_HEADER.size + 8 * count:
        raise ValueError(f"{path}: raw image size mismatch")
    data = np.frombuffer(raw, "<f8", count, _IMG_HEADER.size)
    shape = (h, w) if ncomp == 1 else (h, w, 3)
    return data.reshape(shape).copy(), wl
