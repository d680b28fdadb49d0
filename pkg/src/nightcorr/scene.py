"""Scenes: per-band reflectance maps plus the wavelength pair of each band.

A scene holds one reflectance map per spectral channel. The probe wavelength
is the (infrared) band that actually illuminates the object; the display
wavelength is the visible band whose color the reconstruction inherits.
Reflectance values live in [0, 1] and all channels share one pixel grid.

Scene files are 8/16-bit grayscale PNG or PGM, one file per channel, scaled
to [0, 1] on load. Two synthetic scenes are bundled for experiments and
tests; the "metamer" scene has two regions that render identically under
visible light but differ between the two infrared bands.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class SpectralChannel:
    """One imaging band: infrared probe wavelength paired with a visible display wavelength."""

    probe_wavelength_nm: float
    display_wavelength_nm: float

    def __post_init__(self) -> None:
        if self.probe_wavelength_nm <= 0 or self.display_wavelength_nm <= 0:
            raise ValueError("channel wavelengths must be positive")
        if self.probe_wavelength_nm == self.display_wavelength_nm:
            raise ValueError("probe and display wavelengths must be distinct")


@dataclass
class Scene:
    """Per-channel reflectance maps of one object.

    reflectance is stored as a (n_channels, height, width) float64 stack.
    """

    channels: list[SpectralChannel]
    reflectance: np.ndarray
    visible_reference: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.reflectance = np.asarray(self.reflectance, dtype=np.float64)
        if self.reflectance.ndim == 2:
            self.reflectance = self.reflectance[None, :, :]
        if self.reflectance.ndim != 3:
            raise ValueError("reflectance must be one 2D map per channel")
        if len(self.channels) < 1:
            raise ValueError("scene needs at least one channel")
        if self.reflectance.shape[0] != len(self.channels):
            raise ValueError(
                f"{len(self.channels)} channels but {self.reflectance.shape[0]} reflectance maps"
            )
        if not np.all(np.isfinite(self.reflectance)):
            raise ValueError("reflectance contains non-finite values")
        if self.reflectance.min() < 0.0 or self.reflectance.max() > 1.0:
            raise ValueError("reflectance values must lie in [0, 1]")
        if self.visible_reference is not None:
            vis = np.asarray(self.visible_reference, dtype=np.float64)
            if vis.ndim != 3 or vis.shape[2] != 3:
                raise ValueError("visible reference must be an RGB image")
            self.visible_reference = vis

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def height(self) -> int:
        return self.reflectance.shape[1]

    @property
    def width(self) -> int:
        return self.reflectance.shape[2]

    def channel_map(self, channel_index: int) -> np.ndarray:
        if not 0 <= channel_index < self.n_channels:
            raise ValueError(f"channel index {channel_index} out of range")
        return self.reflectance[channel_index]

    @classmethod
    def from_files(
        cls,
        paths: list[str | Path],
        channels: list[SpectralChannel],
        visible_reference: str | Path | None = None,
    ) -> "Scene":
        maps = [load_reflectance(p) for p in paths]
        shapes = {m.shape for m in maps}
        if len(shapes) != 1:
            raise ValueError(f"channel maps disagree on dimensions: {sorted(shapes)}")
        vis = load_rgb(visible_reference) if visible_reference is not None else None
        return cls(channels=channels, reflectance=np.stack(maps), visible_reference=vis)


def load_reflectance(path: str | Path) -> np.ndarray:
    """Load one grayscale PNG/PGM channel map, scaled to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scene file not found: {path}")
    with Image.open(path) as img:
        if img.mode == "L":
            arr = np.asarray(img, dtype=np.float64) / 255.0
        elif img.mode in ("I;16", "I;16B", "I;16L"):
            arr = np.asarray(img, dtype=np.float64) / 65535.0
        elif img.mode == "I":
            # Pillow promotes 16-bit grayscale PNG to 32-bit int
            arr = np.asarray(img, dtype=np.float64)
            arr = arr / 65535.0 if arr.max() > 255 else arr / 255.0
        else:
            raise ValueError(f"{path}: expected grayscale image, got mode {img.mode!r}")
    return np.clip(arr, 0.0, 1.0)


def load_rgb(path: str | Path) -> np.ndarray:
    """Load an RGB image, scaled to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def save_reflectance(path: str | Path, values: np.ndarray) -> None:
    """Write a [0, 1] map as 8-bit grayscale PNG/PGM (picked by extension)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("reflectance map must be 2D")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("reflectance values must lie in [0, 1]")
    img = Image.fromarray((np.round(arr * 255.0)).astype(np.uint8), mode="L")
    img.save(path)


# ---------------------------------------------------------------------------
# Bundled synthetic scenes
# ---------------------------------------------------------------------------

DEFAULT_PAIRS = ((785.0, 532.0), (830.0, 635.0))


def cross_scene(width: int = 32, height: int = 32) -> Scene:
    """Single-channel binary test target: a centered plus sign on black."""
    target = np.zeros((height, width))
    bar = max(2, min(width, height) // 6)
    cy, cx = height // 2, width // 2
    target[cy - bar // 2 : cy + (bar + 1) // 2, width // 6 : width - width // 6] = 1.0
    target[height // 6 : height - height // 6, cx - bar // 2 : cx + (bar + 1) // 2] = 1.0
    probe, display = DEFAULT_PAIRS[0]
    vis = np.repeat((0.6 * target)[:, :, None], 3, axis=2)
    return Scene(
        channels=[SpectralChannel(probe, display)],
        reflectance=target[None, :, :],
        visible_reference=vis,
    )


def metamer_scene(width: int = 32, height: int = 32) -> Scene:
    """Two-band scene whose regions are indistinguishable in visible light.

    Both blocks render as the same gray in the visible reference, but the
    left block reflects only in the first infrared band and the right block
    only in the second, so the composed reconstruction separates them by hue.
    """
    left = np.zeros((height, width))
    right = np.zeros((height, width))
    y0, y1 = height // 4, height - height // 4
    left[y0:y1, width // 8 : width // 2 - width // 16] = 1.0
    right[y0:y1, width // 2 + width // 16 : width - width // 8] = 1.0

    band_a = np.clip(left + 0.1 * right, 0.0, 1.0)
    band_b = np.clip(right + 0.1 * left, 0.0, 1.0)

    # identical visible gray for both blocks: a conventional camera sees no contrast between them
    vis_gray = 0.6 * np.clip(left + right, 0.0, 1.0)
    vis = np.repeat(vis_gray[:, :, None], 3, axis=2)

    channels = [SpectralChannel(p, d) for p, d in DEFAULT_PAIRS]
    return Scene(channels=channels, reflectance=np.stack([band_a, band_b]), visible_reference=vis)


BUILTIN_SCENES = {
    "cross": cross_scene,
    "metamer": metamer_scene,
}


def builtin_scene(name: str, width: int, height: int) -> Scene:
    try:
        factory = BUILTIN_SCENES[name]
    except KeyError:
        raise ValueError(f"unknown builtin scene {name!r}; have {sorted(BUILTIN_SCENES)}") from None
    return factory(width=width, height=height)
