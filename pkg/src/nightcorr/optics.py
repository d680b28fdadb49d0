"""Illumination and detector models for the two-arm correlated-imaging chain.

The modulator imposes a random amplitude pattern on both beams of a channel
pair at once, so a single mask realization feeds both detector models:

  * reference arm — the visible beam never touches the object; a camera
    records the per-pixel intensity  psf ⊛ amplitude².
  * object arm — the infrared beam illuminates the object; a single-element
    detector integrates the reflected power into one scalar per frame,
    Σ_x [psf ⊛ amplitude²](x) · reflectance(x).

Mask statistics: each frame draws an i.i.d. standard-normal field, low-pass
filters it with a Gaussian kernel (periodic boundaries, so the field is
stationary), re-standardizes to zero mean / unit variance, and affine-maps
[-3, +3] onto the configured amplitude range with clamping. The kernel
std. dev. is correlation_length_px / sqrt(2), which makes the *autocorrelation*
of the field Gaussian with std. dev. = correlation_length_px (filtering white
noise with a kernel of std s yields autocorrelation std s·sqrt(2)). Clamping
at ±3 sigma touches < 0.3% of pixels.

Everything is a deterministic function of (seed, frame_index): each frame
derives its own generator, so frames can be produced in any order or in
parallel and still match a sequential run bit for bit.

Detector blur stands in for the free-space propagation between the beam
splitter and each detector. It is applied as convolution with a normalized
kernel using energy-conserving reflective borders: the convolution is done
over a zero-padded canvas and the spill outside the image is folded back in
by reflection. Total intensity is preserved exactly for any normalized
kernel (no energy loss at edges to bias the bucket sum), and for symmetric
kernels the result coincides with ordinary reflect-padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.signal import convolve

from .scene import Scene

# sub-stream tags so mask, reference noise, and bucket noise never share a generator
_STREAM_MASK = 0
_STREAM_REF_NOISE = 1
_STREAM_BUCKET_NOISE = 2

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class MaskParams:
    """Geometry and statistics of the modulator's random amplitude patterns."""

    width: int
    height: int
    correlation_length_px: float = 1.5
    seed: int = 0
    amplitude_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("mask dimensions must be >= 1")
        if self.correlation_length_px < 0:
            raise ValueError("correlation_length_px must be >= 0")
        low, high = self.amplitude_range
        if not (0.0 <= low < high <= 1.0):
            raise ValueError("amplitude_range must satisfy 0 <= low < high <= 1")


@dataclass(frozen=True)
class SpeckleMask:
    """One realization of the modulator pattern."""

    index: int
    amplitude: np.ndarray


@dataclass(frozen=True)
class DetectorNoise:
    """Additive zero-mean Gaussian noise; sigma 0 disables a term."""

    bucket_noise_sigma: float = 0.0
    reference_noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.bucket_noise_sigma < 0 or self.reference_noise_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")


NOISELESS = DetectorNoise()


@dataclass(frozen=True)
class Psf:
    """Detector-side blur kernel; kernel None means no blur (image plane)."""

    kernel: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kernel is None:
            return
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 2:
            raise ValueError("psf kernel must be 2D")
        if k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise ValueError("psf kernel must be odd-sized")
        if np.any(k < 0):
            raise ValueError("psf kernel must be non-negative")
        if abs(float(k.sum()) - 1.0) > 1e-12:
            raise ValueError("psf kernel must sum to 1 within 1e-12")
        object.__setattr__(self, "kernel", k)

    @property
    def is_identity(self) -> bool:
        return self.kernel is None

    @classmethod
    def identity(cls) -> "Psf":
        return cls(kernel=None)

    @classmethod
    def box(cls, size: int) -> "Psf":
        if size < 1 or size % 2 == 0:
            raise ValueError("box psf size must be odd and >= 1")
        k = np.full((size, size), 1.0 / (size * size))
        return cls(kernel=k)

    @classmethod
    def gaussian(cls, sigma: float, radius: int | None = None) -> "Psf":
        if sigma <= 0:
            raise ValueError("gaussian psf sigma must be > 0")
        if radius is None:
            radius = max(1, int(math.ceil(3.0 * sigma)))
        ax = np.arange(-radius, radius + 1, dtype=np.float64)
        g = np.exp(-(ax**2) / (2.0 * sigma**2))
        k = np.outer(g, g)
        return cls(kernel=k / k.sum())


@dataclass(frozen=True)
class FrameRecord:
    """One frame: reference-arm intensity map plus the object-arm bucket scalar."""

    frame_index: int
    reference: np.ndarray
    bucket: float


def _stream_rng(seed: int, frame_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & _U64, frame_index, stream]))


def gaussian_field(params: MaskParams, frame_index: int) -> np.ndarray:
    """Standardized correlated Gaussian field for one frame (pre-clamp).

    Zero mean and unit variance over the field; spatial autocorrelation is
    Gaussian with std. dev. correlation_length_px.
    """
    if frame_index < 0:
        raise ValueError("frame_index must be >= 0")
    rng = _stream_rng(params.seed, frame_index, _STREAM_MASK)
    field = rng.standard_normal((params.height, params.width))
    if params.correlation_length_px > 0:
        field = gaussian_filter(field, sigma=params.correlation_length_px / math.sqrt(2.0), mode="wrap")
    std = field.std()
    if std == 0.0:  # 1x1 field
        return np.zeros_like(field)
    return (field - field.mean()) / std


def generate_mask(params: MaskParams, frame_index: int) -> SpeckleMask:
    """Deterministic mask realization for (params.seed, frame_index)."""
    z = gaussian_field(params, frame_index)
    low, high = params.amplitude_range
    amplitude = low + (np.clip(z, -3.0, 3.0) + 3.0) * ((high - low) / 6.0)
    return SpeckleMask(index=frame_index, amplitude=amplitude)


def apply_psf(image: np.ndarray, psf: Psf) -> np.ndarray:
    """Convolve with the blur kernel, folding edge spill back in by reflection.

    Preserves the total sum exactly for any normalized kernel; identity psf
    returns the input unchanged.
    """
    if psf.is_identity:
        return image
    k = psf.kernel
    ry, rx = k.shape[0] // 2, k.shape[1] // 2
    full = convolve(image, k, mode="full")
    if ry > 0:
        full[2 * ry - 1 : ry - 1 : -1, :] += full[:ry, :]
        full[-ry - 1 : -2 * ry - 1 : -1, :] += full[-ry:, :]
    if rx > 0:
        full[:, 2 * rx - 1 : rx - 1 : -1] += full[:, :rx]
        full[:, -rx - 1 : -2 * rx - 1 : -1] += full[:, -rx:]
    return full[ry : ry + image.shape[0], rx : rx + image.shape[1]]


def reference_intensity(
    mask: SpeckleMask,
    psf: Psf = Psf.identity(),
    noise: DetectorNoise = NOISELESS,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Reference-arm camera image: blurred squared amplitude plus pixel noise."""
    intensity = apply_psf(mask.amplitude**2, psf)
    if noise.reference_noise_sigma > 0:
        if rng is None:
            raise ValueError("rng required when reference noise is enabled")
        intensity = intensity + rng.normal(0.0, noise.reference_noise_sigma, size=intensity.shape)
    return intensity

def bucket_value(
    mask: SpeckleMask,
    scene: Scene,
    channel_index: int,
    psf: Psf = Psf.identity(),
    noise: DetectorNoise = NOISELESS,
    rng: np.random.Generator | None = None,
) -> float:
    """Object-arm scalar: blurred illumination weighted by the channel reflectance, integrated."""
    reflectance = scene.channel_map(channel_index)
    if mask.amplitude.shape != reflectance.shape:
        raise ValueError(
            f"mask {mask.amplitude.shape} does not match scene {reflectance.shape}"
        )
    value = float(np.sum(apply_psf(mask.amplitude**2, psf) * reflectance))
    if noise.bucket_noise_sigma > 0:
        if rng is None:
            raise ValueError("rng required when bucket noise is enabled")
        value += float(rng.normal(0.0, noise.bucket_noise_sigma))
    return value


def simulate_frames(
    scene: Scene,
    channel_index: int,
    mask_params: MaskParams,
    psf: Psf = Psf.identity(),
    noise: DetectorNoise = NOISELESS,
    n_frames: int = 1,
    first_frame: int = 0,
) -> Iterator[FrameRecord]:
    """Yield n_frames records starting at first_frame.

    Frame i is built from generate_mask(mask_params, i); the same mask
    instance feeds both detector models, and noise draws come from per-frame
    sub-streams, so any frame range can be regenerated independently.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if first_frame < 0:
        raise ValueError("first_frame must be >= 0")
    if (mask_params.height, mask_params.width) != (scene.height, scene.width):
        raise ValueError(
            f"mask grid {(mask_params.height, mask_params.width)} does not match "
            f"scene {(scene.height, scene.width)}"
        )
    for i in range(first_frame, first_frame + n_frames):
        mask = generate_mask(mask_params, i)
        ref_rng = (
            _stream_rng(mask_params.seed, i, _STREAM_REF_NOISE)
            if noise.reference_noise_sigma > 0
            else None
        )
        bkt_rng = (
            _stream_rng(mask_params.seed, i, _STREAM_BUCKET_NOISE)
            if noise.bucket_noise_sigma > 0
            else None
        )
        yield FrameRecord(
            frame_index=i,
            reference=reference_intensity(mask, psf, noise, ref_rng),
            bucket=bucket_value(mask, scene, channel_index, psf, noise, bkt_rng),
        )
