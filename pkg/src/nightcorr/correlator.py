"""Streaming estimation of the reference/bucket intensity covariance.

The image is the covariance between the reference-arm pixel intensities and
the bucket scalar:  g(x) = <R(x)·B> − <R(x)><B>.  Subtracting the product of
means removes the DC background, so adding any constant to the bucket or any
fixed offset map to the reference leaves g unchanged.

State is kept as raw-moment sums (n, ΣR, ΣB, ΣR·B) in float64. That makes
accumulators mergeable by plain field-wise addition: disjoint frame
partitions can be accumulated independently, merged in any grouping, and
finalized once at the end.

Checkpoint layout (little-endian, documented also in the README):

    offset  size      field
    0       8         magic  b"NVCORRA1"
    8       4         format version, uint32 (currently 1)
    12      4         reserved, zero
    16      8         height, uint64
    24      8         width, uint64
    32      8         n (frame count), uint64
    40      8         display wavelength in nm, float64 (NaN when unset)
    48      8*H*W     sum_ref, float64 row-major
    ...     8         sum_bucket, float64
    ...     8*H*W     sum_ref_bucket, float64 row-major
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"NVCORRA1"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sII QQQ d")


@dataclass
class ChannelReconstruction:
    """Finalized covariance image for one channel, before normalization."""

    g: np.ndarray
    n_frames: int
    display_wavelength_nm: float = math.nan


class CorrelationAccumulator:
    """Mergeable running sums for the covariance estimator."""

    __slots__ = ("n", "sum_ref", "sum_bucket", "sum_ref_bucket", "display_wavelength_nm")

    def __init__(self, shape: tuple[int, int], display_wavelength_nm: float = math.nan):
        if len(shape) != 2 or shape[0] < 1 or shape[1] < 1:
            raise ValueError("accumulator shape must be (height, width)")
        self.n = 0
        self.sum_ref = np.zeros(shape, dtype=np.float64)
        self.sum_bucket = 0.0
        self.sum_ref_bucket = np.zeros(shape, dtype=np.float64)
        self.display_wavelength_nm = float(display_wavelength_nm)

    @property
    def shape(self) -> tuple[int, int]:
        return self.sum_ref.shape

    def add(self, frame) -> "CorrelationAccumulator":
        """Accumulate one frame (anything with .reference and .bucket)."""
        ref = np.asarray(frame.reference, dtype=np.float64)
        if ref.shape != self.shape:
            raise ValueError(f"frame shape {ref.shape} does not match accumulator {self.shape}")
        b = float(frame.bucket)
        self.n += 1
        self.sum_ref += ref
        self.sum_bucket += b
        self.sum_ref_bucket += ref * b
        return self

    def merge(self, other: "CorrelationAccumulator") -> "CorrelationAccumulator":
        """Field-wise sum of two accumulators; does not modify either input."""
        if other.shape != self.shape:
            raise ValueError(f"cannot merge accumulators of shapes {self.shape} and {other.shape}")
        wl = _merge_wavelength(self.display_wavelength_nm, other.display_wavelength_nm)
        out = CorrelationAccumulator(self.shape, wl)
        out.n = self.n + other.n
        out.sum_ref = self.sum_ref + other.sum_ref
        out.sum_bucket = self.sum_bucket + other.sum_bucket
        out.sum_ref_bucket = self.sum_ref_bucket + other.sum_ref_bucket
        return out

    def copy(self) -> "CorrelationAccumulator":
        out = CorrelationAccumulator(self.shape, self.display_wavelength_nm)
        out.n = self.n
        out.sum_ref = self.sum_ref.copy()
        out.sum_bucket = self.sum_bucket
        out.sum_ref_bucket = self.sum_ref_bucket.copy()
        return out

    def finalize(self) -> ChannelReconstruction:
        """Biased (1/n) covariance image; requires n >= 2."""
        if self.n < 2:
            raise ValueError(f"need at least 2 frames to finalize, have {self.n}")
        n = float(self.n)
        g = self.sum_ref_bucket / n - (self.sum_ref / n) * (self.sum_bucket / n)
        return ChannelReconstruction(g=g, n_frames=self.n, display_wavelength_nm=self.display_wavelength_nm)

    # -- checkpointing ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        h, w = self.shape
        header = _HEADER.pack(
            CHECKPOINT_MAGIC, CHECKPOINT_VERSION, 0, h, w, self.n, self.display_wavelength_nm
        )
        with open(path, "wb") as f:
            f.write(header)
            f.write(self.sum_ref.astype("<f8", copy=False).tobytes())
            f.write(struct.pack("<d", self.sum_bucket))
            f.write(self.sum_ref_bucket.astype("<f8", copy=False).tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "CorrelationAccumulator":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: truncated checkpoint")
        magic, version, _, h, w, n, wl = _HEADER.unpack_from(raw, 0)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not an accumulator checkpoint (bad magic)")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        npix = h * w
        expect = _HEADER.size + 8 * (2 * npix + 1)
        if len(raw) != expect:
            raise ValueError(f"{path}: checkpoint size {len(raw)} != expected {expect}")
        acc = cls((h, w), wl)
        acc.n = n
        off = _HEADER.size
        acc.sum_ref = np.frombuffer(raw, "<f8", npix, off).reshape(h, w).copy()
        off += 8 * npix
        (acc.sum_bucket,) = struct.unpack_from("<d", raw, off)
        off += 8
        acc.sum_ref_bucket = np.frombuffer(raw, "<f8", npix, off).reshape(h, w).copy()
        return acc


def _merge_wavelength(a: float, b: float) -> float:
    if math.isnan(a):
        return b
    if math.isnan(b) or a == b:
        return a
    raise ValueError(f"cannot merge accumulators for different display wavelengths ({a} vs {b})")


def accumulate(acc: CorrelationAccumulator, frame) -> CorrelationAccumulator:
    """Functional alias for CorrelationAccumulator.add."""
    return acc.add(frame)


def merge(a: CorrelationAccumulator, b: CorrelationAccumulator) -> CorrelationAccumulator:
    """Functional alias for CorrelationAccumulator.merge."""
    return a.merge(b)


def finalize(acc: CorrelationAccumulator) -> ChannelReconstruction:
    """Functional alias for CorrelationAccumulator.finalize."""
    return acc.finalize()


NORMALIZE_MODES = ("minmax", "zscore-clip")


def normalize(rec: ChannelReconstruction | np.ndarray, mode: str = "minmax") -> np.ndarray:
    """Map a reconstruction onto [0, 1] for display and metrics.

    minmax      maps [min, max] -> [0, 1]; rejects a constant image.
    zscore-clip maps mean ± 3 sigma -> [0, 1] with clamping; a constant
                image maps to 0.5 everywhere.
    """
    g = rec.g if isinstance(rec, ChannelReconstruction) else np.asarray(rec, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("reconstruction contains non-finite values")
    if mode == "minmax":
        lo, hi = float(g.min()), float(g.max())
        if hi == lo:
            raise ValueError("degenerate reconstruction: constant image under minmax")
        return (g - lo) / (hi - lo)
    if mode == "zscore-clip":
        mu, sigma = float(g.mean()), float(g.std())
        if sigma == 0.0:
            return np.full_like(g, 0.5)
        return np.clip((g - (mu - 3.0 * sigma)) / (6.0 * sigma), 0.0, 1.0)
    raise ValueError(f"unknown normalize mode {mode!r}; expected one of {NORMALIZE_MODES}")
