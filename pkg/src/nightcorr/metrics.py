"""Image quality metrics: PSNR, SSIM, and a colorfulness index.

PSNR uses peak 1.0 and averages the squared error over every sample
(all three components for color images); identical inputs report +inf.

SSIM follows the standard windowed form: 11x11 Gaussian window with
sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range L = 1, local statistics
weighted by the window, mean taken over all fully-valid window positions.

The colorfulness index (CCI) is the Hasler/Suesstrunk statistic over the
opponent components rg = R - G and yb = (R + G)/2 - B, computed on 8-bit
scaled values:

    CCI = sqrt(var(rg) + var(yb)) + 0.3 * sqrt(mean(rg)^2 + mean(yb)^2)

Any grayscale image scores exactly 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .spectral import ColorImage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    """One evaluated image: quality scores plus the frame budget that produced it."""

    psnr_db: float
    ssim: float
    cci: float
    n_frames: int
    channel_or_color: str


def _check_pair(reference: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: reference {a.shape} vs test {b.shape}")
    for name, x in (("reference", a), ("test", b)):
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{name} image contains non-finite values")
        if x.min() < 0.0 or x.max() > 1.0:
            raise ValueError(f"{name} image values must lie in [0, 1]")
    return a, b


def psnr(reference: np.ndarray, test: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB against peak 1.0; +inf for identical inputs."""
    a, b = _check_pair(reference, test)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _ssim_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(ax**2) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(reference: np.ndarray, test: np.ndarray) -> float:
    """Mean local structural similarity over a Gaussian-weighted sliding window."""
    a, b = _check_pair(reference, test)
    if a.ndim != 2:
        raise ValueError("ssim expects 2D maps")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window")

    w = _ssim_window()
    mu_a = fftconvolve(a, w, mode="valid")
    mu_b = fftconvolve(b, w, mode="valid")
    var_a = fftconvolve(a * a, w, mode="valid") - mu_a**2
    var_b = fftconvolve(b * b, w, mode="valid") - mu_b**2
    cov = fftconvolve(a * b, w, mode="valid") - mu_a * mu_b

    c1 = SSIM_K1**2  # (K1*L)^2 with L = 1
    c2 = SSIM_K2**2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def cci(image: ColorImage | np.ndarray) -> float:
    """Colorfulness of an RGB image (see module docstring for the formula)."""
    rgb = image.rgb if isinstance(image, ColorImage) else np.asarray(image, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("cci expects an (H, W, 3) RGB image")
    if rgb.min() < 0.0 or rgb.max() > 1.0:
        raise ValueError("RGB components must lie in [0, 1]")
    r, g, b = rgb[:, :, 0] * 255.0, rgb[:, :, 1] * 255.0, rgb[:, :, 2] * 255.0
    rg = r - g
    yb = 0.5 * (r + g) - b
    sigma = math.sqrt(float(np.var(rg)) + float(np.var(yb)))
    mu = math.sqrt(float(np.mean(rg)) ** 2 + float(np.mean(yb)) ** 2)
    return sigma + 0.3 * mu


def write_metrics_csv(path: str | Path, reports: Sequence[MetricReport]) -> None:
    """CSV rows (n_frames, psnr_db, ssim, cci, label) for downstream plotting."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["n_frames", "psnr_db", "ssim", "cci", "label"])
        for r in reports:
            writer.writerow(
                [r.n_frames, _fmt(r.psnr_db), _fmt(r.ssim), _fmt(r.cci), r.channel_or_color]
            )


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return repr(float(x))
