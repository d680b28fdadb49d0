"""Dual-band correlated-imaging toolkit.

Simulates the speckle-illuminated two-arm acquisition chain, reconstructs
each band by background-subtracted intensity cross-correlation, composes the
bands into a color image, and scores results with PSNR, SSIM, and a
colorfulness index.
"""

__version__ = "0.1.0"

from .config import ConfigError, ExperimentConfig, load_config
from .correlator import (
    ChannelReconstruction,
    CorrelationAccumulator,
    accumulate,
    finalize,
    merge,
    normalize,
)
from .harness import (
    ComparisonRow,
    ConvergenceRow,
    run_channel,
    run_comparison,
    run_convergence,
)
from .metrics import MetricReport, cci, psnr, ssim
from .optics import (
    DetectorNoise,
    FrameRecord,
    MaskParams,
    Psf,
    SpeckleMask,
    bucket_value,
    generate_mask,
    reference_intensity,
    simulate_frames,
)
from .scene import Scene, SpectralChannel, cross_scene, metamer_scene
from .spectral import ColorImage, compose, wavelength_to_rgb

__all__ = [
    "__version__",
    "ChannelReconstruction",
    "ColorImage",
    "ComparisonRow",
    "ConfigError",
    "ConvergenceRow",
    "CorrelationAccumulator",
    "DetectorNoise",
    "ExperimentConfig",
    "FrameRecord",
    "MaskParams",
    "MetricReport",
    "Psf",
    "Scene",
    "SpeckleMask",
    "SpectralChannel",
    "accumulate",
    "bucket_value",
    "cci",
    "compose",
    "cross_scene",
    "finalize",
    "generate_mask",
    "load_config",
    "merge",
    "metamer_scene",
    "normalize",
    "psnr",
    "reference_intensity",
    "run_channel",
    "run_comparison",
    "run_convergence",
    "simulate_frames",
    "ssim",
    "wavelength_to_rgb",
]
