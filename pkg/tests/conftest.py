from __future__ import annotations

import numpy as np
import pytest

from nightcorr.config import ExperimentConfig
from nightcorr.optics import MaskParams
from nightcorr.scene import Scene, SpectralChannel, cross_scene, metamer_scene


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_scene() -> Scene:
    """16x16 single-channel scene with a mid-gray gradient target."""
    x = np.linspace(0.0, 1.0, 16)
    target = np.outer(np.ones(16), x)
    return Scene(channels=[SpectralChannel(785.0, 532.0)], reflectance=target[None])


def make_config(scene: Scene, seed: int = 7, **kwargs) -> ExperimentConfig:
    defaults = dict(
        scene=scene,
        mask_params=MaskParams(scene.width, scene.height, correlation_length_px=1.5, seed=seed),
        n_frames=200,
        budgets=(50, 100),
        seed=seed,
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


@pytest.fixture
def cross_config() -> ExperimentConfig:
    return make_config(cross_scene(32, 32), seed=20260809)


@pytest.fixture
def metamer_config() -> ExperimentConfig:
    return make_config(metamer_scene(32, 32), seed=5)
