"""Run configuration: flat key = value text files plus key=value overrides.

Schema (see configs/example.txt for an annotated example):

    width, height           pixel grid (required for builtin scenes,
                            optional cross-check for file scenes)
    seed                    base seed, 64-bit integer
    corr_len                mask correlation length in pixels, >= 0
    mask_low, mask_high     amplitude range, 0 <= low < high <= 1
    bucket_noise_sigma      additive bucket noise std. dev.
    reference_noise_sigma   additive per-pixel reference noise std. dev.
    psf                     identity | gaussian:<sigma> | box:<odd size>
    n_frames                frames for simulate/compare runs
    budgets                 comma-separated frame ladder for convergence
    normalize               minmax | zscore-clip
    output_dir              artifact directory (default $NIGHTCORR_OUT or ./out)
    threads                 worker threads, 0 = all cores
    scene                   builtin:<name> to use a bundled scene
    visible_reference       RGB image path (builtin scenes bring their own)
    channel.<i>.probe_nm    per-channel table for file-based scenes,
    channel.<i>.display_nm  indices 0, 1, ...
    channel.<i>.scene       grayscale reflectance map path

Unknown keys are rejected (the CLI turns that into exit code 2).
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .correlator import NORMALIZE_MODES
from .optics import DetectorNoise, MaskParams, Psf
from .scene import BUILTIN_SCENES, Scene, SpectralChannel, builtin_scene

OUTPUT_DIR_ENV = "NIGHTCORR_OUT"

DEFAULT_BUDGETS = (10000, 40000, 70000, 100000)

_SCALAR_KEYS = {
    "width",
    "height",
    "seed",
    "corr_len",
    "mask_low",
    "mask_high",
    "bucket_noise_sigma",
    "reference_noise_sigma",
    "psf",
    "n_frames",
    "budgets",
    "normalize",
    "output_dir",
    "threads",
    "scene",
    "visible_reference",
}

_CHANNEL_RE = re.compile(r"^channel\.(\d+)\.(probe_nm|display_nm|scene)$")


class ConfigError(Exception):
    """Invalid configuration: unknown key, bad value, or inconsistent schema."""


@dataclass
class ExperimentConfig:
    """Everything one experiment needs, validated and with files loaded."""

    scene: Scene
    mask_params: MaskParams
    psf: Psf = field(default_factory=Psf.identity)
    noise: DetectorNoise = field(default_factory=DetectorNoise)
    n_frames: int = 50000
    budgets: tuple[int, ...] = DEFAULT_BUDGETS
    normalize_mode: str = "minmax"
    output_dir: Path = Path("out")
    seed: int = 0
    threads: int = 0
    scene_label: str = "scene"

    def __post_init__(self) -> None:
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        budgets = tuple(int(b) for b in self.budgets)
        if len(budgets) < 1:
            raise ConfigError("budgets must not be empty")
        if any(b < 2 for b in budgets):
            raise ConfigError("every budget must be >= 2")
        if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
            raise ConfigError("budgets must be strictly increasing")
        self.budgets = budgets
        if self.normalize_mode not in NORMALIZE_MODES:
            raise ConfigError(f"normalize must be one of {NORMALIZE_MODES}")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")
        if (self.mask_params.height, self.mask_params.width) != (self.scene.height, self.scene.width):
            raise ConfigError("mask grid does not match scene dimensions")
        self.output_dir = Path(self.output_dir)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blank lines ignored."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def apply_overrides(values: Mapping[str, str], overrides: Sequence[str]) -> dict[str, str]:
    """Apply command-line `key=value` overrides on top of parsed config values."""
    merged = dict(values)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if not key:
            raise ConfigError(f"override {item!r} has an empty key")
        merged[key] = value
    return merged


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def parse_psf_spec(spec: str) -> Psf:
    spec = spec.strip().lower()
    if spec == "identity":
        return Psf.identity()
    kind, sep, arg = spec.partition(":")
    try:
        if kind == "gaussian" and sep:
            return Psf.gaussian(float(arg))
        if kind == "box" and sep:
            return Psf.box(int(arg))
    except ValueError as exc:
        raise ConfigError(f"psf: {exc}") from None
    raise ConfigError(f"psf: expected identity, gaussian:<sigma> or box:<size>, got {spec!r}")


def _collect_channels(values: Mapping[str, str]) -> dict[int, dict[str, str]]:
    table: dict[int, dict[str, str]] = {}
    for key, value in values.items():
        m = _CHANNEL_RE.match(key)
        if m is None:
            continue
        table.setdefault(int(m.group(1)), {})[m.group(2)] = value
    return table


def build_experiment_config(values: Mapping[str, str], base_dir: Path | None = None) -> ExperimentConfig:
    """Validate parsed key/value pairs and load scene files into an ExperimentConfig.

    Relative scene paths resolve against base_dir (the config file's
    directory). Schema errors raise ConfigError; missing scene files raise
    FileNotFoundError so callers can tell usage errors from data errors.
    """
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    channel_table = _collect_channels(values)
    channel_keys = {k for k in values if _CHANNEL_RE.match(k)}
    unknown = sorted(set(values) - _SCALAR_KEYS - channel_keys)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")

    width = _parse_int("width", values["width"]) if "width" in values else None
    height = _parse_int("height", values["height"]) if "height" in values else None

    # -- scene ---------------------------------------------------------------
    scene_spec = values.get("scene")
    if scene_spec is not None and channel_table:
        raise ConfigError("give either scene = builtin:<name> or a channel.* table, not both")
    if scene_spec is not None:
        name = scene_spec.strip()
        if not name.startswith("builtin:"):
            raise ConfigError("scene: only builtin:<name> specs are supported here; "
                              "use the channel.* table for scene files")
        name = name[len("builtin:"):]
        if name not in BUILTIN_SCENES:
            raise ConfigError(f"scene: unknown builtin {name!r}; have {sorted(BUILTIN_SCENES)}")
        if width is None or height is None:
            raise ConfigError("builtin scenes require width and height")
        scene = builtin_scene(name, width=width, height=height)
        scene_label = name
    elif channel_table:
        indices = sorted(channel_table)
        if indices != list(range(len(indices))):
            raise ConfigError(f"channel indices must be 0..{len(indices) - 1}, got {indices}")
        channels, paths = [], []
        for i in indices:
            entry = channel_table[i]
            missing = {"probe_nm", "display_nm", "scene"} - set(entry)
            if missing:
                raise ConfigError(f"channel.{i}: missing {', '.join(sorted(missing))}")
            try:
                channels.append(
                    SpectralChannel(
                        probe_wavelength_nm=_parse_float(f"channel.{i}.probe_nm", entry["probe_nm"]),
                        display_wavelength_nm=_parse_float(f"channel.{i}.display_nm", entry["display_nm"]),
                    )
                )
            except ValueError as exc:
                raise ConfigError(f"channel.{i}: {exc}") from None
            paths.append(base / entry["scene"])
        vis = values.get("visible_reference")
        scene = Scene.from_files(paths, channels, visible_reference=base / vis if vis else None)
        scene_label = Path(paths[0]).stem
        if width is not None and width != scene.width:
            raise ConfigError(f"width = {width} but scene files are {scene.width} wide")
        if height is not None and height != scene.height:
            raise ConfigError(f"height = {height} but scene files are {scene.height} tall")
    else:
        raise ConfigError("config needs either scene = builtin:<name> or a channel.* table")

    # -- remaining scalars -----------------------------------------------------
    seed = _parse_int("seed", values.get("seed", "0"))
    try:
        mask_params = MaskParams(
            width=scene.width,
            height=scene.height,
            correlation_length_px=_parse_float("corr_len", values.get("corr_len", "1.5")),
            seed=seed,
            amplitude_range=(
                _parse_float("mask_low", values.get("mask_low", "0.0")),
                _parse_float("mask_high", values.get("mask_high", "1.0")),
            ),
        )
        noise = DetectorNoise(
            bucket_noise_sigma=_parse_float("bucket_noise_sigma", values.get("bucket_noise_sigma", "0")),
            reference_noise_sigma=_parse_float(
                "reference_noise_sigma", values.get("reference_noise_sigma", "0")
            ),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    psf = parse_psf_spec(values.get("psf", "identity"))

    if "budgets" in values:
        budgets = tuple(_parse_int("budgets", part) for part in values["budgets"].split(","))
    else:
        budgets = DEFAULT_BUDGETS

    output_dir = values.get("output_dir") or os.environ.get(OUTPUT_DIR_ENV) or "out"

    return ExperimentConfig(
        scene=scene,
        mask_params=mask_params,
        psf=psf,
        noise=noise,
        n_frames=_parse_int("n_frames", values.get("n_frames", "50000")),
        budgets=budgets,
        normalize_mode=values.get("normalize", "minmax"),
        output_dir=Path(output_dir),
        seed=seed,
        threads=_parse_int("threads", values.get("threads", "0")),
        scene_label=scene_label,
    )


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read, override, validate, and load a config file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    values = parse_config_text(path.read_text(), source=str(path))
    values = apply_overrides(values, overrides)
    return build_experiment_config(values, base_dir=path.parent)
