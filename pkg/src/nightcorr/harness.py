"""End-to-end experiment drivers.

run_channel wires the optics model into the correlator for one channel;
run_convergence snapshots a single accumulation pass at several frame
budgets; run_comparison scores colorfulness of the composed reconstruction
against a visible-light reference rendering.

Determinism contract: every frame is a pure function of (seed, channel,
frame index), and accumulation always consumes frames in index order.
Worker threads only parallelize frame *generation* (the harness collects
chunks in order before accumulating), so any thread count produces byte
identical accumulator state, reconstructions, and raw exports. Convergence
snapshots taken mid-pass therefore match an independent run stopped at the
same budget bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .correlator import ChannelReconstruction, CorrelationAccumulator, normalize
from .metrics import MetricReport, cci, psnr, ssim
from .optics import FrameRecord, MaskParams, simulate_frames
from .scene import Scene
from .spectral import ColorImage, compose, save_png, save_raw

_U64 = (1 << 64) - 1
_CHUNK_FRAMES = 256


@dataclass(frozen=True)
class ConvergenceRow:
    """Metrics for one frame budget: per-channel PSNR/SSIM plus color CCI."""

    n_frames: int
    psnr_db: tuple[float, ...]
    ssim: tuple[float, ...]
    cci: float


@dataclass(frozen=True)
class ComparisonRow:
    scene: str
    image: str
    cci: float


def channel_mask_params(config: ExperimentConfig, channel_index: int) -> MaskParams:
    """Per-channel mask parameters: each channel pair gets its own derived seed."""
    derived = np.random.SeedSequence([config.seed & _U64, channel_index]).generate_state(1, np.uint64)[0]
    return replace(config.mask_params, seed=int(derived))


def _resolve_threads(config: ExperimentConfig, threads: int | None) -> int:
    n = config.threads if threads is None else threads
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def _iter_records(
    scene: Scene,
    channel_index: int,
    params: MaskParams,
    config: ExperimentConfig,
    n_frames: int,
    threads: int,
) -> Iterator[FrameRecord]:
    """Frame records 0..n_frames-1, always in index order.

    With threads > 1, chunks are simulated concurrently but yielded in
    order through a bounded submission window, so memory stays flat and
    the consumer sees the exact sequential stream.
    """
    if threads <= 1 or n_frames <= _CHUNK_FRAMES:
        yield from simulate_frames(
            scene, channel_index, params, config.psf, config.noise, n_frames=n_frames
        )
        return

    def chunk(start: int) -> list[FrameRecord]:
        count = min(_CHUNK_FRAMES, n_frames - start)
        return list(
            simulate_frames(
                scene, channel_index, params, config.psf, config.noise,
                n_frames=count, first_frame=start,
            )
        )

    starts = list(range(0, n_frames, _CHUNK_FRAMES))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        window = 2 * threads
        pending = [pool.submit(chunk, s) for s in starts[:window]]
        next_start = window
        while pending:
            records = pending.pop(0).result()
            if next_start < len(starts):
                pending.append(pool.submit(chunk, starts[next_start]))
                next_start += 1
            yield from records


def accumulate_channel(
    config: ExperimentConfig,
    channel_index: int,
    n_frames: int,
    threads: int | None = None,
    snapshots: Sequence[int] = (),
    on_snapshot: Callable[[int, CorrelationAccumulator], None] | None = None,
) -> CorrelationAccumulator:
    """One accumulation pass; optionally reports the accumulator at given budgets."""
    scene = config.scene
    params = channel_mask_params(config, channel_index)
    acc = CorrelationAccumulator(
        (scene.height, scene.width),
        display_wavelength_nm=scene.channels[channel_index].display_wavelength_nm,
    )
    pending = sorted(set(snapshots))
    if pending and pending[-1] > n_frames:
        raise ValueError(f"snapshot budget {pending[-1]} exceeds n_frames {n_frames}")
    nthreads = _resolve_threads(config, threads)
    for record in _iter_records(scene, channel_index, params, config, n_frames, nthreads):
        acc.add(record)
        if pending and acc.n == pending[0]:
            pending.pop(0)
            if on_snapshot is not None:
                on_snapshot(acc.n, acc)
    return acc


def run_channel(
    config: ExperimentConfig,
    channel_index: int,
    n_frames: int | None = None,
    threads: int | None = None,
) -> ChannelReconstruction:
    """Simulate and reconstruct one channel; deterministic given config.seed."""
    n = config.n_frames if n_frames is None else n_frames
    return accumulate_channel(config, channel_index, n, threads=threads).finalize()


def reconstruct_color(
    reconstructions: Sequence[ChannelReconstruction],
    normalize_mode: str = "minmax",
) -> tuple[list[np.ndarray], ColorImage]:
    """Normalize each channel and compose the color image."""
    maps = [normalize(rec, normalize_mode) for rec in reconstructions]
    color = compose([(m, rec.display_wavelength_nm) for m, rec in zip(maps, reconstructions)])
    return maps, color


def _channel_label(scene: Scene, i: int) -> str:
    ch = scene.channels[i]
    return f"ch{i}_{ch.probe_wavelength_nm:g}to{ch.display_wavelength_nm:g}nm"


def run_convergence(
    config: ExperimentConfig,
    threads: int | None = None,
    emit_files: bool = True,
) -> list[ConvergenceRow]:
    """Metric curves over the configured frame budgets.

    One accumulator pass per channel, snapshotting at each budget; no
    re-simulation. Writes convergence.csv plus per-budget color PNG and
    raw exports under config.output_dir unless emit_files is False.
    """
    scene = config.scene
    budgets = list(config.budgets)
    total = budgets[-1]
    t0 = time.perf_counter()

    # snapshots[budget][channel] -> finalized reconstruction
    snapshots: dict[int, dict[int, ChannelReconstruction]] = {b: {} for b in budgets}
    for ci in range(scene.n_channels):
        def keep(n_done: int, acc: CorrelationAccumulator, ci: int = ci) -> None:
            snapshots[n_done][ci] = acc.finalize()

        accumulate_channel(config, ci, total, threads=threads, snapshots=budgets, on_snapshot=keep)

    out = Path(config.output_dir)
    if emit_files:
        out.mkdir(parents=True, exist_ok=True)

    rows: list[ConvergenceRow] = []
    for b in budgets:
        recs = [snapshots[b][ci] for ci in range(scene.n_channels)]
        maps, color = reconstruct_color(recs, config.normalize_mode)
        psnrs = tuple(psnr(scene.channel_map(ci), maps[ci]) for ci in range(scene.n_channels))
        ssims = tuple(ssim(scene.channel_map(ci), maps[ci]) for ci in range(scene.n_channels))
        rows.append(ConvergenceRow(n_frames=b, psnr_db=psnrs, ssim=ssims, cci=cci(color)))
        if emit_files:
            save_png(out / f"color_{b:08d}.png", color, srgb=True)
            save_raw(out / f"color_{b:08d}.raw", color)
            for ci, rec in enumerate(recs):
                save_raw(
                    out / f"{_channel_label(scene, ci)}_{b:08d}.raw",
                    maps[ci],
                    display_wavelength_nm=rec.display_wavelength_nm,
                )

    if emit_files:
        _write_convergence_csv(out / "convergence.csv", scene, rows)
        write_manifest(out, config, command="convergence", wall_time_s=time.perf_counter() - t0)
    return rows


def _write_convergence_csv(path: Path, scene: Scene, rows: Sequence[ConvergenceRow]) -> None:
    header = ["n_frames"]
    for i in range(scene.n_channels):
        header += [f"psnr_db_{_channel_label(scene, i)}", f"ssim_{_channel_label(scene, i)}"]
    header.append("cci")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            cells: list[str] = [str(row.n_frames)]
            for p, s in zip(row.psnr_db, row.ssim):
                cells += ["inf" if math.isinf(p) else repr(p), repr(s)]
            cells.append(repr(row.cci))
            writer.writerow(cells)


def convergence_reports(scene: Scene, rows: Sequence[ConvergenceRow]) -> list[MetricReport]:
    """Flatten convergence rows into per-channel metric reports."""
    reports = []
    for row in rows:
        for i, (p, s) in enumerate(zip(row.psnr_db, row.ssim)):
            reports.append(MetricReport(p, s, row.cci, row.n_frames, _channel_label(scene, i)))
    return reports


def run_comparison(
    config: ExperimentConfig,
    visible_reference: np.ndarray | None = None,
    extra_scenes: Sequence[tuple[str, Scene]] = (),
    threads: int | None = None,
    emit_files: bool = True,
) -> list[ComparisonRow]:
    """Colorfulness of the visible-light rendering vs the composed reconstruction.

    The config's scene is always scored; extra (label, scene) pairs are
    scored in the same run. Every scene needs a visible reference (RGB),
    either passed explicitly (config scene only) or carried by the scene.
    """
    t0 = time.perf_counter()
    entries: list[tuple[str, Scene, np.ndarray]] = []
    vis = visible_reference if visible_reference is not None else config.scene.visible_reference
    if vis is None:
        raise ValueError("comparison needs a visible reference image for the scene")
    entries.append((config.scene_label, config.scene, np.asarray(vis, dtype=np.float64)))
    for label, scene in extra_scenes:
        if scene.visible_reference is None:
            raise ValueError(f"scene {label!r} has no visible reference image")
        entries.append((label, scene, scene.visible_reference))

    rows: list[ComparisonRow] = []
    colors: list[tuple[str, ColorImage]] = []
    for label, scene, vis_rgb in entries:
        sub = replace(
            config,
            scene=scene,
            mask_params=replace(config.mask_params, width=scene.width, height=scene.height),
            scene_label=label,
        )
        recs = [run_channel(sub, ci, threads=threads) for ci in range(scene.n_channels)]
        _, color = reconstruct_color(recs, config.normalize_mode)
        rows.append(ComparisonRow(scene=label, image="visible", cci=cci(np.clip(vis_rgb, 0.0, 1.0))))
        rows.append(ComparisonRow(scene=label, image="reconstruction", cci=cci(color)))
        colors.append((label, color))

    if emit_files:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "comparison.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["scene", "image", "cci"])
            for row in rows:
                writer.writerow([row.scene, row.image, repr(row.cci)])
        for label, color in colors:
            save_png(out / f"comparison_{label}.png", color, srgb=True)
        write_manifest(out, config, command="compare", wall_time_s=time.perf_counter() - t0)
    return rows


def config_echo(config: ExperimentConfig) -> dict:
    """Effective configuration as a plain dict for the run manifest."""
    ch = [
        {
            "probe_nm": c.probe_wavelength_nm,
            "display_nm": c.display_wavelength_nm,
        }
        for c in config.scene.channels
    ]
    psf = config.psf
    return {
        "width": config.scene.width,
        "height": config.scene.height,
        "channels": ch,
        "scene": config.scene_label,
        "seed": config.seed,
        "corr_len": config.mask_params.correlation_length_px,
        "amplitude_range": list(config.mask_params.amplitude_range),
        "bucket_noise_sigma": config.noise.bucket_noise_sigma,
        "reference_noise_sigma": config.noise.reference_noise_sigma,
        "psf": "identity" if psf.is_identity else f"kernel{tuple(psf.kernel.shape)}",
        "n_frames": config.n_frames,
        "budgets": list(config.budgets),
        "normalize": config.normalize_mode,
        "threads": config.threads,
        "output_dir": str(config.output_dir),
    }


def write_manifest(
    out_dir: Path,
    config: ExperimentConfig,
    command: str,
    wall_time_s: float,
    extra: dict | None = None,
) -> Path:
    """Reproducibility record: config echo, seed, versions, timing."""
    import numpy
    import scipy

    manifest = {
        "command": command,
        "config": config_echo(config),
        "seed": config.seed,
        "wall_time_s": wall_time_s,
        "versions": {
            "nightcorr": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        manifest.update(extra)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
