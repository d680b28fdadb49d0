"""Command-line entry point.

Subcommands: simulate, reconstruct, compose, metrics, convergence, compare,
merge-checkpoints. Exit codes: 0 success, 1 runtime/data error, 2 usage or
config error. Human-readable summaries go to stdout; machine-readable
artifacts (checkpoints, CSV, PNG, raw floats, manifest) go to files.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from .config import OUTPUT_DIR_ENV, ConfigError, load_config
from .correlator import CorrelationAccumulator, normalize, NORMALIZE_MODES
from .harness import (
    accumulate_channel,
    reconstruct_color,
    run_comparison,
    run_convergence,
    write_manifest,
)
from .metrics import MetricReport, cci, psnr, ssim, write_metrics_csv
from .spectral import compose, load_raw, save_png, save_raw


def _default_out() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "out")


def _add_common(p: argparse.ArgumentParser, needs_config: bool) -> None:
    if needs_config:
        p.add_argument("-c", "--config", required=True, help="run config file")
        p.add_argument(
            "-o",
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help="worker threads (1 = sequential)")
    p.add_argument("--output-dir", help=f"artifact directory (default ${OUTPUT_DIR_ENV} or ./out)")
    p.add_argument("-v", "--verbose", action="store_true", help="chattier progress output")


def _load_configured(args: argparse.Namespace):
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    if args.output_dir is not None:
        overrides.append(f"output_dir={args.output_dir}")
    return load_config(args.config, overrides)


def _load_image(path: str | Path) -> np.ndarray:
    """Gray or RGB image in [0, 1] from a raw float dump or PNG/PGM file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    if path.suffix == ".raw":
        data, _ = load_raw(path)
        return data
    with Image.open(path) as img:
        if img.mode in ("RGB", "RGBA", "P"):
            return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        if img.mode == "L":
            return np.asarray(img, dtype=np.float64) / 255.0
        if img.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(img, dtype=np.float64)
            return arr / (65535.0 if arr.max() > 255 else 255.0)
        raise ValueError(f"{path}: unsupported image mode {img.mode!r}")


# -- subcommands --------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_configured(args)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    paths = []
    for ci in range(config.scene.n_channels):
        tci = time.perf_counter()
        acc = accumulate_channel(config, ci, config.n_frames)
        path = out / f"channel_{ci}.ckpt"
        acc.save(path)
        paths.append(str(path))
        if args.verbose:
            print(f"channel {ci}: {acc.n} frames in {time.perf_counter() - tci:.2f}s")
    wall = time.perf_counter() - t0
    write_manifest(out, config, command="simulate", wall_time_s=wall, extra={"checkpoints": paths})
    print(f"simulate: {config.scene.n_channels} checkpoint(s), {config.n_frames} frames each, {wall:.2f}s -> {out}")
    return 0


def cmd_reconstruct(args: argparse.Namespace) -> int:
    accs = [CorrelationAccumulator.load(p) for p in args.checkpoints]
    shapes = {a.shape for a in accs}
    if len(shapes) != 1:
        raise ValueError(f"checkpoints disagree on dimensions: {sorted(shapes)}")
    recs = [acc.finalize() for acc in accs]
    for rec in recs:
        if math.isnan(rec.display_wavelength_nm):
            raise ValueError("checkpoint carries no display wavelength; cannot assign a color")
    maps, color = reconstruct_color(recs, args.normalize)

    out = Path(args.output_dir or _default_out())
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, (m, rec) in enumerate(zip(maps, recs)):
        tinted = compose([(m, rec.display_wavelength_nm)])
        save_png(out / f"channel_{i}.png", tinted, srgb=True)
        save_raw(out / f"channel_{i}.raw", m, display_wavelength_nm=rec.display_wavelength_nm)
        written.append(f"channel_{i}.png")
    if len(recs) >= 2:
        save_png(out / "color.png", color, srgb=True)
        save_raw(out / "color.raw", color)
        written.append("color.png")
    print(f"reconstruct: {len(recs)} channel(s) at {recs[0].n_frames} frames -> {out} ({', '.join(written)})")
    return 0


def cmd_compose(args: argparse.Namespace) -> int:
    layers = []
    wavelengths = None
    if args.wavelengths:
        wavelengths = [float(w) for w in args.wavelengths.split(",")]
        if len(wavelengths) != len(args.channels):
            raise ValueError("--wavelengths count must match the number of channel files")
    for i, p in enumerate(args.channels):
        data, wl = load_raw(p)
        if data.ndim != 2:
            raise ValueError(f"{p}: expected a single-component channel map")
        if wavelengths is not None:
            wl = wavelengths[i]
        if math.isnan(wl):
            raise ValueError(f"{p}: no display wavelength in header; pass --wavelengths")
        layers.append((data, wl))
    color = compose(layers)
    out_png = Path(args.output)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    save_png(out_png, color, srgb=args.srgb)
    if args.raw_output:
        save_raw(args.raw_output, color)
    print(f"compose: {len(layers)} channel(s) -> {out_png}")
    return 0


def cmd_metrics(args: argparse.Namespace) -> int:
    reference = _load_image(args.reference)
    test = _load_image(args.test)
    p = psnr(reference, test)
    if reference.ndim == 3:
        s = float(np.mean([ssim(reference[:, :, k], test[:, :, k]) for k in range(3)]))
        c = cci(test)
    else:
        s = ssim(reference, test)
        c = 0.0
    out = Path(args.output_dir or _default_out())
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", [MetricReport(p, s, c, 0, "pair")])
    print(f"psnr_db={'inf' if math.isinf(p) else f'{p:.4f}'} ssim={s:.6f} cci={c:.4f}")
    return 0


def cmd_convergence(args: argparse.Namespace) -> int:
    config = _load_configured(args)
    rows = run_convergence(config)
    for row in rows:
        mean_psnr = float(np.mean(row.psnr_db))
        mean_ssim = float(np.mean(row.ssim))
        print(
            f"n={row.n_frames}: psnr_db={mean_psnr:.3f} ssim={mean_ssim:.4f} cci={row.cci:.3f}"
        )
    print(f"convergence: {len(rows)} budget(s) -> {config.output_dir / 'convergence.csv'}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    config = _load_configured(args)
    rows = run_comparison(config)
    for row in rows:
        print(f"{row.scene}/{row.image}: cci={row.cci:.4f}")
    print(f"compare: {len(rows)} row(s) -> {config.output_dir / 'comparison.csv'}")
    return 0


def cmd_merge_checkpoints(args: argparse.Namespace) -> int:
    accs = [CorrelationAccumulator.load(p) for p in args.checkpoints]
    merged = accs[0]
    for acc in accs[1:]:
        merged = merged.merge(acc)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    merged.save(out)
    print(f"merge-checkpoints: {len(accs)} shard(s), {merged.n} frames -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nightcorr",
        description="Dual-band correlated-imaging simulation, reconstruction, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate frames and write accumulator checkpoints")
    _add_common(p, needs_config=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="finalize checkpoints into channel and color images")
    p.add_argument("checkpoints", nargs="+", help="accumulator checkpoint files")
    p.add_argument("--normalize", choices=NORMALIZE_MODES, default="minmax")
    _add_common(p, needs_config=False)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("compose", help="compose channel raw maps into a color PNG")
    p.add_argument("channels", nargs="+", help="channel .raw files")
    p.add_argument("--output", required=True, help="output PNG path")
    p.add_argument("--raw-output", help="also write the composed image as raw floats")
    p.add_argument("--wavelengths", help="comma-separated display wavelengths overriding headers")
    p.add_argument("--srgb", action="store_true", help="apply the sRGB transfer on export")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("metrics", help="score a test image against a reference")
    p.add_argument("--reference", required=True)
    p.add_argument("--test", required=True)
    _add_common(p, needs_config=False)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("convergence", help="metric curves over the configured frame budgets")
    _add_common(p, needs_config=True)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("compare", help="colorfulness: visible reference vs reconstruction")
    _add_common(p, needs_config=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("merge-checkpoints", help="merge shard checkpoints into one")
    p.add_argument("checkpoints", nargs="+", help="shard checkpoint files")
    p.add_argument("--output", "-O", required=True, help="merged checkpoint path")
    p.set_defaults(func=cmd_merge_checkpoints)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
