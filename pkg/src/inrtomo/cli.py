"""Command-line interface.

Subcommands cover the synthetic pipeline end to end: phantom generation,
projection, noise and misalignment injection, tilt subsampling,
preprocessing, both reconstructions, metrics, slab images and the
experiment sweep. Artifact-writing commands drop a ``<output>.manifest.json``
recording the resolved arguments and library versions; manifests carry no
timestamps so identical runs produce identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import baseline, prep, simulate, training
from .geometry import Pose
from .io import (
    TiltSeries,
    manifest_path,
    read_tilt_series,
    read_volume,
    write_manifest,
    write_pgm,
    write_tilt_series,
    write_volume,
)
from .losses import LossConfig
from .metrics import central_slab, slab_ssim, ssim


def _angle_grid(tilt_range: float, tilt_step: float) -> np.ndarray:
    if tilt_step <= 0:
        raise ValueError("tilt step must be positive")
    k = int(np.floor(tilt_range / tilt_step + 1e-9))
    return tilt_step * np.arange(-k, k + 1, dtype=np.float64)


def _angles_from_args(args) -> np.ndarray:
    if args.angles:
        return np.array([float(a) for a in args.angles.split(",")], dtype=np.float64)
    return _angle_grid(args.tilt_range, args.tilt_step)


def _manifest(args, output) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    write_manifest(manifest_path(output), args.command, resolved)


def _load_config(args) -> training.ReconstructionConfig:
    base = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    cfg = training.ReconstructionConfig.from_dict(base) if base else training.ReconstructionConfig()
    if args.workers is None and "workers" not in base and os.environ.get("INRTOMO_WORKERS"):
        cfg.workers = int(os.environ["INRTOMO_WORKERS"])
    overrides = {
        "epochs": args.epochs,
        "hidden_layers": args.hidden_layers,
        "hidden_dim": args.hidden_dim,
        "lr_weights": args.lr_weights,
        "lr_pose": args.lr_pose,
        "warmup_epochs": args.warmup_epochs,
        "batch_per_worker": args.batch_per_worker,
        "workers": args.workers,
        "ray_samples_initial": args.samples_initial,
        "ray_samples_final": args.samples_final,
        "seed": args.seed,
        "verbose": args.verbose,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.no_pose:
        cfg.optimize_pose = False
    if args.early_stop:
        cfg.early_stop = True
    if args.patience is not None:
        cfg.patience = args.patience
    loss_over = {
        "alpha": args.alpha,
        "beta": args.beta,
        "pixel_loss": args.pixel_loss,
    }
    for key, value in loss_over.items():
        if value is not None:
            setattr(cfg.loss, key, value)
    return cfg


def cmd_phantom(args) -> int:
    volume = simulate.make_phantom(size=args.size, seed=args.seed)
    write_volume(args.output, volume)
    _manifest(args, args.output)
    print(f"wrote phantom {args.size}^3 to {args.output}")
    return 0


def cmd_project(args) -> int:
    volume = read_volume(args.volume)
    angles = _angles_from_args(args)
    series = simulate.project_tilt_series(
        volume, angles, n_pixels=args.detector, sample_count=args.samples
    )
    write_tilt_series(args.output, series)
    _manifest(args, args.output)
    print(f"projected {len(angles)} tilts to {args.output}")
    return 0


def cmd_noise(args) -> int:
    series = read_tilt_series(args.series)
    noisy = simulate.add_noise(series, args.dose, seed=args.seed)
    write_tilt_series(args.output, noisy)
    _manifest(args, args.output)
    print(f"applied dose {args.dose} counts/pixel to {args.output}")
    return 0


def cmd_misalign(args) -> int:
    volume = read_volume(args.volume)
    angles = _angles_from_args(args)
    ideal = [Pose(theta=t) for t in np.deg2rad(angles)]
    n_pixels = args.detector or volume.shape[0]
    perturbed, truth = simulate.inject_misalignment(
        ideal,
        np.deg2rad(args.tilt_axis_error),
        args.shift_sigma,
        n_pixels,
        seed=args.seed,
    )
    series = simulate.project_tilt_series(
        volume, angles, poses=perturbed, n_pixels=args.detector, sample_count=args.samples
    )
    write_tilt_series(args.output, series)
    truth_path = args.truth or f"{args.output}.truth.json"
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _manifest(args, args.output)
    print(f"misaligned series ({args.tilt_axis_error} deg, sigma {args.shift_sigma} px) to {args.output}")
    return 0


def cmd_subsample(args) -> int:
    series = read_tilt_series(args.series)
    sub = simulate.subsample_tilts(series, args.max_angle, args.step)
    write_tilt_series(args.output, sub)
    _manifest(args, args.output)
    print(f"kept {len(sub)} of {len(series)} tilts in {args.output}")
    return 0


def cmd_bgsub(args) -> int:
    series = read_tilt_series(args.series)
    degree = tuple(int(d) for d in args.degree.split(","))
    if len(degree) != 2:
        raise ValueError("--degree expects 'dx,dy'")
    out = np.empty_like(series.images)
    for j, img in enumerate(series.images):
        mask = prep.make_background_mask(img, args.mask_quantile)
        model = prep.fit_background(img, mask=mask, degree=degree)
        out[j] = prep.subtract_background(img, model)
    write_tilt_series(args.output, TiltSeries(out, series.angles_deg, series.pixel_size_nm))
    _manifest(args, args.output)
    print(f"background-subtracted {len(series)} images to {args.output}")
    return 0


def cmd_downsample(args) -> int:
    series = read_tilt_series(args.series)
    out = prep.downsample_series(series.images, args.size)
    write_tilt_series(args.output, TiltSeries(out, series.angles_deg, series.pixel_size_nm))
    _manifest(args, args.output)
    print(f"downsampled to {args.size}x{args.size} in {args.output}")
    return 0


def cmd_align_coarse(args) -> int:
    series = read_tilt_series(args.series)
    shifts = baseline.cross_correlation_align(series.images)
    aligned = baseline.apply_shifts(series.images, shifts)
    write_tilt_series(args.output, TiltSeries(aligned, series.angles_deg, series.pixel_size_nm))
    if args.shifts_csv:
        with open(args.shifts_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", "row_shift", "col_shift"])
            for j, (r, c) in enumerate(shifts):
                writer.writerow([j, f"{r:.6f}", f"{c:.6f}"])
    _manifest(args, args.output)
    print(f"aligned {len(series)} images to {args.output}")
    return 0


def cmd_recon_inr(args) -> int:
    series = read_tilt_series(args.series)
    cfg = _load_config(args)
    state = training.reconstruct(series, cfg)
    size = args.volume_size or series.images.shape[1]
    volume = training.export_volume(state.field, size)
    write_volume(args.output, volume)
    checkpoint = args.checkpoint or f"{args.output}.ckpt"
    training.save_checkpoint(checkpoint, state)
    history = args.history or f"{args.output}.history.csv"
    training.write_history_csv(history, state.history)
    _manifest(args, args.output)
    status = "diverged, kept last finite state" if state.diverged else "done"
    print(f"reconstructed {size}^3 volume to {args.output} ({status}, {len(state.history)} epochs)")
    return 0


def cmd_recon_sirt(args) -> int:
    series = read_tilt_series(args.series)
    images = series.images
    if args.align:
        shifts = baseline.cross_correlation_align(images)
        images = baseline.apply_shifts(images, shifts)
    volume = baseline.sirt_reconstruct(
        images,
        series.angles_rad,
        iterations=args.iterations,
        relaxation=args.relaxation,
        positivity=not args.no_positivity,
    )
    write_volume(args.output, volume)
    _manifest(args, args.output)
    print(f"SIRT ({args.iterations} iterations) volume to {args.output}")
    return 0


def cmd_metrics(args) -> int:
    volume = read_volume(args.volume)
    reference = read_volume(args.reference)
    data_range = float(reference.max() - reference.min()) or None
    result = {
        "slab_ssim": slab_ssim(volume, reference, thickness=args.thickness, data_range=data_range),
    }
    if args.ssim:
        result["ssim"] = ssim(volume, reference, data_range=data_range)
    for key, value in result.items():
        print(f"{key}: {value:.4f}")
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _manifest(args, args.output)
    return 0


_SLICE_AXES = {"z": 0, "y": 1, "x": 2}


def cmd_slices(args) -> int:
    volume = read_volume(args.volume)
    slab = central_slab(volume, thickness=args.thickness, axis=_SLICE_AXES[args.axis])
    write_pgm(args.output, slab)
    _manifest(args, args.output)
    print(f"wrote central slab (axis {args.axis}, thickness {args.thickness}) to {args.output}")
    return 0


def _sweep_angles(mode: str, value: float, tilt_step: float) -> np.ndarray:
    if mode == "wedge":
        max_tilt = (180.0 - value) / 2.0
        return _angle_grid(max_tilt, tilt_step)
    if mode == "tilt-step":
        return _angle_grid(90.0, value)
    if mode == "dose":
        return _angle_grid(90.0, tilt_step)
    raise ValueError(f"unknown sweep mode {mode!r}")


def cmd_sweep(args) -> int:
    volume = read_volume(args.volume)
    values = [float(v) for v in args.values.split(",")]
    cfg = _load_config(args)
    data_range = float(volume.max() - volume.min()) or None
    rows = []
    for value in values:
        angles = _sweep_angles(args.mode, value, args.tilt_step)
        series = simulate.project_tilt_series(volume, angles, sample_count=args.samples)
        if args.mode == "dose":
            series = simulate.add_noise(series, value, seed=args.seed)
        state = training.reconstruct(series, cfg)
        inr_vol = training.export_volume(state.field, volume.shape[0])
        sirt_vol = baseline.sirt_reconstruct(
            series.images, series.angles_rad, iterations=args.sirt_iterations
        )
        row = {
            "mode": args.mode,
            "value": value,
            "n_images": len(series),
            "ssim_inr": slab_ssim(inr_vol, volume, data_range=data_range),
            "ssim_sirt": slab_ssim(sirt_vol, volume, data_range=data_range),
        }
        rows.append(row)
        print(
            f"{args.mode} {value:g}: {row['n_images']} tilts, "
            f"INR {row['ssim_inr']:.4f}, SIRT {row['ssim_sirt']:.4f}"
        )
    with open(args.output, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["mode", "value", "n_images", "ssim_inr", "ssim_sirt"])
        writer.writeheader()
        writer.writerows(rows)
    _manifest(args, args.output)
    return 0


def _add_recon_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON reconstruction config; flags override it")
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden-layers", type=int, dest="hidden_layers")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--lr-weights", type=float, dest="lr_weights")
    p.add_argument("--lr-pose", type=float, dest="lr_pose")
    p.add_argument("--warmup-epochs", type=int, dest="warmup_epochs")
    p.add_argument("--batch-per-worker", type=int, dest="batch_per_worker")
    p.add_argument("--workers", type=int)
    p.add_argument("--samples-initial", type=int, dest="samples_initial")
    p.add_argument("--samples-final", type=int, dest="samples_final")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--pixel-loss", choices=["smooth_l1", "mse"], dest="pixel_loss")
    p.add_argument("--no-pose", action="store_true", help="freeze poses at nominal")
    p.add_argument("--early-stop", action="store_true", dest="early_stop")
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--verbose", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inrtomo",
        description="Tilt-series tomography with neural fields and a SIRT baseline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate the synthetic specimen volume")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--size", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("project", help="project a volume into a tilt series")
    p.add_argument("volume")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--tilt-range", type=float, default=90.0, dest="tilt_range")
    p.add_argument("--tilt-step", type=float, default=5.0, dest="tilt_step")
    p.add_argument("--angles", help="explicit comma-separated angles (degrees)")
    p.add_argument("--detector", type=int, help="detector side (default: volume size)")
    p.add_argument("--samples", type=int, help="samples per ray (default: 2 x volume size)")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("noise", help="apply Poisson dose noise to a series")
    p.add_argument("series")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--dose", type=float, required=True, help="counts per pixel at peak intensity")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("misalign", help="project a volume with perturbed poses")
    p.add_argument("volume")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--tilt-range", type=float, default=90.0, dest="tilt_range")
    p.add_argument("--tilt-step", type=float, default=5.0, dest="tilt_step")
    p.add_argument("--angles")
    p.add_argument("--detector", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--tilt-axis-error", type=float, default=0.0, dest="tilt_axis_error",
                   help="systematic z1 offset in degrees")
    p.add_argument("--shift-sigma", type=float, default=0.0, dest="shift_sigma",
                   help="per-image shift sigma in pixels")
    p.add_argument("--truth", help="ground-truth JSON path (default: <output>.truth.json)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_misalign)

    p = sub.add_parser("subsample", help="restrict a series to a coarser tilt grid")
    p.add_argument("series")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--max-angle", type=float, required=True, dest="max_angle")
    p.add_argument("--step", type=float, required=True)
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("bgsub", help="fit and subtract polynomial backgrounds")
    p.add_argument("series")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--degree", default="3,3", help="Bernstein degrees 'dx,dy'")
    p.add_argument("--mask-quantile", type=float, default=0.5, dest="mask_quantile")
    p.set_defaults(func=cmd_bgsub)

    p = sub.add_parser("downsample", help="Fourier-crop a series to a smaller size")
    p.add_argument("series")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--size", type=int, required=True)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("align-coarse", help="cross-correlation stack alignment")
    p.add_argument("series")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--shifts-csv", dest="shifts_csv", help="also write the shift table")
    p.set_defaults(func=cmd_align_coarse)

    p = sub.add_parser("recon-inr", help="neural-field reconstruction")
    p.add_argument("series")
    p.add_argument("-o", "--output", required=True, help="output volume file")
    p.add_argument("--volume-size", type=int, dest="volume_size")
    p.add_argument("--checkpoint", help="default: <output>.ckpt")
    p.add_argument("--history", help="default: <output>.history.csv")
    _add_recon_flags(p)
    p.set_defaults(func=cmd_recon_inr)

    p = sub.add_parser("recon-sirt", help="SIRT baseline reconstruction")
    p.add_argument("series")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--relaxation", type=float, default=1.0)
    p.add_argument("--no-positivity", action="store_true", dest="no_positivity")
    p.add_argument("--align", action="store_true", help="coarse-align the stack first")
    p.set_defaults(func=cmd_recon_sirt)

    p = sub.add_parser("metrics", help="SSIM of a volume against a reference")
    p.add_argument("volume")
    p.add_argument("reference")
    p.add_argument("-o", "--output", help="optional JSON output")
    p.add_argument("--thickness", type=int, default=5)
    p.add_argument("--ssim", action="store_true", help="also compute full-volume SSIM")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("slices", help="write a central-slab PGM image")
    p.add_argument("volume")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--thickness", type=int, default=5)
    p.add_argument("--axis", choices=sorted(_SLICE_AXES), default="y")
    p.set_defaults(func=cmd_slices)

    p = sub.add_parser("sweep", help="experiment grid: wedge / tilt-step / dose")
    p.add_argument("volume", help="ground-truth volume file")
    p.add_argument("-o", "--output", required=True, help="results CSV")
    p.add_argument("--mode", choices=["wedge", "tilt-step", "dose"], required=True)
    p.add_argument("--values", required=True, help="comma-separated sweep values")
    p.add_argument("--tilt-step", type=float, default=5.0, dest="tilt_step",
                   help="base tilt step for wedge/dose modes")
    p.add_argument("--samples", type=int, help="projector samples per ray")
    p.add_argument("--sirt-iterations", type=int, default=100, dest="sirt_iterations")
    _add_recon_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
