"""``burstsfm`` command line: merge, bench, eval-traj, metrics, synth, align-debug.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, imgio, merge, traj
from .align import align_burst, build_align_pyramid
from .config import POST_FILTERS, PipelineConfig
from .exceptions import BurstError, NumericalError
from .filters import apply_post_filter

log = logging.getLogger("burstsfm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (BurstError, OSError, ValueError, ArithmeticError) as exc:
        raise StageError(name, exc) from exc


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


# --- merge ------------------------------------------------------------------

def _pipeline_config(args) -> PipelineConfig:
    overrides = {
        "tile_size": args.tile_size,
        "c": args.c,
        "sigma2": args.sigma2,
        "post": args.post,
        "n_levels": args.levels,
        "search_radii": args.search_radii,
        "wiener_strength": args.wiener_strength,
        "wiener_exponent": args.wiener_exponent,
        "bilateral_radius": args.bilateral_radius,
        "bilateral_sigma_spatial": args.bilateral_sigma_spatial,
        "bilateral_sigma_range": args.bilateral_sigma_range,
    }
    return PipelineConfig.from_file(args.config, overrides)


def _load_dark(paths, meta):
    return imgio.DarkFrame.average([imgio.load_raw(p, meta) for p in paths])


def cmd_merge(args) -> int:
    config = _stage("config", _pipeline_config, args)
    burst_dir = Path(args.burst_dir)
    raw_burst = _stage("load", imgio.load_burst, burst_dir, as_raw=True)
    meta = imgio.read_manifest(burst_dir / "manifest.txt")
    raws = raw_burst.frames
    if args.dark:
        dark = _stage("dark", _load_dark, args.dark, meta)
        raws = [_stage("dark", imgio.subtract_dark, r, dark) for r in raws]
    gray = [_stage("gray", imgio.raw_to_gray, r) for r in raws]
    burst = imgio.Burst(gray, raw_burst.reference_index, raw_burst.schedule)

    for msg in config.validate(gray[0].shape):
        print(f"warning: {msg}", file=sys.stderr)

    fields = _stage("align", align_burst, burst, config.align)
    if args.mode == "bayer":
        if raws[0].bayer_pattern == "NONE":
            raise StageError("merge", imgio.DataError("--mode bayer needs a Bayer burst"))
        planes, plane_stats = _stage("merge", merge.merge_bayer_burst, raws, fields,
                                     burst.reference_index, config.merge)
        merged_raw = imgio.recombine_bayer_planes(planes, raws[0].bit_depth,
                                                  raws[0].bayer_pattern)
        if args.raw_output:
            _stage("save", imgio.save_raw, merged_raw, args.raw_output)
        image = imgio.bayer_to_gray(merged_raw)
        stats = plane_stats[0]
    else:
        image, stats = _stage("merge", merge.merge_burst, burst, fields, config.merge)

    image = _stage("post", apply_post_filter, image, config.post, config.wiener,
                   config.bilateral)
    if not np.all(np.isfinite(image)):
        raise StageError("merge", NumericalError("merged image contains non-finite values"))
    _stage("save", imgio.save_gray, image, args.output, args.bit_depth)
    if args.stats:
        _stage("save", stats.to_csv, args.stats)
    print(f"merged {len(burst)} frames (reference {burst.reference_index}) -> {args.output}")
    return EXIT_OK


# --- bench ------------------------------------------------------------------

def cmd_bench(args) -> int:
    if args.n_seeds < 1:
        raise StageError("config", imgio.ConfigError("--n-seeds must be >= 1"))
    seeds = list(range(args.seed, args.seed + args.n_seeds))
    spec = _stage("config", bench.BurstSpec, n_frames=args.frames,
                  noise_is_variance=args.noise_as_variance)
    rows = _stage("bench", bench.run_pipeline_comparison, bench.make_scene, spec,
                  args.thresholds, args.sigmas, seeds)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "noise_sweep.csv"
    _stage("save", bench.sweep_to_csv, rows, path)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


# --- eval-traj --------------------------------------------------------------

def cmd_eval_traj(args) -> int:
    est = _stage("load", traj.load_trajectory, args.est)
    gt = _stage("load", traj.load_trajectory, args.gt)
    result = _stage("evaluate", traj.evaluate_trajectory, est, gt, args.scale,
                    not args.scale_only)
    for line in result.summary_lines():
        print(line)
    if args.csv:
        _stage("save", result.to_csv, args.csv)
    return EXIT_OK


# --- metrics ----------------------------------------------------------------

def _read_counts(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"keypoints", "putative", "inliers"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise imgio.DataError(f"{path}: CSV needs columns {sorted(need)}")
        rows = []
        for i, row in enumerate(reader):
            try:
                counts = tuple(float(row[k]) for k in ("keypoints", "putative", "inliers"))
            except (TypeError, ValueError) as exc:
                raise imgio.DataError(f"{path}: row {i + 1}: {exc}") from exc
            rows.append((row.get("name") or str(i), *counts))
    return rows


def cmd_metrics(args) -> int:
    rows = _stage("load", _read_counts, args.counts)
    out = [("name", "match_ratio", "precision", "matching_score", "degenerate")]
    for name, k, p, i in rows:
        m = _stage("metrics", bench.sfm_feature_metrics, k, p, i)
        out.append((name, f"{m.match_ratio:.6g}", f"{m.precision:.6g}",
                    f"{m.matching_score:.6g}", int(m.degenerate)))
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerows(out)
    if args.output:
        with open(args.output, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(out)
    return EXIT_OK


# --- synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    scene = _stage("synth", bench.make_scene, args.seed)
    spec = _stage("config", bench.BurstSpec, n_frames=args.frames, noise=args.sigma,
                  noise_is_variance=args.noise_as_variance)
    burst, shifts = _stage("synth", bench.synth_burst, scene, spec, args.seed)
    out = Path(args.out_dir)
    imgio.save_burst(out, burst.frames, burst.schedule)
    with open(out / "scene.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "radius"])
        for d in scene.disks:
            w.writerow([f"{d.x:.6f}", f"{d.y:.6f}", f"{d.radius:.6f}"])
    with open(out / "shifts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "tx", "ty"])
        for z, (tx, ty) in enumerate(shifts):
            w.writerow([z, f"{tx:.6f}", f"{ty:.6f}"])
    if args.clean:
        imgio.save_gray(bench.render_scene(scene.translated(*shifts[burst.reference_index])),
                        out / "clean_reference.pgm")
    print(f"wrote {len(burst)}-frame burst to {out}")
    return EXIT_OK


# --- align-debug ------------------------------------------------------------

def cmd_align_debug(args) -> int:
    config = _stage("config", PipelineConfig.from_file, args.config, {"n_levels": args.levels})
    burst = _stage("load", imgio.load_burst, args.burst_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for msg in config.validate(burst.shape):
        print(f"warning: {msg}", file=sys.stderr)
    if args.dump_pyramid:
        pyr = _stage("pyramid", build_align_pyramid, burst.reference, config.align)
        for k, level in enumerate(pyr.levels):
            imgio.save_gray(level, out / f"pyramid_level_{k}.pgm")
    fields = _stage("align", align_burst, burst, config.align)
    for z, f in enumerate(fields):
        f.to_csv(out / f"displacement_{z:03d}.csv")
        print(f"frame {z}: reliable {f.reliable.mean():.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="burstsfm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("merge", help="align and merge one burst directory")
    m.add_argument("burst_dir")
    m.add_argument("--output", "-o", required=True)
    m.add_argument("--config", help="key=value pipeline config file")
    m.add_argument("--tile-size", type=int)
    m.add_argument("--c", type=float)
    m.add_argument("--sigma2", help="noise variance or 'auto'")
    m.add_argument("--levels", type=int)
    m.add_argument("--search-radii", help="comma list, finest level first")
    m.add_argument("--post", choices=POST_FILTERS)
    m.add_argument("--wiener-strength", type=float)
    m.add_argument("--wiener-exponent", type=float)
    m.add_argument("--bilateral-radius", type=int)
    m.add_argument("--bilateral-sigma-spatial", type=float)
    m.add_argument("--bilateral-sigma-range")
    m.add_argument("--dark", nargs="+", help="dark raw frame(s) to average and subtract")
    m.add_argument("--mode", choices=("gray", "bayer"), default="gray")
    m.add_argument("--raw-output", help="merged raw frame (bayer mode)")
    m.add_argument("--bit-depth", type=int, choices=(8, 16), default=16)
    m.add_argument("--stats", help="write MergeStats CSV here")
    m.set_defaults(func=cmd_merge)

    b = sub.add_parser("bench", help="synthetic disk-scene noise sweep")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--n-seeds", type=int, default=10)
    b.add_argument("--sigmas", type=_floats, default=[0.03, 0.05, 0.07, 0.1])
    b.add_argument("--thresholds", type=_floats, default=[0.006, 0.01, 0.015, 0.02, 0.03])
    b.add_argument("--frames", type=int, default=7)
    b.add_argument("--noise-as-variance", action="store_true",
                   help="interpret --sigmas as variances")
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("eval-traj", help="ATE / RPE of an estimated trajectory")
    e.add_argument("--est", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--scale", choices=("first-pair", "none"), default="first-pair")
    e.add_argument("--scale-only", action="store_true", help="skip rigid alignment")
    e.add_argument("--csv", help="per-pose error CSV")
    e.set_defaults(func=cmd_eval_traj)

    mt = sub.add_parser("metrics", help="match ratio / precision / matching score")
    mt.add_argument("counts", help="CSV with keypoints,putative,inliers columns")
    mt.add_argument("--output")
    mt.set_defaults(func=cmd_metrics)

    s = sub.add_parser("synth", help="render a synthetic noisy burst to disk")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sigma", type=float, default=0.03)
    s.add_argument("--frames", type=int, default=7)
    s.add_argument("--noise-as-variance", action="store_true")
    s.add_argument("--clean", action="store_true", help="also write the clean reference")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("align-debug", help="dump displacement fields as CSV")
    a.add_argument("burst_dir")
    a.add_argument("--out-dir", required=True)
    a.add_argument("--config")
    a.add_argument("--levels", type=int)
    a.add_argument("--dump-pyramid", action="store_true")
    a.set_defaults(func=cmd_align_debug)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc.cause}", file=sys.stderr)
        if isinstance(exc.cause, NumericalError):
            return EXIT_NUMERIC
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
