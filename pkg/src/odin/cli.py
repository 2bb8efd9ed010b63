"""Command-line entry point.

Subcommands: fit, detect, simulate, tnpca, eval (table1|table2|stability),
bench.  Every run writes a manifest recording the resolved parameters, the
tool version and timestamps, sufficient to re-execute the run.  Logs go to
stderr; machine-readable output goes to files only.

Exit codes: 0 success, 2 usage/config error, 3 input format error,
4 numerical failure, 5 fit finished without converging (file still
written).  The --threads flag (default: ODIN_THREADS or all cores) fans
out experiment repetitions; it never changes numerical results.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, FormatError, NumericalError
from .estimator import FitConfig, fit, load_fit, save_fit
from .evaluation import (
    bench_scaling,
    default_workers,
    detect_outliers,
    subsample_stability,
    table1_experiment,
    table2_experiment,
    write_scaling_csv,
    write_scaling_json,
    write_stability_csv,
    write_table_csv,
)
from .influence import influence_scores, write_scores_csv
from .networks import read_atlas, read_dataset, write_atlas, write_dataset
from .synthetic import SimConfig, simulate_model, simulate_tnpca, write_labels_csv
from .thresholds import (
    flag_outliers,
    write_curve_csv,
    write_flags_csv,
    write_thresholds_json,
)

logger = logging.getLogger("odin")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_NUMERICAL = 4
EXIT_UNCONVERGED = 5


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


class Manifest:
    """Run record: command, resolved parameters, version, timestamps."""

    def __init__(self, command: str, parameters: dict):
        self.doc = {
            "command": command,
            "parameters": parameters,
            "version": __version__,
            "started": _utcnow(),
        }

    def write(self, path) -> None:
        self.doc["finished"] = _utcnow()
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_pair(dataset_path: str, atlas_path: str):
    atlas = read_atlas(atlas_path)
    dataset = read_dataset(dataset_path, atlas)
    return dataset, atlas


def _fit_config(args) -> FitConfig:
    return FitConfig(lam=args.lam, tol=args.tol, max_iter=args.max_iter)


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lam", type=float, default=0.01, help="ridge weight on z (default 0.01)")
    p.add_argument("--tol", type=float, default=1e-8, help="relative objective-change tolerance")
    p.add_argument("--max-iter", type=int, default=5000, help="iteration cap (default 5000)")


def cmd_fit(args) -> int:
    from .networks import build_design

    manifest = Manifest(
        "fit",
        {
            "dataset": args.dataset,
            "atlas": args.atlas,
            "lam": args.lam,
            "tol": args.tol,
            "max_iter": args.max_iter,
            "out": args.out,
        },
    )
    config = _fit_config(args)
    dataset, atlas = _load_pair(args.dataset, args.atlas)
    design = build_design(atlas)
    result = fit(dataset, design, config)
    save_fit(result, args.out)
    manifest.write(args.out + ".manifest.json")
    trace = result.trace
    logger.info(
        "fit: %d iterations, objective %.6f -> %.6f, converged=%s",
        result.iterations,
        trace[0],
        trace[-1],
        result.converged,
    )
    print(
        f"iterations={result.iterations} objective_start={trace[0]:.17g} "
        f"objective_end={trace[-1]:.17g} converged={int(result.converged)}"
    )
    if not result.converged:
        logger.warning("fit exhausted max_iter=%d without converging", config.max_iter)
        return EXIT_UNCONVERGED
    return EXIT_OK


def cmd_detect(args) -> int:
    from .networks import build_design

    out = _outdir(args.out_dir)
    manifest = Manifest(
        "detect",
        {
            "fit": args.fit,
            "dataset": args.dataset,
            "atlas": args.atlas,
            "sensitivity": args.sensitivity,
            "out_dir": args.out_dir,
        },
    )
    dataset, atlas = _load_pair(args.dataset, args.atlas)
    design = build_design(atlas)
    model = load_fit(args.fit)
    scores = influence_scores(dataset, model, design)
    flags = flag_outliers(scores, args.sensitivity)
    write_scores_csv(scores, os.path.join(out, "scores.csv"))
    write_thresholds_json(flags, os.path.join(out, "thresholds.json"))
    write_flags_csv(flags, os.path.join(out, "flags.csv"))
    write_curve_csv(flags.im1_result, os.path.join(out, "curve_im1.csv"))
    write_curve_csv(flags.im2_result, os.path.join(out, "curve_im2.csv"))
    manifest.write(os.path.join(out, "manifest.json"))
    print(f"flagged {flags.n_flagged} of {dataset.n_subjects} subjects")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = _outdir(args.out_dir)
    params = {
        "n": args.n,
        "v": args.v,
        "hemispheres": args.hemispheres,
        "lobes": args.lobes,
        "outlier_fraction": args.outlier_fraction,
        "flip_fraction": args.flip_fraction,
        "seed": args.seed,
        "out_dir": args.out_dir,
    }
    manifest = Manifest("simulate", params)
    config = SimConfig(
        n=args.n,
        v=args.v,
        hemispheres=args.hemispheres,
        lobes_per_hemisphere=args.lobes,
        outlier_fraction=args.outlier_fraction,
        flip_fraction=args.flip_fraction,
        seed=args.seed,
    )
    labeled = simulate_model(config)
    write_dataset(labeled.dataset, os.path.join(out, "dataset.txt"))
    write_atlas(labeled.dataset.atlas, os.path.join(out, "atlas.tsv"))
    write_labels_csv(labeled, os.path.join(out, "labels.csv"))
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump({k: params[k] for k in params if k != "out_dir"}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.write(os.path.join(out, "manifest.json"))
    print(f"simulated {args.n} subjects, {int(labeled.is_outlier.sum())} outliers")
    return EXIT_OK


def cmd_tnpca(args) -> int:
    out = _outdir(args.out_dir)
    params = {
        "base_dataset": args.base_dataset,
        "atlas": args.atlas,
        "k": args.k,
        "sigma": args.sigma,
        "outlier_fraction": args.outlier_fraction,
        "seed": args.seed,
        "out_dir": args.out_dir,
    }
    manifest = Manifest("tnpca", params)
    base, _ = _load_pair(args.base_dataset, args.atlas)
    labeled = simulate_tnpca(base, args.k, args.sigma, args.outlier_fraction, args.seed)
    write_dataset(labeled.dataset, os.path.join(out, "dataset.txt"))
    write_labels_csv(labeled, os.path.join(out, "labels.csv"))
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump({k: params[k] for k in params if k != "out_dir"}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.write(os.path.join(out, "manifest.json"))
    print(f"embedded and contaminated {base.n_subjects} subjects at sigma={args.sigma}")
    return EXIT_OK


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok]


def cmd_eval(args) -> int:
    out = _outdir(args.out_dir)
    fit_config = _fit_config(args)
    workers = args.threads
    if args.table == "table1":
        fracs = _floats(args.flip_fractions)
        manifest = Manifest(
            "eval table1",
            {
                "flip_fractions": fracs,
                "repetitions": args.reps,
                "seed": args.seed,
                "n": args.n,
                "v": args.v,
                "lam": args.lam,
                "tol": args.tol,
                "max_iter": args.max_iter,
                "sensitivity": args.sensitivity,
                "out_dir": args.out_dir,
            },
        )
        rows = table1_experiment(
            fracs,
            args.reps,
            args.seed,
            n=args.n,
            v=args.v,
            fit_config=fit_config,
            sensitivity=args.sensitivity,
            workers=workers,
        )
        write_table_csv(rows, "flip_fraction", os.path.join(out, "table1.csv"))
        manifest.write(os.path.join(out, "manifest.json"))
        print(f"table1: {len(rows)} rows written")
    elif args.table == "table2":
        sigmas = _floats(args.sigmas)
        manifest = Manifest(
            "eval table2",
            {
                "sigmas": sigmas,
                "repetitions": args.reps,
                "seed": args.seed,
                "k": args.k,
                "n": args.n,
                "v": args.v,
                "lam": args.lam,
                "tol": args.tol,
                "max_iter": args.max_iter,
                "sensitivity": args.sensitivity,
                "out_dir": args.out_dir,
            },
        )
        rows = table2_experiment(
            sigmas,
            args.reps,
            args.seed,
            k=args.k,
            n=args.n,
            v=args.v,
            fit_config=fit_config,
            sensitivity=args.sensitivity,
            workers=workers,
        )
        write_table_csv(rows, "noise_sd", os.path.join(out, "table2.csv"))
        manifest.write(os.path.join(out, "manifest.json"))
        print(f"table2: {len(rows)} rows written")
    else:  # stability
        sizes = _ints(args.sizes)
        manifest = Manifest(
            "eval stability",
            {
                "sizes": sizes,
                "seed": args.seed,
                "n": args.n,
                "v": args.v,
                "flip_fraction": args.flip_fraction,
                "outlier_fraction": args.outlier_fraction,
                "lam": args.lam,
                "tol": args.tol,
                "max_iter": args.max_iter,
                "sensitivity": args.sensitivity,
                "out_dir": args.out_dir,
            },
        )
        config = SimConfig(
            n=args.n,
            v=args.v,
            outlier_fraction=args.outlier_fraction,
            flip_fraction=args.flip_fraction,
            seed=args.seed,
        )
        labeled = simulate_model(config)
        full = detect_outliers(labeled.dataset, None, fit_config, args.sensitivity)
        rows = subsample_stability(
            labeled.dataset,
            full.flags.flags,
            sizes,
            args.seed,
            fit_config=fit_config,
            sensitivity=args.sensitivity,
            workers=workers,
        )
        write_stability_csv(rows, os.path.join(out, "table3.csv"))
        manifest.write(os.path.join(out, "manifest.json"))
        print(f"stability: full run flagged {full.flags.n_flagged}, {len(rows)} sizes written")
    return EXIT_OK


def cmd_bench(args) -> int:
    out = _outdir(args.out_dir)
    grid = _ints(args.grid)
    manifest = Manifest(
        "bench",
        {
            "mode": args.mode,
            "grid": grid,
            "seed": args.seed,
            "iterations": args.iterations,
            "repeats": args.repeats,
            "fixed_n": args.fixed_n,
            "fixed_v": args.fixed_v,
            "parallel": args.parallel,
            "out_dir": args.out_dir,
        },
    )
    report = bench_scaling(
        args.mode,
        grid,
        args.seed,
        iterations=args.iterations,
        repeats=args.repeats,
        fixed_n=args.fixed_n,
        fixed_v=args.fixed_v,
        parallel=args.parallel,
    )
    write_scaling_csv(report, os.path.join(out, f"bench_{args.mode}.csv"))
    write_scaling_json(report, os.path.join(out, f"bench_{args.mode}.json"))
    manifest.write(os.path.join(out, "manifest.json"))
    print(f"bench {args.mode}: exponent={report.exponent:.3f} r2={report.r2:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odin", description="Outlier detection for populations of binary networks."
    )
    parser.add_argument("--version", action="version", version=f"odin {__version__}")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="stderr log level",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker processes for experiment repetitions "
        "(default: ODIN_THREADS or all cores); never affects numerics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the hierarchical logistic model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--atlas", required=True)
    _add_fit_flags(p)
    p.add_argument("--out", required=True, help="output fit JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("detect", help="score a dataset against a fit and flag outliers")
    p.add_argument("--fit", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--atlas", required=True)
    p.add_argument("--sensitivity", type=float, default=1.0, help="knee confirmation offset scale")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate", help="generate a labeled model-based population")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--v", type=int, default=70)
    p.add_argument("--hemispheres", type=int, default=2)
    p.add_argument("--lobes", type=int, default=5)
    p.add_argument("--outlier-fraction", type=float, default=0.1)
    p.add_argument("--flip-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tnpca", help="embedding-perturbation contamination of a base dataset")
    p.add_argument("--base-dataset", required=True)
    p.add_argument("--atlas", required=True)
    p.add_argument("--k", type=int, default=60)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--outlier-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_tnpca)

    p = sub.add_parser("eval", help="run a reproduction study")
    p.add_argument("table", choices=["table1", "table2", "stability"])
    p.add_argument("--flip-fractions", default="0.01,0.02,0.07,0.10,0.15")
    p.add_argument("--sigmas", default="0.010,0.015,0.017,0.020,0.025")
    p.add_argument("--sizes", default="200,500,1000,2000")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--v", type=int, default=70)
    p.add_argument("--k", type=int, default=60)
    p.add_argument("--flip-fraction", type=float, default=0.1, help="stability population flips")
    p.add_argument("--outlier-fraction", type=float, default=0.1)
    p.add_argument("--sensitivity", type=float, default=1.0)
    _add_fit_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="runtime scaling of one pipeline stage")
    p.add_argument(
        "--mode",
        required=True,
        choices=["iter_vs_N", "iter_vs_L", "influence_vs_N", "influence_vs_L"],
    )
    p.add_argument("--grid", required=True, help="comma-separated sizes (N values or V values)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--fixed-n", type=int, default=100)
    p.add_argument("--fixed-v", type=int, default=40)
    p.add_argument("--parallel", action="store_true", help="benchmark with free BLAS pools")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads is None:
        args.threads = default_workers()
    elif args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
