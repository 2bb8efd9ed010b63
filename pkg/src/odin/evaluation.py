"""Study drivers: detection metrics, reproduction tables, stability, scaling.

Experiment repetitions derive their seeds from SeedSequence children of the
driver seed, are pinned to single-threaded BLAS pools, and may fan out over
worker processes; results are collected by index, so tables are
byte-identical for any worker count.  Benchmarks time only the targeted
stage (precomputation excluded), single-threaded by default, median of
three runs after one discarded warm-up.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import multiprocessing
import os
import time

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigError, DataError
from .estimator import FitConfig, ModelFit, fit, initial_state, mm_precompute, _mm_loop
from .influence import InfluenceScores, influence_scores
from .networks import DesignMatrix, NetworkDataset, build_design
from .synthetic import SimConfig, simulate_model, simulate_tnpca, tnpca_fit
from .thresholds import OutlierFlags, flag_outliers

BENCH_MODES = ("iter_vs_N", "iter_vs_L", "influence_vs_N", "influence_vs_L")


@dataclasses.dataclass(frozen=True)
class ConfusionSummary:
    """Outlier-positive confusion counts."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def sensitivity(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else float("nan")

    @property
    def specificity(self) -> float:
        neg = self.tn + self.fp
        return self.tn / neg if neg else float("nan")


def confusion(flags: np.ndarray, truth: np.ndarray) -> ConfusionSummary:
    """Count tp/fp/tn/fn with planted outliers as the positive class."""
    f = np.asarray(flags, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if f.shape != t.shape:
        raise DataError(f"flags and truth lengths differ: {f.shape} vs {t.shape}")
    return ConfusionSummary(
        tp=int((f & t).sum()),
        fp=int((f & ~t).sum()),
        tn=int((~f & ~t).sum()),
        fn=int((~f & t).sum()),
    )


@dataclasses.dataclass(frozen=True)
class DetectionResult:
    """End-to-end pipeline output on one dataset."""

    fit: ModelFit
    scores: InfluenceScores
    flags: OutlierFlags


def detect_outliers(
    dataset: NetworkDataset,
    design: DesignMatrix | None = None,
    config: FitConfig = FitConfig(),
    sensitivity: float = 1.0,
) -> DetectionResult:
    """Fit, score, and threshold one dataset."""
    if design is None:
        design = build_design(dataset.atlas)
    model = fit(dataset, design, config)
    scores = influence_scores(dataset, model, design)
    flags = flag_outliers(scores, sensitivity)
    return DetectionResult(fit=model, scores=scores, flags=flags)


@dataclasses.dataclass(frozen=True)
class TableRow:
    """One contamination level: mean rates over the repetitions."""

    param: float
    sensitivity: float
    specificity: float


def _child_seed(*entropy) -> int:
    return int(np.random.SeedSequence(entropy=list(entropy)).generate_state(1, np.uint64)[0])


def _pool_map(task, args_list, workers):
    if workers is None:
        workers = default_workers()
    if workers <= 1 or len(args_list) <= 1:
        return [task(args) for args in args_list]
    ctx = multiprocessing.get_context("spawn")
    with concurrent.futures.ProcessPoolExecutor(
        max_workers=min(workers, len(args_list)), mp_context=ctx
    ) as pool:
        return list(pool.map(task, args_list))


def default_workers() -> int:
    """Worker-count default: ODIN_THREADS if set, else all cores."""
    env = os.environ.get("ODIN_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ODIN_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _flip_cell_task(args) -> tuple[float, float]:
    config, fit_config, sensitivity = args
    with threadpool_limits(limits=1):
        labeled = simulate_model(config)
        result = detect_outliers(labeled.dataset, None, fit_config, sensitivity)
        summary = confusion(result.flags.flags, labeled.is_outlier)
    return summary.sensitivity, summary.specificity


def table1_experiment(
    flip_fractions,
    repetitions: int,
    seed: int,
    *,
    n: int = 500,
    v: int = 70,
    hemispheres: int = 2,
    lobes_per_hemisphere: int = 5,
    outlier_fraction: float = 0.1,
    fit_config: FitConfig = FitConfig(),
    sensitivity: float = 1.0,
    workers: int | None = None,
) -> list[TableRow]:
    """Mean detection rates over seeded end-to-end runs, per flip fraction.

    Defaults replicate the model-based study protocol: 500 subjects on a
    70-node balanced two-hemisphere, five-lobe atlas with 10% planted
    outliers.
    """
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    tasks = []
    for qi, q in enumerate(flip_fractions):
        for rep in range(repetitions):
            config = SimConfig(
                n=n,
                v=v,
                hemispheres=hemispheres,
                lobes_per_hemisphere=lobes_per_hemisphere,
                outlier_fraction=outlier_fraction,
                flip_fraction=q,
                seed=_child_seed(seed, qi, rep),
            )
            tasks.append((config, fit_config, sensitivity))
    rates = _pool_map(_flip_cell_task, tasks, workers)
    rows = []
    for qi, q in enumerate(flip_fractions):
        cell = rates[qi * repetitions : (qi + 1) * repetitions]
        rows.append(
            TableRow(
                param=float(q),
                sensitivity=float(np.mean([c[0] for c in cell])),
                specificity=float(np.mean([c[1] for c in cell])),
            )
        )
    return rows


def _tnpca_rep_task(args) -> list[tuple[float, float]]:
    (rep_seed, sigmas, k, n, v, hemispheres, lobes, outlier_fraction, fit_config, sensitivity) = args
    with threadpool_limits(limits=1):
        base_cfg = SimConfig(
            n=n,
            v=v,
            hemispheres=hemispheres,
            lobes_per_hemisphere=lobes,
            outlier_fraction=0.0,
            flip_fraction=0.0,
            seed=_child_seed(rep_seed, 0),
        )
        base = simulate_model(base_cfg).dataset
        model = tnpca_fit(base, k)
        out = []
        for si, sigma in enumerate(sigmas):
            labeled = simulate_tnpca(
                base, k, sigma, outlier_fraction, _child_seed(rep_seed, 1 + si), model=model
            )
            result = detect_outliers(labeled.dataset, None, fit_config, sensitivity)
            summary = confusion(result.flags.flags, labeled.is_outlier)
            out.append((summary.sensitivity, summary.specificity))
    return out


def table2_experiment(
    sigmas,
    repetitions: int,
    seed: int,
    *,
    k: int = 60,
    n: int = 500,
    v: int = 70,
    hemispheres: int = 2,
    lobes_per_hemisphere: int = 5,
    outlier_fraction: float = 0.1,
    fit_config: FitConfig = FitConfig(),
    sensitivity: float = 1.0,
    workers: int | None = None,
) -> list[TableRow]:
    """Mean detection rates per embedding-noise level.

    Each repetition generates a clean model-based base sample, fits the
    rank-k decomposition once, and reuses it across the sigma grid.
    """
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    sigmas = list(sigmas)
    tasks = [
        (
            _child_seed(seed, rep),
            sigmas,
            k,
            n,
            v,
            hemispheres,
            lobes_per_hemisphere,
            outlier_fraction,
            fit_config,
            sensitivity,
        )
        for rep in range(repetitions)
    ]
    per_rep = _pool_map(_tnpca_rep_task, tasks, workers)
    rows = []
    for si, sigma in enumerate(sigmas):
        cell = [rep[si] for rep in per_rep]
        rows.append(
            TableRow(
                param=float(sigma),
                sensitivity=float(np.mean([c[0] for c in cell])),
                specificity=float(np.mean([c[1] for c in cell])),
            )
        )
    return rows


@dataclasses.dataclass(frozen=True)
class StabilityRow:
    """One subsample size of the stratified re-detection protocol."""

    size: int
    outliers_included: int
    subsample_flagged: int
    reflagged: int
    reflagged_percent: float
    newly_flagged: int
    newly_flagged_percent: float


def _stability_task(args) -> StabilityRow:
    dataset, full_flags, size, seed, fit_config, sensitivity = args
    with threadpool_limits(limits=1):
        n_out = round(0.1 * size)
        n_in = size - n_out
        flagged_idx = np.flatnonzero(full_flags)
        clean_idx = np.flatnonzero(~full_flags)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, size]))
        pick = np.sort(
            np.concatenate(
                [
                    rng.choice(flagged_idx, size=n_out, replace=False),
                    rng.choice(clean_idx, size=n_in, replace=False),
                ]
            )
        )
        sub = NetworkDataset(
            subject_ids=tuple(dataset.subject_ids[i] for i in pick),
            edges=dataset.edges[pick],
            atlas=dataset.atlas,
        )
        result = detect_outliers(sub, None, fit_config, sensitivity)
        sub_flags = result.flags.flags
        was_full_outlier = full_flags[pick]
        reflagged = int((sub_flags & was_full_outlier).sum())
        newly = int((sub_flags & ~was_full_outlier).sum())
    return StabilityRow(
        size=size,
        outliers_included=n_out,
        subsample_flagged=int(sub_flags.sum()),
        reflagged=reflagged,
        reflagged_percent=100.0 * reflagged / n_out if n_out else float("nan"),
        newly_flagged=newly,
        newly_flagged_percent=100.0 * newly / n_in if n_in else float("nan"),
    )


def subsample_stability(
    dataset: NetworkDataset,
    full_flags: np.ndarray,
    subsample_sizes,
    seed: int,
    *,
    fit_config: FitConfig = FitConfig(),
    sensitivity: float = 1.0,
    workers: int | None = None,
) -> list[StabilityRow]:
    """Re-run detection on stratified subsamples of a completed full run.

    Each subsample holds 10% full-sample-flagged and 90% unflagged
    subjects.  Reported per size: outliers included, subsample flag count,
    how many full-sample outliers were re-flagged, and how many full-sample
    non-outliers were newly flagged.
    """
    full_flags = np.asarray(full_flags, dtype=bool)
    if full_flags.shape != (dataset.n_subjects,):
        raise DataError("full_flags must have one entry per subject")
    n_flagged = int(full_flags.sum())
    n_clean = dataset.n_subjects - n_flagged
    tasks = []
    for size in subsample_sizes:
        size = int(size)
        if size < 10:
            raise ConfigError(f"subsample size must be >= 10, got {size}")
        n_out = round(0.1 * size)
        if n_out > n_flagged or size - n_out > n_clean:
            raise ConfigError(
                f"subsample size {size} exceeds the available strata "
                f"({n_flagged} flagged / {n_clean} unflagged)"
            )
        tasks.append((dataset, full_flags, size, seed, fit_config, sensitivity))
    return _pool_map(_stability_task, tasks, workers)


# ---------------------------------------------------------------------------
# runtime scaling
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ScalingReport:
    """Measured wall times over a size grid and the fitted power law."""

    mode: str
    sizes: tuple[int, ...]
    seconds: tuple[float, ...]
    exponent: float
    r2: float


def _loglog_fit(sizes, seconds) -> tuple[float, float]:
    lx = np.log(np.asarray(sizes, dtype=np.float64))
    ly = np.log(np.asarray(seconds, dtype=np.float64))
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")
    return float(slope), r2


def _bench_dataset(n: int, v: int, seed: int) -> NetworkDataset:
    cfg = SimConfig(n=n, v=v, outlier_fraction=0.0, flip_fraction=0.0, seed=seed)
    return simulate_model(cfg).dataset


def _time_iterations(dataset: NetworkDataset, lam: float, iterations: int) -> float:
    design = build_design(dataset.atlas)
    ops = mm_precompute(design.x, lam)
    a = dataset.edges.astype(np.float64)
    z0, betas0 = initial_state(a, design.n_columns)
    start = time.perf_counter()
    _mm_loop(a, ops, z0, betas0, tol=0.0, max_iter=iterations)
    return (time.perf_counter() - start) / iterations


def _time_influence(dataset: NetworkDataset, fit_config: FitConfig) -> float:
    design = build_design(dataset.atlas)
    model = fit(dataset, design, fit_config)
    start = time.perf_counter()
    influence_scores(dataset, model, design)
    return time.perf_counter() - start


def bench_scaling(
    mode: str,
    grid,
    seed: int,
    *,
    iterations: int = 200,
    repeats: int = 3,
    fixed_n: int = 100,
    fixed_v: int = 40,
    fit_config: FitConfig = FitConfig(max_iter=20000),
    parallel: bool = False,
) -> ScalingReport:
    """Time one pipeline stage over a size grid and fit time ~ a * x^b.

    mode iter_vs_N / iter_vs_L times a single update iteration (averaged
    over `iterations` updates, operator precomputation excluded); the
    influence modes time the full scoring stage on a converged fit.  For
    the *_vs_L modes the grid lists node counts and x is the edge count.
    BLAS pools are pinned to one thread unless parallel=True.
    """
    if mode not in BENCH_MODES:
        raise ConfigError(f"mode must be one of {BENCH_MODES}, got {mode!r}")
    grid = [int(g) for g in grid]
    if len(grid) < 5:
        raise ConfigError(f"need a grid of at least 5 sizes, got {len(grid)}")
    if sorted(set(grid)) != grid:
        raise ConfigError("grid must be strictly increasing")

    sizes = []
    seconds = []
    for gi, g in enumerate(grid):
        if mode.endswith("_vs_N"):
            n, v = g, fixed_v
            sizes.append(n)
        else:
            n, v = fixed_n, g
            sizes.append(g * (g - 1) // 2)
        dataset = _bench_dataset(n, v, _child_seed(seed, gi))
        limit = None if parallel else 1
        with threadpool_limits(limits=limit):
            runs = []
            for rep in range(repeats + 1):
                if mode.startswith("iter"):
                    dt = _time_iterations(dataset, fit_config.lam, iterations)
                else:
                    dt = _time_influence(dataset, fit_config)
                if rep > 0:  # first run is warm-up
                    runs.append(dt)
        seconds.append(float(np.median(runs)))

    exponent, r2 = _loglog_fit(sizes, seconds)
    return ScalingReport(
        mode=mode,
        sizes=tuple(sizes),
        seconds=tuple(seconds),
        exponent=exponent,
        r2=r2,
    )


# ---------------------------------------------------------------------------
# table files
# ---------------------------------------------------------------------------


def write_table_csv(rows: list[TableRow], param_name: str, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{param_name},mean_sensitivity,mean_specificity\n")
        for row in rows:
            fh.write(f"{row.param:.17g},{row.sensitivity:.17g},{row.specificity:.17g}\n")


def write_stability_csv(rows: list[StabilityRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            "subsample_size,outliers_included,subsample_flagged,"
            "reflagged,reflagged_percent,newly_flagged,newly_flagged_percent\n"
        )
        for r in rows:
            fh.write(
                f"{r.size},{r.outliers_included},{r.subsample_flagged},"
                f"{r.reflagged},{r.reflagged_percent:.17g},"
                f"{r.newly_flagged},{r.newly_flagged_percent:.17g}\n"
            )


def write_scaling_csv(report: ScalingReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("size,seconds\n")
        for s, t in zip(report.sizes, report.seconds):
            fh.write(f"{s},{t:.17g}\n")


def write_scaling_json(report: ScalingReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "mode": report.mode,
                "exponent": report.exponent,
                "r2": report.r2,
                "sizes": list(report.sizes),
                "seconds": list(report.seconds),
            },
            fh,
            indent=2,
        )
        fh.write("\n")
