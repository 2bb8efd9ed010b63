"""Data-driven score thresholds via the elbow of the quantile curve.

Most subjects have small influence scores, so the curve of order statistics
stays flat for low quantiles and lifts sharply where the outliers begin.
The knee of that curve (kneedle-style: min-max normalize both axes, take
the extremum of the difference curve for a convex increasing shape, confirm
it with a sensitivity offset) gives the threshold; when no knee is
confirmed the 99th-percentile score is used and the result is flagged.
Each measure is thresholded independently and a subject is an outlier if
either score exceeds its threshold.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math

import numpy as np

from .errors import DataError
from .influence import InfluenceScores
from .networks import _frozen

logger = logging.getLogger(__name__)

#: fewest scores for which a quantile curve is meaningful
MIN_SCORES = 10


@dataclasses.dataclass(frozen=True)
class ThresholdResult:
    """Chosen threshold, the knee quantile, and the curve it came from.

    The threshold sits halfway between the knee order statistic and the
    next one (the decision boundary between them); `fallback` marks the
    99th-percentile path taken when no knee was confirmed.
    """

    threshold: float
    knee_quantile: float
    curve: np.ndarray
    fallback: bool

    def __post_init__(self):
        object.__setattr__(self, "curve", _frozen(np.asarray(self.curve, dtype=np.float64)))


@dataclasses.dataclass(frozen=True)
class OutlierFlags:
    """Union-rule outlier flags with the per-measure rule record."""

    subject_ids: tuple[str, ...]
    flags: np.ndarray
    exceeded_im1: np.ndarray
    exceeded_im2: np.ndarray
    im1_result: ThresholdResult
    im2_result: ThresholdResult

    def __post_init__(self):
        for name in ("flags", "exceeded_im1", "exceeded_im2"):
            arr = np.asarray(getattr(self, name), dtype=bool)
            if arr.shape != (len(self.subject_ids),):
                raise DataError(f"{name} must have one entry per subject")
            object.__setattr__(self, name, _frozen(arr))

    @property
    def n_flagged(self) -> int:
        return int(self.flags.sum())


def quantile_curve(scores: np.ndarray) -> np.ndarray:
    """(N, 2) curve of (k/N, k-th order statistic) for k = 1..N."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < MIN_SCORES:
        raise DataError(f"need at least {MIN_SCORES} scores for a quantile curve, got {s.size}")
    if not np.isfinite(s).all():
        raise DataError("scores must be finite")
    n = s.size
    return np.column_stack([np.arange(1, n + 1) / n, np.sort(s, kind="stable")])


def _fallback(curve: np.ndarray) -> ThresholdResult:
    n = curve.shape[0]
    k = math.ceil(0.99 * n)
    logger.warning("no knee confirmed in the quantile curve; using the 99th-percentile score")
    return ThresholdResult(
        threshold=float(curve[k - 1, 1]), knee_quantile=k / n, curve=curve, fallback=True
    )


def kneedle(curve: np.ndarray, sensitivity: float = 1.0) -> ThresholdResult:
    """Locate the knee of a non-decreasing quantile curve.

    Both axes are min-max normalized; for this convex increasing shape the
    knee is the extremum of d = x_norm - y_norm.  The extremum must be
    interior, positive, and confirmed by a later drop of more than
    sensitivity * (mean normalized spacing); otherwise the documented
    99th-percentile fallback applies.
    """
    curve = np.asarray(curve, dtype=np.float64)
    if curve.ndim != 2 or curve.shape[1] != 2 or curve.shape[0] < MIN_SCORES:
        raise DataError(f"curve must be (n >= {MIN_SCORES}, 2)")
    if np.any(np.diff(curve[:, 1]) < 0):
        raise DataError("quantile curve must be non-decreasing")
    x, y = curve[:, 0], curve[:, 1]
    n = curve.shape[0]
    if y[-1] == y[0]:
        return _fallback(curve)

    xn = (x - x[0]) / (x[-1] - x[0])
    yn = (y - y[0]) / (y[-1] - y[0])
    d = xn - yn
    k = int(np.argmax(d))
    offset = sensitivity * float(np.diff(xn).mean())
    interior = 0 < k < n - 1
    confirmed = interior and d[k] > 0 and bool(np.any(d[k + 1 :] < d[k] - offset))
    if not confirmed:
        return _fallback(curve)
    return ThresholdResult(
        threshold=float(0.5 * (y[k] + y[k + 1])),
        knee_quantile=float(x[k]),
        curve=curve,
        fallback=False,
    )


def flag_outliers(scores: InfluenceScores, sensitivity: float = 1.0) -> OutlierFlags:
    """Threshold im1 and im2 independently and apply the either-exceeds rule."""
    r1 = kneedle(quantile_curve(scores.im1), sensitivity)
    r2 = kneedle(quantile_curve(scores.im2), sensitivity)
    over1 = scores.im1 > r1.threshold
    over2 = scores.im2 > r2.threshold
    return OutlierFlags(
        subject_ids=scores.subject_ids,
        flags=over1 | over2,
        exceeded_im1=over1,
        exceeded_im2=over2,
        im1_result=r1,
        im2_result=r2,
    )


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def write_thresholds_json(flags: OutlierFlags, path) -> None:
    doc = {
        name: {
            "threshold": res.threshold,
            "knee_quantile": res.knee_quantile,
            "fallback_used": res.fallback,
        }
        for name, res in (("im1", flags.im1_result), ("im2", flags.im2_result))
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_flags_csv(flags: OutlierFlags, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("subject_id,flag,exceeded_im1,exceeded_im2\n")
        for sid, f, e1, e2 in zip(
            flags.subject_ids, flags.flags, flags.exceeded_im1, flags.exceeded_im2
        ):
            fh.write(f"{sid},{int(f)},{int(e1)},{int(e2)}\n")


def write_curve_csv(result: ThresholdResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("quantile,score\n")
        for p, s in result.curve:
            fh.write(f"{p:.17g},{s:.17g}\n")
