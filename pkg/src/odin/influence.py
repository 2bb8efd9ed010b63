"""Per-subject influence measures on a fitted model.

Two complementary scores: im1 approximates how much the shared baseline
vector would move under a one-step refit with the subject deleted
(a DFBETA-style case-deletion measure, computed against a single shared
curvature operator), and im2 is the squared Mahalanobis distance of the
subject's coefficient vector from the sample mean.  The exact one-step
Newton deletion formula is also provided as a test oracle; it is O(L^3)
per subject and not the production path.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.linalg
from scipy.special import expit

from .errors import DataError, NumericalError
from .estimator import ModelFit, linear_predictor, probabilities
from .networks import DesignMatrix, NetworkDataset, _frozen

#: subjects accumulated per BLAS call when assembling the curvature operator
_CHUNK = 64


@dataclasses.dataclass(frozen=True)
class InfluenceScores:
    """Per-subject im1/im2 scores; im2_fallback marks a singular-covariance fit."""

    subject_ids: tuple[str, ...]
    im1: np.ndarray
    im2: np.ndarray
    im2_fallback: bool = False

    def __post_init__(self):
        im1 = np.asarray(self.im1, dtype=np.float64)
        im2 = np.asarray(self.im2, dtype=np.float64)
        n = len(self.subject_ids)
        if im1.shape != (n,) or im2.shape != (n,):
            raise DataError("scores must have one im1 and one im2 entry per subject")
        if not (np.isfinite(im1).all() and np.isfinite(im2).all()):
            raise DataError("influence scores must be finite")
        if (im1 < 0).any() or (im2 < 0).any():
            raise DataError("influence scores must be nonnegative")
        object.__setattr__(self, "im1", _frozen(im1))
        object.__setattr__(self, "im2", _frozen(im2))


class CurvatureOperator:
    """Factorized shared curvature matrix used by the case-deletion score.

    The matrix is scale * [lam N I + sum_j W_j - sum_j W_j X (X'W_jX)^{-1} X'W_j]
    with scale = (N-1)/N and W_j = diag(pi_j (1-pi_j)); symmetric positive
    definite for lam > 0, factorized once and reused for all N solves.
    """

    def __init__(self, matrix: np.ndarray, scale: float, lam: float, n_subjects: int):
        self.matrix = _frozen(matrix)
        self.scale = scale
        self.lam = lam
        self.n_subjects = n_subjects
        try:
            self._cho = scipy.linalg.cho_factor(matrix, lower=False)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(f"curvature operator is not positive definite: {exc}") from None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (operator) x = rhs; rhs may hold one column per subject."""
        return scipy.linalg.cho_solve(self._cho, rhs)


def _weights(fit: ModelFit, design: DesignMatrix) -> np.ndarray:
    """Bernoulli variance weights pi (1 - pi), clamped away from 0."""
    pi = probabilities(linear_predictor(fit.z, fit.betas, design.x))
    return pi * (1.0 - pi)


def _require_converged(fit: ModelFit, what: str) -> None:
    if not fit.converged:
        raise DataError(f"{what} requires a converged fit; rerun with a larger max_iter")


def curvature_operator(fit: ModelFit, design: DesignMatrix) -> CurvatureOperator:
    """Assemble and factorize the shared deletion-curvature operator.

    Per-subject contributions W_j X (X'W_jX)^{-1} X'W_j are accumulated in
    canonical subject-id-independent order (subjects enter as given in the
    fit, whose rows are already tied to subject identities), chunked into
    single BLAS calls.  Raises for N < 2 (the (N-1)/N scale vanishes) and
    when some X'W_jX is numerically singular.
    """
    _require_converged(fit, "curvature operator")
    n = fit.n_subjects
    if n < 2:
        raise DataError("influence needs at least 2 subjects: the (N-1)/N scale is zero at N=1")
    x = design.x
    l, p = x.shape
    w = _weights(fit, design)

    t = np.zeros((l, l))
    for start in range(0, n, _CHUNK):
        block = w[start : start + _CHUNK]
        cols = np.empty((l, block.shape[0] * p))
        for j, wj in enumerate(block):
            m = wj[:, None] * x
            q = x.T @ m
            try:
                cho = scipy.linalg.cholesky(q, lower=True)
            except scipy.linalg.LinAlgError:
                raise NumericalError(
                    f"X'WX is singular for subject index {start + j}; "
                    "probabilities are degenerate"
                ) from None
            cols[:, j * p : (j + 1) * p] = scipy.linalg.solve_triangular(
                cho, m.T, lower=True
            ).T
        t += cols @ cols.T

    scale = (n - 1) / n
    matrix = -t
    idx = np.arange(l)
    matrix[idx, idx] += fit.lam * n + w.sum(axis=0)
    matrix *= scale
    return CurvatureOperator(matrix=matrix, scale=scale, lam=fit.lam, n_subjects=n)


def _deletion_residuals(dataset: NetworkDataset, fit: ModelFit, design: DesignMatrix) -> np.ndarray:
    """(a_i - pi_i) - lam z, one row per subject; unclamped probabilities."""
    eta = linear_predictor(fit.z, fit.betas, design.x)
    return (dataset.edges.astype(np.float64) - expit(eta)) - fit.lam * fit.z[None, :]


def _check_pair(dataset: NetworkDataset, fit: ModelFit, design: DesignMatrix) -> None:
    if dataset.n_subjects != fit.n_subjects:
        raise DataError(
            f"fit has {fit.n_subjects} subjects but the dataset has {dataset.n_subjects}"
        )
    if dataset.n_edges != len(fit.z) or design.x.shape[0] != len(fit.z):
        raise DataError("dataset, design and fit disagree on the number of edges")
    if fit.betas.shape[1] != design.n_columns:
        raise DataError("fit and design disagree on the number of coefficients")


def im1_scores(
    dataset: NetworkDataset,
    fit: ModelFit,
    design: DesignMatrix,
    operator: CurvatureOperator | None = None,
) -> np.ndarray:
    """Case-deletion influence: ||operator^{-1} [(a_i - pi_i) - lam z]||_2.

    One triangular solve per subject against the shared factorization.
    """
    _check_pair(dataset, fit, design)
    if operator is None:
        operator = curvature_operator(fit, design)
    resid = _deletion_residuals(dataset, fit, design)
    sol = operator.solve(resid.T)
    return np.linalg.norm(sol, axis=0)


def im2_scores(fit: ModelFit) -> tuple[np.ndarray, bool]:
    """Squared Mahalanobis distance of each beta_i from the subject mean.

    The covariance uses the 1/N convention, so the scores average to p
    exactly on any non-degenerate fit.  A singular covariance falls back to
    a small ridge (delta = 1e-8 trace(S)/p); if the coefficients carry no
    variation at all, every score is 0.  Returns (scores, fallback_used).
    """
    betas = fit.betas
    n, p = betas.shape
    if p == 0:
        return np.zeros(n), True
    center = betas - betas.mean(axis=0)
    cov = (center.T @ center) / n
    fallback = False
    try:
        cho = scipy.linalg.cho_factor(cov)
    except scipy.linalg.LinAlgError:
        fallback = True
        tr = float(np.trace(cov))
        if tr <= 0.0:
            return np.zeros(n), True
        cho = scipy.linalg.cho_factor(cov + (1e-8 * tr / p) * np.eye(p))
    sol = scipy.linalg.cho_solve(cho, center.T)
    return np.einsum("ij,ji->i", center, sol), fallback


def influence_scores(dataset: NetworkDataset, fit: ModelFit, design: DesignMatrix) -> InfluenceScores:
    """Compute both influence measures for every subject."""
    operator = curvature_operator(fit, design)
    im1 = im1_scores(dataset, fit, design, operator)
    im2, fallback = im2_scores(fit)
    return InfluenceScores(
        subject_ids=dataset.subject_ids, im1=im1, im2=im2, im2_fallback=fallback
    )


def newton_loo_delta(
    i: int, dataset: NetworkDataset, fit: ModelFit, design: DesignMatrix
) -> np.ndarray:
    """Exact one-step Newton deletion shift of the baseline vector (test oracle).

    Evaluates, with subject i's terms excluded and no shared-operator
    approximation,

        -[lam (N-1) I + sum_{j!=i} W_j - sum_{j!=i} W_jX(X'W_jX)^{-1}X'W_j]^{-1}
          [(a_i - pi_i) - lam z].

    O(N L^2 p + L^3) per subject; kept for validation only.
    """
    _require_converged(fit, "the one-step deletion formula")
    _check_pair(dataset, fit, design)
    n = fit.n_subjects
    if n < 3:
        raise DataError("one-step deletion needs at least 3 subjects")
    if not 0 <= i < n:
        raise DataError(f"subject index {i} out of range for N={n}")
    x = design.x
    l = x.shape[0]
    w = _weights(fit, design)

    m = fit.lam * (n - 1) * np.eye(l)
    for j in range(n):
        if j == i:
            continue
        mj = w[j][:, None] * x
        qj = x.T @ mj
        m += np.diag(w[j]) - mj @ np.linalg.solve(qj, mj.T)

    r_i = _deletion_residuals(dataset, fit, design)[i]
    return -np.linalg.solve(m, r_i)


def write_scores_csv(scores: InfluenceScores, path) -> None:
    """Scores CSV: header subject_id,im1,im2; full-precision decimal floats."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("subject_id,im1,im2\n")
        for sid, v1, v2 in zip(scores.subject_ids, scores.im1, scores.im2):
            fh.write(f"{sid},{v1:.17g},{v2:.17g}\n")
