"""Penalized hierarchical logistic model and its majorization-based fitter.

The model has one baseline log-odds z_l per edge, shared across subjects,
and a small per-subject coefficient vector beta_i over the edge design X:

    eta_il = z_l + x_l' beta_i,      a_il ~ Bernoulli(expit(eta_il))

Parameters maximize the ridge-penalized average log-likelihood

    (1/N) sum_i sum_l [a_il eta_il - log(1 + e^{eta_il})] - (lam/2) ||z||^2.

The fitter iterates closed-form updates of a curvature-bounded surrogate
(the Bernoulli Hessian is bounded by I/4), which guarantees a monotone
objective trace.  Per-iteration cost is linear in both N and L: the L x L
operators involved are projections onto the design column space and are
applied through their low-rank form, never materialized.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np
import scipy.linalg
from scipy.special import expit

from .errors import ConfigError, DataError, NumericalError
from .networks import DesignMatrix, NetworkDataset, _frozen

#: probabilities are kept this far from {0, 1} wherever logs are taken
PROB_EPS = 1e-12


@dataclasses.dataclass(frozen=True)
class FitConfig:
    """Knobs of the fitting loop.

    lam is the ridge weight on the baseline vector z and must be positive;
    the paper-style updates are undefined at lam = 0.  tol is the relative
    objective-change stopping tolerance |f_k - f_{k-1}| < tol * (1 + |f_{k-1}|).
    """

    lam: float = 0.01
    tol: float = 1e-8
    max_iter: int = 5000

    def __post_init__(self):
        if not (self.lam > 0 and np.isfinite(self.lam)):
            raise ConfigError(f"lam must be positive and finite, got {self.lam}")
        if not (self.tol > 0):
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclasses.dataclass(frozen=True)
class ModelFit:
    """Fitted parameters plus the per-iteration objective trace."""

    z: np.ndarray
    betas: np.ndarray
    lam: float
    trace: np.ndarray
    converged: bool
    iterations: int

    def __post_init__(self):
        object.__setattr__(self, "z", _frozen(np.asarray(self.z, dtype=np.float64)))
        object.__setattr__(self, "betas", _frozen(np.asarray(self.betas, dtype=np.float64)))
        object.__setattr__(self, "trace", _frozen(np.asarray(self.trace, dtype=np.float64)))

    @property
    def n_subjects(self) -> int:
        return self.betas.shape[0]


def linear_predictor(z: np.ndarray, betas: np.ndarray, x: np.ndarray) -> np.ndarray:
    """eta = z + X beta, for a single coefficient vector or a stack of them."""
    return np.asarray(z, dtype=np.float64) + np.asarray(betas, dtype=np.float64) @ np.asarray(x).T


def probabilities(eta: np.ndarray) -> np.ndarray:
    """Logistic probabilities clamped to [PROB_EPS, 1 - PROB_EPS]."""
    return np.clip(expit(eta), PROB_EPS, 1.0 - PROB_EPS)


def _objective_from_eta(sgn: np.ndarray, eta: np.ndarray, z, lam: float) -> float:
    # a eta - log(1+e^eta) == -log(1+e^{(1-2a) eta}) for a in {0,1}
    n = eta.shape[0] if eta.ndim == 2 else 1
    ll = -np.logaddexp(0.0, sgn * eta).sum() / n
    return float(ll - 0.5 * lam * np.dot(z, z))


def objective(edges: np.ndarray, x: np.ndarray, z: np.ndarray, betas: np.ndarray, lam: float) -> float:
    """Penalized average log-likelihood at the given parameters.

    Evaluated with a sign-branched log(1 + e^eta) so saturated predictors
    do not overflow.  `edges` may be real-valued; tests exploit this.
    """
    z = np.asarray(z, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    if not (np.isfinite(z).all() and np.isfinite(betas).all()):
        raise DataError("objective called with non-finite parameters")
    a = np.asarray(edges, dtype=np.float64)
    eta = linear_predictor(z, betas, x)
    n = a.shape[0] if a.ndim == 2 else 1
    ll = (a * eta - np.logaddexp(0.0, eta)).sum() / n
    return float(ll - 0.5 * lam * np.dot(z, z))


def gradient(edges: np.ndarray, x: np.ndarray, z: np.ndarray, betas: np.ndarray, lam: float) -> np.ndarray:
    """Exact gradient, stacked as (z block, beta_1 block, ..., beta_N block).

    The z block is (1/N) sum_i (a_i - pi_i) - lam z; each beta_i block is
    (1/N) X' (a_i - pi_i).
    """
    a = np.atleast_2d(np.asarray(edges, dtype=np.float64))
    betas = np.atleast_2d(np.asarray(betas, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    n = a.shape[0]
    resid = a - expit(linear_predictor(z, betas, x))
    g_z = resid.sum(axis=0) / n - lam * np.asarray(z, dtype=np.float64)
    g_b = (resid @ x) / n
    return np.concatenate([g_z, g_b.ravel()])


class MMOperators:
    """Per-fit precomputation: the design projections and update operators.

    With H = X (X'X)^{-1} X' (the projector onto the design column space),
    Q = I - H, R = 4 (Q + 4 lam I)^{-1} and S = 4 (X'X)^{-1} X'.  Q + 4 lam I
    has the two-point spectrum {4 lam, 1 + 4 lam}, so R acts as
    (1/lam) H + 4/(1 + 4 lam) Q; both H and Q are applied through X at
    O(Lp) cost.  Dense forms are available for small-problem tests.
    """

    def __init__(self, x: np.ndarray, lam: float):
        if lam <= 0:
            raise ConfigError(f"lam must be positive: Q + 4*lam*I is singular at lam={lam}")
        self.x = np.asarray(x, dtype=np.float64)
        self.lam = float(lam)
        gram = self.x.T @ self.x
        try:
            cho = scipy.linalg.cho_factor(gram)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError(f"X'X is singular; design not full column rank ({exc})") from None
        self.gram_inv = scipy.linalg.cho_solve(cho, np.eye(gram.shape[0]))
        self.s = 4.0 * self.gram_inv @ self.x.T
        # R v = 4 [ v / (1+4 lam) + (1/(4 lam) - 1/(1+4 lam)) H v ]
        self._r_scale = 4.0 / (1.0 + 4.0 * self.lam)
        self._r_h_scale = 4.0 * (1.0 / (4.0 * self.lam) - 1.0 / (1.0 + 4.0 * self.lam))

    def apply_h(self, vec: np.ndarray) -> np.ndarray:
        return self.x @ (self.gram_inv @ (self.x.T @ vec))

    def apply_q(self, vec: np.ndarray) -> np.ndarray:
        return vec - self.apply_h(vec)

    def apply_r(self, vec: np.ndarray) -> np.ndarray:
        return self._r_scale * vec + self._r_h_scale * self.apply_h(vec)

    def dense_h(self) -> np.ndarray:
        return self.x @ self.gram_inv @ self.x.T

    def dense_q(self) -> np.ndarray:
        return np.eye(self.x.shape[0]) - self.dense_h()

    def dense_r(self) -> np.ndarray:
        return 4.0 * np.linalg.inv(self.dense_q() + 4.0 * self.lam * np.eye(self.x.shape[0]))


def mm_precompute(x: np.ndarray, lam: float) -> MMOperators:
    """Build the once-per-fit operators H, Q, R, S for design X and ridge lam."""
    return MMOperators(x, lam)


def initial_state(edges: np.ndarray, n_columns: int) -> tuple[np.ndarray, np.ndarray]:
    """Marginal-model start: z from clamped edge frequencies, betas zero."""
    a = np.asarray(edges, dtype=np.float64)
    n = a.shape[0]
    freq = np.clip(a.mean(axis=0), 1.0 / (n + 2), 1.0 - 1.0 / (n + 2))
    z0 = np.log(freq / (1.0 - freq))
    return z0, np.zeros((n, n_columns))


def _mm_loop(
    a: np.ndarray,
    ops: MMOperators,
    z: np.ndarray,
    betas: np.ndarray,
    tol: float,
    max_iter: int,
):
    """Run the surrogate-maximization updates; returns (z, betas, trace, converged, its).

    Update equations, derived by block-solving the surrogate's normal
    equations (mu is the subject-mean residual):

        dz     = R [ -lam z + Q mu ]
        dbeta_i = (X'X)^{-1} X' [ 4 (a_i - pi_i) - dz ]

    The objective is evaluated every iteration to enforce the ascent
    invariant; a non-finite value aborts.
    """
    lam = ops.lam
    n = a.shape[0]
    sgn = 1.0 - 2.0 * a
    xt = ops.x.T
    quarter_s = ops.gram_inv @ xt  # S/4
    trace = []
    converged = False
    iterations = 0

    eta = linear_predictor(z, betas, ops.x)
    prev = _objective_from_eta(sgn, eta, z, lam)
    trace.append(prev)
    if not np.isfinite(prev):
        raise NumericalError("objective is non-finite at the initial point")

    for it in range(1, max_iter + 1):
        resid = a - expit(eta)
        mu = resid.sum(axis=0) / n
        dz = ops.apply_r(-lam * z + ops.apply_q(mu))
        z = z + dz
        betas = betas + 4.0 * (resid @ quarter_s.T) - (quarter_s @ dz)[None, :]

        eta = linear_predictor(z, betas, ops.x)
        obj = _objective_from_eta(sgn, eta, z, lam)
        trace.append(obj)
        iterations = it
        if not np.isfinite(obj):
            raise NumericalError(f"objective became non-finite at iteration {it}")
        if abs(obj - prev) < tol * (1.0 + abs(prev)):
            converged = True
            break
        prev = obj

    return z, betas, np.asarray(trace), converged, iterations


def fit(dataset: NetworkDataset, design: DesignMatrix, config: FitConfig = FitConfig()) -> ModelFit:
    """Fit (z, beta_1..beta_N) by monotone surrogate maximization.

    Deterministic: cross-subject reductions run in canonical subject-id
    order, so permuting the input rows permutes `betas` rows exactly and
    leaves `z` bit-identical.  A fit that exhausts max_iter is returned
    with converged=False rather than raising.
    """
    if dataset.n_subjects == 0:
        raise DataError("cannot fit an empty dataset")
    if dataset.n_edges != design.x.shape[0]:
        raise DataError(
            f"dataset has L={dataset.n_edges} edges but the design has {design.x.shape[0]} rows"
        )
    ops = mm_precompute(design.x, config.lam)

    order = np.argsort(np.asarray(dataset.subject_ids), kind="stable")
    a = dataset.edges[order].astype(np.float64)
    z0, betas0 = initial_state(a, design.n_columns)

    z, betas_c, trace, converged, iterations = _mm_loop(
        a, ops, z0, betas0, config.tol, config.max_iter
    )
    betas = np.empty_like(betas_c)
    betas[order] = betas_c
    return ModelFit(
        z=z, betas=betas, lam=config.lam, trace=trace, converged=converged, iterations=iterations
    )


# ---------------------------------------------------------------------------
# fit file format: JSON, floats at full round-trip precision
# ---------------------------------------------------------------------------


def save_fit(fit_result: ModelFit, path) -> None:
    doc = {
        "lam": fit_result.lam,
        "z": fit_result.z.tolist(),
        "betas": fit_result.betas.tolist(),
        "trace": fit_result.trace.tolist(),
        "converged": fit_result.converged,
        "iterations": fit_result.iterations,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_fit(path) -> ModelFit:
    from .errors import FormatError

    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"fit file is not valid JSON: {exc}") from None
    try:
        return ModelFit(
            z=np.asarray(doc["z"], dtype=np.float64),
            betas=np.asarray(doc["betas"], dtype=np.float64),
            lam=float(doc["lam"]),
            trace=np.asarray(doc["trace"], dtype=np.float64),
            converged=bool(doc["converged"]),
            iterations=int(doc["iterations"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"fit file is missing or has malformed fields: {exc}") from None
