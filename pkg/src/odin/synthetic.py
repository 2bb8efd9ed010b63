"""Seeded generators for the two synthetic study designs.

Design one draws data from the hierarchical logistic model itself (baseline
log-odds from a clamped standard Cauchy, subject coefficients standard
Gaussian) and contaminates a fraction of subjects by flipping a fixed share
of their edges.  Design two embeds a clean population with an orthogonal
rank-one tensor decomposition, perturbs the embeddings of a fraction of
subjects with Gaussian noise, and reconstructs binary matrices by
nearest-of-{0,1} rounding.

All randomness flows through numpy's PCG64 generators keyed by
SeedSequence(seed, spawn_key=...): stream (0,) for model parameters,
(1, i) for subject i's edges, (2,) for outlier selection, (3, i) for
subject i's flip positions, so results are bit-reproducible and
independent of any scheduling.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError
from .networks import Atlas, NetworkDataset, build_design, _frozen

#: Cauchy draws for the baseline are clamped here to keep edges unsaturated
#: enough for finite arithmetic; tails beyond this are indistinguishable.
CAUCHY_CLAMP = 30.0


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclasses.dataclass(frozen=True)
class SimConfig:
    """Settings for the model-based simulator; `seed` fixes all randomness."""

    n: int
    v: int
    hemispheres: int = 2
    lobes_per_hemisphere: int = 5
    outlier_fraction: float = 0.1
    flip_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.v < 3:
            raise ConfigError(f"v must be >= 3, got {self.v}")
        if self.hemispheres < 1 or self.lobes_per_hemisphere < 1:
            raise ConfigError("hemispheres and lobes_per_hemisphere must be >= 1")
        if self.hemispheres * self.lobes_per_hemisphere < 2:
            raise ConfigError("need at least 2 hemisphere/lobe cells for a nonempty design")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ConfigError(f"outlier_fraction must be in [0, 1), got {self.outlier_fraction}")
        if not 0.0 <= self.flip_fraction <= 1.0:
            raise ConfigError(f"flip_fraction must be in [0, 1], got {self.flip_fraction}")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")


@dataclasses.dataclass(frozen=True)
class LabeledDataset:
    """A dataset plus its ground-truth outlier labels."""

    dataset: NetworkDataset
    is_outlier: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.is_outlier, dtype=bool)
        if labels.shape != (self.dataset.n_subjects,):
            raise DataError("one outlier label per subject required")
        object.__setattr__(self, "is_outlier", _frozen(labels))


def balanced_atlas(v: int, hemispheres: int = 2, lobes_per_hemisphere: int = 5) -> Atlas:
    """Assign hemispheres, then lobes within each hemisphere, in balanced blocks.

    Lobe labels are shared across hemispheres (lobe identity is the label
    alone); an atlas file can still encode hemisphere-specific lobes by
    using distinct labels.
    """
    hemi_sizes = [v // hemispheres + (1 if i < v % hemispheres else 0) for i in range(hemispheres)]
    hemis: list[str] = []
    lobes: list[str] = []
    for h, size in enumerate(hemi_sizes):
        lobe_sizes = [
            size // lobes_per_hemisphere + (1 if j < size % lobes_per_hemisphere else 0)
            for j in range(lobes_per_hemisphere)
        ]
        for j, ls in enumerate(lobe_sizes):
            hemis.extend([f"h{h + 1}"] * ls)
            lobes.extend([f"lobe{j + 1}"] * ls)
    ids = tuple(f"roi{i + 1:0{len(str(v))}d}" for i in range(v))
    return Atlas(roi_ids=ids, hemispheres=tuple(hemis), lobes=tuple(lobes))


def flip_edges(row: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Return a copy of a binary edge row with the given positions inverted."""
    out = row.copy()
    out[positions] = 1 - out[positions]
    return out


def simulate_model(config: SimConfig) -> LabeledDataset:
    """Draw a labeled population from the hierarchical logistic model.

    z ~ clamped standard Cauchy per edge, beta_i ~ N(0, I_p), edges
    Bernoulli at expit(z + X beta_i).  ceil(outlier_fraction * N) subjects
    are marked and each has ceil(flip_fraction * L) uniformly chosen edges
    inverted.
    """
    atlas = balanced_atlas(config.v, config.hemispheres, config.lobes_per_hemisphere)
    design = build_design(atlas)
    l, p = design.x.shape
    n = config.n

    params = _rng(config.seed, 0)
    z = np.clip(params.standard_cauchy(l), -CAUCHY_CLAMP, CAUCHY_CLAMP)
    betas = params.standard_normal((n, p))
    probs = expit(z[None, :] + betas @ design.x.T)

    edges = np.empty((n, l), dtype=np.uint8)
    for i in range(n):
        edges[i] = _rng(config.seed, 1, i).random(l) < probs[i]

    labels = np.zeros(n, dtype=bool)
    n_out = math.ceil(config.outlier_fraction * n)
    n_flip = math.ceil(config.flip_fraction * l)
    if n_out:
        chosen = np.sort(_rng(config.seed, 2).choice(n, size=n_out, replace=False))
        labels[chosen] = True
        if n_flip:
            for i in chosen:
                positions = _rng(config.seed, 3, int(i)).choice(l, size=n_flip, replace=False)
                edges[i] = flip_edges(edges[i], positions)

    width = len(str(n))
    ids = tuple(f"subj{i + 1:0{width}d}" for i in range(n))
    dataset = NetworkDataset(subject_ids=ids, edges=edges, atlas=atlas)
    return LabeledDataset(dataset=dataset, is_outlier=labels)


# ---------------------------------------------------------------------------
# orthogonal rank-one tensor decomposition of a network population
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class TnpcaModel:
    """Unit, pairwise-orthogonal components and per-subject embeddings."""

    components: np.ndarray  # (K, V)
    embeddings: np.ndarray  # (N, K)
    objective_trace: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", _frozen(np.asarray(self.components, float)))
        object.__setattr__(self, "embeddings", _frozen(np.asarray(self.embeddings, float)))
        object.__setattr__(
            self, "objective_trace", _frozen(np.asarray(self.objective_trace, float))
        )

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def _sign_fix(v: np.ndarray) -> np.ndarray:
    j = int(np.argmax(np.abs(v)))
    return -v if v[j] < 0 else v


def _project_out(v: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    for b in basis:
        v = v - np.dot(b, v) * b
    return v


def _dominant_direction(
    m: np.ndarray, basis: list[np.ndarray], start: np.ndarray | None, tol: float, max_iter: int
) -> np.ndarray:
    """Projected power iteration for the top eigendirection of m on span(basis)^perp.

    Shifted by the 1-norm bound so the iteration tracks the algebraically
    largest eigenvalue; deterministic identity-column starts when no warm
    start survives the projection.
    """
    dim = m.shape[0]
    shift = float(np.abs(m).sum(axis=1).max())
    candidates = [] if start is None else [start]
    candidates.extend(np.eye(dim)[j] for j in np.argsort(-np.abs(np.diag(m)), kind="stable"))
    v = None
    for cand in candidates:
        proj = _project_out(cand.astype(float), basis)
        norm = np.linalg.norm(proj)
        if norm > 1e-12:
            v = proj / norm
            break
    if v is None:
        raise DataError("no direction left orthogonal to the previous components")
    if shift == 0.0:
        return _sign_fix(v)
    for _ in range(max_iter):
        nxt = _project_out(m @ v + shift * v, basis)
        norm = np.linalg.norm(nxt)
        if norm <= 1e-300:
            break
        nxt /= norm
        if np.abs(nxt - v).max() < tol:
            v = nxt
            break
        v = nxt
    return _sign_fix(v)


def tnpca_fit(dataset: NetworkDataset, k: int, tol: float = 1e-9, max_alternations: int = 500) -> TnpcaModel:
    """Greedy rank-one deflation fit of sum_i ||A_i - sum_k lam_ik v_k v_k'||^2.

    For each component: alternate the dominant-direction update of
    sum_i lam_i R_i (projected orthogonal to earlier components) with the
    closed-form embedding update lam_i = v' R_i v, until the objective's
    relative change drops below tol; then deflate.  The recorded objective
    trace sum_i ||R_i - lam_i v v'||^2 is non-increasing.
    """
    if dataset.n_subjects == 0:
        raise DataError("cannot fit an empty dataset")
    if not 0 <= k <= dataset.atlas.roi_count:
        raise DataError(f"k must be in [0, V={dataset.atlas.roi_count}], got {k}")
    v_dim = dataset.atlas.roi_count
    n = dataset.n_subjects

    rows, cols = np.tril_indices(v_dim, k=-1)
    resid = np.zeros((n, v_dim, v_dim))
    resid[:, rows, cols] = dataset.edges
    resid[:, cols, rows] = dataset.edges

    total = float(np.einsum("ijk,ijk->", resid, resid))
    trace: list[float] = []
    components: list[np.ndarray] = []
    embeddings = np.zeros((n, k))

    for comp in range(k):
        lam = np.ones(n)
        direction: np.ndarray | None = None
        prev_obj = None
        for _ in range(max_alternations):
            weighted = np.einsum("i,ijk->jk", lam, resid)
            direction = _dominant_direction(weighted, components, direction, tol, max_alternations)
            lam = np.einsum("ijk,j,k->i", resid, direction, direction)
            obj = total - float(np.dot(lam, lam))
            trace.append(obj)
            if prev_obj is not None and abs(prev_obj - obj) <= tol * (1.0 + abs(prev_obj)):
                break
            prev_obj = obj
        components.append(direction)
        embeddings[:, comp] = lam
        resid -= lam[:, None, None] * np.outer(direction, direction)[None, :, :]
        total = float(np.einsum("ijk,ijk->", resid, resid))

    comp_arr = np.asarray(components) if components else np.zeros((0, v_dim))
    return TnpcaModel(components=comp_arr, embeddings=embeddings, objective_trace=np.asarray(trace))


def tnpca_reconstruct(model: TnpcaModel, embeddings: np.ndarray | None = None) -> np.ndarray:
    """Stack of real-valued reconstructions sum_k lam_ik v_k v_k'."""
    lam = model.embeddings if embeddings is None else np.asarray(embeddings, dtype=np.float64)
    if model.n_components == 0:
        v_dim = model.components.shape[1]
        return np.zeros((lam.shape[0], v_dim, v_dim))
    return np.einsum("ik,ku,kv->iuv", lam, model.components, model.components)


def binarize_reconstruction(s: np.ndarray) -> np.ndarray:
    """Nearest-of-{0,1} rounding, ties to 1; diagonal zeroed."""
    out = (np.asarray(s) >= 0.5).astype(np.uint8)
    if out.ndim == 3:
        idx = np.arange(out.shape[1])
        out[:, idx, idx] = 0
    else:
        np.fill_diagonal(out, 0)
    return out


def simulate_tnpca(
    base_dataset: NetworkDataset,
    k: int,
    sigma: float,
    outlier_fraction: float,
    seed: int,
    model: TnpcaModel | None = None,
) -> LabeledDataset:
    """Embed a clean population, perturb a fraction of embeddings, rebuild.

    Outlier embeddings get N(0, sigma^2 I) noise added; every subject
    (outlier or not) is replaced by the binarized reconstruction of its
    (possibly perturbed) embedding.  Pass a prefitted `model` to reuse one
    decomposition across noise levels.
    """
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if not 0.0 <= outlier_fraction < 1.0:
        raise ConfigError(f"outlier_fraction must be in [0, 1), got {outlier_fraction}")
    if model is None:
        model = tnpca_fit(base_dataset, k)
    elif model.n_components != k:
        raise ConfigError(f"prefitted model has {model.n_components} components, expected {k}")
    n = base_dataset.n_subjects

    labels = np.zeros(n, dtype=bool)
    lam = model.embeddings.copy()
    n_out = math.ceil(outlier_fraction * n)
    if n_out:
        chosen = np.sort(_rng(seed, 0).choice(n, size=n_out, replace=False))
        labels[chosen] = True
        lam[chosen] += sigma * _rng(seed, 1).standard_normal((n_out, k))

    recon = binarize_reconstruction(tnpca_reconstruct(model, lam))
    rows, cols = np.tril_indices(base_dataset.atlas.roi_count, k=-1)
    edges = recon[:, rows, cols]
    dataset = NetworkDataset(
        subject_ids=base_dataset.subject_ids, edges=edges, atlas=base_dataset.atlas
    )
    return LabeledDataset(dataset=dataset, is_outlier=labels)


def write_labels_csv(labeled: LabeledDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("subject_id,is_outlier\n")
        for sid, flag in zip(labeled.dataset.subject_ids, labeled.is_outlier):
            fh.write(f"{sid},{int(flag)}\n")
