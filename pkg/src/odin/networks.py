"""Domain types for populations of binary networks on a shared node set.

Edges are stored as length-L vectors listing the strict lower triangle of
the adjacency matrix row by row: (2,1),(3,1),(3,2),(4,1),... so that
L = V(V-1)/2.  All types are immutable after construction and safe to
share across concurrent readers.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import DataError, FormatError


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclasses.dataclass(frozen=True)
class Atlas:
    """Node metadata: one hemisphere label and one lobe label per ROI."""

    roi_ids: tuple[str, ...]
    hemispheres: tuple[str, ...]
    lobes: tuple[str, ...]

    def __post_init__(self):
        v = len(self.roi_ids)
        if v < 3:
            raise DataError(f"atlas needs at least 3 ROIs, got {v}")
        if len(self.hemispheres) != v or len(self.lobes) != v:
            raise DataError("hemisphere/lobe label counts must match roi_ids")
        if len(set(self.roi_ids)) != v:
            raise DataError("roi_ids must be unique")
        if any(not s for s in self.hemispheres) or any(not s for s in self.lobes):
            raise DataError("every ROI needs a non-empty hemisphere and lobe label")
        if len(set(self.hemispheres)) < 2 and len(set(self.lobes)) < 2:
            raise DataError(
                "atlas needs at least 2 distinct hemisphere labels or "
                "2 distinct lobe labels; the coefficient design is empty otherwise"
            )

    @property
    def roi_count(self) -> int:
        return len(self.roi_ids)

    @property
    def edge_count(self) -> int:
        v = self.roi_count
        return v * (v - 1) // 2


class EdgeIndex:
    """Bijection between edge positions l and ROI pairs (u, v) with u > v.

    Position l runs over the strict lower triangle row by row, matching
    the vectorization order used throughout the package.  Indices are
    0-based; the ordering is identical to the 1-based convention
    (2,1),(3,1),(3,2),...
    """

    def __init__(self, roi_count: int):
        if roi_count < 2:
            raise DataError("edge index needs at least 2 nodes")
        self.roi_count = roi_count
        self.edge_count = roi_count * (roi_count - 1) // 2
        rows, cols = np.tril_indices(roi_count, k=-1)
        self._pairs = _frozen(np.column_stack([rows, cols]))

    @property
    def pairs(self) -> np.ndarray:
        """(L, 2) array of (u, v) node pairs, u > v, in edge order."""
        return self._pairs

    def pair_of(self, l: int) -> tuple[int, int]:
        u, v = self._pairs[l]
        return int(u), int(v)

    def index_of(self, u: int, v: int) -> int:
        if u < v:
            u, v = v, u
        if u == v or u >= self.roi_count or v < 0:
            raise DataError(f"({u}, {v}) is not an edge of a {self.roi_count}-node network")
        return u * (u - 1) // 2 + v


def vectorize(adjacency: np.ndarray, atlas: Atlas) -> np.ndarray:
    """Read off the strict lower triangle of a symmetric binary matrix.

    Rejects, with distinct messages: dimension mismatch against the atlas,
    asymmetric input, nonzero diagonal, and non-binary entries.
    """
    a = np.asarray(adjacency)
    v = atlas.roi_count
    if a.ndim != 2 or a.shape != (v, v):
        raise DataError(f"adjacency must be {v}x{v} to match the atlas, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise DataError("adjacency matrix must be symmetric")
    if np.any(np.diagonal(a) != 0):
        raise DataError("adjacency matrix must have a zero diagonal (no self loops)")
    if not np.isin(a, (0, 1)).all():
        raise DataError("adjacency entries must be 0 or 1")
    rows, cols = np.tril_indices(v, k=-1)
    return a[rows, cols].astype(np.uint8)


def devectorize(edges: np.ndarray, roi_count: int) -> np.ndarray:
    """Inverse of :func:`vectorize`: rebuild the symmetric hollow matrix."""
    e = np.asarray(edges)
    l = roi_count * (roi_count - 1) // 2
    if e.shape != (l,):
        raise DataError(f"edge vector must have length {l} for {roi_count} ROIs, got {e.shape}")
    out = np.zeros((roi_count, roi_count), dtype=e.dtype)
    rows, cols = np.tril_indices(roi_count, k=-1)
    out[rows, cols] = e
    out[cols, rows] = e
    return out


@dataclasses.dataclass(frozen=True)
class NetworkDataset:
    """N subjects x L binary edge indicators plus subject identifiers."""

    subject_ids: tuple[str, ...]
    edges: np.ndarray
    atlas: Atlas

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.uint8)
        n = len(self.subject_ids)
        if edges.ndim != 2 or edges.shape[0] != n:
            raise DataError(f"edges must be an {n}-row matrix, got shape {edges.shape}")
        if edges.shape[1] != self.atlas.edge_count:
            raise DataError(
                f"edge rows have length {edges.shape[1]} but the atlas "
                f"defines L={self.atlas.edge_count}"
            )
        if not np.isin(edges, (0, 1)).all():
            raise DataError("edge entries must be 0 or 1")
        if len(set(self.subject_ids)) != n:
            raise DataError("subject_ids must be unique")
        object.__setattr__(self, "edges", _frozen(edges))

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_edges(self) -> int:
        return self.edges.shape[1]


@dataclasses.dataclass(frozen=True)
class DesignMatrix:
    """L x p indicator matrix with column metadata and reference coding record.

    Columns enumerate the unordered hemisphere pairs and lobe pairs realized
    in the atlas, minus one reference column per block.  Labels are
    ("hemisphere"|"lobe", first, second) with first <= second.
    """

    x: np.ndarray
    column_labels: tuple[tuple[str, str, str], ...]
    dropped: tuple[tuple[str, str, str], ...]

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != len(self.column_labels):
            raise DataError("design matrix shape does not match its column labels")
        object.__setattr__(self, "x", _frozen(x))

    @property
    def n_columns(self) -> int:
        return self.x.shape[1]


def _pair_label(kind: str, a: str, b: str) -> tuple[str, str, str]:
    return (kind, a, b) if a <= b else (kind, b, a)


def build_design(atlas: Atlas) -> DesignMatrix:
    """Build the edge-level indicator design from hemisphere/lobe pairs.

    Each edge row carries one 1 in the column of its hemisphere pair and one
    in the column of its lobe pair; the lexicographically first column of
    each block is then dropped (reference coding) to restore full column
    rank.  Raises if the atlas leaves no columns or a rank deficiency that
    reference coding cannot repair (e.g. perfectly confounded labels).
    """
    index = EdgeIndex(atlas.roi_count)
    hemi = np.asarray(atlas.hemispheres, dtype=object)
    lobe = np.asarray(atlas.lobes, dtype=object)
    u, v = index.pairs[:, 0], index.pairs[:, 1]

    hemi_labels = sorted({_pair_label("hemisphere", hemi[a], hemi[b]) for a, b in zip(u, v)})
    lobe_labels = sorted({_pair_label("lobe", lobe[a], lobe[b]) for a, b in zip(u, v)})
    labels = hemi_labels + lobe_labels
    col_of = {lab: j for j, lab in enumerate(labels)}

    x = np.zeros((index.edge_count, len(labels)))
    for l, (a, b) in enumerate(index.pairs):
        x[l, col_of[_pair_label("hemisphere", hemi[a], hemi[b])]] = 1.0
        x[l, col_of[_pair_label("lobe", lobe[a], lobe[b])]] = 1.0

    dropped = (hemi_labels[0], lobe_labels[0])
    keep = [j for j, lab in enumerate(labels) if lab not in dropped]
    kept_labels = tuple(labels[j] for j in keep)
    x = x[:, keep]
    if x.shape[1] == 0:
        raise DataError("degenerate atlas: reference coding leaves no design columns")
    rank = np.linalg.matrix_rank(x)
    if rank < x.shape[1]:
        raise DataError(
            f"design matrix is rank deficient after reference coding "
            f"(rank {rank} < p={x.shape[1]}); hemisphere and lobe labels are confounded"
        )
    return DesignMatrix(x=x, column_labels=kept_labels, dropped=dropped)


# ---------------------------------------------------------------------------
# file formats
#
# Dataset: UTF-8 text, line 1 "V=<int> N=<int>", then one line per subject:
#   subject_id<TAB><L characters of 0/1 in edge order>
# Atlas: UTF-8 TSV, header "roi_id<TAB>hemisphere<TAB>lobe", one row per ROI;
#   row order defines the ROI index.
# ---------------------------------------------------------------------------


def write_dataset(dataset: NetworkDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"V={dataset.atlas.roi_count} N={dataset.n_subjects}\n")
        for sid, row in zip(dataset.subject_ids, dataset.edges):
            fh.write(sid)
            fh.write("\t")
            fh.write("".join("1" if e else "0" for e in row))
            fh.write("\n")


def read_dataset(path, atlas: Atlas) -> NetworkDataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split()
        if len(parts) != 2 or not parts[0].startswith("V=") or not parts[1].startswith("N="):
            raise FormatError(f"bad dataset header {header!r}, expected 'V=<int> N=<int>'")
        try:
            v, n = int(parts[0][2:]), int(parts[1][2:])
        except ValueError as exc:
            raise FormatError(f"bad dataset header {header!r}: {exc}") from None
        if v != atlas.roi_count:
            raise FormatError(
                f"dataset declares V={v} but the atlas has {atlas.roi_count} ROIs"
            )
        l = v * (v - 1) // 2
        ids: list[str] = []
        rows = np.empty((n, l), dtype=np.uint8)
        for i in range(n):
            line = fh.readline().rstrip("\n")
            if not line:
                raise FormatError(f"dataset ended early: expected {n} rows, got {i}")
            sid, sep, bits = line.partition("\t")
            if not sep:
                raise FormatError(f"row {i + 1}: missing TAB between subject id and edges")
            if len(bits) != l:
                raise FormatError(
                    f"row {i + 1} ({sid!r}): edge string has length {len(bits)}, expected {l}"
                )
            arr = np.frombuffer(bits.encode("ascii", "replace"), dtype=np.uint8) - ord("0")
            if not np.isin(arr, (0, 1)).all():
                raise FormatError(f"row {i + 1} ({sid!r}): non-binary character in edge string")
            ids.append(sid)
            rows[i] = arr
        if len(set(ids)) != n:
            raise FormatError("duplicate subject id in dataset file")
    return NetworkDataset(subject_ids=tuple(ids), edges=rows, atlas=atlas)


def write_atlas(atlas: Atlas, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("roi_id\themisphere\tlobe\n")
        for rid, h, lb in zip(atlas.roi_ids, atlas.hemispheres, atlas.lobes):
            fh.write(f"{rid}\t{h}\t{lb}\n")


def read_atlas(path) -> Atlas:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header.split("\t") != ["roi_id", "hemisphere", "lobe"]:
            raise FormatError(f"bad atlas header {header!r}")
        ids, hemis, lobes = [], [], []
        for ln, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise FormatError(f"atlas line {ln}: expected 3 TSV fields, got {len(fields)}")
            ids.append(fields[0])
            hemis.append(fields[1])
            lobes.append(fields[2])
    return Atlas(roi_ids=tuple(ids), hemispheres=tuple(hemis), lobes=tuple(lobes))
