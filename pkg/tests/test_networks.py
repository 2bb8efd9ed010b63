"""Domain types, edge indexing, design construction, and file round trips."""

import numpy as np
import pytest

from odin import (
    Atlas,
    DataError,
    EdgeIndex,
    FormatError,
    NetworkDataset,
    build_design,
    devectorize,
    read_atlas,
    read_dataset,
    vectorize,
    write_atlas,
    write_dataset,
)
from odin.networks import _pair_label


def simple_atlas(v=4, hemis=("L", "L", "R", "R"), lobes=("F", "P", "F", "P")):
    return Atlas(
        roi_ids=tuple(f"r{i}" for i in range(v)),
        hemispheres=tuple(hemis),
        lobes=tuple(lobes),
    )


def random_atlas(rng, v, n_hemis=2, n_lobes=3):
    return Atlas(
        roi_ids=tuple(f"r{i}" for i in range(v)),
        hemispheres=tuple(f"h{j}" for j in rng.integers(0, n_hemis, v)),
        lobes=tuple(f"l{j}" for j in rng.integers(0, n_lobes, v)),
    )


class TestEdgeIndex:
    def test_order_is_row_wise_lower_triangle(self):
        idx = EdgeIndex(4)
        expected = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)]
        assert [tuple(p) for p in idx.pairs] == expected

    @pytest.mark.parametrize("v", range(3, 13))
    def test_bijection_exhaustive(self, v):
        idx = EdgeIndex(v)
        assert idx.edge_count == v * (v - 1) // 2
        for l in range(idx.edge_count):
            u, w = idx.pair_of(l)
            assert u > w
            assert idx.index_of(u, w) == l
            assert idx.index_of(w, u) == l  # unordered lookup

    def test_rejects_non_edges(self):
        idx = EdgeIndex(5)
        with pytest.raises(DataError):
            idx.index_of(2, 2)
        with pytest.raises(DataError):
            idx.index_of(5, 0)


class TestVectorize:
    def test_path_graph(self):
        atlas = simple_atlas(3, ("L", "L", "R"), ("F", "F", "F"))
        a = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
        assert vectorize(a, atlas).tolist() == [1, 0, 1]

    def test_zero_matrix(self):
        atlas = simple_atlas(3, ("L", "L", "R"), ("F", "F", "F"))
        assert vectorize(np.zeros((3, 3), dtype=int), atlas).tolist() == [0, 0, 0]

    def test_complete_graph(self):
        atlas = simple_atlas()
        a = np.ones((4, 4), dtype=int) - np.eye(4, dtype=int)
        assert vectorize(a, atlas).tolist() == [1] * 6

    def test_distinct_rejections(self):
        atlas = simple_atlas()
        good = np.zeros((4, 4), dtype=int)
        with pytest.raises(DataError, match="match the atlas"):
            vectorize(np.zeros((3, 3), dtype=int), atlas)
        bad = good.copy()
        bad[0, 1] = 1
        with pytest.raises(DataError, match="symmetric"):
            vectorize(bad, atlas)
        bad = good.copy()
        bad[2, 2] = 1
        with pytest.raises(DataError, match="diagonal"):
            vectorize(bad, atlas)
        bad = good.copy()
        bad[0, 1] = bad[1, 0] = 2
        with pytest.raises(DataError, match="0 or 1"):
            vectorize(bad, atlas)

    def test_round_trip_property(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            v = int(rng.integers(3, 15))
            atlas = random_atlas(rng, v)
            sym = rng.integers(0, 2, (v, v)).astype(np.uint8)
            sym = np.triu(sym, 1)
            sym = sym + sym.T
            vec = vectorize(sym, atlas)
            assert np.array_equal(devectorize(vec, v), sym)


class TestAtlas:
    def test_needs_three_rois(self):
        with pytest.raises(DataError, match="at least 3"):
            Atlas(roi_ids=("a", "b"), hemispheres=("L", "R"), lobes=("F", "F"))

    def test_needs_some_contrast(self):
        with pytest.raises(DataError, match="distinct"):
            Atlas(roi_ids=("a", "b", "c"), hemispheres=("L",) * 3, lobes=("F",) * 3)

    def test_unique_roi_ids(self):
        with pytest.raises(DataError, match="unique"):
            Atlas(roi_ids=("a", "a", "c"), hemispheres=("L", "R", "L"), lobes=("F", "F", "P"))


def full_indicator_matrix(atlas):
    """Independent construction of the pre-drop two-block indicator matrix."""
    idx = EdgeIndex(atlas.roi_count)
    hemi_pairs = sorted(
        {_pair_label("hemisphere", atlas.hemispheres[u], atlas.hemispheres[v]) for u, v in idx.pairs}
    )
    lobe_pairs = sorted({_pair_label("lobe", atlas.lobes[u], atlas.lobes[v]) for u, v in idx.pairs})
    labels = hemi_pairs + lobe_pairs
    x = np.zeros((idx.edge_count, len(labels)))
    for l, (u, v) in enumerate(idx.pairs):
        x[l, labels.index(_pair_label("hemisphere", atlas.hemispheres[u], atlas.hemispheres[v]))] = 1
        x[l, labels.index(_pair_label("lobe", atlas.lobes[u], atlas.lobes[v]))] = 1
    return x, labels


class TestBuildDesign:
    def test_reference_example_blocks(self):
        atlas = simple_atlas()
        full, labels = full_indicator_matrix(atlas)
        assert [lab[1:] for lab in labels] == [
            ("L", "L"),
            ("L", "R"),
            ("R", "R"),
            ("F", "F"),
            ("F", "P"),
            ("P", "P"),
        ]
        # edge (3,1) in 1-based convention is row 1: hemispheres (L,L)... row
        # index 1 is the 0-based pair (2,0) = ROIs r2,r0 -> hemis (R,L), lobes (F,F)
        assert full[1].tolist() == [0, 1, 0, 1, 0, 0]
        assert np.array_equal(full.sum(axis=1), np.full(6, 2.0))

    def test_reference_example_dropped_and_rank(self):
        atlas = simple_atlas()
        design = build_design(atlas)
        assert design.dropped == (("hemisphere", "L", "L"), ("lobe", "F", "F"))
        assert design.x.shape == (6, 4)
        # independent rank of the hand-derived post-drop matrix
        hand = np.array(
            [
                [0, 0, 1, 0],
                [1, 0, 0, 0],
                [1, 0, 1, 0],
                [1, 0, 1, 0],
                [1, 0, 0, 1],
                [0, 1, 1, 0],
            ],
            dtype=float,
        )
        assert np.linalg.matrix_rank(hand) == 4
        assert np.array_equal(design.x, hand)

    def test_post_drop_matches_full_minus_dropped(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            v = int(rng.integers(4, 20))
            atlas = random_atlas(rng, v)
            try:
                design = build_design(atlas)
            except DataError:
                continue  # rare confounded draw
            full, labels = full_indicator_matrix(atlas)
            assert np.array_equal(full.sum(axis=1), np.full(full.shape[0], 2.0))
            keep = [j for j, lab in enumerate(labels) if lab not in design.dropped]
            assert np.array_equal(design.x, full[:, keep])
            assert np.linalg.matrix_rank(design.x) == design.x.shape[1]

    def test_full_rank_at_scale(self):
        rng = np.random.default_rng(11)
        for v in (30, 70):
            atlas = random_atlas(rng, v, n_hemis=2, n_lobes=5)
            design = build_design(atlas)
            assert np.linalg.matrix_rank(design.x) == design.n_columns

    def test_confounded_labels_rejected(self):
        atlas = simple_atlas(4, ("L", "L", "R", "R"), ("A", "A", "B", "B"))
        with pytest.raises(DataError, match="confounded"):
            build_design(atlas)


class TestDatasetType:
    def test_validation(self):
        atlas = simple_atlas()
        edges = np.zeros((2, 6), dtype=np.uint8)
        ds = NetworkDataset(subject_ids=("a", "b"), edges=edges, atlas=atlas)
        assert ds.n_subjects == 2 and ds.n_edges == 6
        assert not ds.edges.flags.writeable
        with pytest.raises(DataError, match="0 or 1"):
            NetworkDataset(subject_ids=("a",), edges=np.full((1, 6), 2), atlas=atlas)
        with pytest.raises(DataError, match="unique"):
            NetworkDataset(subject_ids=("a", "a"), edges=edges, atlas=atlas)
        with pytest.raises(DataError, match="L="):
            NetworkDataset(subject_ids=("a",), edges=np.zeros((1, 5)), atlas=atlas)


class TestFileFormats:
    def test_dataset_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        atlas = random_atlas(rng, 10)
        edges = rng.integers(0, 2, (5, atlas.edge_count)).astype(np.uint8)
        ds = NetworkDataset(
            subject_ids=tuple(f"s{i}" for i in range(5)), edges=edges, atlas=atlas
        )
        path = tmp_path / "data.txt"
        write_dataset(ds, path)
        back = read_dataset(path, atlas)
        assert back.subject_ids == ds.subject_ids
        assert np.array_equal(back.edges, ds.edges)

    def test_row_length_rejected(self, tmp_path):
        atlas = simple_atlas()
        path = tmp_path / "bad.txt"
        path.write_text("V=4 N=1\ns1\t00000\n")  # L-1 characters
        with pytest.raises(FormatError, match="length 5, expected 6"):
            read_dataset(path, atlas)

    def test_non_binary_rejected(self, tmp_path):
        atlas = simple_atlas()
        path = tmp_path / "bad.txt"
        path.write_text("V=4 N=1\ns1\t000020\n")
        with pytest.raises(FormatError, match="non-binary"):
            read_dataset(path, atlas)

    def test_duplicate_id_rejected(self, tmp_path):
        atlas = simple_atlas()
        path = tmp_path / "bad.txt"
        path.write_text("V=4 N=2\ns1\t000000\ns1\t111111\n")
        with pytest.raises(FormatError, match="duplicate"):
            read_dataset(path, atlas)

    def test_header_and_v_checks(self, tmp_path):
        atlas = simple_atlas()
        path = tmp_path / "bad.txt"
        path.write_text("hello\n")
        with pytest.raises(FormatError, match="header"):
            read_dataset(path, atlas)
        path.write_text("V=9 N=0\n")
        with pytest.raises(FormatError, match="V=9"):
            read_dataset(path, atlas)

    def test_atlas_round_trip(self, tmp_path):
        atlas = simple_atlas()
        path = tmp_path / "atlas.tsv"
        write_atlas(atlas, path)
        back = read_atlas(path)
        assert back == atlas

    def test_atlas_bad_header(self, tmp_path):
        path = tmp_path / "atlas.tsv"
        path.write_text("roi\themi\tlobe\n")
        with pytest.raises(FormatError, match="header"):
            read_atlas(path)
