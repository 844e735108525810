"""Tests for beam-search matching, prediction, and model serialization.

Small models are assembled by hand from explicit weight vectors so that
path scores, occurrence scores, and averages have exact expected
values computed independently in the test.
"""

import numpy as np
import pytest

from oxmc.cluster import LabelTree
from oxmc.linear import WeightVector
from oxmc.matrices import from_dense
from oxmc.model import (
    Prediction,
    XmcModel,
    load_model,
    match,
    match_matrix,
    predict,
    predict_many,
    save_model,
)
from oxmc.overlap import ClusterAssignment


def sig(v):
    return 1.0 / (1.0 + np.exp(-v))


def unit_weight(dim, idx, val=1.0):
    return WeightVector(dim, np.array([idx], dtype=np.int64), np.array([float(val)]))


def flat_tree(leaf_sets, n_labels, branching=None):
    """Root with one leaf child per cluster."""
    k = len(leaf_sets)
    parents = [-1] + [0] * k
    children = [[i + 1 for i in range(k)]] + [[] for _ in range(k)]
    labels = [None] + [np.asarray(s, dtype=np.int64) for s in leaf_sets]
    return LabelTree(parents, children, labels, branching or k, n_labels)


def two_cluster_model(beam=2, score_mode="combined"):
    """d=4; matcher on features 0/1; rankers on features 2/3; label 2 duplicated."""
    tree = flat_tree([[0, 1, 2], [2, 3]], n_labels=4)
    assignment = ClusterAssignment.from_pairs(
        [(0, 0), (1, 0), (2, 0), (2, 1), (3, 1)], 4, 2, overlap_budget=2
    )
    matcher = {(0, 1): unit_weight(4, 0), (0, 2): unit_weight(4, 1)}
    ranker = {
        (0, 0): unit_weight(4, 2, 2.0),
        (1, 0): unit_weight(4, 2, 1.0),
        (2, 0): unit_weight(4, 3, 1.0),
        (2, 1): unit_weight(4, 3, -1.0),
        (3, 1): unit_weight(4, 3, 0.5),
    }
    return XmcModel(
        tree, matcher, ranker, assignment, assignment,
        beam=beam, n_features=4, score_mode=score_mode,
    )


class TestMatch:
    def test_worked_example_path_scores(self):
        """x=[1,.5,0,0]: clusters score sigmoid(1) and sigmoid(0.5)."""
        model = two_cluster_model(beam=2)
        clusters, scores = match(model, from_dense([[1.0, 0.5, 0.0, 0.0]]))
        np.testing.assert_array_equal(clusters, [0, 1])
        np.testing.assert_allclose(scores, [sig(1.0), sig(0.5)], atol=1e-15)

    def test_beam_one_keeps_best_cluster(self):
        model = two_cluster_model(beam=1)
        clusters, scores = match(model, from_dense([[0.2, 1.0, 0.0, 0.0]]))
        np.testing.assert_array_equal(clusters, [1])
        np.testing.assert_allclose(scores, [sig(1.0)], atol=1e-15)

    def test_tied_scores_prefer_lower_node_id(self):
        model = two_cluster_model(beam=1)
        clusters, _ = match(model, from_dense([[1.0, 1.0, 0.0, 0.0]]))
        np.testing.assert_array_equal(clusters, [0])

    def test_deep_tree_multiplies_path_scores(self):
        """Two levels: path score is the product of edge scores."""
        # root -> internal 1 (leaf children 3,4), leaf 2
        parents = [-1, 0, 0, 1, 1]
        children = [[1, 2], [3, 4], [], [], []]
        labels = [None, None, np.array([2]), np.array([0]), np.array([1])]
        tree = LabelTree(parents, children, labels, 2, 3)
        assignment = ClusterAssignment.from_pairs([(2, 0), (0, 1), (1, 2)], 3, 3, 1)
        matcher = {
            (0, 1): unit_weight(3, 0, 1.0),
            (0, 2): unit_weight(3, 0, -1.0),
            (1, 3): unit_weight(3, 1, 1.0),
            (1, 4): unit_weight(3, 1, -1.0),
        }
        ranker = {
            (2, 0): WeightVector.empty(3),
            (0, 1): WeightVector.empty(3),
            (1, 2): WeightVector.empty(3),
        }
        model = XmcModel(tree, matcher, ranker, assignment, assignment, beam=1, n_features=3)
        clusters, scores = match(model, from_dense([[2.0, 1.0, 0.0]]))
        # beam keeps node 1 (sig(2) > sig(-2)), then leaf 3 = cluster 1
        np.testing.assert_array_equal(clusters, [1])
        np.testing.assert_allclose(scores, [sig(2.0) * sig(1.0)], atol=1e-15)

    def test_ragged_tree_leaf_rides_along(self):
        """A shallow leaf competes by its frozen path score at deeper levels."""
        parents = [-1, 0, 0, 1, 1]
        children = [[1, 2], [3, 4], [], [], []]
        labels = [None, None, np.array([2]), np.array([0]), np.array([1])]
        tree = LabelTree(parents, children, labels, 2, 3)
        assignment = ClusterAssignment.from_pairs([(2, 0), (0, 1), (1, 2)], 3, 3, 1)
        matcher = {
            (0, 1): unit_weight(3, 0, 1.0),
            (0, 2): unit_weight(3, 0, 3.0),
            (1, 3): unit_weight(3, 1, 10.0),
            (1, 4): unit_weight(3, 1, -10.0),
        }
        ranker = {
            (2, 0): WeightVector.empty(3),
            (0, 1): WeightVector.empty(3),
            (1, 2): WeightVector.empty(3),
        }
        model = XmcModel(tree, matcher, ranker, assignment, assignment, beam=2, n_features=3)
        clusters, scores = match(model, from_dense([[1.0, 1.0, 0.0]]))
        # shallow leaf 2 (cluster 0) keeps sig(3); deep leaf 3 gets sig(1)*sig(10)
        assert set(clusters.tolist()) == {0, 1}
        got = dict(zip(clusters.tolist(), scores.tolist()))
        np.testing.assert_allclose(got[0], sig(3.0), atol=1e-15)
        np.testing.assert_allclose(got[1], sig(1.0) * sig(10.0), atol=1e-15)


class TestMatchMatrix:
    def random_model(self, rng, n_clusters, depth_budget=6, d=6):
        """Random flat or two-level tree with random sparse weights."""
        n_labels = n_clusters * 2
        sets = [
            np.array([2 * j, 2 * j + 1], dtype=np.int64) for j in range(n_clusters)
        ]
        tree = flat_tree(sets, n_labels)
        assignment = ClusterAssignment.from_label_sets(sets, n_labels, 1)
        matcher = {}
        for child in tree.children[0]:
            w = rng.normal(size=d) * (rng.random(d) < 0.7)
            matcher[(0, child)] = WeightVector.from_dense(w)
        ranker = {}
        for l, j in assignment.to_pairs():
            w = rng.normal(size=d) * (rng.random(d) < 0.7)
            ranker[(l, j)] = WeightVector.from_dense(w)
        beam = int(rng.integers(1, n_clusters + 1))
        return XmcModel(tree, matcher, ranker, assignment, assignment, beam=beam, n_features=d)

    def test_agrees_with_per_instance_match(self):
        """Batched matching reproduces the per-instance route on random data."""
        rng = np.random.default_rng(61)
        for _ in range(10):
            n_clusters = int(rng.integers(2, 6))
            model = self.random_model(rng, n_clusters)
            x = from_dense(rng.normal(size=(10, 6)) * (rng.random((10, 6)) < 0.6))
            mm = match_matrix(model, x).toarray()
            for i in range(10):
                clusters, _ = match(model, x[i])
                row = np.zeros(n_clusters)
                row[clusters] = 1.0
                np.testing.assert_array_equal(mm[i], row)

    def test_rows_have_exactly_beam_entries(self):
        rng = np.random.default_rng(67)
        for _ in range(10):
            n_clusters = int(rng.integers(2, 6))
            model = self.random_model(rng, n_clusters)
            x = from_dense(rng.normal(size=(8, 6)))
            mm = match_matrix(model, x)
            expected = min(model.beam, n_clusters)
            assert np.all(mm.row_nnz() == expected)


class TestPredict:
    def test_worked_example_with_duplicate_label(self):
        """Label 2 lives in both clusters; its score is the occurrence mean."""
        model = two_cluster_model(beam=2)
        x = from_dense([[1.0, 0.5, 1.0, 1.0]])
        p = predict(model, x, k=4)
        p0, p1 = sig(1.0), sig(0.5)
        expected = {
            0: sig(2.0) * p0,
            1: sig(1.0) * p0,
            2: (sig(1.0) * p0 + sig(-1.0) * p1) / 2.0,
            3: sig(0.5) * p1,
        }
        got = dict(zip(p.labels.tolist(), p.scores.tolist()))
        assert set(got) == set(expected)
        for l in expected:
            np.testing.assert_allclose(got[l], expected[l], atol=1e-15)
        # ranking: 0 > 1 > 3 > 2 for this x
        np.testing.assert_array_equal(p.labels, [0, 1, 3, 2])

    def test_duplicate_mean_is_exact_half_sum(self):
        """The duplicated label's score equals (s_a + s_b) / 2 bit for bit."""
        model = two_cluster_model(beam=2)
        x = from_dense([[0.7, -0.3, 0.2, 0.9]])
        p0, p1 = sig(0.7), sig(-0.3)
        s_a = sig(0.9) * p0
        s_b = sig(-0.9) * p1
        p = predict(model, x, k=4)
        got = dict(zip(p.labels.tolist(), p.scores.tolist()))
        assert got[2] == (s_a + s_b) / 2.0

    def test_ranker_only_mode_ignores_path_scores(self):
        model = two_cluster_model(beam=2, score_mode="ranker-only")
        x = from_dense([[1.0, 0.5, 1.0, 1.0]])
        p = predict(model, x, k=4)
        got = dict(zip(p.labels.tolist(), p.scores.tolist()))
        np.testing.assert_allclose(got[0], sig(2.0), atol=1e-15)
        np.testing.assert_allclose(got[2], (sig(1.0) + sig(-1.0)) / 2.0, atol=1e-15)

    def test_beam_one_restricts_candidates_to_one_cluster(self):
        model = two_cluster_model(beam=1)
        x = from_dense([[1.0, 0.0, 1.0, 1.0]])
        p = predict(model, x, k=4)
        assert set(p.labels.tolist()) == {0, 1, 2}

    def test_k_zero_gives_empty_prediction(self):
        model = two_cluster_model()
        p = predict(model, from_dense([[1.0, 0.0, 0.0, 0.0]]), k=0)
        assert p.labels.size == 0 and p.scores.size == 0

    def test_k_beyond_candidates_returns_all(self):
        model = two_cluster_model(beam=1)
        p = predict(model, from_dense([[1.0, 0.0, 0.0, 0.0]]), k=50)
        assert p.labels.size == 3

    def test_negative_k_rejected(self):
        model = two_cluster_model()
        with pytest.raises(ValueError):
            predict(model, from_dense([[1.0, 0.0, 0.0, 0.0]]), k=-1)

    def test_tied_label_scores_order_by_label_id(self):
        """Two labels with identical weights tie; lower id ranks first."""
        tree = flat_tree([[0, 1]], n_labels=2)
        assignment = ClusterAssignment.from_pairs([(0, 0), (1, 0)], 2, 1, 1)
        matcher = {(0, 1): unit_weight(2, 0)}
        ranker = {(0, 0): unit_weight(2, 1), (1, 0): unit_weight(2, 1)}
        model = XmcModel(tree, matcher, ranker, assignment, assignment, beam=1, n_features=2)
        p = predict(model, from_dense([[1.0, 1.0]]), k=2)
        np.testing.assert_array_equal(p.labels, [0, 1])

    def test_predict_many_matches_predict(self):
        rng = np.random.default_rng(71)
        model = two_cluster_model(beam=2)
        x = from_dense(rng.normal(size=(12, 4)))
        many = predict_many(model, x, k=3)
        for i in range(12):
            one = predict(model, x[i], k=3)
            np.testing.assert_array_equal(many[i].labels, one.labels)
            np.testing.assert_array_equal(many[i].scores, one.scores)

    def test_single_occurrence_untouched_by_averaging(self):
        """Labels in one cluster score identically with and without the
        dedup machinery (mean over one occurrence is the identity)."""
        from oxmc.linear import sigmoid

        model = two_cluster_model(beam=2)
        x = from_dense([[0.4, 1.2, 0.8, -0.5]])
        p = predict(model, x, k=4)
        got = dict(zip(p.labels.tolist(), p.scores.tolist()))
        sq = lambda v: float(sigmoid(np.array([v]))[0])
        assert got[0] == sq(2.0 * 0.8) * sq(0.4)
        assert got[3] == sq(0.5 * -0.5) * sq(1.2)


class TestModelValidation:
    def test_matcher_must_cover_tree_edges(self):
        tree = flat_tree([[0], [1]], n_labels=2)
        assignment = ClusterAssignment.from_pairs([(0, 0), (1, 1)], 2, 2, 1)
        ranker = {(0, 0): WeightVector.empty(2), (1, 1): WeightVector.empty(2)}
        with pytest.raises(ValueError):
            XmcModel(tree, {(0, 1): WeightVector.empty(2)}, ranker,
                     assignment, assignment, beam=1, n_features=2)

    def test_ranker_must_mirror_assignment(self):
        tree = flat_tree([[0], [1]], n_labels=2)
        assignment = ClusterAssignment.from_pairs([(0, 0), (1, 1)], 2, 2, 1)
        matcher = {(0, 1): WeightVector.empty(2), (0, 2): WeightVector.empty(2)}
        ranker = {(0, 0): WeightVector.empty(2)}  # missing (1, 1)
        with pytest.raises(ValueError):
            XmcModel(tree, matcher, ranker, assignment, assignment, beam=1, n_features=2)

    def test_tree_sets_must_match_assignment_columns(self):
        tree = flat_tree([[0, 1], [1]], n_labels=2)
        assignment = ClusterAssignment.from_pairs([(0, 0), (1, 1)], 2, 2, 1)
        matcher = {(0, 1): WeightVector.empty(2), (0, 2): WeightVector.empty(2)}
        ranker = {(0, 0): WeightVector.empty(2), (1, 1): WeightVector.empty(2)}
        with pytest.raises(ValueError):
            XmcModel(tree, matcher, ranker, assignment, assignment, beam=1, n_features=2)


class TestSerialization:
    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(73)
        model = two_cluster_model(beam=2)
        # overwrite with irrational-ish weights to exercise repr round-trip
        model.ranker[(0, 0)] = WeightVector(
            4, np.array([2], dtype=np.int64), np.array([np.pi / 3.0])
        )
        model.invalidate_caches()
        save_model(model, tmp_path / "m")
        back = load_model(tmp_path / "m")
        x = from_dense(rng.normal(size=(6, 4)))
        a = predict_many(model, x, k=4)
        b = predict_many(back, x, k=4)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.labels, pb.labels)
            np.testing.assert_array_equal(pa.scores, pb.scores)

    def test_files_are_deterministic(self, tmp_path):
        model = two_cluster_model()
        save_model(model, tmp_path / "m1")
        save_model(model, tmp_path / "m2")
        for name in ["tree.txt", "assignment.txt", "assignment_initial.txt",
                     "matcher.txt", "ranker.txt", "meta.json"]:
            assert (tmp_path / "m1" / name).read_bytes() == (tmp_path / "m2" / name).read_bytes()

    def test_corrupt_weight_count_rejected(self, tmp_path):
        model = two_cluster_model()
        save_model(model, tmp_path / "m")
        ranker = tmp_path / "m" / "ranker.txt"
        lines = ranker.read_text().splitlines()
        parts = lines[0].split()
        parts[2] = str(int(parts[2]) + 1)  # promise one more entry than present
        lines[0] = " ".join(parts)
        ranker.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError):
            load_model(tmp_path / "m")

    def test_missing_ranker_entry_rejected(self, tmp_path):
        model = two_cluster_model()
        save_model(model, tmp_path / "m")
        ranker = tmp_path / "m" / "ranker.txt"
        lines = ranker.read_text().splitlines()
        ranker.write_text("\n".join(lines[1:]) + "\n")
        with pytest.raises(ValueError):
            load_model(tmp_path / "m")
