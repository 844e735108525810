"""Tests for the canonical sparse matrix layer.

Every algebraic operation is checked against an independent dense
oracle computed with plain numpy.
"""

import numpy as np
import pytest
import scipy.sparse as sp

from oxmc.matrices import (
    ShapeError,
    SparseMatrix,
    as_matrix,
    binarize,
    equal,
    from_dense,
    identity,
    matmul,
    row_top_k,
    trace_product,
    transpose,
)


def random_dense(rng, rows, cols, density=0.4, integer=False):
    mask = rng.random((rows, cols)) < density
    if integer:
        vals = rng.integers(-4, 5, size=(rows, cols)).astype(float)
    else:
        vals = rng.normal(size=(rows, cols))
    return np.where(mask, vals, 0.0)


class TestCanonicalForm:
    def test_duplicates_are_summed_and_zeros_dropped(self):
        """COO input with duplicate coordinates collapses to one entry."""
        rows = np.array([0, 0, 1, 1])
        cols = np.array([1, 1, 0, 0])
        vals = np.array([2.0, 3.0, 1.0, -1.0])
        m = SparseMatrix(sp.coo_matrix((vals, (rows, cols)), shape=(2, 2)))
        assert m.nnz == 1
        assert m[0, 1] == 5.0
        np.testing.assert_array_equal(m.toarray(), [[0.0, 5.0], [0.0, 0.0]])

    def test_column_indices_sorted_within_rows(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            d = random_dense(rng, 6, 9)
            m = from_dense(d)
            for i in range(m.rows):
                row = m.col_idx[m.row_ptr[i] : m.row_ptr[i + 1]]
                assert np.all(np.diff(row) > 0)

    def test_values_are_float64(self):
        m = SparseMatrix(sp.csr_matrix(np.array([[1, 2], [0, 3]], dtype=np.int32)))
        assert m.values.dtype == np.float64

    def test_no_explicit_zeros_survive(self):
        m = SparseMatrix((np.array([0.0, 1.0]), np.array([0, 1]), np.array([0, 2, 2])), shape=(2, 2))
        assert m.nnz == 1

    def test_accessors_mirror_storage(self):
        m = from_dense([[1.0, 0.0, 2.0], [0.0, 0.0, 3.0]])
        assert m.rows == 2 and m.cols == 3
        np.testing.assert_array_equal(m.row_nnz(), [2, 1])
        np.testing.assert_array_equal(m.col_nnz(), [1, 0, 2])


class TestMatmul:
    def test_worked_example(self):
        """[[1,1],[0,1]] times [[1,0],[1,1]] equals [[2,1],[1,1]]."""
        a = from_dense([[1.0, 1.0], [0.0, 1.0]])
        bt = from_dense([[1.0, 0.0], [1.0, 1.0]])
        np.testing.assert_array_equal(matmul(a, bt).toarray(), [[2.0, 1.0], [1.0, 1.0]])

    def test_matches_dense_oracle_exactly_on_integers(self):
        """Integer-valued operands produce exact results (no rounding)."""
        rng = np.random.default_rng(42)
        for _ in range(50):
            r, m, c = rng.integers(1, 17, size=3)
            da = random_dense(rng, r, m, integer=True)
            db = random_dense(rng, m, c, integer=True)
            got = matmul(from_dense(da), from_dense(db)).toarray()
            np.testing.assert_array_equal(got, da @ db)

    def test_matches_dense_oracle_on_floats(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            r, m, c = rng.integers(1, 13, size=3)
            da = random_dense(rng, r, m)
            db = random_dense(rng, m, c)
            got = matmul(from_dense(da), from_dense(db)).toarray()
            np.testing.assert_allclose(got, da @ db, rtol=0, atol=1e-12)

    def test_result_is_canonical(self):
        """Cancelling products do not leave explicit zeros behind."""
        a = from_dense([[1.0, 1.0]])
        bt = from_dense([[1.0], [-1.0]])
        out = matmul(a, bt)
        assert isinstance(out, SparseMatrix)
        assert out.nnz == 0

    def test_dimension_mismatch_reports_both_shapes(self):
        a = from_dense(np.ones((2, 3)))
        b = from_dense(np.ones((4, 2)))
        with pytest.raises(ShapeError) as exc:
            matmul(a, b)
        assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)

    def test_identity_is_neutral(self):
        rng = np.random.default_rng(11)
        a = from_dense(random_dense(rng, 5, 5))
        assert equal(matmul(a, identity(5)), a)
        assert equal(matmul(identity(5), a), a)


class TestTranspose:
    def test_round_trip_is_identity(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            a = from_dense(random_dense(rng, 4, 7))
            assert equal(transpose(transpose(a)), a)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(23)
        d = random_dense(rng, 5, 8)
        np.testing.assert_array_equal(transpose(from_dense(d)).toarray(), d.T)

    def test_product_against_columns_via_transpose(self):
        """A @ transpose(B) equals the dense A @ B.T."""
        rng = np.random.default_rng(29)
        da = random_dense(rng, 6, 4, integer=True)
        db = random_dense(rng, 5, 4, integer=True)
        got = matmul(from_dense(da), transpose(from_dense(db))).toarray()
        np.testing.assert_array_equal(got, da @ db.T)


class TestBinarize:
    def test_strictly_positive_entries_become_one(self):
        m = from_dense([[0.5, -2.0, 0.0], [3.0, 0.0, -0.1]])
        np.testing.assert_array_equal(binarize(m).toarray(), [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])

    def test_idempotent(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            m = from_dense(random_dense(rng, 6, 6))
            once = binarize(m)
            assert equal(binarize(once), once)

    def test_negatives_are_not_stored(self):
        m = from_dense([[-1.0, -2.0]])
        assert binarize(m).nnz == 0


class TestTraceProduct:
    def test_worked_example(self):
        """Two 2x2 binary matrices overlapping in one coordinate give 1."""
        y = from_dense([[1.0, 0.0], [0.0, 1.0]])
        yhat = from_dense([[1.0, 1.0], [1.0, 0.0]])
        assert trace_product(y, yhat) == 1

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(37)
        for _ in range(50):
            r, c = rng.integers(1, 15, size=2)
            dy = (rng.random((r, c)) < 0.4).astype(float)
            dz = (rng.random((r, c)) < 0.4).astype(float)
            got = trace_product(from_dense(dy), from_dense(dz))
            assert got == int((dy * dz).sum())

    def test_equals_trace_of_gram_product(self):
        """The overlap count is the trace of Y.T @ Yhat."""
        rng = np.random.default_rng(41)
        dy = (rng.random((8, 6)) < 0.5).astype(float)
        dz = (rng.random((8, 6)) < 0.5).astype(float)
        got = trace_product(from_dense(dy), from_dense(dz))
        assert got == int(np.trace(dy.T @ dz))

    def test_rejects_non_binary_operands(self):
        y = from_dense([[1.0, 0.0]])
        bad = from_dense([[2.0, 0.0]])
        with pytest.raises(ValueError):
            trace_product(bad, y)
        with pytest.raises(ValueError):
            trace_product(y, bad)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ShapeError):
            trace_product(from_dense(np.ones((2, 2))), from_dense(np.ones((2, 3))))


def top_k_oracle(dense, k):
    """Reference row-wise top-k on a dense array, ties to the lowest column."""
    out = np.zeros_like(dense)
    for i, row in enumerate(dense):
        pos = [(v, j) for j, v in enumerate(row) if v > 0]
        pos.sort(key=lambda t: (-t[0], t[1]))
        for _, j in pos[:k]:
            out[i, j] = 1.0
    return out


class TestRowTopK:
    def test_worked_example(self):
        """Row [3,1,2] with k=2 keeps columns 0 and 2."""
        m = from_dense([[3.0, 1.0, 2.0]])
        np.testing.assert_array_equal(row_top_k(m, 2).toarray(), [[1.0, 0.0, 1.0]])

    def test_ties_resolve_to_lowest_column(self):
        m = from_dense([[2.0, 5.0, 5.0, 5.0]])
        np.testing.assert_array_equal(row_top_k(m, 2).toarray(), [[0.0, 1.0, 1.0, 0.0]])

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(43)
        for _ in range(100):
            r, c = rng.integers(1, 10, size=2)
            k = int(rng.integers(1, 5))
            d = random_dense(rng, r, c, density=0.6, integer=True)
            got = row_top_k(from_dense(d), k).toarray()
            np.testing.assert_array_equal(got, top_k_oracle(d, k))

    def test_rows_short_of_k_keep_all_positives(self):
        m = from_dense([[1.0, 0.0, 2.0]])
        np.testing.assert_array_equal(row_top_k(m, 5).toarray(), [[1.0, 0.0, 1.0]])

    def test_non_positive_rows_stay_empty(self):
        m = from_dense([[0.0, -3.0], [0.0, 0.0]])
        assert row_top_k(m, 1).nnz == 0

    def test_k_zero_rejected(self):
        with pytest.raises(ValueError):
            row_top_k(from_dense([[1.0]]), 0)

    def test_selection_is_binary_with_bounded_rows(self):
        rng = np.random.default_rng(47)
        for _ in range(30):
            d = random_dense(rng, 12, 8, density=0.7)
            k = int(rng.integers(1, 4))
            out = row_top_k(from_dense(d), k)
            assert np.all(out.values == 1.0)
            assert np.all(out.row_nnz() <= k)


class TestCoercion:
    def test_as_matrix_wraps_plain_scipy(self):
        base = sp.csr_matrix(np.eye(3))
        wrapped = as_matrix(base)
        assert isinstance(wrapped, SparseMatrix)

    def test_from_dense_rejects_wrong_rank(self):
        with pytest.raises(ShapeError):
            from_dense(np.ones(4))

    def test_equal_detects_value_difference(self):
        a = from_dense([[1.0, 0.0]])
        b = from_dense([[1.5, 0.0]])
        assert not equal(a, b)
        assert equal(a, a)
