"""Exactness, tie-breaking, and determinism of the brute-force scan."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import unit_matrix
from leakage_audit import _kernels, nn_search
from leakage_audit.errors import ValidationError
from leakage_audit.types import EmbeddingMatrix


def _ids_and_scores(neighbors):
    return [(n.query_row_id, n.similarity) for n in neighbors]


def assert_neighbors_match(neighbors, expected, atol=1e-6):
    """expected: (row_id, score) pairs; ids exact, scores within atol."""
    assert [n.query_row_id for n in neighbors] == [i for i, _ in expected]
    np.testing.assert_allclose([n.similarity for n in neighbors],
                               [s for _, s in expected], atol=atol, rtol=0)


class TestTopK:
    def test_matches_fsum_oracle_small(self):
        rng = np.random.default_rng(100)
        matrix = unit_matrix(rng, 40, 6)
        probe = unit_matrix(rng, 1, 6).rows[0]
        got = nn_search.top_k(matrix, probe, k=10)
        want = oracles.fsum_top_k(matrix.ids, matrix.rows, probe, 10)
        assert [n.query_row_id for n in got] == [i for i, _ in want]
        for n, (_, score) in zip(got, want):
            assert abs(n.similarity - score) <= 1e-6

    def test_matches_gemv_oracle_batch(self):
        rng = np.random.default_rng(101)
        matrix = unit_matrix(rng, 300, 16)
        probes = unit_matrix(rng, 7, 16, prefix="p")
        got = nn_search.scan_top_k(matrix, probes.rows, k=25)
        for pi in range(7):
            want = oracles.gemv_top_k(matrix.ids, matrix.rows, probes.rows[pi], 25)
            assert_neighbors_match(got[pi], want)

    def test_hand_case_orthogonal_rows(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0], [0.70710678, 0.70710678]],
                        dtype=np.float32)
        matrix = EmbeddingMatrix(ids=["v1", "v2", "v3"], rows=rows)
        got = nn_search.top_k(matrix, np.array([1.0, 0.0], dtype=np.float32), k=3)
        assert [n.query_row_id for n in got] == ["v1", "v3", "v2"]
        assert got[0].similarity == pytest.approx(1.0, abs=1e-6)
        assert got[1].similarity == pytest.approx(0.70710678, abs=1e-6)
        assert got[2].similarity == pytest.approx(0.0, abs=1e-6)
        assert [n.rank for n in got] == [1, 2, 3]

    def test_identical_rows_tie_break_on_id(self):
        row = np.full((3, 4), 0.5, dtype=np.float32)
        matrix = EmbeddingMatrix(ids=["c", "a", "b"], rows=row)
        got = nn_search.top_k(matrix, row[0], k=3)
        assert [n.query_row_id for n in got] == ["a", "b", "c"]

    def test_k_larger_than_matrix_returns_all(self):
        rng = np.random.default_rng(102)
        matrix = unit_matrix(rng, 5, 4)
        got = nn_search.top_k(matrix, matrix.rows[0], k=50)
        assert len(got) == 5

    def test_k_must_be_positive(self):
        rng = np.random.default_rng(103)
        matrix = unit_matrix(rng, 5, 4)
        with pytest.raises(ValidationError):
            nn_search.top_k(matrix, matrix.rows[0], k=0)

    def test_dim_mismatch_rejected(self):
        rng = np.random.default_rng(104)
        matrix = unit_matrix(rng, 5, 4)
        with pytest.raises(ValidationError):
            nn_search.top_k(matrix, np.ones(3, dtype=np.float32), k=1)

    def test_self_match_is_rank_one(self):
        rng = np.random.default_rng(105)
        matrix = unit_matrix(rng, 64, 12)
        got = nn_search.top_k(matrix, matrix.rows[17], k=1)
        assert got[0].query_row_id == matrix.ids[17]
        assert got[0].similarity == pytest.approx(1.0, abs=1e-6)


class TestDeterminism:
    def test_thread_count_invariance(self):
        rng = np.random.default_rng(200)
        matrix = unit_matrix(rng, 500, 8)
        probes = unit_matrix(rng, 11, 8, prefix="p").rows
        base = nn_search.scan_top_k(matrix, probes, k=37, threads=1)
        for threads in (2, 8):
            got = nn_search.scan_top_k(matrix, probes, k=37, threads=threads)
            assert got == base

    def test_block_size_invariance(self):
        rng = np.random.default_rng(201)
        matrix = unit_matrix(rng, 333, 8)
        probes = unit_matrix(rng, 5, 8, prefix="p").rows
        base = nn_search.scan_top_k(matrix, probes, k=20, block_rows=333)
        for block_rows in (1, 7, 64, 100):
            got = nn_search.scan_top_k(matrix, probes, k=20, block_rows=block_rows,
                                       threads=3)
            assert got == base

    def test_backends_agree_exactly(self):
        if not _kernels.HAS_NUMBA:
            pytest.skip("numba unavailable")
        rng = np.random.default_rng(202)
        matrix = unit_matrix(rng, 400, 24)
        probes = unit_matrix(rng, 9, 24, prefix="p").rows
        try:
            _kernels.set_backend("numba")
            with_numba = nn_search.scan_top_k(matrix, probes, k=31)
            _kernels.set_backend("numpy")
            with_numpy = nn_search.scan_top_k(matrix, probes, k=31)
        finally:
            _kernels.set_backend(None)
        for a, b in zip(with_numba, with_numpy):
            assert [n.query_row_id for n in a] == [n.query_row_id for n in b]
            for na, nb in zip(a, b):
                assert abs(na.similarity - nb.similarity) <= 1e-9

    def test_env_flag_forces_numpy(self, monkeypatch):
        monkeypatch.setenv(_kernels._ENV_FLAG, "1")
        assert _kernels.active_backend() == "numpy"
        monkeypatch.delenv(_kernels._ENV_FLAG)


class TestAboveThreshold:
    def test_matches_oracle(self):
        rng = np.random.default_rng(300)
        matrix = unit_matrix(rng, 200, 8)
        probe = unit_matrix(rng, 1, 8).rows[0]
        got = nn_search.above_threshold(matrix, probe, theta=0.2)
        want = oracles.scan_above(matrix.ids, matrix.rows, probe, 0.2)
        assert_neighbors_match(got, want)

    def test_strictly_above(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        matrix = EmbeddingMatrix(ids=["a", "b"], rows=rows)
        got = nn_search.above_threshold(matrix, rows[0], theta=1.0)
        assert got == []
        got = nn_search.above_threshold(matrix, rows[0], theta=0.0)
        assert [n.query_row_id for n in got] == ["a"]

    def test_subset_of_top_k(self):
        rng = np.random.default_rng(301)
        matrix = unit_matrix(rng, 150, 8)
        probe = unit_matrix(rng, 1, 8).rows[0]
        above = nn_search.above_threshold(matrix, probe, theta=0.1)
        top = nn_search.top_k(matrix, probe, k=len(above))
        assert [n.query_row_id for n in above] == [n.query_row_id for n in top]


class TestNormalization:
    def test_zero_norm_row_named(self):
        rows = np.array([[1.0, 1.0], [0.0, 0.0]], dtype=np.float32)
        matrix = EmbeddingMatrix(ids=["ok", "null_row"], rows=rows)
        with pytest.raises(ValidationError, match="null_row"):
            nn_search.normalize_rows(matrix)

    def test_unit_norms_after(self):
        rng = np.random.default_rng(400)
        rows = (rng.standard_normal((30, 6)) * 10).astype(np.float32)
        matrix = nn_search.normalize_rows(
            EmbeddingMatrix(ids=[f"r{i}" for i in range(30)], rows=rows))
        norms = np.linalg.norm(matrix.rows.astype(np.float64), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-5)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 25))
    def test_smaller_k_is_a_prefix(self, seed, k):
        rng = np.random.default_rng(seed)
        matrix = unit_matrix(rng, 30, 5)
        probe = unit_matrix(rng, 1, 5).rows[0]
        big = nn_search.top_k(matrix, probe, k=30)
        small = nn_search.top_k(matrix, probe, k=k)
        assert [n.query_row_id for n in small] == [n.query_row_id for n in big][:k]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_row_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        matrix = unit_matrix(rng, 40, 5)
        probe = unit_matrix(rng, 1, 5).rows[0]
        perm = rng.permutation(40)
        permuted = EmbeddingMatrix(ids=[matrix.ids[i] for i in perm],
                                   rows=matrix.rows[perm])
        assert (_ids_and_scores(nn_search.top_k(matrix, probe, k=10))
                == _ids_and_scores(nn_search.top_k(permuted, probe, k=10)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-0.5, 1.0))
    def test_threshold_monotone(self, seed, theta):
        rng = np.random.default_rng(seed)
        matrix = unit_matrix(rng, 25, 4)
        probe = unit_matrix(rng, 1, 4).rows[0]
        lower = nn_search.above_threshold(matrix, probe, theta=theta - 0.1)
        higher = nn_search.above_threshold(matrix, probe, theta=theta)
        assert {n.query_row_id for n in higher} <= {n.query_row_id for n in lower}
        assert all(n.similarity > theta for n in higher)
