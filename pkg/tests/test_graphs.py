"""Graph canonicalization, the normalized propagation matrix against a
dense oracle, and the sparse-dense product's gradient."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import shift_gcl.tape as T
from shift_gcl.graphs import (build_graph, mean_neighbor_matrix,
                              normalized_adjacency, spmm)
from shift_gcl.tape import ShapeError, Tape, finite_diff_check


def _dense_norm_adj(n, edges):
    """Independent dense computation of D̃^(-1/2) (A + I) D̃^(-1/2)."""
    a = np.zeros((n, n))
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    a += np.eye(n)
    d = a.sum(axis=1)
    dinv = np.diag(1.0 / np.sqrt(d))
    return dinv @ a @ dinv


def test_build_graph_canonicalizes():
    g = build_graph(3, [(2, 1), (1, 2), (0, 0), (2, 0)], np.zeros((3, 2)))
    assert np.array_equal(g.edges, [[0, 2], [1, 2]])
    assert g.num_edges == 2
    assert g.feature_dim == 2


def test_build_graph_no_edges():
    g = build_graph(2, [], np.ones((2, 1)))
    assert g.edges.shape == (0, 2)


def test_build_graph_validation():
    with pytest.raises(ValueError):
        build_graph(0, [], np.zeros((0, 1)))
    with pytest.raises(ValueError):
        build_graph(2, [(0, 2)], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        build_graph(2, [(-1, 0)], np.zeros((2, 1)))
    with pytest.raises(ShapeError):
        build_graph(3, [], np.zeros((2, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_build_graph_idempotent(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    edges = rng.integers(0, n, size=(rng.integers(0, 30), 2))
    g = build_graph(n, edges, np.zeros((n, 1)))
    g2 = build_graph(n, g.edges, g.features)
    assert np.array_equal(g.edges, g2.edges)
    if g.num_edges:
        assert (g.edges[:, 0] < g.edges[:, 1]).all()


def test_normalized_adjacency_matches_dense_oracle():
    rng = np.random.default_rng(3)
    n = 9
    raw = rng.integers(0, n, size=(20, 2))
    g = build_graph(n, raw, rng.normal(size=(n, 3)))
    adj = normalized_adjacency(g)
    dense = _dense_norm_adj(n, g.edges)
    np.testing.assert_allclose(adj.matrix.toarray(), dense, atol=1e-12)


def test_normalized_adjacency_path_graph_values():
    """P3 with self-loops: degrees [2, 3, 2]."""
    g = build_graph(3, [(0, 1), (1, 2)], np.zeros((3, 1)))
    m = normalized_adjacency(g).matrix.toarray()
    assert m[0, 0] == pytest.approx(1 / 2)
    assert m[1, 1] == pytest.approx(1 / 3)
    assert m[0, 1] == pytest.approx(1 / np.sqrt(6))
    assert m[0, 2] == 0.0
    np.testing.assert_allclose(m, m.T, atol=1e-15)


def test_normalized_adjacency_isolated_node():
    g = build_graph(2, [], np.zeros((2, 1)))
    m = normalized_adjacency(g).matrix.toarray()
    np.testing.assert_allclose(m, np.eye(2), atol=1e-15)


def test_csr_accessors_consistent():
    g = build_graph(4, [(0, 1), (2, 3)], np.zeros((4, 1)))
    adj = normalized_adjacency(g)
    assert adj.row_offsets.shape == (5,)
    assert adj.col_indices.size == adj.values.size == g.num_edges * 2 + 4


def test_mean_neighbor_matrix_rows():
    g = build_graph(4, [(0, 1), (0, 2)], np.zeros((4, 1)))
    m = mean_neighbor_matrix(g).toarray()
    np.testing.assert_allclose(m[0], [0.0, 0.5, 0.5, 0.0])
    np.testing.assert_allclose(m[1], [1.0, 0.0, 0.0, 0.0])
    assert np.array_equal(m[3], np.zeros(4))  # isolated


def test_spmm_matches_dense_product():
    rng = np.random.default_rng(5)
    g = build_graph(6, rng.integers(0, 6, size=(10, 2)), rng.normal(size=(6, 4)))
    adj = normalized_adjacency(g)
    out = spmm(adj, g.features).values
    np.testing.assert_allclose(out, adj.matrix.toarray() @ g.features, atol=1e-12)


def test_spmm_gradient_is_transpose_product():
    rng = np.random.default_rng(6)
    g = build_graph(5, rng.integers(0, 5, size=(8, 2)), np.zeros((5, 1)))
    adj = normalized_adjacency(g)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(5, 3))

    tp = Tape()
    xt = tp.leaf(x)
    loss = T.sum_all(T.elementwise_mul(spmm(adj, xt), T.constant(w)))
    grad = tp.backward(loss)[xt.node_id]
    np.testing.assert_allclose(grad, adj.matrix.toarray().T @ w, atol=1e-12)


def test_spmm_finite_difference():
    rng = np.random.default_rng(8)
    g = build_graph(5, rng.integers(0, 5, size=(7, 2)), np.zeros((5, 1)))
    adj = normalized_adjacency(g)
    w = rng.normal(size=(5, 2))

    def f(t):
        return T.sum_all(T.elementwise_mul(spmm(adj, t), T.constant(w)))

    assert finite_diff_check(f, rng.normal(size=(5, 2))) < 1e-6


def test_spmm_shape_mismatch():
    g = build_graph(3, [(0, 1)], np.zeros((3, 1)))
    with pytest.raises(ShapeError):
        spmm(normalized_adjacency(g), np.ones((4, 2)))
