import logging

import numpy as np
import pytest

from odcast.errors import GraphFileError, InvalidEdgeError
from odcast.topology import (
    MetroGraph,
    all_pairs_hops,
    build_graph,
    load_graph,
    save_graph,
    shortest_path_hops,
)


def test_three_station_line_weights():
    g = build_graph([(0, 1), (1, 2)], 3)
    expected = np.array([[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]])
    np.testing.assert_allclose(g.weights, expected, atol=1e-15)


def test_no_edges_gives_zero_weights():
    g = build_graph([], 2)
    assert np.array_equal(g.weights, np.zeros((2, 2)))
    assert np.array_equal(g.connectivity, np.zeros((2, 2), dtype=np.int64))


def test_star_weights():
    g = build_graph([(0, 1), (0, 2), (0, 3), (0, 4)], 5)
    np.testing.assert_allclose(g.weights[0], [0, 0.25, 0.25, 0.25, 0.25], atol=1e-15)
    for k in range(1, 5):
        row = np.zeros(5)
        row[0] = 1.0
        np.testing.assert_allclose(g.weights[k], row, atol=1e-15)


def test_duplicate_edges_idempotent():
    g1 = build_graph([(0, 1), (1, 0), (0, 1)], 3)
    g2 = build_graph([(0, 1)], 3)
    assert g1 == g2


def test_out_of_range_edge_rejected():
    with pytest.raises(InvalidEdgeError):
        build_graph([(0, 3)], 3)
    with pytest.raises(InvalidEdgeError):
        build_graph([(-1, 0)], 3)


def test_self_loop_rejected():
    with pytest.raises(InvalidEdgeError):
        build_graph([(1, 1)], 3)


def test_row_stochastic_random_graphs():
    rng = np.random.default_rng(7)
    for n in range(2, 65, 7):
        mask = rng.random((n, n)) < 0.15
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if mask[i, j]]
        g = build_graph(edges, n)
        degree = g.connectivity.sum(axis=1)
        sums = g.weights.sum(axis=1)
        assert np.all(np.abs(sums[degree > 0] - 1.0) <= 1e-12)
        assert np.all(sums[degree == 0] == 0.0)
        # positive weight exactly where connected
        assert np.array_equal(g.weights > 0, g.connectivity.astype(bool))


def test_permutation_commutes():
    rng = np.random.default_rng(3)
    n = 12
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.3]
    g = build_graph(edges, n)
    perm = rng.permutation(n)
    permuted_edges = [(int(perm[i]), int(perm[j])) for i, j in edges]
    g_perm = build_graph(permuted_edges, n)
    p = np.eye(n)[perm].T  # (p @ x)[perm[i]] = x[i]
    np.testing.assert_allclose(
        g_perm.weights[np.ix_(perm, perm)], g.weights, atol=1e-15
    )
    np.testing.assert_allclose(g_perm.weights, p @ g.weights @ p.T, atol=1e-15)


def test_round_trip(tmp_path):
    g = build_graph([(0, 1), (1, 2)], 3, station_names=["a", "b", "c"])
    save_graph(g, tmp_path / "g.txt", tmp_path / "names.txt")
    loaded = load_graph(tmp_path / "g.txt", tmp_path / "names.txt")
    assert loaded == g
    assert np.allclose(loaded.weights, g.weights, atol=1e-12)


def test_asymmetric_file_symmetrizes_and_warns(tmp_path, caplog):
    path = tmp_path / "g.txt"
    path.write_text("3\n1 0\n1 2\n")
    with caplog.at_level(logging.WARNING):
        g = load_graph(path)
    assert "asymmetric" in caplog.text
    assert g == build_graph([(0, 1), (1, 2)], 3)


def test_out_of_range_index_in_file(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("3\n0 3\n")
    with pytest.raises(GraphFileError, match="line 2"):
        load_graph(path)


def test_malformed_line_names_line(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("3\n0 1\nnope\n")
    with pytest.raises(GraphFileError, match="line 3"):
        load_graph(path)


def test_graph_is_immutable():
    g = build_graph([(0, 1)], 2)
    with pytest.raises(ValueError):
        g.weights[0, 0] = 5.0


def test_shortest_path_hops():
    g = build_graph([(0, 1), (1, 2), (3, 4)], 5)
    hops = shortest_path_hops(g, 0)
    assert hops.tolist() == [0, 1, 2, -1, -1]
    assert all_pairs_hops(g)[4].tolist() == [-1, -1, -1, 1, 0]
