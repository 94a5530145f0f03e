import math

import numpy as np
import pytest

from hypothesis import given, settings

from conftest import bipartite_graphs, make_graph
from misc.exceptions import ParameterError
from misc.similarity import WeightMatrix, build_weight_matrix, candidate_item_pairs, rate, ratio, weight


def brute_force_adamic_adar(graph, i: int, j: int, include_exposures: bool = False) -> float:
    edges = graph.click_edges | graph.exposure_edges if include_exposures else graph.click_edges
    neighbours = {item: {u for u, v in edges if v == item} for item in (i, j)}
    degree = {u: sum(1 for w, _ in edges if w == u) for u in range(graph.n_users)}
    return sum(1.0 / math.log(degree[u]) for u in sorted(neighbours[i] & neighbours[j]))


def test_rate_mixed_degrees():
    graph = make_graph(2, 3, [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)])
    assert rate(graph, 0, 1) == pytest.approx(1 / math.log(3) + 1 / math.log(2), abs=1e-12)


def test_rate_without_common_neighbours():
    graph = make_graph(2, 2, [(0, 0), (1, 1)])
    assert rate(graph, 0, 1) == 0.0


def test_rate_ten_degree_two_neighbours():
    graph = make_graph(10, 2, [(u, i) for u in range(10) for i in range(2)])
    assert rate(graph, 0, 1) == pytest.approx(10 / math.log(2), abs=1e-12)


def test_rate_same_item():
    graph = make_graph(1, 2, [(0, 0), (0, 1)])
    with pytest.raises(ParameterError):
        rate(graph, 1, 1)
    with pytest.raises(ParameterError):
        rate(graph, 1, 1, include_exposures=True)


@given(bipartite_graphs(max_users=15, max_items=20, exposures=True))
@settings(max_examples=50, deadline=None)
def test_rate_matches_brute_force(graph):
    for i in range(graph.n_items):
        for j in range(i + 1, graph.n_items):
            assert abs(rate(graph, i, j) - brute_force_adamic_adar(graph, i, j)) <= 1e-12
            assert abs(
                rate(graph, i, j, include_exposures=True) - brute_force_adamic_adar(graph, i, j, True)
            ) <= 1e-12


@given(bipartite_graphs(max_users=15, max_items=20, exposures=True))
@settings(max_examples=50, deadline=None)
def test_weight_matrix_matches_pairwise_recomputation(graph):
    matrix = build_weight_matrix(graph, include_exposures=True)
    for (i, j), entry in matrix.entries.items():
        assert i < j
        assert abs(entry.rate - rate(graph, i, j, include_exposures=True)) <= 1e-12
        assert abs(entry.ratio - ratio(graph, i, j)) <= 1e-12
        assert entry.weight == pytest.approx(weight(entry.rate, entry.ratio), abs=1e-9)
        assert 0.0 <= entry.normalized_sq <= 1.0


def test_ratio_equals_rate_without_exposures():
    graph = make_graph(3, 3, [(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 2)])
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        assert ratio(graph, i, j) == rate(graph, i, j)


def test_ratio_ignores_exposure_only_paths():
    # u0 clicked i0 and saw i1, u1 clicked i1 and saw i0
    graph = make_graph(2, 2, [(0, 0), (1, 1)], {(0, 1): 1, (1, 0): 3})
    assert ratio(graph, 0, 1) == 0.0
    assert rate(graph, 0, 1, include_exposures=True) == pytest.approx(2 / math.log(2))


def test_ratio_brute_force_on_mixed_graph(toy_graph):
    clicks_only = make_graph(3, 6, toy_graph.click_edges)
    for i in range(6):
        for j in range(i + 1, 6):
            assert ratio(toy_graph, i, j) == pytest.approx(brute_force_adamic_adar(clicks_only, i, j), abs=1e-12)


def test_weight_formula():
    assert weight(math.e, math.e) == pytest.approx(2 * math.e)
    assert weight(0.0, 3.0) == 0.0
    assert weight(3.0, 0.0) == 0.0
    assert weight(2.0, 0.5) == pytest.approx(-1.5 * math.log(2))
    with pytest.raises(ParameterError):
        weight(-1.0, 1.0)


def test_weight_matrix_of_empty_graph():
    matrix = build_weight_matrix(make_graph(2, 3, []))
    assert len(matrix) == 0
    assert matrix.max_abs_weight == 0.0
    assert matrix.max_normalized_sq([0, 1]).tolist() == [0.0, 0.0, 0.0]


def test_single_pair_normalizes_to_one():
    graph = make_graph(2, 3, [(0, 0), (0, 1), (1, 0), (1, 1)])
    matrix = build_weight_matrix(graph)
    assert list(matrix.entries) == [(0, 1)]
    assert matrix.entry(1, 0).normalized_sq == pytest.approx(1.0)


def test_three_pair_toy_graph():
    graph = make_graph(3, 3, [(0, 0), (0, 1), (1, 1), (1, 2), (2, 0), (2, 2), (2, 1)])
    matrix = build_weight_matrix(graph)
    assert sorted(matrix.entries) == [(0, 1), (0, 2), (1, 2)]
    max_abs = max(abs(weight(rate(graph, i, j), ratio(graph, i, j))) for i, j in matrix.entries)
    for (i, j), entry in matrix.entries.items():
        w = weight(rate(graph, i, j), ratio(graph, i, j))
        assert entry.weight == pytest.approx(w, abs=1e-12)
        assert entry.normalized_sq == pytest.approx((w / max_abs) ** 2, abs=1e-12)


def test_candidate_pairs_include_exposure_co_occurrence(toy_graph):
    pairs = list(candidate_item_pairs(toy_graph))
    assert pairs == sorted(pairs)
    assert (0, 3) in pairs  # u0 clicked i0 and saw i3
    assert (0, 5) not in pairs


def test_normalized_lookups(toy_graph):
    matrix = build_weight_matrix(toy_graph)
    dense = matrix.normalized_sq_matrix.toarray()
    assert np.allclose(dense, dense.T)
    assert np.allclose(matrix.max_normalized_sq([0, 1]), dense[[0, 1]].max(axis=0))
    assert np.allclose(matrix.sum_normalized_sq([0, 1]), dense[[0, 1]].sum(axis=0))


def test_weight_matrix_save_load(tmp_path, toy_graph):
    matrix = build_weight_matrix(toy_graph, include_exposures=True)
    matrix.save(tmp_path / "weights.npz")
    loaded = WeightMatrix.load(tmp_path / "weights.npz")
    assert loaded.entries == matrix.entries
    assert loaded.max_abs_weight == matrix.max_abs_weight


def test_weight_export(tmp_path, toy_graph):
    matrix = build_weight_matrix(toy_graph)
    matrix.export(toy_graph, tmp_path / "w.tsv", tmp_path / "n.tsv")
    lines = (tmp_path / "w.tsv").read_text().splitlines()
    assert len(lines) == len(matrix)
    assert all(len(line.split("\t")) == 3 for line in lines)
