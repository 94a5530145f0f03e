from __future__ import annotations

import logging as log

from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np
import scipy.sparse as sp

from decorators import timer

from misc.exceptions import ParameterError
from misc.graph import InteractionGraph, click_subgraph, common_neighbors


class WeightEntry(NamedTuple):
    rate: float
    ratio: float
    weight: float
    normalized_sq: float


def _interaction_neighbors(graph: InteractionGraph, item: int) -> np.ndarray:
    return np.union1d(graph.item_users[item], graph.item_exposed[item])


def rate(graph: InteractionGraph, i: int, j: int, include_exposures: bool = False) -> float:
    """
    Adamic-Adar score of two items: sum over their common neighbours u of 1/ln(deg(u)).

    Args:
        graph (InteractionGraph): The graph.
        i (int): First item.
        j (int): Second item, different from i.
        include_exposures (bool): Use click + exposure neighbourhoods and degrees
            instead of clicks only.

    Returns:
        float: The score, 0 without common neighbours.
    """

    if not include_exposures:
        common = sorted(common_neighbors(graph, i, j))
        return float(sum(1.0 / np.log(graph.user_degree[u]) for u in common))

    if i == j:
        raise ParameterError(f"rate of item {i} with itself is undefined")

    common = np.intersect1d(_interaction_neighbors(graph, i), _interaction_neighbors(graph, j))
    degree = graph.user_degree + np.array([len(e) for e in graph.user_exposed], dtype=np.int64)
    return float(sum(1.0 / np.log(degree[u]) for u in common.tolist()))


def ratio(graph: InteractionGraph, i: int, j: int) -> float:
    """
    rate computed on the click-only image of the graph.
    """

    return rate(click_subgraph(graph), i, j)


def weight(rate_value: float, ratio_value: float) -> float:
    """
    Combines rate and ratio into rate*ln(ratio) + ratio*ln(rate).

    Either input being 0 gives 0: a pair without common structure carries no mass.

    Args:
        rate_value (float): rate of the pair, non-negative.
        ratio_value (float): ratio of the pair, non-negative.

    Returns:
        float: The weight; negative when an input lies in (0, 1).
    """

    if rate_value < 0 or ratio_value < 0:
        raise ParameterError(f"rate and ratio must be non-negative, got {rate_value}, {ratio_value}")
    if rate_value == 0 or ratio_value == 0:
        return 0.0

    return float(rate_value * np.log(ratio_value) + ratio_value * np.log(rate_value))


def adamic_adar_matrix(adjacency: sp.csr_matrix) -> sp.csr_matrix:
    """
    Item x item Adamic-Adar scores of a users x items 0/1 matrix, zero diagonal.
    """

    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    inverse_log = np.zeros_like(degree, dtype=np.float64)
    # degree < 2 users cannot join two distinct items
    mask = degree >= 2
    inverse_log[mask] = 1.0 / np.log(degree[mask])

    scores = (adjacency.T @ sp.diags(inverse_log) @ adjacency).tocsr()
    scores.setdiag(0)
    scores.eliminate_zeros()

    return scores


def candidate_item_pairs(graph: InteractionGraph) -> Iterator[tuple[int, int]]:
    """
    Item pairs (i < j) sharing at least one user through clicks or exposures,
    from the per-user co-occurrence cliques.
    """

    structure = (graph.interaction_matrix.T @ graph.interaction_matrix).tocoo()
    upper = structure.row < structure.col
    pairs = sorted(zip(structure.row[upper].tolist(), structure.col[upper].tolist()))
    yield from pairs


class WeightMatrix:
    """
    Sparse symmetric item-item weights. Entries are stored once per unordered pair.
    """

    def __init__(self, n_items: int, entries: dict[tuple[int, int], WeightEntry], max_abs_weight: float) -> None:
        self.n_items = n_items
        self.entries = entries
        self.max_abs_weight = max_abs_weight

    def __len__(self) -> int:
        return len(self.entries)

    def entry(self, i: int, j: int) -> WeightEntry | None:
        return self.entries.get((min(i, j), max(i, j)))

    @cached_property
    def normalized_sq_matrix(self) -> sp.csr_matrix:
        """
        Symmetric item x item matrix of normalized squared weights.
        """

        if not self.entries:
            return sp.csr_matrix((self.n_items, self.n_items))

        keys = np.array(list(self.entries), dtype=np.int64)
        values = np.array([e.normalized_sq for e in self.entries.values()])
        rows = np.concatenate([keys[:, 0], keys[:, 1]])
        cols = np.concatenate([keys[:, 1], keys[:, 0]])

        return sp.csr_matrix((np.concatenate([values, values]), (rows, cols)), shape=(self.n_items, self.n_items))

    def max_normalized_sq(self, anchors: Iterable[int]) -> np.ndarray:
        """
        Per item, the largest normalized squared weight against any anchor item.
        """

        anchors = np.fromiter(anchors, dtype=np.int64)
        if anchors.size == 0:
            return np.zeros(self.n_items)
        return self.normalized_sq_matrix[anchors].max(axis=0).toarray().ravel()

    def sum_normalized_sq(self, anchors: Iterable[int]) -> np.ndarray:
        """
        Per item, the summed normalized squared weight against the anchor items.
        """

        anchors = np.fromiter(anchors, dtype=np.int64)
        if anchors.size == 0:
            return np.zeros(self.n_items)
        return np.asarray(self.normalized_sq_matrix[anchors].sum(axis=0)).ravel()

    def export(self, graph: InteractionGraph, weight_path: str | Path, normalized_path: str | Path) -> None:
        """
        Writes ``i, j, weight`` and ``i, j, normalized_sq`` triples with raw item ids.
        """

        ordered = sorted(self.entries.items())
        with open(weight_path, "w", encoding="utf-8", newline="\n") as file:
            file.writelines(f"{graph.item_ids[i]}\t{graph.item_ids[j]}\t{e.weight!r}\n" for (i, j), e in ordered)
        with open(normalized_path, "w", encoding="utf-8", newline="\n") as file:
            file.writelines(
                f"{graph.item_ids[i]}\t{graph.item_ids[j]}\t{e.normalized_sq!r}\n" for (i, j), e in ordered
            )

    def save(self, path: str | Path) -> None:
        keys = np.array(list(self.entries), dtype=np.int64).reshape(-1, 2)
        values = np.array(list(self.entries.values()), dtype=np.float64).reshape(-1, 4)
        np.savez_compressed(path, keys=keys, values=values, meta=np.array([self.n_items, self.max_abs_weight]))

    @classmethod
    def load(cls, path: str | Path) -> WeightMatrix:
        with np.load(path) as data:
            entries = {
                (int(i), int(j)): WeightEntry(*(float(x) for x in v))
                for (i, j), v in zip(data["keys"], data["values"])
            }
            n_items, max_abs = data["meta"]
        return cls(int(n_items), entries, float(max_abs))


@timer
def build_weight_matrix(
        graph: InteractionGraph,
        candidate_pairs: Iterable[tuple[int, int]] | None = None,
        include_exposures: bool = False
) -> WeightMatrix:
    """
    Computes rate, ratio, weight and normalized squared weight for item pairs.

    Args:
        graph (InteractionGraph): Training graph (clicks and exposures).
        candidate_pairs (Iterable[tuple[int, int]] | None): Pairs to score. Defaults
            to every pair sharing a user; all other pairs are implicitly zero.
        include_exposures (bool): Passed through to the rate computation.

    Returns:
        WeightMatrix: The weights.
    """

    rate_scores = adamic_adar_matrix(graph.interaction_matrix if include_exposures else graph.click_matrix).todok()
    ratio_scores = adamic_adar_matrix(click_subgraph(graph).click_matrix).todok()

    if candidate_pairs is None:
        candidate_pairs = candidate_item_pairs(graph)

    raw: dict[tuple[int, int], tuple[float, float, float]] = {}
    for i, j in candidate_pairs:
        if i == j:
            continue
        key = (min(i, j), max(i, j))
        r = float(rate_scores.get(key, 0.0))
        q = float(ratio_scores.get(key, 0.0))
        raw[key] = (r, q, weight(r, q))

    max_abs = max((abs(w) for _, _, w in raw.values()), default=0.0)
    entries = {
        key: WeightEntry(r, q, w, (w / max_abs) ** 2 if max_abs > 0 else 0.0)
        for key, (r, q, w) in raw.items()
    }

    log.info(f"Weight matrix: {len(entries)} pairs, max |weight| = {max_abs:.4f}")
    return WeightMatrix(graph.n_items, entries, max_abs)
