from __future__ import annotations

import logging as log

from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from misc.exceptions import EmptyGraphError, GraphError, ParameterError, ParseError

# label column -> is click
LABELS = {"1": True, "click": True, "0": False, "exposure": False}
ID_MAPS = ("user_ids.tsv", "item_ids.tsv")

# user -> items exposed to the user but not clicked
ExposedNotClickedSet = dict[int, frozenset[int]]


class InteractionGraph:
    """
    Bipartite user/item graph with click edges (the positive set) and
    exposure-only edges (shown but not clicked).

    Users and items carry dense indices; the raw ids survive in ``user_ids`` and
    ``item_ids``. Traversal code works on unified node ids: users occupy
    ``0..n_users-1`` and item ``i`` is node ``n_users + i``. The graph is
    immutable after construction.
    """

    def __init__(
            self,
            user_ids: list[str],
            item_ids: list[str],
            click_edges: Iterable[tuple[int, int]],
            exposure_counts: dict[tuple[int, int], int] | None = None
    ) -> None:
        """
        Builds and validates the graph.

        Args:
            user_ids (list[str]): Raw user id per dense user index.
            item_ids (list[str]): Raw item id per dense item index.
            click_edges (Iterable[tuple[int, int]]): Clicked (user, item) pairs.
            exposure_counts (dict[tuple[int, int], int] | None): Exposed-not-clicked
                (user, item) pairs with the number of exposure records behind each.

        Raises:
            GraphError: An endpoint is out of range, a pair is both clicked and
                exposed, or an exposure count is not positive.
        """

        self.user_ids: list[str] = list(user_ids)
        self.item_ids: list[str] = list(item_ids)
        self.n_users: int = len(self.user_ids)
        self.n_items: int = len(self.item_ids)

        self.click_edges: frozenset[tuple[int, int]] = frozenset(click_edges)
        self.exposure_counts: dict[tuple[int, int], int] = dict(exposure_counts or {})
        self.exposure_edges: frozenset[tuple[int, int]] = frozenset(self.exposure_counts)

        self._validate()

        self.user_items = self._index(self.click_edges, self.n_users, 0)
        self.item_users = self._index(self.click_edges, self.n_items, 1)
        self.user_exposed = self._index(self.exposure_edges, self.n_users, 0)
        self.item_exposed = self._index(self.exposure_edges, self.n_items, 1)

        self.user_degree = np.array([len(x) for x in self.user_items], dtype=np.int64)
        self.item_degree = np.array([len(x) for x in self.item_users], dtype=np.int64)

    def _validate(self) -> None:
        overlap = self.click_edges & self.exposure_edges
        if overlap:
            raise GraphError(f"{len(overlap)} pairs are both clicked and exposed, e.g. {min(overlap)}")

        for u, i in self.click_edges | self.exposure_edges:
            if not (0 <= u < self.n_users and 0 <= i < self.n_items):
                raise GraphError(f"edge ({u}, {i}) has an endpoint outside the node set")

        for pair, count in self.exposure_counts.items():
            if count < 1:
                raise GraphError(f"exposure {pair} has count {count}")

    @staticmethod
    def _index(edges: Iterable[tuple[int, int]], size: int, side: int) -> list[np.ndarray]:
        buckets: list[list[int]] = [[] for _ in range(size)]
        for edge in edges:
            buckets[edge[side]].append(edge[1 - side])
        return [np.array(sorted(b), dtype=np.int64) for b in buckets]

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def item_node(self, item: int) -> int:
        return self.n_users + item

    def node_item(self, node: int) -> int:
        return node - self.n_users

    def is_user(self, node: int) -> bool:
        return node < self.n_users

    def neighbors(self, node: int) -> np.ndarray:
        """
        Click neighbours of a unified node id, as unified node ids in ascending order.
        """

        if self.is_user(node):
            return self.user_items[node] + self.n_users
        return self.item_users[self.node_item(node)]

    def degree(self, node: int) -> int:
        """
        Number of click edges incident to a unified node id.
        """

        if self.is_user(node):
            return int(self.user_degree[node])
        return int(self.item_degree[self.node_item(node)])

    def exposure_count(self, user: int, item: int) -> int:
        return self.exposure_counts.get((user, item), 0)

    @cached_property
    def click_matrix(self) -> sp.csr_matrix:
        """
        Users x items 0/1 click matrix.
        """

        return self._matrix(self.click_edges)

    @cached_property
    def interaction_matrix(self) -> sp.csr_matrix:
        """
        Users x items 0/1 matrix of clicks and exposures together.
        """

        return self._matrix(self.click_edges | self.exposure_edges)

    @cached_property
    def exposure_matrix(self) -> sp.csr_matrix:
        """
        Users x items matrix of exposure multiplicities.
        """

        ordered = sorted(self.exposure_counts)
        counts = [float(self.exposure_counts[pair]) for pair in ordered]
        return self._matrix(frozenset(ordered), counts)

    def _matrix(self, edges: frozenset[tuple[int, int]], data: list[float] | None = None) -> sp.csr_matrix:
        pairs = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
        values = np.ones(len(pairs), dtype=np.float64) if data is None else np.array(data, dtype=np.float64)
        return sp.csr_matrix((values, (pairs[:, 0], pairs[:, 1])), shape=(self.n_users, self.n_items))

    def labeled_edges(self) -> set[tuple[str, str, str, int]]:
        """
        All edges by raw id with their label and multiplicity, for comparing graphs
        that were numbered differently.

        Returns:
            set[tuple[str, str, str, int]]: (user id, item id, "click" | "exposure", count).
        """

        edges = {(self.user_ids[u], self.item_ids[i], "click", 1) for u, i in self.click_edges}
        edges |= {
            (self.user_ids[u], self.item_ids[i], "exposure", c) for (u, i), c in self.exposure_counts.items()
        }
        return edges

    def __repr__(self) -> str:
        return (
            f"InteractionGraph(users={self.n_users}, items={self.n_items}, "
            f"clicks={len(self.click_edges)}, exposures={len(self.exposure_edges)})"
        )


class DatasetSplit:

    def __init__(
            self,
            train: Iterable[tuple[int, int]],
            valid: Iterable[tuple[int, int]],
            test: Iterable[tuple[int, int]],
            seed: int,
            ratios: tuple[float, float, float]
    ) -> None:
        """
        Initializes a DatasetSplit of click edges into train/validation/test parts.

        Args:
            train (Iterable[tuple[int, int]]): Training click edges.
            valid (Iterable[tuple[int, int]]): Validation click edges.
            test (Iterable[tuple[int, int]]): Test click edges.
            seed (int): Seed the split was drawn with.
            ratios (tuple[float, float, float]): Requested train/valid/test fractions.
        """

        self.train: frozenset[tuple[int, int]] = frozenset(train)
        self.valid: frozenset[tuple[int, int]] = frozenset(valid)
        self.test: frozenset[tuple[int, int]] = frozenset(test)
        self.seed = seed
        self.ratios = tuple(ratios)

    @staticmethod
    def by_user(edges: Iterable[tuple[int, int]]) -> dict[int, set[int]]:
        grouped: dict[int, set[int]] = {}
        for u, i in edges:
            grouped.setdefault(u, set()).add(i)
        return grouped

    @cached_property
    def train_by_user(self) -> dict[int, set[int]]:
        return self.by_user(self.train)

    @cached_property
    def valid_by_user(self) -> dict[int, set[int]]:
        return self.by_user(self.valid)

    @cached_property
    def test_by_user(self) -> dict[int, set[int]]:
        return self.by_user(self.test)

    def held_out(self, user: int) -> set[int]:
        """
        Validation and test positives of a user, which training never samples as negatives.
        """

        return self.valid_by_user.get(user, set()) | self.test_by_user.get(user, set())

    def train_graph(self, graph: InteractionGraph) -> InteractionGraph:
        """
        Training view of a graph: training clicks plus every exposure edge.
        """

        return InteractionGraph(graph.user_ids, graph.item_ids, self.train, graph.exposure_counts)


def load_interactions(
        path: str | Path,
        delimiter: str = "\t",
        id_map_dir: str | Path | None = None
) -> InteractionGraph:
    """
    Loads an edge-list file of (user_id, item_id, label[, timestamp]) records.

    Duplicate records collapse to one edge; a click on a pair removes any exposure of
    that pair. Exposure duplicates are counted. Ids are numbered densely in order of
    first appearance.

    Args:
        path (str | Path): Edge-list file, UTF-8.
        delimiter (str): Field separator. Defaults to tab.
        id_map_dir (str | Path | None): If given, the id maps are written there.

    Returns:
        InteractionGraph: The loaded graph.

    Raises:
        ParseError: A record has fewer than three fields or an unknown label.
        EmptyGraphError: The file holds no records.
    """

    users: dict[str, int] = {}
    items: dict[str, int] = {}
    clicks: set[tuple[int, int]] = set()
    exposures: dict[tuple[int, int], int] = {}

    with open(path, "r", encoding="utf-8") as file:
        for number, line in enumerate(file, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue

            fields = [f.strip() for f in line.split(delimiter)]
            if len(fields) < 3:
                raise ParseError(number, f"expected at least 3 fields, got {len(fields)}")

            user, item, label = fields[0], fields[1], fields[2].lower()
            if not user or not item:
                raise ParseError(number, "empty user or item id")
            if label not in LABELS:
                raise ParseError(number, f"unknown label {fields[2]!r}")

            pair = (users.setdefault(user, len(users)), items.setdefault(item, len(items)))
            if LABELS[label]:
                clicks.add(pair)
            else:
                exposures[pair] = exposures.get(pair, 0) + 1

    if not users:
        raise EmptyGraphError(f"no interaction records in {path}")

    dropped = [pair for pair in exposures if pair in clicks]
    for pair in dropped:
        del exposures[pair]
    if dropped:
        log.info(f"{len(dropped)} exposure pairs were also clicked, kept as clicks")

    graph = InteractionGraph(list(users), list(items), clicks, exposures)
    log.info(f"Loaded {graph} from {path}")

    if id_map_dir is not None:
        save_id_map(graph, id_map_dir)

    return graph


def export_interactions(graph: InteractionGraph, path: str | Path, delimiter: str = "\t") -> None:
    """
    Writes the graph as an edge list load_interactions reads back to the same graph.
    Each exposure is repeated as many times as it was recorded.
    """

    with open(path, "w", encoding="utf-8", newline="\n") as file:
        for u, i in sorted(graph.click_edges):
            file.write(delimiter.join((graph.user_ids[u], graph.item_ids[i], "1")) + "\n")
        for (u, i), count in sorted(graph.exposure_counts.items()):
            for _ in range(count):
                file.write(delimiter.join((graph.user_ids[u], graph.item_ids[i], "0")) + "\n")


def save_id_map(graph: InteractionGraph, directory: str | Path) -> None:
    """
    Persists raw id -> dense index maps as two-column text files.
    """

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    for name, ids in zip(ID_MAPS, (graph.user_ids, graph.item_ids)):
        with open(directory / name, "w", encoding="utf-8", newline="\n") as file:
            file.writelines(f"{raw}\t{index}\n" for index, raw in enumerate(ids))


def split_dataset(
        graph: InteractionGraph,
        ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
        seed: int = 0
) -> DatasetSplit:
    """
    Randomly partitions each user's clicks into train/validation/test.

    Per user with c clicks the test share is round(c * ratio) and likewise for
    validation; when that would leave no training edge the test share shrinks first,
    then the validation share. A user with one click keeps it in train.

    Args:
        graph (InteractionGraph): Source graph.
        ratios (tuple[float, float, float]): Train/valid/test fractions, positive, summing to 1.
        seed (int): Seed of the numpy Generator; equal seeds give equal splits.

    Returns:
        DatasetSplit: The split.

    Raises:
        ParameterError: Ratios are not three positive numbers summing to 1.
    """

    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"split ratios must be three positive fractions summing to 1, got {ratios}")

    rng = np.random.default_rng(seed)
    train, valid, test = [], [], []

    for user in range(graph.n_users):
        clicked = graph.user_items[user]
        count = len(clicked)
        if count == 0:
            continue

        order = rng.permutation(clicked)
        n_test = int(np.floor(count * ratios[2] + 0.5))
        n_valid = int(np.floor(count * ratios[1] + 0.5))

        overflow = n_test + n_valid - (count - 1)
        if overflow > 0:
            cut = min(overflow, n_test)
            n_test -= cut
            n_valid -= overflow - cut

        test += [(user, int(i)) for i in order[:n_test]]
        valid += [(user, int(i)) for i in order[n_test:n_test + n_valid]]
        train += [(user, int(i)) for i in order[n_test + n_valid:]]

    log.info(f"Split seed={seed}: train={len(train)} valid={len(valid)} test={len(test)}")
    return DatasetSplit(train, valid, test, seed, ratios)


def click_subgraph(graph: InteractionGraph) -> InteractionGraph:
    """
    The graph restricted to click edges. Nodes left without edges are kept so the id
    maps stay unchanged.
    """

    if not graph.exposure_edges:
        return graph

    return InteractionGraph(graph.user_ids, graph.item_ids, graph.click_edges)


def exposed_not_clicked(graph: InteractionGraph) -> ExposedNotClickedSet:
    """
    Per user, the items shown without a click (users without exposures are omitted).
    """

    return {
        user: frozenset(items.tolist()) for user, items in enumerate(graph.user_exposed) if items.size
    }


def common_neighbors(graph: InteractionGraph, i: int, j: int) -> set[int]:
    """
    Users who clicked both items.

    Args:
        graph (InteractionGraph): The graph.
        i (int): First item.
        j (int): Second item, different from i.

    Returns:
        set[int]: Users adjacent to both items through click edges.

    Raises:
        ParameterError: i equals j or either item does not exist.
    """

    if i == j:
        raise ParameterError(f"common neighbours of item {i} with itself are undefined")
    for item in (i, j):
        if not 0 <= item < graph.n_items:
            raise ParameterError(f"unknown item {item}")

    return set(np.intersect1d(graph.item_users[i], graph.item_users[j], assume_unique=True).tolist())
