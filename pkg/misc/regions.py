from __future__ import annotations

import logging as log

from pathlib import Path
from typing import Iterable

import numpy as np

from tqdm import tqdm

from decorators import timer

from misc.exceptions import ParameterError
from misc.graph import InteractionGraph

DEFAULT_KHOP = 100


class ShellArray:
    """
    Items around one user grouped by bipartite distance: ``shells[d]`` holds the
    items first reached at hop ``2d + 1``, in ascending item order.
    """

    def __init__(self, user: int, shells: list[np.ndarray], khop: int) -> None:
        self.user = user
        self.shells = [np.asarray(s, dtype=np.int64) for s in shells]
        self.khop = khop

    def __len__(self) -> int:
        return len(self.shells)

    def reached(self) -> np.ndarray:
        if not self.shells:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(self.shells)

    def __repr__(self) -> str:
        return f"ShellArray(user={self.user}, sizes={[len(s) for s in self.shells]}, khop={self.khop})"


def bfs_layer(graph: InteractionGraph, queue: list[int], visited: set[int]) -> list[int]:
    """
    Expands one BFS layer over click edges.

    Args:
        graph (InteractionGraph): The graph, traversed by unified node ids.
        queue (list[int]): Current frontier.
        visited (set[int]): Nodes already reached; updated in place with the new frontier.

    Returns:
        list[int]: Unvisited neighbours of the frontier, deduplicated, ascending.
    """

    if not queue:
        return []

    reached = np.unique(np.concatenate([graph.neighbors(node) for node in queue]))
    layer = [node for node in reached.tolist() if node not in visited]
    visited.update(layer)

    return layer


def blfs(graph: InteractionGraph, user: int, khop: int = DEFAULT_KHOP) -> ShellArray:
    """
    Layered BFS from a user, collecting each item frontier as a shell.

    Even hops reach users and only continue the traversal. The walk stops after
    ``khop`` layers or as soon as a frontier is empty.

    Args:
        graph (InteractionGraph): Training click graph.
        user (int): Dense user index.
        khop (int): Maximum number of layers.

    Returns:
        ShellArray: Shells in ascending distance order.
    """

    if khop < 1:
        raise ParameterError(f"khop must be at least 1, got {khop}")
    if not 0 <= user < graph.n_users:
        raise ParameterError(f"unknown user {user}")

    queue = [user]
    visited = {user}
    shells = []

    for hop in range(1, khop + 1):
        queue = bfs_layer(graph, queue, visited)
        if not queue:
            break
        if hop % 2 == 1:
            shells.append(np.array(queue, dtype=np.int64) - graph.n_users)

    return ShellArray(user, shells, khop)


def resolve_region_count(n: int | None, khop: int, shell_count: int) -> int:
    """
    Region count for one user: ``n`` when configured, else min(khop, shells + 1).
    """

    if n is not None:
        return n
    return max(1, min(khop, shell_count + 1))


def assign_regions(shells: ShellArray, n: int, n_items: int) -> np.ndarray:
    """
    Maps every item to a region for one user.

    Regions 1..n-1 take the shells in contiguous ascending groups of near-equal size
    (earlier groups absorb the remainder); region n takes every item no shell
    reached. With n = 1 everything lands in region 1.

    Args:
        shells (ShellArray): The user's shells.
        n (int): Region count, at least 1.
        n_items (int): Size of the item universe.

    Returns:
        np.ndarray: Region index (1..n) per item.
    """

    if n < 1:
        raise ParameterError(f"region count must be at least 1, got {n}")

    row = np.full(n_items, n, dtype=np.int32)
    if n == 1:
        return row

    for region, group in enumerate(np.array_split(np.arange(len(shells)), n - 1), start=1):
        for index in group:
            row[shells.shells[index]] = region

    return row


class RegionPartition:
    """
    Per-user region assignment built from the users' shells.
    """

    def __init__(self, n_items: int, shells: dict[int, ShellArray], n: int | None, khop: int) -> None:
        self.n_items = n_items
        self.shells = shells
        self.n = n
        self.khop = khop
        self.region_count = {
            u: resolve_region_count(n, khop, len(s)) for u, s in shells.items()
        }
        self._rows: dict[int, np.ndarray] = {}

    @property
    def users(self) -> list[int]:
        return sorted(self.shells)

    def __contains__(self, user: int) -> bool:
        return user in self.shells

    def row(self, user: int) -> np.ndarray:
        """
        Region index per item for a user.
        """

        if user not in self._rows:
            self._rows[user] = assign_regions(self.shells[user], self.region_count[user], self.n_items)
        return self._rows[user]

    def region_of(self, user: int, item: int) -> int:
        return int(self.row(user)[item])

    def items_in(self, user: int, regions: Iterable[int]) -> np.ndarray:
        return np.flatnonzero(np.isin(self.row(user), list(regions)))

    def export(self, graph: InteractionGraph, path: str | Path) -> None:
        """
        Writes ``user_id, item_id, region`` rows with raw ids.
        """

        with open(path, "w", encoding="utf-8", newline="\n") as file:
            for user in self.users:
                row = self.row(user)
                raw_user = graph.user_ids[user]
                file.writelines(
                    f"{raw_user}\t{graph.item_ids[item]}\t{row[item]}\n" for item in range(self.n_items)
                )

    def save(self, path: str | Path) -> None:
        users = self.users
        lengths = [len(s) for u in users for s in self.shells[u].shells]
        flat = [self.shells[u].reached() for u in users]
        np.savez_compressed(
            path,
            users=np.array(users, dtype=np.int64),
            shell_counts=np.array([len(self.shells[u]) for u in users], dtype=np.int64),
            shell_lengths=np.array(lengths, dtype=np.int64),
            items=np.concatenate(flat) if flat else np.empty(0, dtype=np.int64),
            meta=np.array([self.n_items, -1 if self.n is None else self.n, self.khop], dtype=np.int64),
        )

    @classmethod
    def load(cls, path: str | Path) -> RegionPartition:
        with np.load(path) as data:
            n_items, n, khop = (int(x) for x in data["meta"])
            lengths = iter(data["shell_lengths"].tolist())
            items = data["items"]
            shells, offset = {}, 0
            for user, count in zip(data["users"].tolist(), data["shell_counts"].tolist()):
                parts = []
                for _ in range(count):
                    size = next(lengths)
                    parts.append(items[offset:offset + size])
                    offset += size
                shells[user] = ShellArray(user, parts, khop)

        return cls(n_items, shells, None if n < 0 else n, khop)


@timer
def partition_users(
        graph: InteractionGraph,
        n: int | None,
        khop: int = DEFAULT_KHOP,
        users: Iterable[int] | None = None
) -> RegionPartition:
    """
    Runs blfs for every user (or the given ones) and groups the shells into regions.

    Args:
        graph (InteractionGraph): Training click graph.
        n (int | None): Region count; None ties it to each user's shell count.
        khop (int): Traversal depth.
        users (Iterable[int] | None): Users to partition. Defaults to all.

    Returns:
        RegionPartition: The partition.
    """

    users = range(graph.n_users) if users is None else users
    shells = {u: blfs(graph, u, khop) for u in tqdm(users, desc="Partitioning", unit="user", leave=False)}

    depth = [len(s) for s in shells.values()]
    if depth:
        log.info(f"Partitioned {len(depth)} users, shells per user min={min(depth)} max={max(depth)}")

    return RegionPartition(graph.n_items, shells, n, khop)
