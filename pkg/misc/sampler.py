from __future__ import annotations

import logging as log

from typing import TYPE_CHECKING, Iterable, Mapping, NamedTuple

import numpy as np

from misc.exceptions import ParameterError, SamplingError
from misc.graph import ExposedNotClickedSet, InteractionGraph
from misc.models.experiment import SamplerConfig
from misc.regions import RegionPartition
from misc.similarity import WeightMatrix

if TYPE_CHECKING:
    from misc.recommender import EmbeddingModel


class UserPools(NamedTuple):
    negative_items: np.ndarray
    negative_mass: np.ndarray
    positive_items: np.ndarray
    positive_mass: np.ndarray
    core: np.ndarray
    excluded: np.ndarray


class SampleSets:
    """
    Per-user positive-assistive and negative pools with their sampling masses.
    Immutable once built.
    """

    def __init__(
            self,
            n_items: int,
            pools: dict[int, UserPools],
            exposure_counts: Mapping[tuple[int, int], int] | None = None
    ) -> None:
        self.n_items = n_items
        self.pools = pools
        self.exposure_counts = exposure_counts or {}

    def __contains__(self, user: int) -> bool:
        return user in self.pools

    def pool(self, user: int) -> UserPools:
        try:
            return self.pools[user]
        except KeyError:
            raise SamplingError(f"user {user} has no sample sets") from None

    def negative_mass(self, user: int) -> np.ndarray:
        """
        Negative mass of every item for a user, 0 outside the negative pool.
        """

        pools = self.pool(user)
        mass = np.zeros(self.n_items)
        mass[pools.negative_items] = pools.negative_mass
        return mass

    def excluded(self, user: int) -> np.ndarray:
        return self.pool(user).excluded


def _excluded_items(user: int, train_clicks: Mapping[int, Iterable[int]], held_out: Mapping[int, Iterable[int]]):
    items = set(train_clicks.get(user, ())) | set(held_out.get(user, ()))
    return np.array(sorted(items), dtype=np.int64)


def build_sets(
        partition: RegionPartition,
        weights: WeightMatrix | None,
        selection: Mapping[int, Iterable[int]],
        train_clicks: Mapping[int, Iterable[int]],
        held_out: Mapping[int, Iterable[int]] | None = None,
        regions: Iterable[int] | None = None,
        distant_mass: float = 1.0,
        exposure_counts: Mapping[tuple[int, int], int] | None = None
) -> SampleSets:
    """
    Forms each user's positive and negative pools from regions and weights.

    Region 1 is positive only. Region n is negative with mass ``distant_mass``.
    An intermediate item with normalized squared weight w (its largest against the
    user's training clicks) is positive-assistive with mass w and negative with mass
    1 - w; a core negative among them gets negative mass max(1 - w, 1). With
    ``regions`` given, the negative pool is instead every item of those regions with
    mass 1. Training clicks and held-out positives never enter a negative pool.

    Args:
        partition (RegionPartition): Per-user regions.
        weights (WeightMatrix | None): Item-item weights; None treats every
            intermediate item as pure negative.
        selection (Mapping[int, Iterable[int]]): Core negatives per user.
        train_clicks (Mapping[int, Iterable[int]]): Training positives per user.
        held_out (Mapping[int, Iterable[int]] | None): Validation/test positives per user.
        regions (Iterable[int] | None): Restrict negatives to these regions.
        distant_mass (float): Negative mass of region-n items.
        exposure_counts (Mapping[tuple[int, int], int] | None): Exposure
            multiplicities, kept for exposure_argmax.

    Returns:
        SampleSets: The pools.
    """

    held_out = held_out or {}
    missing = [u for u in selection if u not in partition]
    if missing:
        raise SamplingError(f"user {missing[0]} has core negatives but no region partition")

    restrict = None if regions is None else sorted(set(regions))
    pools: dict[int, UserPools] = {}

    for user in partition.users:
        row = partition.row(user)
        count = partition.region_count[user]
        excluded = _excluded_items(user, train_clicks, held_out)

        positive = np.zeros(partition.n_items)
        negative = np.zeros(partition.n_items)
        in_negative = np.zeros(partition.n_items, dtype=bool)
        core = np.array(sorted(set(selection.get(user, ()))), dtype=np.int64)

        positive[row == 1] = 1.0
        if restrict is not None:
            in_negative = np.isin(row, restrict)
            negative[in_negative] = 1.0
        elif count >= 2:
            intermediate = (row >= 2) & (row <= count - 1)
            distant = row == count
            clicked = train_clicks.get(user, ())
            closeness = weights.max_normalized_sq(clicked) if weights is not None else np.zeros(partition.n_items)

            positive[intermediate] = closeness[intermediate]
            negative[intermediate] = 1.0 - closeness[intermediate]
            negative[distant] = distant_mass
            in_negative = intermediate | distant

            core = core[intermediate[core]] if core.size else core
            negative[core] = np.maximum(negative[core], 1.0)

        in_negative[excluded] = False
        negative_items = np.flatnonzero(in_negative)
        in_positive = (row == 1) | ((row >= 2) & (row <= count - 1))

        pools[user] = UserPools(
            negative_items=negative_items,
            negative_mass=negative[negative_items],
            positive_items=np.flatnonzero(in_positive),
            positive_mass=positive[in_positive],
            core=core[np.isin(core, negative_items)],
            excluded=excluded,
        )

    return SampleSets(partition.n_items, pools, exposure_counts)


def build_uniform_sets(
        n_items: int,
        users: Iterable[int],
        train_clicks: Mapping[int, Iterable[int]],
        held_out: Mapping[int, Iterable[int]] | None = None,
        exposure_counts: Mapping[tuple[int, int], int] | None = None
) -> SampleSets:
    """
    Pools without regions: every non-excluded item is negative with mass 1.
    """

    held_out = held_out or {}
    pools = {}
    for user in users:
        excluded = _excluded_items(user, train_clicks, held_out)
        items = np.setdiff1d(np.arange(n_items), excluded)
        pools[user] = UserPools(
            items, np.ones(len(items)), np.empty(0, np.int64), np.empty(0), np.empty(0, np.int64), excluded
        )
    return SampleSets(n_items, pools, exposure_counts)


def _eligible(n_items: int, excluded: np.ndarray, avoid: Iterable[int] = ()) -> np.ndarray:
    return np.setdiff1d(np.arange(n_items), np.union1d(excluded, np.fromiter(avoid, dtype=np.int64)))


def sample_negatives(
        sets: SampleSets,
        user: int,
        k: int,
        rng: np.random.Generator,
        core_quota: float = 0.5,
        avoid: Iterable[int] = ()
) -> list[int]:
    """
    Draws k negatives for a user in proportion to negative mass.

    Up to floor(k * core_quota) slots (never more than the core set) go to core
    negatives first. The rest are drawn without replacement, falling back to
    drawing with replacement when fewer than needed items carry mass. An empty
    negative pool falls back to uniform sampling over non-excluded items.

    Args:
        sets (SampleSets): Pools.
        user (int): User id.
        k (int): Number of negatives.
        rng (np.random.Generator): Random stream.
        core_quota (float): Share of slots reserved for core negatives.
        avoid (Iterable[int]): Items already chosen for this interaction.

    Returns:
        list[int]: k items.
    """

    if k < 1:
        raise ParameterError(f"k must be at least 1, got {k}")

    pools = sets.pool(user)
    avoid = set(avoid)
    keep = (pools.negative_mass > 0) & ~np.isin(pools.negative_items, list(avoid))
    items = pools.negative_items[keep]
    mass = pools.negative_mass[keep]

    if items.size == 0:
        log.debug(f"User {user}: empty negative pool, sampling uniformly")
        return baseline_uniform(user, k, rng, sets.n_items, pools.excluded, avoid)

    core = pools.core[np.isin(pools.core, items)]
    quota = min(int(k * core_quota), core.size)
    chosen = rng.choice(core, size=quota, replace=False).tolist() if quota else []

    rest = ~np.isin(items, chosen)
    items, mass = items[rest], mass[rest]
    need = k - quota
    if need == 0:
        return chosen

    if items.size == 0:
        items, mass = pools.negative_items[keep], pools.negative_mass[keep]

    replace = np.count_nonzero(mass) < need
    if replace:
        log.debug(f"User {user}: {np.count_nonzero(mass)} weighted negatives for {need} slots, drawing with replacement")

    drawn = rng.choice(items, size=need, replace=replace, p=mass / mass.sum())
    return chosen + drawn.tolist()


def exposure_argmax(
        user: int,
        exposed: ExposedNotClickedSet,
        sets: SampleSets,
        model: EmbeddingModel,
        negative_only: bool = False
) -> int:
    """
    The exposed item with the largest sigmoid(beta), beta(u, v) = c(v) * r_uv.

    c(v) is the exposure multiplicity of v for the user when v also belongs to the
    user's negative pool (the set C_u), else 1. Sigmoid is monotone, so the argmax
    is taken on beta; ties go to the smallest item id.

    Args:
        user (int): User id.
        exposed (ExposedNotClickedSet): Exposed-not-clicked items per user.
        sets (SampleSets): Pools; defines C_u.
        model (EmbeddingModel): Model with a fresh fused cache.
        negative_only (bool): Search C_u only instead of all exposed items.

    Returns:
        int: The selected item.

    Raises:
        SamplingError: There is no candidate.
    """

    candidates = np.array(sorted(exposed.get(user, ())), dtype=np.int64)
    in_negative = sets.negative_mass(user)[candidates] > 0 if candidates.size else np.zeros(0, dtype=bool)
    if negative_only:
        candidates = candidates[in_negative]
        in_negative = in_negative[in_negative]

    if candidates.size == 0:
        raise SamplingError(f"user {user} has no exposed candidates")

    counts = np.array([
        sets.exposure_counts.get((user, int(v)), 1) if c else 1 for v, c in zip(candidates, in_negative)
    ], dtype=np.float64)
    beta = counts * model.score_items(user, candidates)

    return int(candidates[np.lexsort((candidates, -beta))[0]])


def baseline_uniform(
        user: int,
        k: int,
        rng: np.random.Generator,
        n_items: int,
        excluded: Iterable[int],
        avoid: Iterable[int] = ()
) -> list[int]:
    """
    k items drawn uniformly without replacement among the user's non-excluded items.
    """

    eligible = _eligible(n_items, np.asarray(list(excluded), dtype=np.int64), avoid)
    if eligible.size == 0:
        raise SamplingError(f"user {user} has no item left to sample")

    replace = eligible.size < k
    if replace:
        log.debug(f"User {user}: {eligible.size} eligible items for {k} slots, drawing with replacement")
    return rng.choice(eligible, size=k, replace=replace).tolist()


def baseline_dns(
        user: int,
        k: int,
        dns_pool: int,
        model: EmbeddingModel,
        rng: np.random.Generator,
        n_items: int,
        excluded: Iterable[int],
        avoid: Iterable[int] = ()
) -> list[int]:
    """
    Dynamic hard negatives: draw max(dns_pool, k) uniform candidates and keep the k
    the model scores highest (ties by ascending id).
    """

    candidates = np.array(baseline_uniform(user, max(dns_pool, k), rng, n_items, excluded, avoid), dtype=np.int64)
    order = np.lexsort((candidates, -model.score_items(user, candidates)))
    return candidates[order[:k]].tolist()


def rng_stream(seed: int, worker: int = 0) -> np.random.Generator:
    """
    Independent random stream for one worker.
    """

    return np.random.default_rng([seed, worker])


class NegativeSampler:

    def __init__(self, config: SamplerConfig, sets: SampleSets, exposed: ExposedNotClickedSet) -> None:
        """
        Initializes a NegativeSampler dispatching on the configured kind.

        Args:
            config (SamplerConfig): Sampler settings.
            sets (SampleSets): Region pools (ns4ar, recns) or uniform pools (baselines).
            exposed (ExposedNotClickedSet): Exposed-not-clicked items per user.
        """

        self.config = config
        self.sets = sets
        self.exposed = exposed

    def draw(self, user: int, k: int, rng: np.random.Generator, model: EmbeddingModel) -> list[int]:
        """
        k negatives for one positive interaction of ``user``.
        """

        kind = self.config.kind
        excluded = self.sets.excluded(user)

        if kind == "uniform_rns":
            return baseline_uniform(user, k, rng, self.sets.n_items, excluded)

        if kind == "dns_hard":
            return baseline_dns(user, k, self.config.dns_pool, model, rng, self.sets.n_items, excluded)

        first = self._argmax(user, model, negative_only=kind != "exposure_argmax")
        if first is None:
            if kind == "exposure_argmax":
                return baseline_uniform(user, k, rng, self.sets.n_items, excluded)
            return sample_negatives(self.sets, user, k, rng, self.config.core_quota)
        if k == 1:
            return [first]

        if kind == "exposure_argmax":
            return [first] + baseline_uniform(user, k - 1, rng, self.sets.n_items, excluded, avoid=[first])
        return [first] + sample_negatives(self.sets, user, k - 1, rng, self.config.core_quota, avoid=[first])

    def _argmax(self, user: int, model: EmbeddingModel, negative_only: bool) -> int | None:
        if self.config.kind in ("ns4ar", "recns") and not self.config.use_exposure_argmax:
            return None
        try:
            return exposure_argmax(user, self.exposed, self.sets, model, negative_only=negative_only)
        except SamplingError:
            return None


def build_sampler(
        config: SamplerConfig,
        graph: InteractionGraph,
        train_clicks: Mapping[int, Iterable[int]],
        held_out: Mapping[int, Iterable[int]],
        exposed: ExposedNotClickedSet,
        partition: RegionPartition | None = None,
        weights: WeightMatrix | None = None,
        selection: Mapping[int, Iterable[int]] | None = None
) -> NegativeSampler:
    """
    Builds the pools a sampler kind needs and wraps them in a NegativeSampler.

    ns4ar needs the partition, weights and core selection. recns needs a partition
    with n = 3 and uses neither weights nor core negatives, and leaves the distant
    region out. The baselines use uniform pools.
    """

    if config.kind in ("ns4ar", "recns"):
        if partition is None:
            raise SamplingError(f"sampler {config.kind} needs a region partition")
        if config.kind == "ns4ar":
            sets = build_sets(
                partition, weights, selection or {}, train_clicks, held_out,
                regions=config.regions, exposure_counts=graph.exposure_counts
            )
        else:
            sets = build_sets(
                partition, None, {}, train_clicks, held_out,
                regions=config.regions, distant_mass=0.0, exposure_counts=graph.exposure_counts
            )
    else:
        sets = build_uniform_sets(graph.n_items, range(graph.n_users), train_clicks, held_out, graph.exposure_counts)

    return NegativeSampler(config, sets, exposed)
