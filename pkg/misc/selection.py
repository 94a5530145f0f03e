from __future__ import annotations

import logging as log

from typing import Literal, Sequence

import numpy as np

from scipy import stats
from tqdm import tqdm

from decorators import timer

from misc.exceptions import ParameterError
from misc.graph import ExposedNotClickedSet, InteractionGraph
from misc.models.selection import SelectionResult, TraceStep
from misc.regions import RegionPartition, ShellArray, assign_regions, resolve_region_count
from misc.similarity import WeightMatrix

FEATURES = ("region", "weight_mass", "click_degree", "neighbour_exposure")
SIGNIFICANCE = 0.05
DEFAULT_STEP = 0.01
DEFAULT_MAX_ITERATIONS = 10_000


class CandidateTable:

    def __init__(
            self,
            items: Sequence[int],
            features: np.ndarray,
            target: Sequence[int],
            feature_names: Sequence[str] = FEATURES,
            regions: Sequence[int] | None = None
    ) -> None:
        """
        Initializes a CandidateTable of negative candidates for one user.

        Args:
            items (Sequence[int]): Candidate items, one per row.
            features (np.ndarray): Feature matrix, rows x len(feature_names).
            target (Sequence[int]): 1 when the row's item was exposed to the user
                without a click, else 0.
            feature_names (Sequence[str]): Column names.
            regions (Sequence[int] | None): Region of each row's item.
        """

        self.items = np.asarray(items, dtype=np.int64)
        self.features = np.asarray(features, dtype=np.float64).reshape(len(self.items), len(feature_names))
        self.target = np.asarray(target, dtype=np.int64)
        self.feature_names = tuple(feature_names)
        self.regions = np.zeros(len(self.items), dtype=np.int64) if regions is None else np.asarray(regions)

        if not np.all(np.isfinite(self.features)):
            raise ParameterError("candidate features must be finite")
        if not np.isin(self.target, (0, 1)).all():
            raise ParameterError("candidate target must be binary")
        if len(self.target) != len(self.items):
            raise ParameterError(f"{len(self.items)} candidates but {len(self.target)} targets")

    def __len__(self) -> int:
        return len(self.items)


def bic_score(rss: float, n_obs: int, n_params: int) -> float:
    """
    Bayesian information criterion of a least-squares fit; lower is better.

    Args:
        rss (float): Residual sum of squares, floored at machine epsilon.
        n_obs (int): Number of observations, at least 1.
        n_params (int): Number of fitted parameters.

    Returns:
        float: n_obs * ln(rss / n_obs) + n_params * ln(n_obs).
    """

    if n_obs < 1:
        raise ParameterError(f"BIC needs at least one observation, got {n_obs}")
    if rss < 0:
        raise ParameterError(f"residual sum of squares must be non-negative, got {rss}")

    rss = max(rss, np.finfo(np.float64).eps)
    return float(n_obs * np.log(rss / n_obs) + n_params * np.log(n_obs))


def fisher_exact(table: Sequence[Sequence[int]]) -> float:
    """
    Two-sided Fisher exact test of a 2x2 contingency table.

    Args:
        table (Sequence[Sequence[int]]): Non-negative integer counts, at least one positive.

    Returns:
        float: p-value in [0, 1]; 1 when the margins admit a single table.
    """

    counts = np.asarray(table)
    if counts.shape != (2, 2):
        raise ParameterError(f"Fisher test needs a 2x2 table, got shape {counts.shape}")
    if (counts < 0).any() or not np.all(np.equal(np.mod(counts, 1), 0)):
        raise ParameterError("Fisher test needs non-negative integer counts")
    if counts.sum() == 0:
        raise ParameterError("Fisher test needs at least one positive count")

    _, p_value = stats.fisher_exact(counts.astype(np.int64), alternative="two-sided")
    return float(min(1.0, max(0.0, p_value)))


def stagewise_select(
        table: CandidateTable,
        step: float = DEFAULT_STEP,
        residual_threshold: float | None = None,
        m: int = 20,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
        user: int = -1
) -> SelectionResult:
    """
    Forward stagewise fit of the exposure target on the candidate features,
    followed by a top-m ranking and a Fisher significance check.

    Features and target are centred, so the fit carries an intercept (the target
    mean) and the residual starts at y - mean(y). Each iteration scores every
    feature by the BIC of its one-parameter fit to the current residual, takes
    the lowest, and moves that coefficient by
    ``step * sign(correlation)``. A move is only made when it does not increase the
    residual norm, so the trace is non-increasing; when no feature qualifies the
    fit has converged at this step size.

    Args:
        table (CandidateTable): Candidates for one user.
        step (float): Coefficient increment, positive.
        residual_threshold (float | None): Stop once the residual norm is at most
            this. Defaults to 1e-3 * sqrt(rows).
        m (int): Number of candidates to return.
        max_iterations (int): Iteration cap.
        user (int): User id recorded in the result.

    Returns:
        SelectionResult: Selected items ranked by fitted score (ties by ascending
        item id), coefficients, trace and the Fisher p-value.
    """

    if step <= 0:
        raise ParameterError(f"stagewise step must be positive, got {step}")
    if m < 1:
        raise ParameterError(f"selection size m must be at least 1, got {m}")

    n_obs, n_features = table.features.shape
    flags: list[str] = []

    if n_obs == 0:
        return SelectionResult(user=user, flags=["no-candidates"])
    if not table.features.any():
        log.debug(f"User {user}: all candidate features are zero")
        return SelectionResult(
            user=user, coefficients=dict.fromkeys(table.feature_names, 0.0), flags=["all-zero-features"]
        )

    if residual_threshold is None:
        residual_threshold = 1e-3 * np.sqrt(n_obs)

    x = table.features - table.features.mean(axis=0)
    residual = table.target.astype(np.float64) - table.target.mean()
    norms_sq = (x ** 2).sum(axis=0)
    active = norms_sq > 0

    coefficients = np.zeros(n_features)
    trace: list[TraceStep] = []

    for iteration in range(1, max_iterations + 1):
        residual_sq = float(residual @ residual)
        if np.sqrt(residual_sq) <= residual_threshold or not active.any():
            break

        correlation = x.T @ residual
        gain = np.where(active, correlation ** 2 / np.where(active, norms_sq, 1.0), -np.inf)
        bic = np.array([
            bic_score(max(residual_sq - g, 0.0), n_obs, 1) if a else np.inf for g, a in zip(gain, active)
        ])
        best = int(np.argmin(bic))

        if abs(correlation[best]) < step * norms_sq[best] / 2:
            break

        direction = np.sign(correlation[best])
        coefficients[best] += step * direction
        residual -= step * direction * x[:, best]

        trace.append(TraceStep(
            iteration=iteration,
            feature=table.feature_names[best],
            bic=float(bic[best]),
            residual_norm=float(np.linalg.norm(residual))
        ))

    if not coefficients.any():
        flags.append("no-signal")

    scores = x @ coefficients
    order = np.lexsort((table.items, -scores))[:m]
    chosen = np.zeros(n_obs, dtype=bool)
    chosen[order] = True

    target = table.target.astype(bool)
    p_value = fisher_exact([
        [int((chosen & target).sum()), int((chosen & ~target).sum())],
        [int((~chosen & target).sum()), int((~chosen & ~target).sum())],
    ])
    significant = p_value < SIGNIFICANCE
    if not significant:
        flags.append("not-significant")

    return SelectionResult(
        user=user,
        selected=table.items[order].tolist(),
        scores=scores[order].tolist(),
        regions=table.regions[order].tolist(),
        coefficients=dict(zip(table.feature_names, coefficients.tolist())),
        trace=trace,
        fisher_p=p_value,
        significant=significant,
        flags=flags
    )


def build_candidate_table(
        graph: InteractionGraph,
        shells: ShellArray,
        weights: WeightMatrix,
        exposed: ExposedNotClickedSet,
        n: int | None = None
) -> CandidateTable:
    """
    Candidate table of a user's intermediate-region items (regions 2..n-1).

    Features, each max-abs scaled: region index, summed normalized squared weight to
    the user's clicks, click degree, and the exposure multiplicity of the item among
    the user's co-clickers.

    Args:
        graph (InteractionGraph): Training graph.
        shells (ShellArray): The user's shells.
        weights (WeightMatrix): Item-item weights.
        exposed (ExposedNotClickedSet): Exposed-not-clicked items per user.
        n (int | None): Region count; None ties it to the shell count.

    Returns:
        CandidateTable: Possibly empty table.
    """

    user = shells.user
    region_count = resolve_region_count(n, shells.khop, len(shells))
    row = assign_regions(shells, region_count, graph.n_items)
    candidates = np.flatnonzero((row >= 2) & (row <= region_count - 1))

    if candidates.size == 0:
        return CandidateTable([], np.empty((0, len(FEATURES))), [], regions=[])

    clicked = graph.user_items[user]
    co_clickers = np.setdiff1d(
        np.unique(np.concatenate([graph.item_users[i] for i in clicked])) if clicked.size else np.empty(0, np.int64),
        [user]
    )
    neighbour_exposure = (
        np.asarray(graph.exposure_matrix[co_clickers].sum(axis=0)).ravel()
        if co_clickers.size else np.zeros(graph.n_items)
    )

    features = np.column_stack([
        row[candidates].astype(np.float64),
        weights.sum_normalized_sq(clicked)[candidates],
        graph.item_degree[candidates].astype(np.float64),
        neighbour_exposure[candidates],
    ])
    scale = np.abs(features).max(axis=0)
    features = features / np.where(scale > 0, scale, 1.0)

    seen = exposed.get(user, frozenset())
    target = [1 if int(i) in seen else 0 for i in candidates]

    return CandidateTable(candidates, features, target, regions=row[candidates])


def core_selection(
        graph: InteractionGraph,
        shells: ShellArray,
        weights: WeightMatrix,
        exposed: ExposedNotClickedSet,
        m: int,
        n: int | None = None,
        method: Literal["stagewise", "random"] = "stagewise",
        step: float = DEFAULT_STEP,
        residual_threshold: float | None = None,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
        rng: np.random.Generator | None = None
) -> SelectionResult:
    """
    Full selection result for one user; see select_core_negatives.
    """

    if m < 1:
        raise ParameterError(f"selection size m must be at least 1, got {m}")

    table = build_candidate_table(graph, shells, weights, exposed, n)
    if len(table) == 0:
        return SelectionResult(user=shells.user, flags=["no-candidates"])

    if method == "stagewise":
        return stagewise_select(table, step, residual_threshold, m, max_iterations, user=shells.user)

    if method == "random":
        rng = np.random.default_rng(0) if rng is None else rng
        picked = np.sort(rng.choice(len(table), size=min(m, len(table)), replace=False))
        return SelectionResult(
            user=shells.user,
            selected=table.items[picked].tolist(),
            scores=[0.0] * len(picked),
            regions=table.regions[picked].tolist(),
            flags=["random"]
        )

    raise ParameterError(f"unknown selection method {method!r}")


def select_core_negatives(
        graph: InteractionGraph,
        shells: ShellArray,
        weights: WeightMatrix,
        exposed: ExposedNotClickedSet,
        m: int,
        n: int | None = None,
        **options
) -> list[int]:
    """
    Core negatives of one user: the m intermediate-region candidates that best
    resemble the user's exposed-not-clicked items.

    Args:
        graph (InteractionGraph): Training graph.
        shells (ShellArray): The user's shells.
        weights (WeightMatrix): Item-item weights.
        exposed (ExposedNotClickedSet): Exposed-not-clicked items per user.
        m (int): Selection size.
        n (int | None): Region count.
        **options: Passed to core_selection (method, step, residual_threshold, ...).

    Returns:
        list[int]: Selected items, best first; empty without intermediate candidates.
    """

    return core_selection(graph, shells, weights, exposed, m, n, **options).selected


@timer
def select_all(
        graph: InteractionGraph,
        partition: RegionPartition,
        weights: WeightMatrix,
        exposed: ExposedNotClickedSet,
        m: int,
        method: Literal["stagewise", "random"] = "stagewise",
        step: float = DEFAULT_STEP,
        residual_threshold: float | None = None,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
        seed: int = 0
) -> dict[int, SelectionResult]:
    """
    Runs core_selection for every partitioned user.

    Returns:
        dict[int, SelectionResult]: Selection per user.
    """

    results = {}
    for user in tqdm(partition.users, desc="Selecting core negatives", unit="user", leave=False):
        results[user] = core_selection(
            graph, partition.shells[user], weights, exposed, m, partition.n,
            method=method, step=step, residual_threshold=residual_threshold,
            max_iterations=max_iterations, rng=np.random.default_rng([seed, user])
        )

    significant = sum(r.significant for r in results.values())
    log.info(f"Core selection ({method}): {significant}/{len(results)} users significant at {SIGNIFICANCE}")

    return results
