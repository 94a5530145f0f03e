from __future__ import annotations

import logging as log

from typing import Mapping, NamedTuple, Sequence

import numpy as np

from misc.exceptions import ParameterError
from misc.graph import DatasetSplit
from misc.recommender import EmbeddingModel, recommend_topk


class EvalResult(NamedTuple):
    recall: float
    ndcg: float
    hr: float
    users: int


def _hits(ranked: Sequence[int], relevant: set[int], k: int) -> list[bool]:
    if k <= 0:
        raise ParameterError(f"K must be positive, got {k}")
    if not relevant:
        raise ParameterError("metrics need at least one relevant item")
    return [item in relevant for item in list(ranked)[:k]]


def recall_at_k(ranked: Sequence[int], relevant: set[int], k: int) -> float:
    """
    Percentage of the relevant items found in the top k.
    """

    return 100.0 * sum(_hits(ranked, relevant, k)) / len(relevant)


def hr_at_k(ranked: Sequence[int], relevant: set[int], k: int) -> float:
    """
    100 when the top k holds at least one relevant item, else 0.
    """

    return 100.0 if any(_hits(ranked, relevant, k)) else 0.0


def ndcg_at_k(ranked: Sequence[int], relevant: set[int], k: int) -> float:
    """
    Binary-relevance NDCG of the top k in percent, discount 1/log2(rank + 1).
    """

    hits = _hits(ranked, relevant, k)
    dcg = sum(1.0 / np.log2(rank + 1) for rank, hit in enumerate(hits, start=1) if hit)
    idcg = sum(1.0 / np.log2(rank + 1) for rank in range(1, min(len(relevant), k) + 1))
    return 100.0 * dcg / idcg


def evaluate_edges(
        model: EmbeddingModel,
        positives: Mapping[int, set[int]],
        exclude: Mapping[int, set[int]],
        k: int = 20
) -> EvalResult:
    """
    Mean Recall/NDCG/HR at k over users with at least one positive, ranking all
    items except the user's excluded ones.

    Args:
        model (EmbeddingModel): Model with a fresh fused cache.
        positives (Mapping[int, set[int]]): Held-out positives per user.
        exclude (Mapping[int, set[int]]): Items never ranked per user (training clicks).
        k (int): Cut-off.

    Returns:
        EvalResult: Metrics in percent and the number of users evaluated.
    """

    recall, ndcg, hr = [], [], []
    for user in sorted(positives):
        relevant = positives[user]
        if not relevant:
            continue

        excluded = exclude.get(user, set())
        ranked = recommend_topk(model, user, k, excluded)
        if excluded.intersection(ranked):
            raise ParameterError(f"user {user}: a training item was ranked")

        recall.append(recall_at_k(ranked, relevant, k))
        ndcg.append(ndcg_at_k(ranked, relevant, k))
        hr.append(hr_at_k(ranked, relevant, k))

    if not recall:
        raise ParameterError("no user has a held-out positive to evaluate")

    return EvalResult(float(np.mean(recall)), float(np.mean(ndcg)), float(np.mean(hr)), len(recall))


def evaluate(model: EmbeddingModel, split: DatasetSplit, k: int = 20) -> EvalResult:
    """
    Test-set metrics with training clicks excluded from the ranking.
    """

    if not split.test:
        raise ParameterError("the test set is empty")

    result = evaluate_edges(model, split.test_by_user, split.train_by_user, k)
    log.info(f"Test @{k}: recall={result.recall:.4f} ndcg={result.ndcg:.4f} hr={result.hr:.4f} users={result.users}")
    return result
