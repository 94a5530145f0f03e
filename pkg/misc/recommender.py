from __future__ import annotations

import logging as log

from pathlib import Path
from typing import TYPE_CHECKING, Callable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
import ujson

from tqdm import tqdm

from decorators import timer

from misc.exceptions import ParameterError, SamplingError, TrainingDiverged
from misc.graph import DatasetSplit, InteractionGraph
from misc.models.experiment import TrainConfig
from misc.sampler import rng_stream

if TYPE_CHECKING:
    from misc.sampler import NegativeSampler

# (user, positive item, negative items)
Interaction = tuple[int, int, Sequence[int]]


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def normalized_adjacency(graph: InteractionGraph) -> sp.csr_matrix:
    """
    Symmetric-normalized (users + items) square adjacency of the click edges,
    D^-1/2 A D^-1/2; isolated nodes get an all-zero row.
    """

    clicks = graph.click_matrix
    adjacency = sp.bmat([[None, clicks], [clicks.T, None]], format="csr")

    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    inverse_sqrt = np.zeros_like(degree)
    inverse_sqrt[degree > 0] = degree[degree > 0] ** -0.5
    scale = sp.diags(inverse_sqrt)

    return (scale @ adjacency @ scale).tocsr()


class EmbeddingModel:

    def __init__(
            self,
            n_users: int,
            n_items: int,
            dim: int = 64,
            layers: int = 2,
            base: np.ndarray | None = None,
            rng: np.random.Generator | None = None
    ) -> None:
        """
        Initializes an EmbeddingModel with one base vector per user and item.

        Args:
            n_users (int): Number of users; rows 0..n_users-1.
            n_items (int): Number of items; rows n_users.. onward.
            dim (int): Embedding size.
            layers (int): Propagation depth L.
            base (np.ndarray | None): Initial base embeddings; drawn uniformly in
                [-1/sqrt(dim), 1/sqrt(dim)] when omitted.
            rng (np.random.Generator | None): Stream for the initial draw.
        """

        if layers < 0 or dim < 1:
            raise ParameterError(f"invalid model shape: dim={dim}, layers={layers}")

        self.n_users = n_users
        self.n_items = n_items
        self.dim = dim
        self.layers = layers

        if base is None:
            rng = np.random.default_rng(0) if rng is None else rng
            bound = 1.0 / np.sqrt(dim)
            base = rng.uniform(-bound, bound, size=(n_users + n_items, dim))

        self.base = np.array(base, dtype=np.float64)
        if self.base.shape != (n_users + n_items, dim):
            raise ParameterError(f"base embeddings have shape {self.base.shape}, expected {(n_users + n_items, dim)}")

        self.fused: np.ndarray | None = None
        self.stale = True

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def propagate(self, adjacency: sp.csr_matrix, base: np.ndarray | None = None) -> list[np.ndarray]:
        """
        Layer representations h^0..h^L with h^0 the base embeddings and
        h^{l+1} = A_hat h^l.
        """

        layer = self.base if base is None else base
        layers = [layer]
        for _ in range(self.layers):
            layer = adjacency @ layer
            layers.append(layer)
        return layers

    @staticmethod
    def fuse(layers: Sequence[np.ndarray]) -> np.ndarray:
        """
        Mean over all layer representations, h^0 included.
        """

        return np.mean(np.stack(layers), axis=0)

    def refresh(self, adjacency: sp.csr_matrix) -> None:
        self.fused = self.fuse(self.propagate(adjacency))
        self.stale = False

    def snapshot(self, adjacency: sp.csr_matrix) -> EmbeddingModel:
        """
        Independent copy with a fresh fused cache.
        """

        copy = EmbeddingModel(self.n_users, self.n_items, self.dim, self.layers, base=self.base.copy())
        copy.refresh(adjacency)
        return copy

    def apply_gradient(self, gradient: np.ndarray, lr: float) -> None:
        self.base -= lr * gradient
        self.stale = True

    def _fresh(self) -> np.ndarray:
        if self.stale or self.fused is None:
            raise ParameterError("fused embeddings are stale, call refresh() first")
        return self.fused

    def _check_user(self, user: int) -> None:
        if not 0 <= user < self.n_users:
            raise ParameterError(f"unknown user {user}")

    def score(self, user: int, item: int) -> float:
        """
        Inner product of the fused user and item vectors.
        """

        self._check_user(user)
        if not 0 <= item < self.n_items:
            raise ParameterError(f"unknown item {item}")

        fused = self._fresh()
        return float(fused[user] @ fused[self.n_users + item])

    def score_items(self, user: int, items: Sequence[int] | np.ndarray) -> np.ndarray:
        self._check_user(user)
        fused = self._fresh()
        return fused[self.n_users + np.asarray(items, dtype=np.int64)] @ fused[user]

    def scores_for_user(self, user: int) -> np.ndarray:
        self._check_user(user)
        fused = self._fresh()
        return fused[self.n_users:] @ fused[user]

    def save(self, path: str | Path, id_map: str | None = None) -> None:
        """
        Writes the base embeddings with a header (node count, dim, L, id-map reference).
        """

        header = {
            "nodes": self.n_nodes, "users": self.n_users, "items": self.n_items,
            "dim": self.dim, "layers": self.layers, "id_map": id_map,
        }
        np.savez_compressed(path, base=self.base, header=np.array(ujson.dumps(header)))

    @classmethod
    def load(cls, path: str | Path) -> EmbeddingModel:
        with np.load(path) as data:
            header = ujson.loads(str(data["header"]))
            base = data["base"]
        return cls(header["users"], header["items"], header["dim"], header["layers"], base=base)


def hinge_loss(
        model: EmbeddingModel,
        adjacency: sp.csr_matrix,
        batch: Sequence[Interaction],
        gamma: float
) -> float:
    """
    Batch hinge loss (1/k) * sum [sigmoid(sum_i r_u,neg_i) - sigmoid(k * r_u,pos) + gamma]_+.
    """

    return loss_and_gradient(model, adjacency, batch, gamma)[0]


def loss_and_gradient(
        model: EmbeddingModel,
        adjacency: sp.csr_matrix,
        batch: Sequence[Interaction],
        gamma: float
) -> tuple[float, np.ndarray]:
    """
    Hinge loss of a batch and its exact gradient with respect to the base embeddings.

    The fused vectors are recomputed from the current base embeddings. Fusion is
    linear, e* = P e0 with P = mean_l A_hat^l, and A_hat is symmetric, so the
    gradient is P applied to the gradient with respect to the fused vectors.

    Args:
        model (EmbeddingModel): Model to differentiate.
        adjacency (sp.csr_matrix): Normalized training adjacency.
        batch (Sequence[Interaction]): (user, positive, negatives) triples, equal k.
        gamma (float): Hinge margin.

    Returns:
        tuple[float, np.ndarray]: Loss and gradient (nodes x dim).
    """

    if not batch:
        return 0.0, np.zeros_like(model.base)

    k = len(batch[0][2])
    if k == 0:
        raise ParameterError("hinge loss needs k >= 1 negatives per interaction")
    if any(len(negatives) != k for _, _, negatives in batch):
        raise ParameterError("every interaction in a batch needs the same number of negatives")

    fused = model.fuse(model.propagate(adjacency))
    users = np.array([u for u, _, _ in batch], dtype=np.int64)
    positives = model.n_users + np.array([v for _, v, _ in batch], dtype=np.int64)
    negatives = model.n_users + np.array([list(n) for _, _, n in batch], dtype=np.int64)

    e_user = fused[users]
    e_pos = fused[positives]
    e_neg = fused[negatives]
    neg_sum = e_neg.sum(axis=1)

    s_neg = np.einsum("bd,bd->b", e_user, neg_sum)
    s_pos = k * np.einsum("bd,bd->b", e_user, e_pos)
    sig_neg, sig_pos = sigmoid(s_neg), sigmoid(s_pos)

    margin = sig_neg - sig_pos + gamma
    active = (margin > 0).astype(np.float64)
    loss = float(np.maximum(margin, 0.0).sum() / k)

    d_neg = active * sig_neg * (1.0 - sig_neg) / k
    d_pos = -active * sig_pos * (1.0 - sig_pos) / k

    grad_fused = np.zeros_like(fused)
    np.add.at(grad_fused, users, d_neg[:, None] * neg_sum + d_pos[:, None] * k * e_pos)
    np.add.at(grad_fused, positives, d_pos[:, None] * k * e_user)
    np.add.at(grad_fused, negatives.ravel(), np.repeat(d_neg[:, None] * e_user, k, axis=0))

    return loss, model.fuse(model.propagate(adjacency, grad_fused))


class TrainResult(NamedTuple):
    model: EmbeddingModel
    loss_curve: list[float]
    best_epoch: int
    valid_curve: list[float]


@timer
def train(
        graph: InteractionGraph,
        split: DatasetSplit,
        config: TrainConfig,
        sampler: NegativeSampler,
        validate: Callable[[EmbeddingModel], float] | None = None
) -> TrainResult:
    """
    Minibatch SGD on the hinge loss over the training clicks.

    Negatives come from ``sampler``, which scores with the fused cache refreshed per
    batch or per epoch (``config.refresh``). With ``config.patience > 0`` and a
    ``validate`` callback, the validation score is checked every
    ``config.eval_every`` epochs, the best embeddings are kept and training stops
    after ``patience`` checks without improvement.

    Args:
        graph (InteractionGraph): Full graph.
        split (DatasetSplit): Split; only its training edges are used.
        config (TrainConfig): Hyperparameters.
        sampler (NegativeSampler): Negative sampler built over the training split.
        validate (Callable[[EmbeddingModel], float] | None): Higher-is-better score.

    Returns:
        TrainResult: Trained model (fresh cache), epoch-mean loss curve, best epoch,
        validation scores.

    Raises:
        TrainingDiverged: The loss became non-finite.
        SamplingError: A sampled negative was a training click.
    """

    adjacency = normalized_adjacency(split.train_graph(graph))
    rng = np.random.default_rng(config.seed)
    model = EmbeddingModel(graph.n_users, graph.n_items, config.dim, config.layers, rng=rng)
    sample_rng = rng_stream(config.seed if config.sampler.seed is None else config.sampler.seed, 1)

    edges = np.array(sorted(split.train), dtype=np.int64).reshape(-1, 2)
    k = config.sampler.k
    loss_curve: list[float] = []
    valid_curve: list[float] = []
    best_score, best_epoch, best_base, waited = -np.inf, 0, model.base.copy(), 0

    for epoch in tqdm(range(1, config.epochs + 1), desc="Training", unit="epoch", leave=False):
        order = rng.permutation(len(edges))
        scorer = model.snapshot(adjacency) if config.refresh == "epoch" else model
        total = 0.0

        for start in range(0, len(edges), config.batch_size):
            if config.refresh == "batch":
                model.refresh(adjacency)

            batch = []
            for user, item in edges[order[start:start + config.batch_size]].tolist():
                negatives = sampler.draw(user, k, sample_rng, scorer)
                if split.train_by_user[user].intersection(negatives):
                    raise SamplingError(f"user {user} was given a training click as a negative")
                batch.append((user, item, negatives))

            loss, gradient = loss_and_gradient(model, adjacency, batch, config.gamma)
            if not np.isfinite(loss) or not np.all(np.isfinite(gradient)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")

            model.apply_gradient(gradient, config.lr)
            total += loss

        loss_curve.append(total / max(len(edges), 1))
        log.debug(f"Epoch {epoch}: mean loss {loss_curve[-1]:.6f}")

        if validate is None or config.patience == 0 or epoch % config.eval_every:
            continue

        model.refresh(adjacency)
        score = validate(model)
        valid_curve.append(score)
        if score > best_score:
            best_score, best_epoch, best_base, waited = score, epoch, model.base.copy(), 0
        else:
            waited += 1
            if waited >= config.patience:
                log.info(f"Early stop at epoch {epoch}, best epoch {best_epoch} ({best_score:.4f})")
                break

    if valid_curve:
        model.base = best_base
    else:
        best_epoch = len(loss_curve)

    model.refresh(adjacency)
    return TrainResult(model, loss_curve, best_epoch, valid_curve)


def recommend_topk(model: EmbeddingModel, user: int, k: int, exclude: Sequence[int] | set[int] = ()) -> list[int]:
    """
    The k highest-scoring items for a user outside ``exclude``; ties by ascending id.
    Fewer than k eligible items returns all of them, ordered.
    """

    if k <= 0:
        raise ParameterError(f"K must be positive, got {k}")

    scores = model.scores_for_user(user)
    eligible = np.setdiff1d(np.arange(model.n_items), np.fromiter(exclude, dtype=np.int64))
    order = np.lexsort((eligible, -scores[eligible]))

    return eligible[order[:k]].tolist()
