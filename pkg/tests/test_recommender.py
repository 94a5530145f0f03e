import numpy as np
import pytest
import scipy.sparse as sp

from conftest import make_graph
from misc.exceptions import ParameterError, TrainingDiverged
from misc.graph import DatasetSplit
from misc.models.experiment import SamplerConfig, TrainConfig
from misc.recommender import (EmbeddingModel, hinge_loss, loss_and_gradient, normalized_adjacency, recommend_topk,
                              sigmoid, train)
from misc.sampler import build_sampler


def dense_normalized(graph) -> np.ndarray:
    adjacency = np.zeros((graph.n_nodes, graph.n_nodes))
    for u, i in graph.click_edges:
        adjacency[u, graph.item_node(i)] = adjacency[graph.item_node(i), u] = 1.0
    degree = adjacency.sum(axis=1)
    scale = np.divide(1.0, np.sqrt(degree), out=np.zeros_like(degree), where=degree > 0)
    return scale[:, None] * adjacency * scale[None, :]


@pytest.fixture
def leave_one_out():
    """
    3 users, 4 items; user u clicked every item but item u, so a single negative is left.
    """

    graph = make_graph(3, 4, [(u, i) for u in range(3) for i in range(4) if i != u])
    split = DatasetSplit(sorted(graph.click_edges), [], [], seed=0, ratios=(0.8, 0.1, 0.1))
    sampler = build_sampler(SamplerConfig(kind="uniform_rns", k=1), graph, split.train_by_user, {}, {})
    return graph, split, sampler


def test_sigmoid():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    assert sigmoid(np.array([2.0]))[0] == pytest.approx(1 / (1 + np.exp(-2.0)))


def test_no_layers_is_identity(toy_graph):
    rng = np.random.default_rng(1)
    model = EmbeddingModel(toy_graph.n_users, toy_graph.n_items, 5, layers=0, rng=rng)
    model.refresh(normalized_adjacency(toy_graph))
    assert np.array_equal(model.fused, model.base)


def test_single_edge_propagation():
    graph = make_graph(1, 1, [(0, 0)])
    base = np.array([[1.0, 0.0], [0.0, 3.0]])
    model = EmbeddingModel(1, 1, 2, layers=1, base=base)
    model.refresh(normalized_adjacency(graph))
    assert np.allclose(model.fused, [[0.5, 1.5], [0.5, 1.5]])


def test_path_matches_dense_oracle():
    # u0 - i0 - u1
    graph = make_graph(2, 1, [(0, 0), (1, 0)])
    adjacency = normalized_adjacency(graph)
    dense = dense_normalized(graph)
    assert np.allclose(adjacency.toarray(), dense, atol=1e-12)

    base = np.random.default_rng(2).normal(size=(3, 4))
    model = EmbeddingModel(2, 1, 4, layers=2, base=base)
    model.refresh(adjacency)
    expected = (base + dense @ base + dense @ dense @ base) / 3
    assert np.allclose(model.fused, expected, atol=1e-12)


def test_isolated_node_keeps_a_scaled_base(toy_graph):
    adjacency = normalized_adjacency(toy_graph)
    # i5 has exposures only
    assert adjacency[toy_graph.item_node(5)].nnz == 0

    base = np.ones((toy_graph.n_nodes, 2))
    model = EmbeddingModel(toy_graph.n_users, toy_graph.n_items, 2, layers=3, base=base)
    model.refresh(adjacency)
    assert np.allclose(model.fused[toy_graph.item_node(5)], 0.25)


def test_fuse_is_a_mean():
    layers = [np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]), np.array([[5.0, 0.0]])]
    assert np.allclose(EmbeddingModel.fuse(layers), [[3.0, 2.0]])


def test_propagation_is_linear(toy_graph):
    adjacency = normalized_adjacency(toy_graph)
    model = EmbeddingModel(toy_graph.n_users, toy_graph.n_items, 3, layers=2)
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(2, toy_graph.n_nodes, 3))

    def fused(base):
        return model.fuse(model.propagate(adjacency, base))

    assert np.allclose(fused(2.0 * x - 0.5 * y), 2.0 * fused(x) - 0.5 * fused(y), atol=1e-12)


def test_score():
    model = EmbeddingModel(1, 2, 2, layers=0, base=[[1.0, 2.0], [3.0, 4.0], [0.0, -1.0]])
    model.refresh(sp.identity(3, format="csr"))
    assert model.score(0, 0) == 11.0
    assert model.score_items(0, [1, 0]).tolist() == [-2.0, 11.0]
    assert model.scores_for_user(0).tolist() == [11.0, -2.0]

    with pytest.raises(ParameterError):
        model.score(1, 0)
    with pytest.raises(ParameterError):
        model.score(0, 2)


def test_stale_cache_is_refused():
    model = EmbeddingModel(1, 1, 2, layers=0)
    model.refresh(sp.identity(2, format="csr"))
    model.apply_gradient(np.ones((2, 2)), lr=0.1)
    with pytest.raises(ParameterError):
        model.score(0, 0)


def test_model_shape_checks():
    with pytest.raises(ParameterError):
        EmbeddingModel(1, 1, 0)
    with pytest.raises(ParameterError):
        EmbeddingModel(1, 1, 2, layers=-1)
    with pytest.raises(ParameterError):
        EmbeddingModel(1, 1, 2, base=np.zeros((3, 2)))


def test_hinge_at_equal_scores():
    graph = make_graph(1, 3, [(0, 0)])
    adjacency = normalized_adjacency(graph)
    model = EmbeddingModel(1, 3, 2, layers=1, base=np.zeros((4, 2)))

    loss, gradient = loss_and_gradient(model, adjacency, [(0, 0, [1, 2])], gamma=0.0)
    assert loss == 0.0
    assert not gradient.any()
    assert hinge_loss(model, adjacency, [(0, 0, [1, 2])], gamma=0.1) == pytest.approx(0.05)


def test_hinge_inactive_when_positive_dominates():
    base = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 0.0]])
    model = EmbeddingModel(1, 2, 2, layers=0, base=base)
    assert hinge_loss(model, sp.identity(3, format="csr"), [(0, 0, [1])], gamma=0.1) == 0.0


def test_active_hinge_gradient_directions():
    # user, positive, negative on one axis; the negative outscores the positive
    base = np.array([[1.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
    model = EmbeddingModel(1, 2, 2, layers=0, base=base)

    loss, gradient = loss_and_gradient(model, sp.identity(3, format="csr"), [(0, 0, [1])], gamma=0.1)
    assert loss == pytest.approx(sigmoid(np.array([1.0]))[0] - sigmoid(np.array([0.5]))[0] + 0.1)
    assert np.all(np.isfinite(gradient))
    assert gradient[1, 0] < 0 < gradient[2, 0]

    model.apply_gradient(gradient, lr=0.5)
    model.refresh(sp.identity(3, format="csr"))
    assert hinge_loss(model, sp.identity(3, format="csr"), [(0, 0, [1])], gamma=0.1) < loss


def test_hinge_is_bounded(toy_graph):
    adjacency = normalized_adjacency(toy_graph)
    rng = np.random.default_rng(9)
    batch = [(0, 0, [2, 5, 4]), (1, 3, [0, 4, 5]), (2, 4, [0, 1, 2])]
    for scale in (0.1, 1.0, 10.0):
        model = EmbeddingModel(toy_graph.n_users, toy_graph.n_items, 4, layers=2, base=scale * rng.normal(size=(9, 4)))
        loss = hinge_loss(model, adjacency, batch, gamma=0.2)
        assert 0.0 <= loss <= len(batch) * 1.2 / 3


def test_hinge_rejects_ragged_batches(toy_graph):
    model = EmbeddingModel(toy_graph.n_users, toy_graph.n_items, 2, layers=1)
    adjacency = normalized_adjacency(toy_graph)
    with pytest.raises(ParameterError):
        loss_and_gradient(model, adjacency, [(0, 0, [2]), (1, 1, [0, 4])], gamma=0.1)
    with pytest.raises(ParameterError):
        loss_and_gradient(model, adjacency, [(0, 0, [])], gamma=0.1)
    assert loss_and_gradient(model, adjacency, [], gamma=0.1)[0] == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    graph = make_graph(2, 2, [(0, 0), (1, 0), (1, 1)])
    adjacency = normalized_adjacency(graph)
    batch = [(0, 0, [1]), (1, 1, [0]), (1, 0, [1])]
    gamma, step = 0.3, 1e-5

    base = np.random.default_rng(seed).normal(scale=0.7, size=(4, 4))
    model = EmbeddingModel(2, 2, 4, layers=1, base=base)

    fused = model.fuse(model.propagate(adjacency))
    for user, pos, (neg,) in batch:
        margin = sigmoid(fused[user] @ fused[2 + neg]) - sigmoid(fused[user] @ fused[2 + pos]) + gamma
        if abs(margin) < 1e-6:
            pytest.skip("too close to the hinge boundary")

    _, analytic = loss_and_gradient(model, adjacency, batch, gamma)
    numeric = np.zeros_like(base)
    for index in np.ndindex(base.shape):
        shifted = base.copy()
        shifted[index] += step
        up = hinge_loss(EmbeddingModel(2, 2, 4, 1, base=shifted), adjacency, batch, gamma)
        shifted[index] -= 2 * step
        down = hinge_loss(EmbeddingModel(2, 2, 4, 1, base=shifted), adjacency, batch, gamma)
        numeric[index] = (up - down) / (2 * step)

    scale = max(np.abs(numeric).max(), 1e-12)
    assert np.abs(analytic - numeric).max() / scale < 1e-4


def test_zero_learning_rate_keeps_parameters(leave_one_out):
    graph, split, sampler = leave_one_out
    config = TrainConfig(epochs=3, batch_size=4, dim=4, layers=1, seed=6,
                         sampler=SamplerConfig(kind="uniform_rns", k=1)).model_copy(update={"lr": 0.0})

    initial = EmbeddingModel(graph.n_users, graph.n_items, 4, 1, rng=np.random.default_rng(6)).base
    result = train(graph, split, config, sampler)
    assert np.array_equal(result.model.base, initial)
    assert len(result.loss_curve) == 3


@pytest.mark.parametrize("seed", range(5))
def test_loss_descends(leave_one_out, seed):
    graph, split, sampler = leave_one_out
    config = TrainConfig(lr=0.01, epochs=5, batch_size=16, dim=8, layers=1, seed=seed,
                         sampler=SamplerConfig(kind="uniform_rns", k=1))

    result = train(graph, split, config, sampler)
    assert result.loss_curve[4] <= result.loss_curve[0]
    assert result.best_epoch == 5
    assert not result.model.stale


@pytest.mark.parametrize("loss, fill", [(float("nan"), 0.0), (1.0, np.inf)])
def test_non_finite_loss_stops_training(leave_one_out, monkeypatch, loss, fill):
    graph, split, sampler = leave_one_out
    config = TrainConfig(epochs=3, batch_size=16, dim=4, layers=1, sampler=SamplerConfig(kind="uniform_rns", k=1))
    monkeypatch.setattr("misc.recommender.loss_and_gradient",
                        lambda model, adjacency, batch, gamma: (loss, np.full_like(model.base, fill)))

    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(graph, split, config, sampler)


def test_training_never_samples_a_click(leave_one_out):
    graph, split, sampler = leave_one_out
    config = TrainConfig(epochs=2, batch_size=3, dim=4, layers=1, sampler=SamplerConfig(kind="uniform_rns", k=1))
    drawn = []
    original = sampler.draw

    def spy(user, k, rng, model):
        negatives = original(user, k, rng, model)
        drawn.append((user, negatives))
        return negatives

    sampler.draw = spy
    train(graph, split, config, sampler)
    assert drawn
    assert all(negatives == [user] for user, negatives in drawn)


def test_early_stopping_keeps_best_epoch(leave_one_out):
    graph, split, sampler = leave_one_out
    config = TrainConfig(epochs=10, batch_size=16, dim=4, layers=1, patience=2,
                         sampler=SamplerConfig(kind="uniform_rns", k=1))
    scores = iter([1.0, 3.0, 2.0, 2.5, 9.0])

    result = train(graph, split, config, sampler, validate=lambda model: next(scores))
    assert result.best_epoch == 2
    assert result.valid_curve == [1.0, 3.0, 2.0, 2.5]
    assert len(result.loss_curve) == 4


def test_recommend_topk_breaks_ties_by_id():
    model = EmbeddingModel(1, 6, 2, layers=0, base=np.zeros((7, 2)))
    model.refresh(sp.identity(7, format="csr"))
    assert recommend_topk(model, 0, 3, exclude={0, 2}) == [1, 3, 4]
    assert recommend_topk(model, 0, 10, exclude={0, 2}) == [1, 3, 4, 5]
    with pytest.raises(ParameterError):
        recommend_topk(model, 0, 0)


def test_recommend_topk_orders_by_score():
    base = np.array([[1.0], [0.2], [0.9], [0.5], [0.9]])
    model = EmbeddingModel(1, 4, 1, layers=0, base=base)
    model.refresh(sp.identity(5, format="csr"))
    assert recommend_topk(model, 0, 3) == [1, 3, 2]


def test_save_load(tmp_path):
    model = EmbeddingModel(2, 3, 4, layers=2, rng=np.random.default_rng(5))
    model.save(tmp_path / "model.npz", id_map="ids")
    loaded = EmbeddingModel.load(tmp_path / "model.npz")

    assert (loaded.n_users, loaded.n_items, loaded.dim, loaded.layers) == (2, 3, 4, 2)
    assert np.array_equal(loaded.base, model.base)
    assert loaded.stale
