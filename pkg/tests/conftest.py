import numpy as np
import pytest

from hypothesis import strategies as st

from misc.graph import InteractionGraph
from misc.models.experiment import ExperimentConfig, SyntheticSpec
from misc.synthetic import generate_synthetic


def make_graph(n_users: int, n_items: int, clicks, exposures=None) -> InteractionGraph:
    return InteractionGraph(
        [f"u{u}" for u in range(n_users)], [f"i{i}" for i in range(n_items)], clicks, exposures or {}
    )


@st.composite
def bipartite_graphs(draw, max_users: int = 12, max_items: int = 15, exposures: bool = False):
    n_users = draw(st.integers(1, max_users))
    n_items = draw(st.integers(1, max_items))
    pairs = st.tuples(st.integers(0, n_users - 1), st.integers(0, n_items - 1))
    clicks = draw(st.sets(pairs, max_size=n_users * n_items // 2 + 1))

    exposed = {}
    if exposures:
        shown = draw(st.sets(pairs, max_size=n_users * n_items // 3 + 1)) - clicks
        exposed = {pair: draw(st.integers(1, 3)) for pair in sorted(shown)}

    return make_graph(n_users, n_items, clicks, exposed)


@pytest.fixture
def chain_graph() -> InteractionGraph:
    # u0 - i0 - u1 - i1
    return make_graph(2, 2, [(0, 0), (1, 0), (1, 1)])


@pytest.fixture
def star_graph() -> InteractionGraph:
    # u0 clicked every item, nobody else did
    return make_graph(1, 4, [(0, i) for i in range(4)])


@pytest.fixture
def toy_graph() -> InteractionGraph:
    """
    Three users over six items with exposures:

    u0 clicks i0 i1, exposed to i3 (twice) and i4
    u1 clicks i1 i2 i3
    u2 clicks i3 i4, exposed to i5
    """

    return make_graph(
        3, 6,
        [(0, 0), (0, 1), (1, 1), (1, 2), (1, 3), (2, 3), (2, 4)],
        {(0, 3): 2, (0, 4): 1, (2, 5): 1},
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0xC0FFEE)


@pytest.fixture(scope="session")
def small_spec() -> SyntheticSpec:
    return SyntheticSpec(users=40, items=60, communities=4, intra_probability=0.3, cross_probability=0.01,
                         exposure_rate=0.2, seed=3)


@pytest.fixture(scope="session")
def small_synthetic(small_spec) -> InteractionGraph:
    return generate_synthetic(small_spec)


@pytest.fixture
def small_config(tmp_path, small_spec) -> ExperimentConfig:
    return ExperimentConfig.model_validate({
        "dataset": {"synthetic": small_spec.model_dump()},
        "khop": 8,
        "train": {"epochs": 3, "batch_size": 64, "dim": 8, "layers": 1, "sampler": {"k": 2}},
        "eval": {"k": 10, "seeds": [0, 1]},
        "out": str(tmp_path / "out"),
    })
