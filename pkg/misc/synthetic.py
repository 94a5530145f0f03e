import logging as log

import numpy as np

from misc.graph import InteractionGraph
from misc.models.experiment import SyntheticSpec


def community_probabilities(spec: SyntheticSpec, user_community: np.ndarray, item_community: np.ndarray):
    """
    Click and exposure probability of every (user, item) pair.

    Returns:
        tuple[np.ndarray, np.ndarray]: users x items click and exposure probabilities.
    """

    same = user_community[:, None] == item_community[None, :]
    click = np.where(same, spec.intra_probability, spec.cross_probability)
    exposure = np.where(same, spec.exposure_rate, spec.exposure_rate / spec.communities)
    return click, exposure


def generate_synthetic(spec: SyntheticSpec) -> InteractionGraph:
    """
    Planted-community bipartite graph.

    Users and items are spread evenly over the communities. A pair clicks with the
    intra- or cross-community probability. Unclicked pairs are exposed with
    probability ``exposure_rate`` inside the user's community and
    ``exposure_rate / communities`` outside it, each exposure recorded 1 + Poisson(1)
    times.

    Args:
        spec (SyntheticSpec): Generator parameters.

    Returns:
        InteractionGraph: Graph with raw ids ``u<index>`` and ``i<index>``.
    """

    rng = np.random.default_rng(spec.seed)
    user_community = rng.permutation(np.arange(spec.users) % spec.communities)
    item_community = rng.permutation(np.arange(spec.items) % spec.communities)

    click_p, exposure_p = community_probabilities(spec, user_community, item_community)
    clicked = rng.random(click_p.shape) < click_p
    exposed = (rng.random(exposure_p.shape) < exposure_p) & ~clicked
    multiplicity = 1 + rng.poisson(1.0, size=exposure_p.shape)

    clicks = list(zip(*(axis.tolist() for axis in np.nonzero(clicked))))
    exposures = {
        (u, i): int(multiplicity[u, i]) for u, i in zip(*(axis.tolist() for axis in np.nonzero(exposed)))
    }

    graph = InteractionGraph(
        [f"u{u}" for u in range(spec.users)], [f"i{i}" for i in range(spec.items)], clicks, exposures
    )
    log.info(f"Generated {graph} with {spec.communities} communities (seed {spec.seed})")

    return graph
