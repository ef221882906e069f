import numpy as np
import pytest

from angadapt.haar import Forest


def random_forest(rng, n_nodes, rounds, p=0.3, max_level=6):
    """Ragged trees: each round subdivides a random subset of leaves."""
    f = Forest.uniform(n_nodes, 0, max_level=max_level)
    for _ in range(rounds):
        ok = np.flatnonzero(f.leaf_level < max_level)
        pick = ok[rng.random(ok.size) < p]
        if pick.size:
            f = f.refine(pick)
    return f


def z_symmetric_forest(rng, n_nodes, rounds, p=0.3):
    """Ragged trees that are mirror images of themselves under mu -> -mu."""
    f = Forest.uniform(n_nodes, 0)
    for _ in range(rounds):
        upper = np.flatnonzero(f.leaf_bounds[2] >= 0)
        pick = upper[rng.random(upper.size) < p]
        if pick.size:
            f = f.refine(pick)
    m = f.mirrored_mu()
    return Forest(
        n_nodes,
        np.concatenate([f.sub_node, m.sub_node]),
        np.concatenate([f.sub_key, m.sub_key]),
        np.concatenate([f.sub_level, m.sub_level]),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
