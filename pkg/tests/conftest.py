"""Shared fixtures: seeded random graph factories."""

import numpy as np
import pytest

from atomgnn.graphs import AtomGraph, build_radius_graph

from oracles import random_connected_graph


def make_random_graph(rng, n=None, n_min=4, n_max=9, feat_dim=3, edge_dim=2,
                      with_positions=False, with_graph_target=True,
                      node_target_dim=0, edge_p=0.5):
    """A connected random graph whose first feature column is a valid
    atomic number (so the chemical channel can always be computed)."""
    n = n if n is not None else int(rng.integers(n_min, n_max + 1))
    edges = random_connected_graph(rng, n, p=edge_p)
    x = rng.normal(size=(n, feat_dim))
    x[:, 0] = rng.integers(1, 21, size=n)
    return AtomGraph(
        node_features=x,
        edges=edges,
        edge_features=rng.normal(size=(edges.shape[0], edge_dim)),
        positions=rng.normal(size=(n, 3)) if with_positions else None,
        graph_targets=rng.normal(size=1) if with_graph_target else np.zeros(0),
        node_targets=rng.normal(size=(n, node_target_dim)) if node_target_dim else None,
    )


def make_geometric_graph(rng, n=None, n_min=5, n_max=10, cutoff=1.0, box=2.0,
                         target_dim=1, max_tries=200):
    """A connected radius-cutoff point cloud with distances on the edges."""
    n = n if n is not None else int(rng.integers(n_min, n_max + 1))
    for _ in range(max_tries):
        pos = rng.uniform(0, box, size=(n, 3))
        edges, dist = build_radius_graph(pos, cutoff)
        if edges.shape[0] >= n - 1:
            from oracles import _connected
            if _connected(n, edges.tolist()):
                break
    else:
        raise RuntimeError("no connected geometric graph found")
    x = np.ones((n, 1))
    return AtomGraph(node_features=x, edges=edges, edge_features=dist[:, None],
                     positions=pos, graph_targets=rng.normal(size=target_dim),
                     cutoff=cutoff)


def make_encodable_graph(rng, lpe_dim=2, max_tries=100, **kwargs):
    """A random graph whose encodings are valid for the given spectral
    dimension (degenerate-spectrum samples are re-drawn)."""
    from atomgnn.encoders import compute_encodings
    for _ in range(max_tries):
        g = make_random_graph(rng, **kwargs)
        if compute_encodings(g, lpe_dim).valid:
            return g
    raise RuntimeError("no encodable graph found")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
