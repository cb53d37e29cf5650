"""Independent brute-force oracles used to cross-check the package.

These deliberately take different algorithmic routes from the
implementations: shortest paths by exhaustive pruned DFS enumeration,
betweenness by counting enumerated shortest paths, eigenvector scores by
a dense eigendecomposition, PageRank by a direct linear solve, core
numbers by subset enumeration, and gradients by central finite
differences.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from atomgnn.numerics import Tensor, backward, zero_grads


def adjacency_sets(n, edges):
    nbrs = [set() for _ in range(n)]
    for u, v in edges:
        nbrs[int(u)].add(int(v))
        nbrs[int(v)].add(int(u))
    return nbrs


def shortest_paths_enumerated(n, edges):
    """All shortest paths between every ordered pair, by pruned DFS.

    Returns (dist, paths) where paths[s][t] is the list of node tuples.
    """
    nbrs = adjacency_sets(n, edges)
    dist = np.full((n, n), -1, dtype=int)
    # breadth-first distances first, so the DFS can prune hard
    for s in range(n):
        dist[s, s] = 0
        frontier = [s]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for w in nbrs[u]:
                    if dist[s, w] < 0:
                        dist[s, w] = d
                        nxt.append(w)
            frontier = nxt
    paths = [[[] for _ in range(n)] for _ in range(n)]
    for s in range(n):
        for t in range(n):
            if s == t or dist[s, t] < 0:
                continue
            budget = dist[s, t]
            stack = [(s, (s,))]
            while stack:
                u, path = stack.pop()
                if u == t:
                    paths[s][t].append(path)
                    continue
                if len(path) - 1 >= budget:
                    continue
                for w in nbrs[u]:
                    if dist[s, w] == len(path) and dist[w, t] == budget - len(path):
                        stack.append((w, path + (w,)))
    return dist, paths


def betweenness_by_enumeration(n, edges):
    """Normalized node betweenness from full shortest-path enumeration."""
    if n < 3:
        return np.zeros(n)
    _, paths = shortest_paths_enumerated(n, edges)
    score = np.zeros(n)
    for s in range(n):
        for t in range(s + 1, n):
            plist = paths[s][t]
            if not plist:
                continue
            sigma = len(plist)
            for p in plist:
                for v in p[1:-1]:
                    score[v] += 1.0 / sigma
    return score / ((n - 1) * (n - 2) / 2.0)


def edge_betweenness_by_enumeration(n, edges):
    """Normalized edge betweenness from full shortest-path enumeration."""
    edge_index = {(int(u), int(v)): i for i, (u, v) in enumerate(edges)}
    score = np.zeros(len(edges))
    _, paths = shortest_paths_enumerated(n, edges)
    for s in range(n):
        for t in range(s + 1, n):
            plist = paths[s][t]
            if not plist:
                continue
            sigma = len(plist)
            for p in plist:
                for a, b in zip(p[:-1], p[1:]):
                    key = (a, b) if a < b else (b, a)
                    score[edge_index[key]] += 1.0 / sigma
    return score / (n * (n - 1) / 2.0)


def closeness_from_distances(dist):
    n = dist.shape[0]
    if n == 1:
        return np.zeros(1)
    return (n - 1) / dist.sum(axis=1).astype(float)


def harmonic_from_distances(dist):
    n = dist.shape[0]
    out = np.zeros(n)
    for u in range(n):
        out[u] = sum(1.0 / dist[u, v] for v in range(n) if v != u)
    return out


def eigenvector_centrality_dense(n, edges):
    a = np.zeros((n, n))
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    w, vecs = np.linalg.eigh(a)
    top = vecs[:, -1]
    if top.sum() < 0:
        top = -top
    return np.abs(top)


def pagerank_linear_solve(n, edges, damping=0.85):
    a = np.zeros((n, n))
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    deg = a.sum(axis=1)
    m = np.zeros((n, n))
    for u in range(n):
        if deg[u] > 0:
            m[:, u] = a[:, u] / deg[u]
        else:
            m[:, u] = 1.0 / n
    return np.linalg.solve(np.eye(n) - damping * m, np.full(n, (1 - damping) / n))


def clustering_by_triples(n, edges):
    nbrs = adjacency_sets(n, edges)
    out = np.zeros(n)
    for u in range(n):
        d = len(nbrs[u])
        if d < 2:
            continue
        links = sum(1 for v, w in itertools.combinations(sorted(nbrs[u]), 2) if w in nbrs[v])
        out[u] = 2.0 * links / (d * (d - 1))
    return out


def core_numbers_by_subsets(n, edges):
    """Core number via subset enumeration: the max over induced subgraphs
    containing u of the minimum induced degree.  Exponential; N <= 10."""
    nbrs = adjacency_sets(n, edges)
    best = np.zeros(n, dtype=int)
    nodes = list(range(n))
    for size in range(1, n + 1):
        for subset in itertools.combinations(nodes, size):
            sset = set(subset)
            mindeg = min(len(nbrs[u] & sset) for u in subset)
            for u in subset:
                if mindeg > best[u]:
                    best[u] = mindeg
    return best


def jaccard_adamic_preferential(n, edges):
    """(jaccard, adamic-adar, preferential) per edge via matrix arithmetic."""
    a = np.zeros((n, n))
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    deg = a.sum(axis=1)
    common_counts = a @ a
    out = np.zeros((len(edges), 3))
    for i, (u, v) in enumerate(edges):
        common = np.nonzero(a[u] * a[v])[0]
        union = deg[u] + deg[v] - common_counts[u, v]
        out[i, 0] = common_counts[u, v] / union if union else 0.0
        out[i, 1] = sum(1.0 / math.log(deg[w]) for w in common)
        out[i, 2] = deg[u] * deg[v]
    return out


def finite_difference_gradients(params, loss_fn, step=1e-5):
    """Central finite differences of a scalar loss w.r.t. every parameter."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_fn().item()
            flat[i] = keep - step
            down = loss_fn().item()
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def assert_gradients_match(params, loss_fn, rel_tol=1e-4, step=1e-5, noise_floor=5e-9):
    """Backward gradients vs central differences: relative error per entry
    with denominator max(1e-8, |fd|).

    Entries whose absolute disagreement sits below `noise_floor` pass
    outright: central differences at this step size carry truncation and
    rounding noise of a few 1e-10, so demanding tighter absolute
    agreement on vanishing gradients would fail even an exact gradient.
    """
    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    numeric = finite_difference_gradients(params, loss_fn, step=step)
    for name in params:
        diff = np.abs(analytic[name] - numeric[name])
        rel = diff / np.maximum(1e-8, np.abs(numeric[name]))
        bad = (rel > rel_tol) & (diff > noise_floor)
        assert not bad.any(), (
            f"gradient mismatch for {name}: rel err {float(rel[bad].max()):.3e}, "
            f"abs err {float(diff[bad].max()):.3e}")


def random_connected_graph(rng, n, p=0.5, max_tries=500):
    """Erdos-Renyi edges, resampled until connected."""
    for _ in range(max_tries):
        pairs = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
        if n == 1 or _connected(n, pairs):
            return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    raise RuntimeError("could not sample a connected graph")


def _connected(n, pairs):
    nbrs = adjacency_sets(n, np.asarray(pairs).reshape(-1, 2))
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for w in nbrs[u]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == n
