"""Graph data model: radius-cutoff construction, permutation, batching.

Edges are undirected and stored once with ``u < v``, sorted
lexicographically; message passing expands them to both directions at
run time.  All operations are pure value transforms over arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


@dataclass
class AtomGraph:
    """One molecule or material: nodes, undirected edges, features, targets.

    node_features : (N, p) float
    edges         : (m, 2) int, canonical u < v, lexicographically sorted
    edge_features : (m, f) float, f may be 0
    positions     : optional (N, 3) float
    graph_targets : (t,) float graph-level labels (t may be 0)
    node_targets  : optional (N, t_n) float node-level labels
    cutoff        : optional positive radius the edges were built with
    """

    node_features: np.ndarray
    edges: np.ndarray
    edge_features: np.ndarray | None = None
    positions: np.ndarray | None = None
    graph_targets: np.ndarray = field(default_factory=lambda: np.zeros(0))
    node_targets: np.ndarray | None = None
    cutoff: float | None = None

    def __post_init__(self):
        self.node_features = _f64(self.node_features)
        if self.node_features.ndim != 2:
            raise ValidationError("node_features must be 2-D (N, p)")
        n = self.node_features.shape[0]
        if n < 1:
            raise ValidationError("a graph needs at least one node")

        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise ValidationError("edge endpoint out of range")
            if (edges[:, 0] == edges[:, 1]).any():
                bad = int(np.nonzero(edges[:, 0] == edges[:, 1])[0][0])
                raise ValidationError(f"self-loop at edge row {bad}")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        order = np.lexsort((hi, lo))
        edges = np.stack([lo, hi], axis=1)[order]
        if edges.shape[0] > 1 and (np.diff(edges, axis=0) == 0).all(axis=1).any():
            raise ValidationError("duplicate edge pair")
        self.edges = edges

        m = edges.shape[0]
        if self.edge_features is None:
            self.edge_features = np.zeros((m, 0))
        else:
            ef = _f64(self.edge_features)
            if ef.ndim == 1:
                ef = ef[:, None]
            if ef.shape[0] != m:
                raise ValidationError(f"edge_features has {ef.shape[0]} rows for {m} edges")
            self.edge_features = ef[order] if m else ef

        if self.positions is not None:
            self.positions = _f64(self.positions)
            if self.positions.shape != (n, 3):
                raise ValidationError(f"positions must be (N, 3), got {self.positions.shape}")
        self.graph_targets = _f64(self.graph_targets).reshape(-1)
        if self.node_targets is not None:
            self.node_targets = _f64(self.node_targets)
            if self.node_targets.ndim == 1:
                self.node_targets = self.node_targets[:, None]
            if self.node_targets.shape[0] != n:
                raise ValidationError("node_targets row count must equal N")
        if self.cutoff is not None:
            self.cutoff = float(self.cutoff)
            if self.cutoff <= 0:
                raise ValidationError("cutoff must be positive")

    @property
    def node_count(self) -> int:
        return self.node_features.shape[0]

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]


def build_radius_graph(positions: np.ndarray, cutoff: float) -> tuple[np.ndarray, np.ndarray]:
    """All pairs strictly closer than `cutoff`, with their distances.

    Returns ``(edges, distances)`` where edges are canonical (u < v) pairs
    in lexicographic order.  The strict inequality excludes boundary
    pairs.  Non-finite coordinates are rejected with the offending node
    index.
    """
    pos = _f64(positions)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValidationError(f"positions must be (N, 3), got {pos.shape}")
    if pos.shape[0] < 1:
        raise ValidationError("need at least one point")
    finite = np.isfinite(pos).all(axis=1)
    if not finite.all():
        bad = int(np.nonzero(~finite)[0][0])
        raise ValidationError(f"non-finite coordinate at node {bad}")
    cutoff = float(cutoff)
    if cutoff <= 0:
        raise ValidationError("cutoff must be positive")

    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    u, v = np.nonzero(np.triu(dist < cutoff, k=1))
    edges = np.stack([u, v], axis=1).astype(np.int64)
    return edges, dist[u, v]


def permute(graph: AtomGraph, perm) -> AtomGraph:
    """Relabel nodes so node ``i`` becomes node ``perm[i]``.

    Node rows, edge endpoints, positions and node targets move together;
    graph-level targets are untouched.  Edge storage is re-canonicalized.
    """
    perm = np.asarray(perm, dtype=np.int64)
    n = graph.node_count
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValidationError("perm must be a bijection on 0..N-1")

    inverse = np.empty(n, dtype=np.int64)
    inverse[perm] = np.arange(n)
    return AtomGraph(
        node_features=graph.node_features[inverse],
        edges=perm[graph.edges],
        edge_features=graph.edge_features.copy(),
        positions=None if graph.positions is None else graph.positions[inverse],
        graph_targets=graph.graph_targets.copy(),
        node_targets=None if graph.node_targets is None else graph.node_targets[inverse],
        cutoff=graph.cutoff,
    )


@dataclass
class BatchedGraph:
    """Disjoint union of member graphs with per-node graph assignment."""

    node_features: np.ndarray
    edges: np.ndarray
    edge_features: np.ndarray
    graph_index: np.ndarray
    node_offsets: np.ndarray
    edge_offsets: np.ndarray
    positions: np.ndarray | None = None
    graph_targets: np.ndarray | None = None
    node_targets: np.ndarray | None = None

    @property
    def num_graphs(self) -> int:
        return len(self.node_offsets) - 1

    @property
    def node_count(self) -> int:
        return self.node_features.shape[0]


def batch(graphs: list[AtomGraph]) -> BatchedGraph:
    """Disjoint union; node indices are offset per member graph."""
    if not graphs:
        raise ValidationError("cannot batch zero graphs")
    p = graphs[0].node_features.shape[1]
    f = graphs[0].edge_features.shape[1]
    t = graphs[0].graph_targets.shape[0]
    has_pos = graphs[0].positions is not None
    has_node_targets = graphs[0].node_targets is not None
    for i, g in enumerate(graphs):
        if g.node_features.shape[1] != p:
            raise ValidationError(f"graph {i}: node feature width {g.node_features.shape[1]} != {p}")
        if g.edge_features.shape[1] != f:
            raise ValidationError(f"graph {i}: edge feature width {g.edge_features.shape[1]} != {f}")
        if g.graph_targets.shape[0] != t:
            raise ValidationError(f"graph {i}: target arity {g.graph_targets.shape[0]} != {t}")
        if (g.positions is not None) != has_pos or (g.node_targets is not None) != has_node_targets:
            raise ValidationError(f"graph {i}: inconsistent optional fields")

    node_offsets = np.cumsum([0] + [g.node_count for g in graphs])
    edge_offsets = np.cumsum([0] + [g.edge_count for g in graphs])
    graph_index = np.repeat(np.arange(len(graphs)), [g.node_count for g in graphs])
    edges = np.concatenate([g.edges + node_offsets[i] for i, g in enumerate(graphs)], axis=0) \
        if edge_offsets[-1] else np.zeros((0, 2), dtype=np.int64)
    return BatchedGraph(
        node_features=np.concatenate([g.node_features for g in graphs], axis=0),
        edges=edges,
        edge_features=np.concatenate([g.edge_features for g in graphs], axis=0),
        graph_index=graph_index,
        node_offsets=node_offsets,
        edge_offsets=edge_offsets,
        positions=np.concatenate([g.positions for g in graphs], axis=0) if has_pos else None,
        graph_targets=np.stack([g.graph_targets for g in graphs], axis=0) if t else None,
        node_targets=np.concatenate([g.node_targets for g in graphs], axis=0)
        if has_node_targets else None,
    )


def unbatch(batched: BatchedGraph) -> list[AtomGraph]:
    """Recover the member graphs of a batch, field-exact."""
    out = []
    for i in range(batched.num_graphs):
        lo, hi = batched.node_offsets[i], batched.node_offsets[i + 1]
        elo, ehi = batched.edge_offsets[i], batched.edge_offsets[i + 1]
        out.append(AtomGraph(
            node_features=batched.node_features[lo:hi].copy(),
            edges=batched.edges[elo:ehi] - lo,
            edge_features=batched.edge_features[elo:ehi].copy(),
            positions=None if batched.positions is None else batched.positions[lo:hi].copy(),
            graph_targets=np.zeros(0) if batched.graph_targets is None
            else batched.graph_targets[i].copy(),
            node_targets=None if batched.node_targets is None
            else batched.node_targets[lo:hi].copy(),
        ))
    return out
