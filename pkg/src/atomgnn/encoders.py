"""Per-graph feature channels: chemical descriptors, node/edge topological
encodings, Laplacian positional encodings, and split-wise standardization.

Channels are computed on the undirected, unweighted graph.  Graphs whose
encodings cannot be computed cleanly (disconnected, too small for the
requested spectral dimension, near-degenerate Laplacian spectrum, any
non-finite value) are flagged invalid and dropped by the pipeline rather
than silently patched.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ValidationError
from .graphs import AtomGraph
from .numerics import sym_eigendecompose

NODE_ENCODING_COLUMNS = (
    "degree", "closeness", "betweenness", "eigenvector_centrality", "pagerank",
    "clustering", "k_core", "harmonic_centrality", "eccentricity",
)
EDGE_ENCODING_COLUMNS = (
    "edge_betweenness", "jaccard", "adamic_adar", "preferential_attachment",
)
ELEMENT_PROPERTY_COLUMNS = (
    "atomic_weight", "group", "period", "block", "valence_electrons",
    "covalent_radius_pm", "vdw_radius_pm", "electronegativity_pauling",
    "electronegativity_allen", "electron_affinity_kj_mol",
    "ionization_energy_kj_mol", "melting_point_k", "boiling_point_k",
    "density_g_cm3", "atomic_volume_cm3_mol",
)

PAGERANK_DAMPING = 0.85
_SPECTRAL_GAP_FLOOR = 1e-9


class EncodingInvalid(Exception):
    """A graph whose encodings must be discarded, with the reason."""


_DEFAULT_TABLE: "ElementTable | None" = None


@dataclass
class ElementTable:
    """Numeric property rows for atomic numbers 1..86, fixed column order."""

    atomic_numbers: np.ndarray
    properties: np.ndarray  # (n_elements, 15)

    def __post_init__(self):
        if self.properties.shape != (len(self.atomic_numbers), len(ELEMENT_PROPERTY_COLUMNS)):
            raise ValidationError("element table shape mismatch")
        if not np.isfinite(self.properties).all():
            raise ValidationError("element table contains non-finite entries")

    @classmethod
    def load_default(cls) -> "ElementTable":
        global _DEFAULT_TABLE
        if _DEFAULT_TABLE is None:
            text = resources.files("atomgnn").joinpath("element_table.csv").read_text()
            rows = list(csv.reader(text.strip().split("\n")))
            header = rows[0]
            if tuple(header[1:]) != ELEMENT_PROPERTY_COLUMNS:
                raise ValidationError("element table header does not match expected columns")
            z = np.array([int(r[0]) for r in rows[1:]])
            props = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
            _DEFAULT_TABLE = cls(atomic_numbers=z, properties=props)
        return _DEFAULT_TABLE

    def row(self, z: int) -> np.ndarray:
        idx = np.nonzero(self.atomic_numbers == z)[0]
        if idx.size == 0:
            raise ValidationError(f"unsupported atomic number {z}")
        return self.properties[idx[0]]


def chemical_descriptors(atomic_numbers, table: ElementTable | None = None) -> np.ndarray:
    """Per-atom property rows looked up by atomic number, (N, 15)."""
    table = table or ElementTable.load_default()
    zs = np.asarray(atomic_numbers)
    out = np.empty((zs.shape[0], len(ELEMENT_PROPERTY_COLUMNS)))
    for i, z in enumerate(zs):
        zi = int(round(float(z)))
        idx = np.nonzero(table.atomic_numbers == zi)[0]
        if idx.size == 0:
            raise ValidationError(f"unsupported atomic number {zi} at node {i}")
        out[i] = table.properties[idx[0]]
    return out


# -- basic graph machinery -------------------------------------------------

def _adjacency(n: int, edges: np.ndarray) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        adj[int(u)].append(int(v))
        adj[int(v)].append(int(u))
    return adj


def _bfs_all_pairs(n: int, adj: list[list[int]]) -> np.ndarray:
    """Unweighted shortest-path lengths; -1 where unreachable."""
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for w in adj[u]:
                if dist[s, w] < 0:
                    dist[s, w] = dist[s, u] + 1
                    queue.append(w)
    return dist


def _is_connected(n: int, adj: list[list[int]]) -> bool:
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if not seen[w]:
                seen[w] = True
                count += 1
                queue.append(w)
    return count == n


def _canonical_sum(values) -> float:
    """Sum a multiset of floats in value order, so the result does not
    depend on node labeling (needed for bit-exact relabeling invariance)."""
    arr = np.sort(np.asarray(values, dtype=np.float64))
    return float(arr.sum())


def _brandes(n: int, adj: list[list[int]], edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized node and edge betweenness (each unordered pair once).

    Pair dependencies are accumulated in canonical (sorted-value) order at
    every reduction, which makes the result independent of node labels at
    the bit level.
    """
    edge_id = {(int(u), int(v)): i for i, (u, v) in enumerate(edges)}
    node_terms: list[list[float]] = [[] for _ in range(n)]
    edge_terms: list[list[float]] = [[] for _ in range(edges.shape[0])]
    for s in range(n):
        preds: list[list[int]] = [[] for _ in range(n)]
        succs: list[list[int]] = [[] for _ in range(n)]
        sigma = np.zeros(n)
        sigma[s] = 1.0
        dist = np.full(n, -1, dtype=np.int64)
        dist[s] = 0
        order: list[int] = []
        queue = deque([s])
        while queue:
            u = queue.popleft()
            order.append(u)
            for w in adj[u]:
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    queue.append(w)
                if dist[w] == dist[u] + 1:
                    sigma[w] += sigma[u]
                    preds[w].append(u)
                    succs[u].append(w)
        delta = np.zeros(n)
        for u in reversed(order):
            shares = [sigma[u] / sigma[w] * (1.0 + delta[w]) for w in succs[u]]
            delta[u] = _canonical_sum(shares) if shares else 0.0
            for w, share in zip(succs[u], shares):
                key = (u, w) if u < w else (w, u)
                edge_terms[edge_id[key]].append(share)
            if u != s and delta[u]:
                node_terms[u].append(delta[u])
    node_bc = np.array([_canonical_sum(t) if t else 0.0 for t in node_terms])
    edge_bc = np.array([_canonical_sum(t) if t else 0.0 for t in edge_terms])
    return node_bc / 2.0, edge_bc / 2.0


def _eigenvector_centrality(n: int, adj: list[list[int]]) -> np.ndarray:
    """Power iteration on A + I (the shift suppresses bipartite
    oscillation), converged well past the 1e-10 contract.  Every
    reduction is a canonical sum, so the scores are bit-identical under
    node relabeling."""
    x = np.full(n, 1.0 / math.sqrt(n))
    for _ in range(100000):
        nxt = np.array([_canonical_sum([x[w] for w in adj[u]] + [x[u]]) for u in range(n)])
        nxt /= math.sqrt(_canonical_sum(nxt * nxt))
        change = math.sqrt(_canonical_sum((nxt - x) ** 2))
        x = nxt
        if change < 1e-14:
            break
    return np.abs(x)


def _pagerank(n: int, adj: list[list[int]]) -> np.ndarray:
    deg = np.array([len(nb) for nb in adj], dtype=np.float64)
    x = np.full(n, 1.0 / n)
    base = (1.0 - PAGERANK_DAMPING) / n
    for _ in range(100000):
        dangling = PAGERANK_DAMPING * _canonical_sum(x[deg == 0]) / n if (deg == 0).any() else 0.0
        nxt = np.array([
            base + dangling + PAGERANK_DAMPING *
            _canonical_sum([x[w] / deg[w] for w in adj[u]])
            for u in range(n)
        ])
        change = _canonical_sum(np.abs(nxt - x))
        x = nxt
        if change < 1e-14:
            break
    return x


def _core_numbers(n: int, adj: list[list[int]]) -> np.ndarray:
    deg = np.array([len(nb) for nb in adj], dtype=np.int64)
    core = deg.copy()
    alive = np.ones(n, dtype=bool)
    cur = deg.copy()
    for _ in range(n):
        if not alive.any():
            break
        k = cur[alive].min()
        while True:
            victims = np.nonzero(alive & (cur <= k))[0]
            if victims.size == 0:
                break
            for u in victims:
                core[u] = k
                alive[u] = False
                for w in adj[u]:
                    if alive[w]:
                        cur[w] -= 1
    return core


def node_topological_encodings(graph: AtomGraph) -> np.ndarray:
    """The nine classic centrality/structure measures, (N, 9).

    Column order: degree, closeness, betweenness, eigenvector centrality,
    PageRank, clustering coefficient, k-core number, harmonic centrality,
    eccentricity.  Betweenness is normalized by (N-1)(N-2)/2 for N >= 3;
    PageRank uses damping 0.85.  Disconnected graphs are invalid
    (eccentricity and closeness are undefined).
    """
    n = graph.node_count
    adj = _adjacency(n, graph.edges)
    if not _is_connected(n, adj):
        raise EncodingInvalid("node encodings: graph is disconnected")

    deg = np.array([len(nb) for nb in adj], dtype=np.float64)
    dist = _bfs_all_pairs(n, adj)
    dist_f = dist.astype(np.float64)

    if n == 1:
        closeness = np.zeros(1)
        harmonic = np.zeros(1)
        eccentricity = np.zeros(1)
    else:
        totals = dist_f.sum(axis=1)  # integer-valued, exact in any order
        closeness = (n - 1) / totals
        harmonic = np.array([_canonical_sum([1.0 / dist_f[u, v] for v in range(n) if v != u])
                             for u in range(n)])
        eccentricity = dist_f.max(axis=1)

    node_bc, _ = _brandes(n, adj, graph.edges)
    betweenness = node_bc / ((n - 1) * (n - 2) / 2.0) if n >= 3 else np.zeros(n)

    neighbor_sets = [set(nb) for nb in adj]
    clustering = np.zeros(n)
    for u in range(n):
        d = len(adj[u])
        if d >= 2:
            links = sum(1 for i, v in enumerate(adj[u]) for w in adj[u][i + 1:]
                        if w in neighbor_sets[v])
            clustering[u] = 2.0 * links / (d * (d - 1))

    cols = np.stack([
        deg, closeness, betweenness, _eigenvector_centrality(n, adj),
        _pagerank(n, adj), clustering, _core_numbers(n, adj).astype(np.float64),
        harmonic, eccentricity,
    ], axis=1)
    return cols


def edge_topological_encodings(graph: AtomGraph) -> np.ndarray:
    """Edge betweenness, Jaccard, Adamic-Adar, preferential attachment, (m, 4).

    Edge betweenness is normalized by N(N-1)/2.  A common neighbor of
    degree 1 would put ln(1) = 0 in the Adamic-Adar denominator; that
    cannot arise in a simple graph but is guarded as an invalidity.
    """
    n = graph.node_count
    m = graph.edge_count
    if m == 0:
        return np.zeros((0, 4))
    adj = _adjacency(n, graph.edges)
    neighbor_sets = [set(nb) for nb in adj]
    deg = np.array([len(nb) for nb in adj], dtype=np.float64)

    _, edge_bc = _brandes(n, adj, graph.edges)
    edge_bc = edge_bc / (n * (n - 1) / 2.0)

    out = np.zeros((m, 4))
    out[:, 0] = edge_bc
    for i, (u, v) in enumerate(graph.edges):
        u, v = int(u), int(v)
        common = neighbor_sets[u] & neighbor_sets[v]
        union = neighbor_sets[u] | neighbor_sets[v]
        out[i, 1] = len(common) / len(union) if union else 0.0
        if any(deg[w] <= 1.0 for w in common):
            raise EncodingInvalid("edge encodings: common neighbor of degree 1 in Adamic-Adar")
        out[i, 2] = _canonical_sum([1.0 / math.log(deg[w]) for w in common]) if common else 0.0
        out[i, 3] = deg[u] * deg[v]
    return out


def laplacian_matrix(graph: AtomGraph, normalized: bool = False) -> np.ndarray:
    n = graph.node_count
    a = np.zeros((n, n))
    for u, v in graph.edges:
        a[u, v] = a[v, u] = 1.0
    deg = a.sum(axis=1)
    if not normalized:
        return np.diag(deg) - a
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    return np.eye(n) - inv_sqrt[:, None] * a * inv_sqrt[None, :]


def laplacian_pe(graph: AtomGraph, dim: int, normalized: bool = False) -> np.ndarray:
    """Eigenvectors of the graph Laplacian for the `dim` smallest strictly
    positive eigenvalues, ascending, unit-norm, sign-fixed.

    The sign convention makes the entry of largest absolute value positive
    (ties broken by lowest node index), which pins the otherwise arbitrary
    eigenvector orientation.  Graphs that are disconnected, have fewer
    than `dim` nontrivial eigenvalues, or have a near-degenerate spectrum
    around the selected window (gap < 1e-9) are flagged for omission.
    """
    if dim < 1:
        raise ValidationError("spectral dimension must be positive")
    n = graph.node_count
    if n < dim + 1:
        raise EncodingInvalid(f"spectral encoding: graph has {n} nodes, needs at least {dim + 1}")
    adj = _adjacency(n, graph.edges)
    if not _is_connected(n, adj):
        raise EncodingInvalid("spectral encoding: graph is disconnected")

    eigenvalues, vectors = sym_eigendecompose(laplacian_matrix(graph, normalized))
    positive = np.nonzero(eigenvalues > _SPECTRAL_GAP_FLOOR)[0]
    if positive.size < dim:
        raise EncodingInvalid("spectral encoding: not enough nontrivial eigenvalues")
    take = positive[:dim]
    window = eigenvalues[positive[:min(dim + 1, positive.size)]]
    if np.diff(window).size and np.diff(window).min() < _SPECTRAL_GAP_FLOOR:
        raise EncodingInvalid("spectral encoding: near-degenerate eigenvalues in selected window")

    cols = vectors[:, take].copy()
    for j in range(cols.shape[1]):
        col = cols[:, j]
        col /= np.linalg.norm(col)
        top = np.abs(col).max()
        anchor = int(np.nonzero(np.abs(col) >= top - 1e-12)[0][0])
        if col[anchor] < 0:
            col *= -1.0
        cols[:, j] = col
    return cols


@dataclass
class ColumnStats:
    """Per-column mean and (clamped) standard deviation of a training split."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        return (matrix - self.mean) / self.std

    def invert(self, matrix: np.ndarray) -> np.ndarray:
        return matrix * self.std + self.mean


def standardize(matrix: np.ndarray, stats: ColumnStats | None = None) -> tuple[np.ndarray, ColumnStats]:
    """Columnwise (x - mean) / std with population variance and a 1e-8 std
    floor; when `stats` is given the input is treated as a held-out split
    and the training statistics are reused."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if stats is None:
        if matrix.shape[0] == 0:
            stats = ColumnStats(np.zeros(matrix.shape[1]), np.ones(matrix.shape[1]))
        else:
            mean = matrix.mean(axis=0)
            std = np.maximum(matrix.std(axis=0), 1e-8)
            stats = ColumnStats(mean, std)
    return stats.apply(matrix), stats


@dataclass
class EncodingBundle:
    """All computed channels of one graph plus validity state."""

    chem: np.ndarray | None = None          # (N, 15)
    node_topo: np.ndarray | None = None     # (N, 9)
    edge_topo: np.ndarray | None = None     # (m, 4)
    lap_pe: np.ndarray | None = None        # (N, dim)
    valid: bool = True
    reason: str | None = None
    stats: dict = field(default_factory=dict)

    def channels(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in (("chem", self.chem), ("node_topo", self.node_topo),
                                  ("edge_topo", self.edge_topo), ("lap_pe", self.lap_pe))
                if v is not None}


def validate_encodings(bundle: EncodingBundle) -> bool:
    """Keep/discard decision: discard on any flagged invalidity or any
    non-finite entry, recording the offending channel."""
    if not bundle.valid:
        return False
    for name, value in bundle.channels().items():
        if not np.isfinite(value).all():
            bundle.valid = False
            bundle.reason = f"non-finite value in {name} encodings"
            return False
    return True


def compute_encodings(graph: AtomGraph, lpe_dim: int, *, normalized_laplacian: bool = False,
                      element_table: ElementTable | None = None,
                      atomic_number_column: int = 0) -> EncodingBundle:
    """Compute every channel for one graph; failures flag the bundle
    invalid instead of raising, per the discard policy."""
    bundle = EncodingBundle()
    try:
        zs = np.round(graph.node_features[:, atomic_number_column]).astype(int) \
            if graph.node_features.shape[1] > atomic_number_column else np.ones(graph.node_count, dtype=int)
        bundle.chem = chemical_descriptors(zs, element_table)
        bundle.node_topo = node_topological_encodings(graph)
        bundle.edge_topo = edge_topological_encodings(graph)
        bundle.lap_pe = laplacian_pe(graph, lpe_dim, normalized=normalized_laplacian)
    except (EncodingInvalid, ValidationError) as exc:
        bundle.valid = False
        bundle.reason = str(exc)
        return bundle
    validate_encodings(bundle)
    return bundle


@dataclass
class EncodedDataset:
    """Bundles per graph (aligned by index), fit statistics, discards."""

    bundles: list[EncodingBundle | None]
    stats: dict[str, ColumnStats]
    discarded: list[tuple[int, str]]

    @property
    def kept_indices(self) -> list[int]:
        return [i for i, b in enumerate(self.bundles) if b is not None]


def encode_dataset(graphs: list[AtomGraph], lpe_dim: int, *, train_indices=None,
                   normalized_laplacian: bool = False,
                   element_table: ElementTable | None = None,
                   workers: int = 1) -> EncodedDataset:
    """Encode every graph, standardize channels with training-split
    statistics, and report discards.

    Invalid graphs get a None bundle.  `train_indices` designates the
    rows used to fit the standardization statistics; all splits are then
    transformed with those statistics.
    """
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(
                lambda g: compute_encodings(g, lpe_dim, normalized_laplacian=normalized_laplacian,
                                            element_table=element_table), graphs))
    else:
        raw = [compute_encodings(g, lpe_dim, normalized_laplacian=normalized_laplacian,
                                 element_table=element_table) for g in graphs]

    discarded = [(i, b.reason or "invalid") for i, b in enumerate(raw) if not b.valid]
    bundles: list[EncodingBundle | None] = [b if b.valid else None for b in raw]

    if train_indices is None:
        train_indices = [i for i, b in enumerate(bundles) if b is not None]
    fit_rows = [i for i in train_indices if bundles[i] is not None]

    stats: dict[str, ColumnStats] = {}
    for channel in ("chem", "node_topo", "edge_topo", "lap_pe"):
        train_blocks = [getattr(bundles[i], channel) for i in fit_rows]
        train_blocks = [b for b in train_blocks if b is not None and b.shape[0]]
        if not train_blocks:
            continue
        _, channel_stats = standardize(np.concatenate(train_blocks, axis=0))
        stats[channel] = channel_stats
        for b in bundles:
            if b is None:
                continue
            value = getattr(b, channel)
            if value is not None and value.shape[0]:
                setattr(b, channel, channel_stats.apply(value))
            b.stats[channel] = channel_stats
    return EncodedDataset(bundles=bundles, stats=stats, discarded=discarded)
