"""Learnable blocks: message-passing layer families, global multi-head
attention, the hybrid local+global block, pooling, and the
over-smoothing diagnostic.

All layers are permutation-equivariant and operate on batched node
matrices; graphs in a batch are kept apart through segment indices and,
for attention, a block mask that zeroes cross-graph weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .numerics import (Tensor, add, concat, gather_rows, matmul, mul, relu,
                       segment_max, segment_mean, segment_min, segment_sum,
                       softmax_rows, transpose, uniform_init, parameter)

MPNN_KINDS = ("edge_sum", "multi_agg", "geometric")
AGGREGATORS = ("sum", "mean", "max", "multi")
CROSS_GRAPH_MASK = -1e30

N_RADIAL_CENTERS = 16
ANGULAR_ORDER = 4


class Linear:
    """Dense affine map with optional bias."""

    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int, bias: bool = True):
        self.weight = parameter(uniform_init(rng, (in_dim, out_dim), in_dim, out_dim))
        self.bias = parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        return add(out, self.bias) if self.bias is not None else out

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {f"{prefix}.weight": self.weight}
        if self.bias is not None:
            params[f"{prefix}.bias"] = self.bias
        return params


def _prefixed(prefix: str, parts: dict[str, Tensor]) -> dict[str, Tensor]:
    return {f"{prefix}.{k}": v for k, v in parts.items()}


# -- geometry -----------------------------------------------------------

def radial_basis(distances: np.ndarray, r_max: float,
                 n_centers: int = N_RADIAL_CENTERS) -> np.ndarray:
    """Gaussian expansion of distances with centers uniform on [0, r_max]
    and width equal to the center spacing."""
    if r_max <= 0:
        raise ValidationError("radial basis needs a positive range")
    centers = np.linspace(0.0, r_max, n_centers)
    width = centers[1] - centers[0] if n_centers > 1 else max(r_max, 1.0)
    diff = distances[:, None] - centers[None, :]
    return np.exp(-(diff * diff) / (2.0 * width * width))


def angular_basis(angles: np.ndarray, order: int = ANGULAR_ORDER) -> np.ndarray:
    """Cosine Fourier features cos(k*theta), k = 0..order."""
    k = np.arange(order + 1)
    return np.cos(angles[:, None] * k[None, :])


def edge_geometry(positions: np.ndarray, src: np.ndarray, dst: np.ndarray,
                  include_angles: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distances per directed edge plus (angle, edge-id) triplet arrays.

    For directed edge e = (dst u <- src v) the triplets enumerate every
    other neighbor w of u, with the angle at u between the rays to v and
    to w.  Coincident endpoints make the angle undefined and are
    rejected.
    """
    vec = positions[src] - positions[dst]
    dist = np.sqrt((vec * vec).sum(axis=1))
    if (dist == 0.0).any():
        bad = int(np.nonzero(dist == 0.0)[0][0])
        raise ValidationError(f"coincident points on edge {bad}: angle undefined")
    if not include_angles:
        return dist, np.zeros(0), np.zeros(0, dtype=np.intp)

    neighbors: dict[int, list[int]] = {}
    for v, u in zip(src, dst):
        neighbors.setdefault(int(u), []).append(int(v))
    angle_list: list[float] = []
    edge_ids: list[int] = []
    unit = vec / dist[:, None]
    for e, (v, u) in enumerate(zip(src, dst)):
        ray_uv = unit[e]
        for w in neighbors[int(u)]:
            if w == int(v):
                continue
            ray_uw = positions[w] - positions[int(u)]
            ray_uw = ray_uw / np.linalg.norm(ray_uw)
            cosine = float(np.clip(ray_uv @ ray_uw, -1.0, 1.0))
            angle_list.append(math.acos(cosine))
            edge_ids.append(e)
    return dist, np.asarray(angle_list), np.asarray(edge_ids, dtype=np.intp)


class GeometricEdgeEmbed:
    """Learnable geometric edge representation: a radial term on the edge
    distance plus, optionally, angular terms summed over the receiving
    node's other neighbors."""

    def __init__(self, rng: np.random.Generator, out_dim: int, r_max: float,
                 include_angles: bool = True):
        self.out_dim = out_dim
        self.r_max = r_max
        self.include_angles = include_angles
        self.radial_weight = parameter(uniform_init(rng, (N_RADIAL_CENTERS, out_dim),
                                                    N_RADIAL_CENTERS, out_dim))
        self.angular_weight = parameter(uniform_init(rng, (ANGULAR_ORDER + 1, out_dim),
                                                     ANGULAR_ORDER + 1, out_dim)) \
            if include_angles else None

    def from_basis(self, radial: np.ndarray, angular: np.ndarray,
                   angular_edge_ids: np.ndarray, n_edges: int) -> Tensor:
        out = matmul(Tensor(radial), self.radial_weight)
        if self.angular_weight is not None and angular.shape[0]:
            contrib = matmul(Tensor(angular), self.angular_weight)
            out = add(out, segment_sum(contrib, angular_edge_ids, n_edges))
        return out

    def compute(self, positions: np.ndarray, src: np.ndarray, dst: np.ndarray) -> Tensor:
        dist, angles, edge_ids = edge_geometry(positions, src, dst, self.include_angles)
        return self.from_basis(radial_basis(dist, self.r_max),
                               angular_basis(angles) if angles.size else np.zeros((0, ANGULAR_ORDER + 1)),
                               edge_ids, src.shape[0])

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {f"{prefix}.radial": self.radial_weight}
        if self.angular_weight is not None:
            params[f"{prefix}.angular"] = self.angular_weight
        return params


# -- message passing ------------------------------------------------------

@dataclass
class EdgeData:
    """Directed edge arrays for one batch (each stored edge, both ways)."""

    src: np.ndarray
    dst: np.ndarray
    attr: object               # (n_directed, f) array, or Tensor once embedded
    n_nodes: int
    radial: np.ndarray | None = None
    angular: np.ndarray | None = None
    angular_edge_ids: np.ndarray | None = None

    @property
    def n_directed(self) -> int:
        return self.src.shape[0]


def _aggregate(messages: Tensor, dst: np.ndarray, n_nodes: int, mode: str,
               degrees: np.ndarray) -> Tensor:
    if mode == "sum":
        return segment_sum(messages, dst, n_nodes)
    if mode == "mean":
        return segment_mean(messages, dst, n_nodes)
    if mode == "max":
        return segment_max(messages, dst, n_nodes)
    if mode == "multi":
        parts = [segment_sum(messages, dst, n_nodes),
                 segment_mean(messages, dst, n_nodes),
                 segment_max(messages, dst, n_nodes)]
        scale = np.log1p(degrees)[:, None]
        parts += [mul(p, scale) for p in parts]
        return concat(parts, axis=1)
    raise ValidationError(f"unknown aggregator '{mode}'")


class MpnnLayer:
    """One message-passing layer.

    kind "edge_sum":   messages conditioned on both endpoint states and the
                       edge attributes, sum-aggregated.
    kind "multi_agg":  same messages, aggregated by sum/mean/max with
                       degree scalers, mixed back to width by a linear map.
    kind "geometric":  messages additionally conditioned on a learnable
                       radial(+angular) embedding of the edge geometry.

    The update is a single-hidden-layer MLP on [aggregated ‖ state] with a
    residual connection (projected when the widths differ).  Aggregating
    an empty neighborhood contributes a zero vector.
    """

    def __init__(self, rng: np.random.Generator, kind: str, in_dim: int, out_dim: int,
                 edge_dim: int, aggregator: str | None = None, r_max: float | None = None,
                 include_angles: bool = True):
        if kind not in MPNN_KINDS:
            raise ValidationError(f"unknown mpnn kind '{kind}'")
        self.kind = kind
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.edge_dim = edge_dim
        self.aggregator = aggregator or ("multi" if kind == "multi_agg" else "sum")
        if self.aggregator not in AGGREGATORS:
            raise ValidationError(f"unknown aggregator '{self.aggregator}'")

        self.geo = None
        message_edge_dim = edge_dim
        if kind == "geometric":
            if r_max is None:
                raise ValidationError("geometric layer needs a cutoff radius")
            self.geo = GeometricEdgeEmbed(rng, out_dim, r_max, include_angles)
            message_edge_dim = edge_dim + out_dim
        self.message = Linear(rng, 2 * in_dim + message_edge_dim, out_dim)
        self.mixer = Linear(rng, 6 * out_dim, out_dim) if self.aggregator == "multi" else None
        self.update_hidden = Linear(rng, out_dim + in_dim, out_dim)
        self.update_out = Linear(rng, out_dim, out_dim)
        self.skip = None if in_dim == out_dim else Linear(rng, in_dim, out_dim, bias=False)

    def forward(self, h: Tensor, edges: EdgeData) -> Tensor:
        n = edges.n_nodes
        degrees = np.bincount(edges.dst, minlength=n).astype(np.float64)
        if edges.n_directed:
            attr = edges.attr if isinstance(edges.attr, Tensor) else Tensor(edges.attr)
            pieces = [gather_rows(h, edges.dst), gather_rows(h, edges.src)]
            if self.geo is not None:
                geo_attr = self.geo.from_basis(edges.radial, edges.angular,
                                               edges.angular_edge_ids, edges.n_directed)
                if self.edge_dim:
                    pieces.append(attr)
                pieces.append(geo_attr)
            elif self.edge_dim:
                pieces.append(attr)
            messages = relu(self.message(concat(pieces, axis=1)))
            aggregated = _aggregate(messages, edges.dst, n, self.aggregator, degrees)
            if self.mixer is not None:
                aggregated = self.mixer(aggregated)
        else:
            aggregated = Tensor(np.zeros((n, self.out_dim)))
        hidden = relu(self.update_hidden(concat([aggregated, h], axis=1)))
        out = self.update_out(hidden)
        residual = h if self.skip is None else self.skip(h)
        return add(out, residual)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        params.update(self.message.named_parameters(f"{prefix}.message"))
        if self.mixer is not None:
            params.update(self.mixer.named_parameters(f"{prefix}.mixer"))
        params.update(self.update_hidden.named_parameters(f"{prefix}.update_hidden"))
        params.update(self.update_out.named_parameters(f"{prefix}.update_out"))
        if self.skip is not None:
            params.update(self.skip.named_parameters(f"{prefix}.skip"))
        if self.geo is not None:
            params.update(self.geo.named_parameters(f"{prefix}.geo"))
        return params


# -- attention ------------------------------------------------------------

class MultiHeadAttention:
    """Dense scaled dot-product attention over all node pairs.

    Per head: softmax(Q K^T / sqrt(d_head)) V with d_head = width/heads;
    head outputs are concatenated and projected.  A block mask keeps
    attention within each member graph of a batch.  Projections carry no
    bias.
    """

    def __init__(self, rng: np.random.Generator, width: int, heads: int):
        if heads < 1:
            raise ValidationError("attention needs at least one head")
        if width % heads != 0:
            raise ValidationError(
                f"hidden width {width} is not divisible by {heads} heads: "
                "the per-head width must be an integer")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        d = self.head_dim
        self.w_query = [parameter(uniform_init(rng, (width, d), width, d)) for _ in range(heads)]
        self.w_key = [parameter(uniform_init(rng, (width, d), width, d)) for _ in range(heads)]
        self.w_value = [parameter(uniform_init(rng, (width, d), width, d)) for _ in range(heads)]
        self.w_out = parameter(uniform_init(rng, (width, width), width, width))

    def attention_weights(self, h: Tensor, mask: np.ndarray | None, head: int) -> Tensor:
        q = matmul(h, self.w_query[head])
        k = matmul(h, self.w_key[head])
        logits = mul(matmul(q, transpose(k)), 1.0 / math.sqrt(self.head_dim))
        if mask is not None:
            logits = add(logits, mask)
        return softmax_rows(logits)

    def forward(self, h: Tensor, mask: np.ndarray | None = None) -> Tensor:
        outputs = []
        for b in range(self.heads):
            weights = self.attention_weights(h, mask, b)
            outputs.append(matmul(weights, matmul(h, self.w_value[b])))
        merged = outputs[0] if self.heads == 1 else concat(outputs, axis=1)
        return matmul(merged, self.w_out)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {f"{prefix}.out": self.w_out}
        for b in range(self.heads):
            params[f"{prefix}.head{b}.query"] = self.w_query[b]
            params[f"{prefix}.head{b}.key"] = self.w_key[b]
            params[f"{prefix}.head{b}.value"] = self.w_value[b]
        return params


class HybridBlock:
    """Local message passing and global attention in parallel, fused by a
    one-hidden-layer MLP on the sum of the two branches.  Edge attributes
    pass through unchanged (the local branch does not rewrite them)."""

    def __init__(self, rng: np.random.Generator, mpnn: MpnnLayer, attention: MultiHeadAttention):
        if mpnn.out_dim != attention.width:
            raise ValidationError("local and attention branch widths differ")
        self.mpnn = mpnn
        self.attention = attention
        width = mpnn.out_dim
        self.fuse_hidden = Linear(rng, width, 2 * width)
        self.fuse_out = Linear(rng, 2 * width, width)

    def forward(self, h: Tensor, edges: EdgeData, mask: np.ndarray | None) -> Tensor:
        local = self.mpnn.forward(h, edges)
        attended = self.attention.forward(h, mask)
        fused = add(local, attended)
        return self.fuse_out(relu(self.fuse_hidden(fused)))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        params = {}
        params.update(self.mpnn.named_parameters(f"{prefix}.mpnn"))
        params.update(self.attention.named_parameters(f"{prefix}.attn"))
        params.update(self.fuse_hidden.named_parameters(f"{prefix}.fuse_hidden"))
        params.update(self.fuse_out.named_parameters(f"{prefix}.fuse_out"))
        return params


def attention_mask(graph_index: np.ndarray) -> np.ndarray:
    """Additive mask that confines attention to each member graph."""
    same = graph_index[:, None] == graph_index[None, :]
    return np.where(same, 0.0, CROSS_GRAPH_MASK)


# -- pooling & diagnostics --------------------------------------------------

def pool(h: Tensor, graph_index: np.ndarray, num_graphs: int, mode: str = "mean") -> Tensor:
    """Per-graph reduction of node rows."""
    counts = np.bincount(graph_index, minlength=num_graphs)
    if (counts == 0).any():
        raise ValidationError("cannot pool an empty graph")
    if mode == "mean":
        return segment_mean(h, graph_index, num_graphs)
    if mode == "sum":
        return segment_sum(h, graph_index, num_graphs)
    if mode == "max":
        return segment_max(h, graph_index, num_graphs)
    if mode == "min":
        return segment_min(h, graph_index, num_graphs)
    raise ValidationError(f"unknown pooling mode '{mode}'")


def mean_pairwise_cosine(h: np.ndarray) -> float:
    """Mean cosine similarity over node pairs; zero rows contribute 0."""
    n = h.shape[0]
    if n < 2:
        raise ValidationError("need at least two nodes")
    norms = np.linalg.norm(h, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = h / safe[:, None]
    unit[norms == 0] = 0.0
    sims = unit @ unit.T
    iu = np.triu_indices(n, k=1)
    return float(sims[iu].mean())


def oversmoothing_diagnostic(layer_states: list[np.ndarray]) -> list[float]:
    """Mean pairwise cosine similarity per recorded layer state."""
    return [mean_pairwise_cosine(h) for h in layer_states]


def neighborhood_mean_smoothing(edges: np.ndarray, h0: np.ndarray, steps: int) -> list[np.ndarray]:
    """Repeated averaging over the closed neighborhood (node plus its
    neighbors): the depth-driven smoothing the diagnostic measures."""
    n = h0.shape[0]
    a = np.eye(n)
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    a /= a.sum(axis=1, keepdims=True)
    states = [h0.copy()]
    for _ in range(steps):
        states.append(a @ states[-1])
    return states
