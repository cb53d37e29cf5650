"""Model assembly from the two pipeline switches, plus batched forward
passes and checkpoint persistence.

The two booleans select one of four pipelines:

  attention off, encodings off -> plain message passing on raw features
  attention off, encodings on  -> encoder channels + fusion embedder + MPNN
  attention on,  encodings off -> raw ‖ spectral-PE embedder + hybrid blocks
  attention on,  encodings on  -> all channels + embedder + hybrid blocks

With attention enabled the convolution count is the number of hybrid
blocks (they replace plain layers, not wrap them).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .embedder import EdgeEmbedder, NodeEmbedder, node_channel_names, spectral_difference
from .encoders import EncodingBundle
from .errors import ValidationError
from .graphs import AtomGraph
from .layers import (EdgeData, HybridBlock, Linear, MpnnLayer, MultiHeadAttention,
                     angular_basis, attention_mask, edge_geometry, pool, radial_basis,
                     ANGULAR_ORDER)
from .numerics import Tensor

TASKS = ("graph_regression", "node_regression", "graph_classification")


@dataclass
class ModelConfig:
    """One point of the search space plus task plumbing."""

    mpnn_kind: str = "edge_sum"
    num_conv_layers: int = 2
    hidden_dim: int = 16
    edge_embed_dim: int = 0
    attn_heads: int = 0
    use_attention: bool = False
    use_encodings: bool = False
    has_pos: bool = False
    pooling: str = "mean"
    task: str = "graph_regression"
    n_outputs: int = 1
    aggregator: str | None = None

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ValidationError(f"unknown task '{self.task}'")
        if self.num_conv_layers < 1 or self.hidden_dim < 1 or self.n_outputs < 1:
            raise ValidationError("layer count, hidden width and outputs must be positive")
        if self.edge_embed_dim < 0:
            raise ValidationError("edge embedding width cannot be negative")
        if self.use_attention:
            if self.attn_heads <= 0:
                raise ValidationError("attention enabled but head count is not positive")
            if self.hidden_dim % self.attn_heads != 0:
                raise ValidationError(
                    f"hidden width {self.hidden_dim} is not divisible by "
                    f"{self.attn_heads} heads: the per-head width must be an integer")
        elif self.attn_heads != 0:
            raise ValidationError("head count must be 0 when attention is disabled")
        if self.mpnn_kind == "geometric" and not self.has_pos:
            raise ValidationError("geometric message passing requires 3D coordinates")


@dataclass
class DataDims:
    """Dataset-side widths the weights must agree with."""

    node_feat: int
    edge_feat: int
    lpe_dim: int = 0
    cutoff: float | None = None


def required_channels(config: ModelConfig) -> frozenset[str]:
    """The exact channel set a pipeline reads, per the switch semantics."""
    channels = {"x", "edge_attr"}
    if config.use_attention or config.use_encodings:
        channels.add("lap_pe")
    if config.use_encodings:
        channels.update({"node_topo", "chem"})
        if config.edge_embed_dim > 0:
            channels.add("edge_topo")
    return frozenset(channels)


@dataclass
class PreparedGraph:
    """Per-graph constant arrays, ready for cheap batch concatenation."""

    n_nodes: int
    channels: dict[str, np.ndarray]
    edges: np.ndarray                    # stored (u < v) pairs
    edge_attr: np.ndarray                # per stored edge, after edge fusion inputs
    graph_target: np.ndarray | None
    node_target: np.ndarray | None
    radial: np.ndarray | None = None     # per directed edge
    angular: np.ndarray | None = None
    angular_edge_ids: np.ndarray | None = None


@dataclass
class BatchInputs:
    """Everything one forward pass consumes."""

    n_nodes: int
    n_graphs: int
    graph_index: np.ndarray
    node_channels: dict[str, np.ndarray]
    edge_data_raw: EdgeData
    mask: np.ndarray | None
    graph_targets: np.ndarray | None
    node_targets: np.ndarray | None


class Model:
    """An assembled pipeline: embedders, conv stack, pooled task head."""

    def __init__(self, config: ModelConfig, dims: DataDims, seed: int = 0):
        config.validate()
        if config.mpnn_kind == "geometric" and dims.cutoff is None:
            raise ValidationError("geometric message passing requires a dataset cutoff radius")
        if (config.use_attention or config.use_encodings) and dims.lpe_dim < 1:
            raise ValidationError("this pipeline consumes spectral encodings; lpe_dim must be set")
        self.config = config
        self.dims = dims
        self.seed = seed
        rng = np.random.default_rng(seed)

        widths = {"x": dims.node_feat, "lap_pe": dims.lpe_dim, "node_topo": 9, "chem": 15}
        self.node_embedder = NodeEmbedder(config.use_attention, config.use_encodings,
                                          widths, config.hidden_dim, rng)
        if config.use_encodings:
            edge_mode = "topological"
            extra_dim = 4
        elif config.use_attention:
            edge_mode = "spectral_difference"
            extra_dim = dims.lpe_dim
        else:
            edge_mode = "raw"
            extra_dim = 0
        self.edge_embedder = EdgeEmbedder(edge_mode, dims.edge_feat, extra_dim,
                                          config.edge_embed_dim, rng)

        conv_in = self.node_embedder.output_dim
        width = config.hidden_dim
        edge_dim = self.edge_embedder.output_dim
        self.blocks: list = []
        for k in range(config.num_conv_layers):
            in_dim = conv_in if k == 0 else width
            mpnn = MpnnLayer(rng, config.mpnn_kind, in_dim, width, edge_dim,
                             aggregator=config.aggregator, r_max=dims.cutoff)
            if config.use_attention:
                attention = MultiHeadAttention(rng, width, config.attn_heads)
                self.blocks.append(HybridBlock(rng, mpnn, attention))
            else:
                self.blocks.append(mpnn)
        self.head = Linear(rng, width, config.n_outputs)

    # -- parameters ------------------------------------------------------
    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params.update(self.node_embedder.named_parameters())
        params.update(self.edge_embedder.named_parameters())
        for k, block in enumerate(self.blocks):
            params.update(block.named_parameters(f"block{k}"))
        params.update(self.head.named_parameters("head"))
        return params

    def count_parameters(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(params) != set(state):
            missing = set(params) ^ set(state)
            raise ValidationError(f"checkpoint does not match model: {sorted(missing)}")
        for name, p in params.items():
            if p.data.shape != state[name].shape:
                raise ValidationError(f"shape mismatch for '{name}'")
            p.data = state[name].astype(np.float64).copy()

    # -- data preparation --------------------------------------------------
    def prepare_graph(self, graph: AtomGraph, bundle: EncodingBundle | None = None,
                      reads: set | None = None) -> PreparedGraph:
        """Extract exactly the channels this pipeline consumes."""
        cfg = self.config
        needed = required_channels(cfg)

        def read(name: str) -> np.ndarray:
            if reads is not None:
                reads.add(name)
            if name == "x":
                return graph.node_features
            if name == "edge_attr":
                return graph.edge_features
            if bundle is None or not bundle.valid:
                raise ValidationError(
                    f"pipeline needs channel '{name}' but the graph has no valid encodings")
            value = bundle.channels().get(name)
            if value is None:
                raise ValidationError(f"pipeline needs channel '{name}' but it is missing")
            return value

        channels = {name: read(name) for name in sorted(needed & {"x", "lap_pe", "node_topo", "chem"})}

        raw_edge = read("edge_attr")
        if self.edge_embedder.weight is None:
            edge_attr = raw_edge
        elif self.edge_embedder.mode == "topological":
            edge_attr = np.concatenate([raw_edge, read("edge_topo")], axis=1) \
                if raw_edge.shape[1] else read("edge_topo")
        else:
            diff = spectral_difference(read("lap_pe"), graph.edges)
            edge_attr = np.concatenate([raw_edge, diff], axis=1) if raw_edge.shape[1] else diff

        prepared = PreparedGraph(
            n_nodes=graph.node_count,
            channels=channels,
            edges=graph.edges,
            edge_attr=edge_attr,
            graph_target=graph.graph_targets if graph.graph_targets.size else None,
            node_target=graph.node_targets,
        )
        if cfg.mpnn_kind == "geometric":
            if graph.positions is None:
                raise ValidationError("geometric message passing requires positions")
            src = np.concatenate([graph.edges[:, 1], graph.edges[:, 0]])
            dst = np.concatenate([graph.edges[:, 0], graph.edges[:, 1]])
            dist, angles, edge_ids = edge_geometry(graph.positions, src, dst)
            prepared.radial = radial_basis(dist, self.dims.cutoff)
            prepared.angular = angular_basis(angles) if angles.size \
                else np.zeros((0, ANGULAR_ORDER + 1))
            prepared.angular_edge_ids = edge_ids
        return prepared

    def prepare_dataset(self, graphs: list[AtomGraph],
                        bundles: list[EncodingBundle | None] | None = None,
                        reads: set | None = None) -> list[PreparedGraph]:
        bundles = bundles or [None] * len(graphs)
        return [self.prepare_graph(g, b, reads) for g, b in zip(graphs, bundles)]

    def collate(self, prepared: list[PreparedGraph]) -> BatchInputs:
        cfg = self.config
        node_offsets = np.cumsum([0] + [p.n_nodes for p in prepared])
        n_nodes = int(node_offsets[-1])
        n_graphs = len(prepared)
        graph_index = np.repeat(np.arange(n_graphs), [p.n_nodes for p in prepared])

        channels = {name: np.concatenate([p.channels[name] for p in prepared], axis=0)
                    for name in prepared[0].channels}
        stored = np.concatenate(
            [p.edges + node_offsets[i] for i, p in enumerate(prepared)], axis=0) \
            if any(p.edges.shape[0] for p in prepared) else np.zeros((0, 2), dtype=np.int64)
        attr_once = np.concatenate([p.edge_attr for p in prepared], axis=0)
        src = np.concatenate([stored[:, 1], stored[:, 0]])
        dst = np.concatenate([stored[:, 0], stored[:, 1]])
        edge_data = EdgeData(src=src, dst=dst,
                             attr=np.concatenate([attr_once, attr_once], axis=0),
                             n_nodes=n_nodes)
        if cfg.mpnn_kind == "geometric":
            edge_data.radial = np.concatenate([p.radial for p in prepared], axis=0)
            edge_data.angular = np.concatenate([p.angular for p in prepared], axis=0)
            directed_offsets = np.cumsum([0] + [2 * p.edges.shape[0] for p in prepared])
            edge_data.angular_edge_ids = np.concatenate(
                [p.angular_edge_ids + directed_offsets[i] for i, p in enumerate(prepared)]
            ).astype(np.intp)

        graph_targets = None
        if prepared[0].graph_target is not None:
            graph_targets = np.stack([p.graph_target for p in prepared], axis=0)
        node_targets = None
        if prepared[0].node_target is not None:
            node_targets = np.concatenate([p.node_target for p in prepared], axis=0)
        return BatchInputs(
            n_nodes=n_nodes, n_graphs=n_graphs, graph_index=graph_index,
            node_channels=channels, edge_data_raw=edge_data,
            mask=attention_mask(graph_index) if cfg.use_attention else None,
            graph_targets=graph_targets, node_targets=node_targets)

    # -- forward -----------------------------------------------------------
    def forward(self, batch: BatchInputs) -> Tensor:
        cfg = self.config
        h = self.node_embedder.embed(batch.node_channels)
        edge_data = batch.edge_data_raw
        if self.edge_embedder.weight is not None:
            attr_tensor = self.edge_embedder.project(edge_data.attr)
            edge_data = EdgeData(src=edge_data.src, dst=edge_data.dst,
                                 attr=attr_tensor, n_nodes=edge_data.n_nodes,
                                 radial=edge_data.radial, angular=edge_data.angular,
                                 angular_edge_ids=edge_data.angular_edge_ids)
        for block in self.blocks:
            if cfg.use_attention:
                h = block.forward(h, edge_data, batch.mask)
            else:
                h = block.forward(h, edge_data)
        if cfg.task == "node_regression":
            return self.head(h)
        pooled = pool(h, batch.graph_index, batch.n_graphs, cfg.pooling)
        return self.head(pooled)

    def predict(self, graphs: list[AtomGraph],
                bundles: list[EncodingBundle | None] | None = None) -> np.ndarray:
        prepared = self.prepare_dataset(graphs, bundles)
        return self.forward(self.collate(prepared)).data


def assemble(config: ModelConfig, dims: DataDims, seed: int = 0) -> Model:
    """Build a model for one switch state; rejects invalid configs."""
    return Model(config, dims, seed)


# -- checkpointing ----------------------------------------------------------

def save_checkpoint(path, model: Model, extra_arrays: dict[str, np.ndarray] | None = None,
                    extra_meta: dict | None = None) -> None:
    """Persist config, dims and every weight tensor; loading is field-exact."""
    meta = {
        "config": asdict(model.config),
        "dims": asdict(model.dims),
        "seed": model.seed,
        "extra": extra_meta or {},
    }
    payload = {f"param/{k}": v.data for k, v in model.named_parameters().items()}
    for k, v in (extra_arrays or {}).items():
        payload[f"state/{k}"] = v
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **payload)


def load_checkpoint(path) -> tuple[Model, dict[str, np.ndarray], dict]:
    """Rebuild the model and return (model, extra_arrays, extra_meta)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
        extra = {k[len("state/"):]: data[k] for k in data.files if k.startswith("state/")}
    config = ModelConfig(**meta["config"])
    dims = DataDims(**meta["dims"])
    model = Model(config, dims, seed=meta["seed"])
    model.load_state_arrays(params)
    return model, extra, meta["extra"]
