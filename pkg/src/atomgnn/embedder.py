"""Fusion of raw features and encoder channels into model inputs.

Nodes concatenate the enabled channels in the fixed order
raw ‖ spectral ‖ topological ‖ chemical and go through one bias-free
linear map.  Edges either carry their raw attributes straight through,
or concatenate raw attributes with topological edge encodings (encoders
enabled) or with the absolute spectral difference of the endpoints'
positional encodings (attention without encoders), again followed by a
single bias-free projection.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .numerics import Tensor, matmul, parameter, uniform_init

NODE_CHANNEL_ORDER = ("x", "lap_pe", "node_topo", "chem")


def node_channel_names(use_attention: bool, use_encodings: bool) -> tuple[str, ...]:
    if use_encodings:
        return ("x", "lap_pe", "node_topo", "chem")
    if use_attention:
        return ("x", "lap_pe")
    return ("x",)


def spectral_difference(lap_pe: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """|pe_u - pe_v| per edge row: orientation-symmetric and insensitive
    to which endpoint is listed first."""
    if edges.shape[0] == 0:
        return np.zeros((0, lap_pe.shape[1]))
    return np.abs(lap_pe[edges[:, 0]] - lap_pe[edges[:, 1]])


class NodeEmbedder:
    """Single bias-free projection of the concatenated node channels.

    With neither attention nor encodings enabled the embedder is the
    identity on the raw features (no weight, no projection).
    """

    def __init__(self, use_attention: bool, use_encodings: bool,
                 channel_widths: dict[str, int], hidden_dim: int,
                 rng: np.random.Generator | None = None):
        self.channels = node_channel_names(use_attention, use_encodings)
        self.identity = self.channels == ("x",)
        self.widths = {name: channel_widths[name] for name in self.channels}
        self.input_dim = sum(self.widths.values())
        self.output_dim = channel_widths["x"] if self.identity else hidden_dim
        if self.identity:
            self.weight = None
        else:
            rng = rng or np.random.default_rng(0)
            self.weight = parameter(uniform_init(rng, (self.input_dim, hidden_dim),
                                                 self.input_dim, hidden_dim))

    def embed(self, channels: dict[str, np.ndarray]) -> Tensor:
        blocks = []
        for name in self.channels:
            if name not in channels:
                raise ValidationError(f"node embedder: missing channel '{name}'")
            block = channels[name]
            if block.shape[1] != self.widths[name]:
                raise ValidationError(
                    f"node embedder: channel '{name}' has width {block.shape[1]}, "
                    f"expected {self.widths[name]}")
            blocks.append(block)
        if self.identity:
            return Tensor(blocks[0])
        stacked = blocks[0] if len(blocks) == 1 else np.concatenate(blocks, axis=1)
        return matmul(Tensor(stacked), self.weight)

    def named_parameters(self) -> dict[str, Tensor]:
        return {} if self.weight is None else {"node_embed.weight": self.weight}


class EdgeEmbedder:
    """Edge-side fusion: raw attributes plus either topological edge
    encodings or the spectral-difference feature, then one bias-free
    projection.  With embed_dim == 0 the raw attributes pass through
    untouched."""

    def __init__(self, mode: str, raw_dim: int, extra_dim: int, embed_dim: int,
                 rng: np.random.Generator | None = None):
        if mode not in ("raw", "topological", "spectral_difference"):
            raise ValidationError(f"unknown edge embedding mode '{mode}'")
        self.mode = mode
        self.raw_dim = raw_dim
        self.extra_dim = 0 if mode == "raw" else extra_dim
        self.embed_dim = embed_dim
        self.input_dim = raw_dim + self.extra_dim
        if mode == "raw" or embed_dim == 0:
            self.mode = "raw" if embed_dim == 0 else self.mode
            self.weight = None
            self.output_dim = raw_dim
            self.extra_dim = 0
            self.input_dim = raw_dim
        else:
            rng = rng or np.random.default_rng(0)
            self.weight = parameter(uniform_init(rng, (self.input_dim, embed_dim),
                                                 self.input_dim, embed_dim))
            self.output_dim = embed_dim

    def embed(self, raw: np.ndarray, extra: np.ndarray | None = None) -> Tensor:
        if self.weight is None:
            return Tensor(raw)
        if extra is None:
            raise ValidationError(
                f"edge embedder: mode '{self.mode}' requires its encoding channel")
        if extra.shape[1] != self.extra_dim:
            raise ValidationError(
                f"edge embedder: encoding width {extra.shape[1]}, expected {self.extra_dim}")
        return self.project(np.concatenate([raw, extra], axis=1) if self.raw_dim else extra)

    def project(self, stacked: np.ndarray) -> Tensor:
        """Apply the single projection to an already-fused input block."""
        if self.weight is None:
            return Tensor(stacked)
        if stacked.shape[1] != self.input_dim:
            raise ValidationError(
                f"edge embedder: fused width {stacked.shape[1]}, expected {self.input_dim}")
        return matmul(Tensor(stacked), self.weight)

    def named_parameters(self) -> dict[str, Tensor]:
        return {} if self.weight is None else {"edge_embed.weight": self.weight}
