"""Switchable local message-passing / global-attention models for
atomistic graphs, with encoder channels, training, and conditional
hyperparameter search."""

from .graphs import AtomGraph, BatchedGraph, batch, build_radius_graph, permute, unbatch
from .model import DataDims, Model, ModelConfig, assemble, load_checkpoint, save_checkpoint
from .training import Metrics, TrainConfig, evaluate, train

__all__ = [
    "AtomGraph", "BatchedGraph", "batch", "build_radius_graph", "permute", "unbatch",
    "DataDims", "Model", "ModelConfig", "assemble", "load_checkpoint", "save_checkpoint",
    "Metrics", "TrainConfig", "evaluate", "train",
]

__version__ = "0.1.0"
