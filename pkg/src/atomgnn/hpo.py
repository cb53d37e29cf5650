"""Conditional random search over the model hyperparameter space.

The space branches on coordinate availability, on whether global
attention is enabled, and on whether encoder channels are used.  Each
branch exposes its own discrete grids; sampling is uniform over the
grids with rejection of configurations that violate the head
divisibility rule.  Selection is the plain argmin of recorded
validation losses (ties go to the earliest trial), followed by an
extended retraining of the winner.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import DataDims, Model, ModelConfig, assemble, save_checkpoint
from .training import Metrics, TrainConfig, evaluate, train

MPNN_KINDS_WITH_POS = ("edge_sum", "multi_agg", "geometric")
MPNN_KINDS_2D = ("edge_sum", "multi_agg")


@dataclass
class SearchSpace:
    """Discrete grids for one (has_pos, attention, encodings) branch."""

    has_pos: bool
    use_attention: bool
    use_encodings: bool
    mpnn_kinds: tuple = ()
    num_conv_layers: tuple = ()
    attn_heads: tuple = ()
    hidden_dim: tuple = ()
    edge_embed_dim: tuple = ()

    def validate(self) -> None:
        for name in ("mpnn_kinds", "num_conv_layers", "attn_heads", "hidden_dim", "edge_embed_dim"):
            if not getattr(self, name):
                raise ValidationError(f"search space field '{name}' is empty")
        if not self.use_attention and tuple(self.attn_heads) != (0,):
            raise ValidationError("attention-off branch must force heads to 0")
        if self.use_attention and 0 in self.attn_heads:
            raise ValidationError("attention-on branch cannot sample 0 heads")


def default_search_space(has_pos: bool, use_attention: bool, use_encodings: bool) -> SearchSpace:
    """The published branch grids.

    Attention off:  depth 1..6, heads {0}, width 4..32 (raw) or 16..64
    (encodings), edge width {0} (raw) or {0, 4..12} (encodings).
    Attention on:   depth 1..3, heads {2,4,8}, widths restricted to
    multiples of 8 so every head count divides every width.
    """
    kinds = MPNN_KINDS_WITH_POS if has_pos else MPNN_KINDS_2D
    if not use_attention:
        return SearchSpace(
            has_pos=has_pos, use_attention=False, use_encodings=use_encodings,
            mpnn_kinds=kinds,
            num_conv_layers=(1, 2, 3, 4, 5, 6),
            attn_heads=(0,),
            hidden_dim=tuple(range(16, 65)) if use_encodings else tuple(range(4, 33)),
            edge_embed_dim=(0, 4, 5, 6, 7, 8, 9, 10, 11, 12) if use_encodings else (0,),
        )
    return SearchSpace(
        has_pos=has_pos, use_attention=True, use_encodings=use_encodings,
        mpnn_kinds=kinds,
        num_conv_layers=(1, 2, 3),
        attn_heads=(2, 4, 8),
        hidden_dim=(16, 24, 32, 40, 48, 56, 64) if use_encodings else (8, 16, 24, 32, 40, 48),
        edge_embed_dim=(0, 4, 5, 6, 7, 8, 9, 10, 11, 12) if use_encodings
        else (0, 4, 5, 6, 8, 9, 10, 11, 12),
    )


def sample_config(space: SearchSpace, rng: np.random.Generator, *,
                  task: str = "graph_regression", n_outputs: int = 1,
                  pooling: str = "mean", max_attempts: int = 1000) -> ModelConfig:
    """Uniform draw from the branch grids, rejecting divisibility violations."""
    space.validate()
    for _ in range(max_attempts):
        config = ModelConfig(
            mpnn_kind=str(rng.choice(space.mpnn_kinds)),
            num_conv_layers=int(rng.choice(space.num_conv_layers)),
            hidden_dim=int(rng.choice(space.hidden_dim)),
            edge_embed_dim=int(rng.choice(space.edge_embed_dim)),
            attn_heads=int(rng.choice(space.attn_heads)),
            use_attention=space.use_attention,
            use_encodings=space.use_encodings,
            has_pos=space.has_pos,
            pooling=pooling, task=task, n_outputs=n_outputs,
        )
        if config.use_attention and config.hidden_dim % config.attn_heads != 0:
            continue
        config.validate()
        return config
    raise ValidationError("no feasible configuration found; the space may be over-constrained")


def save_search_space(space: SearchSpace, path) -> None:
    Path(path).write_text(json.dumps(asdict(space), indent=2) + "\n")


def load_search_space(path) -> SearchSpace:
    payload = json.loads(Path(path).read_text())
    for key in ("mpnn_kinds", "num_conv_layers", "attn_heads", "hidden_dim", "edge_embed_dim"):
        payload[key] = tuple(payload[key])
    space = SearchSpace(**payload)
    space.validate()
    return space


@dataclass
class TrialRecord:
    index: int
    config: ModelConfig
    seed: int
    val_loss: float = math.inf
    test_metrics: Metrics | None = None
    n_params: int = 0
    checkpoint: str | None = None
    failed: bool = False
    error: str | None = None

    def to_json(self) -> str:
        payload = {
            "index": self.index, "config": asdict(self.config), "seed": self.seed,
            "val_loss": self.val_loss if math.isfinite(self.val_loss) else None,
            "test_metrics": self.test_metrics.as_dict() if self.test_metrics else None,
            "n_params": self.n_params, "checkpoint": self.checkpoint,
            "failed": self.failed, "error": self.error,
        }
        return json.dumps(payload)


@dataclass
class HpoResult:
    best_index: int
    best_config: ModelConfig
    trials: list[TrialRecord]
    final_model: Model | None = None
    final_metrics: Metrics | None = None
    final_val_trace: list[float] = field(default_factory=list)


def select_best(trials: list[TrialRecord]) -> int:
    """Argmin of validation losses over finished trials; earliest index wins ties."""
    finished = [t for t in trials if not t.failed and math.isfinite(t.val_loss)]
    if not finished:
        summary = "; ".join(f"trial {t.index}: {t.error}" for t in trials if t.failed)
        raise ValidationError(f"all trials failed: {summary or 'no trials'}")
    best = min(finished, key=lambda t: (t.val_loss, t.index))
    return best.index


def run_hpo(space: SearchSpace, dims: DataDims,
            train_set, val_set, test_set,
            *, budget: int, short_epochs: int, retrain_epochs: int, patience: int,
            learning_rate: float = 1e-2, batch_size: int = 32, seed: int = 0,
            task: str = "graph_regression", n_outputs: int = 1, pooling: str = "mean",
            store_path=None, checkpoint_dir=None, workers: int = 1) -> HpoResult:
    """Random-search trials, argmin selection, extended retraining.

    Configurations for the whole budget are drawn up front from one
    seeded generator and each trial trains with its own derived seed, so
    the trial store and the winner are reproducible regardless of how
    trials are scheduled.
    """
    if budget < 1:
        raise ValidationError("budget must be at least 1")
    master = np.random.SeedSequence(seed)
    config_rng = np.random.default_rng(master.spawn(1)[0])
    trial_seeds = [int(s.generate_state(1)[0] % (2 ** 31)) for s in master.spawn(budget + 1)]

    configs = [sample_config(space, config_rng, task=task, n_outputs=n_outputs, pooling=pooling)
               for _ in range(budget)]

    def run_trial(index: int) -> TrialRecord:
        record = TrialRecord(index=index, config=configs[index], seed=trial_seeds[index])
        try:
            model = assemble(configs[index], dims, seed=trial_seeds[index])
            record.n_params = model.count_parameters()
            prepared_train = model.prepare_dataset(*train_set)
            prepared_val = model.prepare_dataset(*val_set)
            result = train(model, prepared_train, prepared_val,
                           TrainConfig(epochs=short_epochs, patience=None,
                                       learning_rate=learning_rate, batch_size=batch_size,
                                       seed=trial_seeds[index]))
            record.val_loss = result.best_val
            record.test_metrics = evaluate(model, model.prepare_dataset(*test_set))
            if checkpoint_dir is not None:
                path = Path(checkpoint_dir) / f"trial_{index:04d}.npz"
                save_checkpoint(path, model, extra_meta={"val_loss": record.val_loss})
                record.checkpoint = str(path)
        except Exception as exc:  # noqa: BLE001 - a failed trial must not kill the sweep
            record.failed = True
            record.error = f"{type(exc).__name__}: {exc}"
        return record

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(run_trial, range(budget)))
    else:
        trials = [run_trial(i) for i in range(budget)]

    if store_path is not None:
        with open(store_path, "w") as fh:
            for t in trials:
                fh.write(t.to_json() + "\n")

    best_index = select_best(trials)
    best_config = trials[best_index].config

    final_model = assemble(best_config, dims, seed=trial_seeds[budget])
    final_result = train(final_model, final_model.prepare_dataset(*train_set),
                         final_model.prepare_dataset(*val_set),
                         TrainConfig(epochs=retrain_epochs, patience=patience,
                                     learning_rate=learning_rate, batch_size=batch_size,
                                     seed=trial_seeds[budget]))
    final_metrics = evaluate(final_model, final_model.prepare_dataset(*test_set))
    return HpoResult(best_index=best_index, best_config=best_config, trials=trials,
                     final_model=final_model, final_metrics=final_metrics,
                     final_val_trace=final_result.val_trace)
