"""Loss minimization with early stopping, checkpointing and metrics.

Training minimizes mean squared error for regression tasks and
cross-entropy for classification, with an adaptive-moment optimizer.
Validation is scored every epoch; the weights that achieved the best
validation loss are restored when training ends (whether by exhausting
the epoch budget or by the patience rule).  All randomness flows from
the config seed, so fixed seeds give bit-identical traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import BatchInputs, Model, PreparedGraph, save_checkpoint
from .numerics import (Tensor, backward, log_softmax_rows, mean, pick, square,
                       sub, zero_grads)


@dataclass
class TrainConfig:
    epochs: int = 100
    patience: int | None = None          # None disables early stopping
    learning_rate: float = 1e-2
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    min_improvement: float = 1e-12       # strict-decrease threshold for patience

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch size must be positive")
        if self.patience is not None and self.patience < 1:
            raise ValidationError("patience must be positive")
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")


@dataclass
class Metrics:
    mse: float | None = None
    mae: float | None = None
    pearson_r: float | None = None
    pearson_degenerate: bool = False
    accuracy: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


# -- losses -----------------------------------------------------------------

def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    return mean(square(sub(pred, target)))


def cross_entropy_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    logp = log_softmax_rows(logits)
    picked = pick(logp, np.arange(labels.shape[0]), labels)
    return -1.0 * mean(picked)


def _batch_loss(model: Model, batch: BatchInputs) -> tuple[Tensor, int]:
    pred = model.forward(batch)
    task = model.config.task
    if task == "graph_regression":
        return mse_loss(pred, batch.graph_targets), batch.graph_targets.size
    if task == "node_regression":
        return mse_loss(pred, batch.node_targets), batch.node_targets.size
    labels = batch.graph_targets.reshape(-1)
    return cross_entropy_loss(pred, labels), labels.shape[0]


# -- optimizer ---------------------------------------------------------------

class Adam:
    """Adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], config: TrainConfig):
        self.params = params
        self.lr = config.learning_rate
        self.beta1, self.beta2, self.eps = config.beta1, config.beta2, config.eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.step_count], dtype=np.int64)}
        for k in self.params:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["step"][0])
        for k in self.params:
            self.m[k] = state[f"m/{k}"].copy()
            self.v[k] = state[f"v/{k}"].copy()


# -- training loop -------------------------------------------------------------

@dataclass
class TrainResult:
    train_trace: list[float] = field(default_factory=list)
    val_trace: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf
    stopped_early: bool = False
    epochs_run: int = 0


def dataset_loss(model: Model, prepared: list[PreparedGraph], batch_size: int = 256) -> float:
    """Mean loss over a dataset, weighted exactly by unit counts."""
    total, units = 0.0, 0
    for lo in range(0, len(prepared), batch_size):
        batch = model.collate(prepared[lo:lo + batch_size])
        loss, n = _batch_loss(model, batch)
        total += loss.item() * n
        units += n
    return total / units


def train(model: Model, train_set: list[PreparedGraph], val_set: list[PreparedGraph],
          config: TrainConfig, checkpoint_dir: str | Path | None = None,
          resume: dict | None = None) -> TrainResult:
    """Optimize until the epoch budget or the patience rule fires.

    With `checkpoint_dir` set, a checkpoint is written per epoch carrying
    weights, optimizer moments, RNG state and traces, so a run can resume
    bit-identically via `resume=load_train_state(path)`.
    """
    config.validate()
    if not train_set or not val_set:
        raise ValidationError("training and validation sets must be non-empty")
    params = model.named_parameters()
    optimizer = Adam(params, config)
    rng = np.random.default_rng(config.seed)
    result = TrainResult()
    best_state = model.state_arrays()
    stale_epochs = 0
    start_epoch = 0

    if resume is not None:
        optimizer.load_state_arrays(resume["optimizer"])
        rng.bit_generator.state = resume["rng_state"]
        result.train_trace = list(resume["train_trace"])
        result.val_trace = list(resume["val_trace"])
        result.best_epoch = resume["best_epoch"]
        result.best_val = resume["best_val"]
        best_state = resume["best_state"]
        stale_epochs = resume["stale_epochs"]
        start_epoch = len(result.train_trace)

    for epoch in range(start_epoch, config.epochs):
        order = rng.permutation(len(train_set))
        epoch_total, epoch_units = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            chunk = [train_set[i] for i in order[lo:lo + config.batch_size]]
            batch = model.collate(chunk)
            zero_grads(params)
            loss, n = _batch_loss(model, batch)
            value = loss.item()
            if not math.isfinite(value):
                raise ValidationError(
                    f"non-finite training loss at epoch {epoch}, batch {lo // config.batch_size}")
            backward(loss)
            optimizer.step()
            epoch_total += value * n
            epoch_units += n
        result.train_trace.append(epoch_total / epoch_units)

        val_loss = dataset_loss(model, val_set)
        result.val_trace.append(val_loss)
        if val_loss < result.best_val - config.min_improvement:
            result.best_val = val_loss
            result.best_epoch = epoch
            best_state = model.state_arrays()
            stale_epochs = 0
        else:
            stale_epochs += 1

        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"epoch_{epoch:05d}.npz"
            save_checkpoint(path, model,
                            extra_arrays=_train_state_arrays(optimizer, rng, result,
                                                             best_state, stale_epochs),
                            extra_meta={"epoch": epoch})
        result.epochs_run = epoch + 1
        if config.patience is not None and stale_epochs >= config.patience:
            result.stopped_early = True
            break

    model.load_state_arrays(best_state)
    return result


def _train_state_arrays(optimizer: Adam, rng: np.random.Generator, result: TrainResult,
                        best_state: dict[str, np.ndarray], stale_epochs: int) -> dict[str, np.ndarray]:
    import json
    arrays = {f"opt/{k}": v for k, v in optimizer.state_arrays().items()}
    arrays["rng_state"] = np.frombuffer(
        json.dumps(rng.bit_generator.state).encode(), dtype=np.uint8)
    arrays["train_trace"] = np.asarray(result.train_trace)
    arrays["val_trace"] = np.asarray(result.val_trace)
    arrays["best_meta"] = np.asarray([result.best_epoch, result.best_val, stale_epochs])
    for k, v in best_state.items():
        arrays[f"best/{k}"] = v
    return arrays


def load_train_state(extra_arrays: dict[str, np.ndarray]) -> dict:
    """Decode the resume payload stored beside a checkpoint's weights."""
    import json
    rng_state = json.loads(bytes(extra_arrays["rng_state"]).decode())
    best_meta = extra_arrays["best_meta"]
    return {
        "optimizer": {k[len("opt/"):]: v for k, v in extra_arrays.items() if k.startswith("opt/")},
        "rng_state": rng_state,
        "train_trace": extra_arrays["train_trace"].tolist(),
        "val_trace": extra_arrays["val_trace"].tolist(),
        "best_epoch": int(best_meta[0]),
        "best_val": float(best_meta[1]),
        "stale_epochs": int(best_meta[2]),
        "best_state": {k[len("best/"):]: v for k, v in extra_arrays.items() if k.startswith("best/")},
    }


# -- evaluation ----------------------------------------------------------------

def pearson_r(x: np.ndarray, y: np.ndarray) -> tuple[float, bool]:
    """Product-moment correlation; zero-variance inputs report (0, True)."""
    x = x.reshape(-1)
    y = y.reshape(-1)
    sx = x.std()
    sy = y.std()
    if sx < 1e-300 or sy < 1e-300:
        return 0.0, True
    r = float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))
    return max(-1.0, min(1.0, r)), False


def evaluate(model: Model, prepared: list[PreparedGraph], batch_size: int = 256) -> Metrics:
    """Task-appropriate metrics over a dataset."""
    if not prepared:
        raise ValidationError("cannot evaluate an empty dataset")
    preds, targets = predictions(model, prepared, batch_size)
    task = model.config.task
    if task == "graph_classification":
        labels = targets.reshape(-1).astype(np.int64)
        correct = (preds.argmax(axis=1) == labels).mean()
        return Metrics(accuracy=float(correct))
    residual = preds - targets
    r, degenerate = pearson_r(preds, targets)
    return Metrics(mse=float((residual ** 2).mean()),
                   mae=float(np.abs(residual).mean()),
                   pearson_r=r, pearson_degenerate=degenerate)


def predictions(model: Model, prepared: list[PreparedGraph],
                batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (predictions, targets) for a dataset."""
    preds, targets = [], []
    for lo in range(0, len(prepared), batch_size):
        batch = model.collate(prepared[lo:lo + batch_size])
        preds.append(model.forward(batch).data)
        targets.append(batch.node_targets if model.config.task == "node_regression"
                       else batch.graph_targets)
    return np.concatenate(preds, axis=0), np.concatenate(targets, axis=0)


# -- desk-scale data parallelism ---------------------------------------------

def serial_gradients(model: Model, batch_graphs: list[PreparedGraph]) -> dict[str, np.ndarray]:
    """Gradient of the mean loss over one batch."""
    params = model.named_parameters()
    zero_grads(params)
    loss, _ = _batch_loss(model, model.collate(batch_graphs))
    backward(loss)
    return {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for k, p in params.items()}


def replicated_gradients(model: Model, batch_graphs: list[PreparedGraph],
                         n_replicas: int) -> dict[str, np.ndarray]:
    """Split a batch across worker replicas, average their gradients.

    Shard gradients are weighted by the number of loss units they carry,
    which makes the average equal to the serial gradient of the same
    batch up to floating-point reassociation.
    """
    if n_replicas < 1 or n_replicas > len(batch_graphs):
        raise ValidationError("replica count must be in 1..len(batch)")
    params = model.named_parameters()
    bounds = np.linspace(0, len(batch_graphs), n_replicas + 1).astype(int)
    accum = {k: np.zeros_like(p.data) for k, p in params.items()}
    total_units = 0
    for r in range(n_replicas):
        shard = batch_graphs[bounds[r]:bounds[r + 1]]
        if not shard:
            continue
        zero_grads(params)
        loss, units = _batch_loss(model, model.collate(shard))
        backward(loss)
        for k, p in params.items():
            if p.grad is not None:
                accum[k] += p.grad * units
        total_units += units
    zero_grads(params)
    return {k: v / total_units for k, v in accum.items()}
