"""Generic mini-batch training with validation-F1 early stopping.

The loop is identical for every epoch-trained family (linear, T-LSTM,
transformer); a small task adapter supplies batching and the loss/gradient
callback. After each epoch the validation F1 at the configured threshold is
computed, the best-F1 parameter snapshot is kept, and training stops at
max_epochs or when the epochs-without-improvement count reaches patience.
Everything is deterministic given the seed.
"""

from __future__ import annotations

import base64
import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from ..encoders import SequenceBatch, SequenceView, bucket_minibatches
from ..errors import DataError, TrainingDivergedError
from ..metrics import MetricReport, compute_metrics
from .common import bce_with_logits, sample_weights, sigmoid
from .linear import LinearModel
from .stumps import StumpEnsemble
from .tlstm import TlstmModel
from .transformer import TokenBatch, TransformerModel, pad_token_batch


class Optimizer(str, Enum):
    SGD = "SGD"
    ADAM = "ADAM"


@dataclass
class TrainConfig:
    optimizer: Optimizer = Optimizer.ADAM
    learning_rate: float = 1e-4
    max_epochs: int = 20
    patience: int = 3
    batch_size: int = 32
    seed: int = 0
    threshold: float = 0.5
    class_weight: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for k, g in grads.items():
            params[k] -= self.lr * g


class _Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1**self.t)
            vhat = self.v[k] / (1 - self.beta2**self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _make_optimizer(config: TrainConfig):
    return _Adam(config.learning_rate) if config.optimizer == Optimizer.ADAM else _Sgd(config.learning_rate)


# ---------------------------------------------------------------------------
# Task adapters: batching + loss for each model family.
# ---------------------------------------------------------------------------


class LinearTask:
    def __init__(self, model: LinearModel, X, y, X_val, y_val):
        self.model = model
        self.X, self.y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
        self.X_val, self.y_val = np.asarray(X_val, dtype=float), np.asarray(y_val, dtype=float)

    def train_batches(self, batch_size: int, rng: np.random.Generator) -> Iterator:
        idx = rng.permutation(len(self.y))
        for start in range(0, len(idx), batch_size):
            chunk = idx[start : start + batch_size]
            yield self.X[chunk], self.y[chunk]

    def loss_and_grads(self, batch, class_weight):
        X, y = batch
        loss, grads = self.model.loss_and_grads(X, y, class_weight)
        return loss, grads

    def val_scores(self):
        return self.model.scores(self.X_val), self.y_val


class SequenceTask:
    def __init__(self, model: TlstmModel, train_seqs: Sequence[SequenceView], val_seqs: Sequence[SequenceView]):
        self.model = model
        self.train_seqs = list(train_seqs)
        self.val_seqs = list(val_seqs)

    def train_batches(self, batch_size: int, rng: np.random.Generator) -> Iterator[SequenceBatch]:
        order = rng.permutation(len(self.train_seqs))
        shuffled = [self.train_seqs[int(i)] for i in order]
        batches = bucket_minibatches(shuffled, batch_size)
        batch_order = rng.permutation(len(batches))
        for i in batch_order:
            yield batches[int(i)]

    def loss_and_grads(self, batch: SequenceBatch, class_weight):
        cache: dict = {}
        logits = self.model.forward(batch, cache)
        loss, dlogits = bce_with_logits(logits, batch.y, sample_weights(batch.y, class_weight))
        return loss, self.model.backward(batch, cache, dlogits)

    def val_scores(self):
        logits, labels, _ = self.model.scores(bucket_minibatches(self.val_seqs, 256))
        return logits, labels


@dataclass
class TokenExample:
    token_ids: list[int]
    label: float
    patient_id: str


class TokenTask:
    def __init__(
        self,
        model: TransformerModel,
        train_examples: Sequence[TokenExample],
        val_examples: Sequence[TokenExample],
        pad_id: int,
    ):
        self.model = model
        self.train_examples = list(train_examples)
        self.val_examples = list(val_examples)
        self.pad_id = pad_id

    def _to_batches(self, examples: Sequence[TokenExample], batch_size: int) -> list[TokenBatch]:
        batches = []
        for start in range(0, len(examples), batch_size):
            chunk = examples[start : start + batch_size]
            batches.append(
                pad_token_batch(
                    [e.token_ids for e in chunk],
                    [e.label for e in chunk],
                    [e.patient_id for e in chunk],
                    self.pad_id,
                )
            )
        return batches

    def train_batches(self, batch_size: int, rng: np.random.Generator) -> Iterator[TokenBatch]:
        order = rng.permutation(len(self.train_examples))
        shuffled = [self.train_examples[int(i)] for i in order]
        yield from self._to_batches(shuffled, batch_size)

    def loss_and_grads(self, batch: TokenBatch, class_weight):
        cache: dict = {}
        logits = self.model.forward(batch, cache)
        loss, dlogits = bce_with_logits(logits, batch.y, sample_weights(batch.y, class_weight))
        return loss, self.model.backward(batch, cache, dlogits)

    def val_scores(self):
        logits, labels, _ = self.model.scores(self._to_batches(self.val_examples, 64))
        return logits, labels


# ---------------------------------------------------------------------------
# The train loop.
# ---------------------------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_f1: float
    val_auc: float | None
    val_precision: float
    val_recall: float


@dataclass
class TrainResult:
    best_epoch: int
    stopped_epoch: int
    best_val_f1: float
    log: list[EpochLog]
    val_report: MetricReport


def train(task, config: TrainConfig) -> TrainResult:
    """Optimize a task's model in place; the best-validation-F1 snapshot wins."""
    model = task.model
    optimizer = _make_optimizer(config)
    rng = np.random.default_rng(config.seed)
    best_params = {k: v.copy() for k, v in model.params.items()}
    best_f1 = -1.0
    best_epoch = 0
    best_report: MetricReport | None = None
    bad_epochs = 0
    log: list[EpochLog] = []
    stopped = 0
    for epoch in range(1, config.max_epochs + 1):
        stopped = epoch
        losses = []
        for batch in task.train_batches(config.batch_size, rng):
            loss, grads = task.loss_and_grads(batch, config.class_weight)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss {loss!r} at epoch {epoch}")
            optimizer.step(model.params, grads)
            losses.append(loss)
        val_logits, val_labels = task.val_scores()
        report = compute_metrics(sigmoid(val_logits), val_labels, config.threshold)
        log.append(
            EpochLog(
                epoch=epoch,
                train_loss=float(np.mean(losses)) if losses else float("nan"),
                val_f1=report.f1,
                val_auc=report.auc,
                val_precision=report.precision,
                val_recall=report.recall,
            )
        )
        if report.f1 > best_f1:
            best_f1 = report.f1
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
            best_report = report
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    model.params = best_params
    assert best_report is not None
    return TrainResult(
        best_epoch=best_epoch,
        stopped_epoch=stopped,
        best_val_f1=best_f1,
        log=log,
        val_report=best_report,
    )


def write_training_log_csv(log: Iterable[EpochLog], path: str | Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_f1", "val_auc", "val_precision", "val_recall"])
        for e in log:
            writer.writerow(
                [
                    e.epoch,
                    f"{e.train_loss:.8f}",
                    f"{e.val_f1:.6f}",
                    "" if e.val_auc is None else f"{e.val_auc:.6f}",
                    f"{e.val_precision:.6f}",
                    f"{e.val_recall:.6f}",
                ]
            )


# ---------------------------------------------------------------------------
# Prediction and checkpoints.
# ---------------------------------------------------------------------------


def predict_proba(model, data) -> np.ndarray:
    """Sigmoid of the model score; raises on a model/view mismatch."""
    if isinstance(model, LinearModel):
        X = np.asarray(data, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != model.dim:
            raise ValueError(f"linear model expects dim {model.dim}, got {X.shape[1]}")
        return sigmoid(model.scores(X))
    if isinstance(model, StumpEnsemble):
        X = np.asarray(data, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        return model.predict_proba(X)
    if isinstance(model, TlstmModel):
        batches = data if isinstance(data, list) else [data]
        if not all(isinstance(b, SequenceBatch) for b in batches):
            raise ValueError("T-LSTM prediction expects SequenceBatch input")
        logits, _, _ = model.scores(batches)
        return sigmoid(logits)
    if isinstance(model, TransformerModel):
        batches = data if isinstance(data, list) else [data]
        if not all(isinstance(b, TokenBatch) for b in batches):
            raise ValueError("transformer prediction expects TokenBatch input")
        logits, _, _ = model.scores(batches)
        return sigmoid(logits)
    raise ValueError(f"unsupported model type {type(model).__name__}")


CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, family: str, params: dict[str, np.ndarray], meta: dict):
    """Versioned JSON container: base64 float64 buffers plus shape metadata."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "family": family,
        "meta": meta,
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "params": {
            k: base64.b64encode(np.ascontiguousarray(v, dtype=np.float64).tobytes()).decode("ascii")
            for k, v in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing checkpoint: {path}")
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {payload.get('format_version')}")
    params = {
        k: np.frombuffer(base64.b64decode(buf), dtype=np.float64).reshape(payload["shapes"][k]).copy()
        for k, buf in payload["params"].items()
    }
    return payload["family"], payload["meta"], params
