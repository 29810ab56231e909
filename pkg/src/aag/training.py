"""AdamW optimization, the epoch loop, early stopping, evaluation.

Training is single-threaded by contract so identical (seed, config,
data) reproduce checkpoints bitwise. Evaluation may fan out over
samples (AAG_THREADS) because logits are assembled by index and the
metric reductions are order-independent.
"""

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, TrainingError, UsageError
from .metrics import evaluate_logits
from .numerics import backward, cross_entropy, no_grad, zero_grads
from .model import forward, forward_batch

_FLOAT_FIELDS = ("lr", "weight_decay", "beta1", "beta2", "adam_eps", "min_delta")
_INT_FIELDS = ("max_epochs", "patience", "batch_size", "seed")


@dataclass
class TrainConfig:
    """Optimizer and loop hyperparameters; defaults are the published recipe."""

    lr: float = 5e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 10
    min_delta: float = 0.001
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("train config: lr must be > 0")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"train config: {name} must be in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("train config: adam_eps must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("train config: weight_decay must be >= 0")
        if self.min_delta < 0:
            raise ConfigError("train config: min_delta must be >= 0")
        if self.patience < 1:
            raise ConfigError("train config: patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("train config: max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train config: batch_size must be >= 1")
        if self.seed < 0:
            raise ConfigError("train config: seed must be >= 0")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise ConfigError("train config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"train config: unknown keys {sorted(unknown)}")
        clean = {}
        for key, value in obj.items():
            if isinstance(value, bool):
                raise ConfigError(f"train config: {key} must be a number")
            if key in _INT_FIELDS:
                if not isinstance(value, int):
                    raise ConfigError(f"train config: {key} must be an integer")
            elif not isinstance(value, (int, float)):
                raise ConfigError(f"train config: {key} must be a number")
            else:
                value = float(value)
            clean[key] = value
        return cls(**clean)


class OptimizerState:
    """Per-parameter AdamW moments plus the shared step counter."""

    def __init__(self, params):
        self.m = {p.name: np.zeros_like(p.value.data) for p in params}
        self.v = {p.name: np.zeros_like(p.value.data) for p in params}
        self.t = 0


def adamw_step(params, state, cfg):
    """One AdamW update; decay is decoupled and both terms use theta_old."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for p in params:
        g = p.value.grad
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {p.name}")
        m = state.m[p.name]
        v = state.v[p.name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        theta = p.value.data
        step = cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        step += cfg.lr * cfg.weight_decay * theta
        theta -= step


class EarlyStopper:
    """Stop after `patience` consecutive epochs without strict improvement.

    An epoch improves iff value > best + min_delta; a gain of exactly
    min_delta does not count.
    """

    def __init__(self, patience, min_delta):
        self.patience = patience
        self.min_delta = min_delta
        self.best = -math.inf
        self.best_epoch = 0
        self.bad_streak = 0

    def update(self, epoch, value):
        improved = value > self.best + self.min_delta
        if improved:
            self.best = value
            self.best_epoch = epoch
            self.bad_streak = 0
        else:
            self.bad_streak += 1
        return improved

    @property
    def should_stop(self):
        return self.bad_streak >= self.patience


@dataclass
class FitResult:
    """Outcome of fit: params hold the restored best-epoch weights."""

    params: object
    history: list
    best_epoch: int
    val_report: object


def _eval_threads():
    raw = os.environ.get("AAG_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"AAG_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"AAG_THREADS must be a positive integer, got {raw!r}")
    return n


def predict_logits(params, table, records):
    """Forward every record without recording graphs; rows in input order."""
    if not records:
        raise UsageError("predict_logits: empty dataset")

    def row(record):
        # no_grad is thread-local, so each worker enters it itself.
        with no_grad():
            return forward(record, table, params).data

    n_threads = _eval_threads()
    if n_threads == 1 or len(records) == 1:
        rows = [row(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            rows = list(pool.map(row, records))
    return np.concatenate(rows, axis=0)


def evaluate(params, table, records, k_top=5):
    """MetricsReport for a dataset; deterministic, parameters untouched."""
    logits = predict_logits(params, table, records)
    labels = np.array([r.label for r in records], dtype=np.int64)
    return evaluate_logits(logits, labels, k_top=k_top)


def fit(params, table, train_records, val_records, cfg, log_path=None):
    """Train with AdamW + early stopping on val top-1; restore the best epoch.

    Writes one JSON object per epoch to log_path when given. Evaluation
    inside the loop uses top-1 on the validation split as the monitor.
    """
    if not train_records:
        raise UsageError("fit: empty training split")
    if not val_records:
        raise UsageError("fit: empty validation split")
    rng = np.random.default_rng(cfg.seed)
    trainable = params.parameters()
    state = OptimizerState(trainable)
    stopper = EarlyStopper(cfg.patience, cfg.min_delta)
    best_weights = None
    best_report = None
    history = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.monotonic()
            order = rng.permutation(len(train_records))
            loss_sum = 0.0
            for lo in range(0, len(order), cfg.batch_size):
                batch = [train_records[i] for i in order[lo : lo + cfg.batch_size]]
                labels = np.array([r.label for r in batch], dtype=np.int64)
                loss = cross_entropy(forward_batch(batch, table, params), labels)
                loss_value = float(loss.data)
                if not math.isfinite(loss_value):
                    raise TrainingError(
                        f"non-finite training loss at epoch {epoch}"
                    )
                zero_grads(trainable)
                backward(loss)
                adamw_step(trainable, state, cfg)
                loss_sum += loss_value * len(batch)
            train_loss = loss_sum / len(train_records)
            report = evaluate(params, table, val_records)
            improved = stopper.update(epoch, report.top1)
            if improved:
                best_weights = {
                    name: p.value.data.copy() for name, p in params.registry.items()
                }
                best_report = report
            entry = {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_top1": report.top1,
                "val_top5": report.top5,
                "improved": improved,
                "elapsed_ms": int((time.monotonic() - t0) * 1000),
            }
            history.append(entry)
            if log_file:
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()
            if stopper.should_stop:
                break
    finally:
        if log_file:
            log_file.close()
    for name, data in best_weights.items():
        params.registry[name].value.data[...] = data
    return FitResult(
        params=params,
        history=history,
        best_epoch=stopper.best_epoch,
        val_report=best_report,
    )
