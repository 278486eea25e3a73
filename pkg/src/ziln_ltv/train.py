"""Mini-batch Adam training with a seeded validation split and early stopping."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ziln_ltv.data import FeatureMatrix
from ziln_ltv.loss import LossKind, batch_loss
from ziln_ltv.model import ModelParams, backward, forward, set_input_scaling

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    batch_size: int = 1024
    learning_rate: float = 2e-4
    max_epochs: int = 400
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0
    loss_kind: LossKind = LossKind.ZILN
    # MSE on ziln_mean of a three-logit head instead of a scalar head
    mean_head: bool = False
    # fit numeric input standardisation on the training portion before step 1
    standardize_inputs: bool = True

    def __post_init__(self):
        self.loss_kind = LossKind.parse(self.loss_kind)
        if not (0.0 < self.validation_fraction < 0.5):
            raise ValueError("validation_fraction must lie in (0, 0.5)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("max_epochs and early_stop_patience must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.records[self.best_epoch - 1].val_loss


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on ``tensors`` and ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name!r}")
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        m = state.m.setdefault(name, np.zeros_like(g))
        v = state.v.setdefault(name, np.zeros_like(g))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        tensors[name] -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)


def _loss_and_grads(params, batch, labels, config):
    out, cache = forward(params, batch, with_cache=True)
    value, d_out = batch_loss(labels, out, config.loss_kind, mean_head=config.mean_head)
    return value, backward(params, cache, d_out)


def evaluate_loss(params: ModelParams, batch: FeatureMatrix, labels: np.ndarray, config: TrainConfig) -> float:
    value, _ = batch_loss(labels, forward(params, batch), config.loss_kind, mean_head=config.mean_head)
    return value


def validation_split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices ``(train, validation)`` from a seeded permutation."""
    if n < 2:
        raise ValueError("need at least 2 examples to train")
    n_val = min(max(int(round(n * fraction)), 1), n - 1)
    order = np.random.default_rng([seed, 0x5EED]).permutation(n)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(params: ModelParams, features: FeatureMatrix, labels: np.ndarray, config: TrainConfig,
          log_path=None) -> tuple[ModelParams, TrainHistory]:
    """Train a copy of ``params``; returns the best-validation parameters.

    Stops once validation loss has not improved for ``early_stop_patience``
    epochs or after ``max_epochs``. Raises :class:`TrainingAborted` on a
    non-finite loss or gradient.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if len(features) != labels.size:
        raise ValueError("features and labels differ in length")
    tr_idx, val_idx = validation_split(labels.size, config.validation_fraction, config.seed)
    x_tr, y_tr = features.take(tr_idx), labels[tr_idx]
    x_val, y_val = features.take(val_idx), labels[val_idx]

    params = params.copy()
    if config.standardize_inputs and x_tr.numerics.shape[1]:
        set_input_scaling(params, x_tr.numerics)

    state = AdamState()
    history = TrainHistory()
    best = params.copy()
    best_val = math.inf
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            order = epoch_order(y_tr.size, config.seed, epoch)
            total = 0.0
            for start in range(0, y_tr.size, config.batch_size):
                idx = order[start:start + config.batch_size]
                value, grads = _loss_and_grads(params, x_tr.take(idx), y_tr[idx], config)
                if not math.isfinite(value):
                    raise TrainingAborted("non-finite training loss", epoch)
                try:
                    adam_step(params.tensors, grads, state, config)
                except FloatingPointError as e:
                    raise TrainingAborted(str(e), epoch) from None
                total += value * idx.size
            train_loss = total / y_tr.size
            val_loss = evaluate_loss(params, x_val, y_val, config)
            record = EpochRecord(epoch, train_loss, val_loss)
            history.records.append(record)
            history.stopped_epoch = epoch
            if log_fh is not None:
                log_fh.write(json.dumps(asdict(record)) + "\n")
            if not math.isfinite(val_loss):
                raise TrainingAborted("non-finite validation loss", epoch)
            if val_loss < best_val:
                best_val = val_loss
                history.best_epoch = epoch
                best = params.copy()
            elif epoch - history.best_epoch >= config.early_stop_patience:
                log.debug("early stop at epoch %d (best %d)", epoch, history.best_epoch)
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    return best, history
