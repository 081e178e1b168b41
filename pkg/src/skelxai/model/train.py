"""Minimal deterministic trainer (softmax cross-entropy, Adam updates)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .network import GcnModel

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.01
    epochs: int = 40
    batch: int = 16
    seed: int = 1234
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainResult:
    model: GcnModel
    losses: list = field(default_factory=list)
    train_accuracy: float = float("nan")


def accuracy(model: GcnModel, x, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(model.predict(x) == y))


def train(model: GcnModel, x: np.ndarray, y: np.ndarray, hyper: TrainConfig) -> TrainResult:
    """Train a copy of ``model`` on ``x [N, 4, C, T, V]``, ``y [N]``.

    The per-epoch loss trace is the sample-weighted mean minibatch loss.
    """
    if len(x) == 0:
        raise ValueError("training set is empty")
    y = np.asarray(y, dtype=np.int64)
    if y.min() < 0 or y.max() >= model.num_classes:
        raise ValueError("labels outside the model's class range")
    model = model.copy()
    x = np.asarray(x, dtype=model.dtype)
    params = model.named_parameters()
    m = {n: np.zeros_like(p) for n, p in params}
    v = {n: np.zeros_like(p) for n, p in params}
    rng = np.random.default_rng(hyper.seed)
    step = 0
    losses = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), hyper.batch):
            idx = order[start:start + hyper.batch]
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
                loss, grads, _ = model.loss_and_grads(x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, step {step}")
            total += loss * len(idx)
            step += 1
            c1 = 1 - hyper.beta1 ** step
            c2 = 1 - hyper.beta2 ** step
            for name, p in params:
                g = grads[name]
                m[name] = hyper.beta1 * m[name] + (1 - hyper.beta1) * g
                v[name] = hyper.beta2 * v[name] + (1 - hyper.beta2) * g * g
                p -= hyper.lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + hyper.eps)
        losses.append(total / len(x))
        log.debug("epoch %d loss %.5f", epoch, losses[-1])
    return TrainResult(model, losses, accuracy(model, x, y))
