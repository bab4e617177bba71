"""Mini-batch training loops shared by the ensemble and distillation estimators.

Loss plumbing is closure-based: a batch loss maps network outputs and the
row indices they came from to a scalar loss and the gradient in those
outputs. Early stopping tracks the best validation loss and returns a
snapshot of the best parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, TrainingError, ValidationError
from .network import Mlp, Optimizer


@dataclass
class TrainSettings:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")


@dataclass
class EpochRecord:
    epoch: int
    phase: int
    train_loss: float
    val_loss: float


class _BestTracker:
    """Keeps the best-validation snapshot and counts stale epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_snapshot = None
        self.stale = 0

    def update(self, val_loss: float, snapshot_fn) -> bool:
        """Record one epoch; returns True when patience is exhausted."""
        if val_loss < self.best_loss - 1e-12:
            self.best_loss = val_loss
            self.best_snapshot = snapshot_fn()
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def _check_finite(loss: float, context: str) -> None:
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite training loss {loss!r}", context=context)


def _evaluate_loss(fn, context: str):
    """Run a loss closure, converting overflow blowups into training errors."""
    try:
        result = fn()
    except ValidationError as exc:
        raise TrainingError(f"diverged: {exc}", context=context) from exc
    loss = result[0] if isinstance(result, tuple) else result
    _check_finite(loss, context)
    return result


def train_network(
    model: Mlp,
    x_train: np.ndarray,
    x_val: np.ndarray,
    batch_loss,
    val_loss_fn,
    settings: TrainSettings,
    rng: np.random.Generator,
    context: str,
    phase: int = 1,
) -> tuple[Mlp, list[EpochRecord]]:
    """Train one network; returns the best-validation snapshot and the curve.

    ``batch_loss(outputs, idx) -> (loss, d_outputs)`` evaluates the training
    objective on a mini-batch; ``val_loss_fn(model) -> float`` scores the
    full validation set.
    """
    opt = Optimizer(kind=settings.optimizer, learning_rate=settings.learning_rate)
    tracker = _BestTracker(settings.patience)
    tracker.update(_evaluate_loss(lambda: val_loss_fn(model), context), model.copy)
    history: list[EpochRecord] = []
    n = x_train.shape[0]
    for epoch in range(settings.max_epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, settings.batch_size):
            idx = perm[start:start + settings.batch_size]
            out, pre, post = model.forward_trace(x_train[idx])
            loss, d_out = _evaluate_loss(lambda: batch_loss(out, idx), context)
            grads, _ = model.backward_from_trace(pre, post, d_out)
            try:
                opt.step(model, grads)
            except TrainingError as exc:
                raise TrainingError(str(exc), context=context) from exc
            batch_losses.append(loss)
        val_loss = _evaluate_loss(lambda: val_loss_fn(model), context)
        history.append(
            EpochRecord(epoch, phase, float(np.mean(batch_losses)), float(val_loss))
        )
        if tracker.update(val_loss, model.copy):
            break
    return tracker.best_snapshot, history


def train_multi_head(
    body: Mlp,
    heads: list[Mlp],
    x_train: np.ndarray,
    x_val: np.ndarray,
    head_batch_loss,
    val_loss_fn,
    settings: TrainSettings,
    rng: np.random.Generator,
    context: str,
    phase: int,
    snapshot_fn,
    epoch_offset: int = 0,
) -> list[EpochRecord]:
    """Train a shared body plus heads jointly, mutating them in place.

    ``head_batch_loss(head_outputs, idx) -> (loss, upstreams)`` maps the
    list of per-head output batches to the scalar loss and one upstream
    gradient per head. ``snapshot_fn`` captures the current (body, heads)
    for best-validation tracking; the best snapshot is restored into the
    live objects before returning.
    """
    body_opt = Optimizer(kind=settings.optimizer, learning_rate=settings.learning_rate)
    head_opts = [
        Optimizer(kind=settings.optimizer, learning_rate=settings.learning_rate)
        for _ in heads
    ]
    tracker = _BestTracker(settings.patience)
    tracker.update(_evaluate_loss(val_loss_fn, context), snapshot_fn)
    history: list[EpochRecord] = []
    n = x_train.shape[0]
    for epoch in range(settings.max_epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, settings.batch_size):
            idx = perm[start:start + settings.batch_size]
            body_out, body_pre, body_post = body.forward_trace(x_train[idx])
            traces = [head.forward_trace(body_out) for head in heads]
            loss, upstreams = _evaluate_loss(
                lambda: head_batch_loss([t[0] for t in traces], idx), context
            )
            head_grads = []
            body_upstream = np.zeros_like(body_out)
            for head, (_, pre, post), upstream in zip(heads, traces, upstreams):
                grads, input_grad = head.backward_from_trace(pre, post, upstream)
                head_grads.append(grads)
                body_upstream += input_grad
            body_grads, _ = body.backward_from_trace(
                body_pre, body_post, body_upstream
            )
            try:
                body_opt.step(body, body_grads)
                for head, opt, grads in zip(heads, head_opts, head_grads):
                    opt.step(head, grads)
            except TrainingError as exc:
                raise TrainingError(str(exc), context=context) from exc
            batch_losses.append(loss)
        val_loss = _evaluate_loss(val_loss_fn, context)
        history.append(
            EpochRecord(
                epoch_offset + epoch, phase, float(np.mean(batch_losses)),
                float(val_loss),
            )
        )
        if tracker.update(val_loss, snapshot_fn):
            break
    best_body, best_heads = tracker.best_snapshot
    body.layers = [layer.copy() for layer in best_body.layers]
    for head, best in zip(heads, best_heads):
        head.layers = [layer.copy() for layer in best.layers]
    return history
