"""Adam, the dev-loss plateau schedule, and the epoch loop with best-model selection."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .autograd import Parameter, Tensor, no_grad
from .exceptions import ConfigError, NonFiniteGradientError
from .layers import softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: AdamState, batch=None) -> None:
    """One bias-corrected Adam update over ``params`` (named ``Parameter`` objects or pairs).

    Every gradient is checked before any parameter moves, so a non-finite
    gradient leaves the model untouched.
    """
    named = _named(params)
    for name, p in named:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(name, batch)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, p in named:
        if p.grad is None or not p.trainable:
            continue
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / c1
        v_hat = v / c2
        p.data = (p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


def _named(params) -> list[tuple[str, Parameter]]:
    out = []
    for i, item in enumerate(params):
        if isinstance(item, tuple):
            out.append(item)
        else:
            out.append((item.name or f"param{i}", item))
    return out


@dataclass
class LrSchedulerState:
    """Decay the rate by ``decay`` when dev loss fails to drop by ``significance``.

    A rate must be held for ``min_dwell`` epochs before it may decay, and never
    falls below ``floor``.
    """

    lr: float = 1e-3
    prev_dev_loss: float | None = None
    epochs_at_current_lr: int = 0
    floor: float = 1e-5
    decay: float = 0.6
    significance: float = 0.05
    min_dwell: int = 2

    def update(self, dev_loss: float) -> float:
        return schedule_update(self, dev_loss)


def schedule_update(state: LrSchedulerState, dev_loss: float) -> float:
    """Apply one end-of-epoch update and return the learning rate for the next epoch.

    The dwell counter is compared before it is advanced: a decay needs
    ``epochs_at_current_lr >= min_dwell`` and resets it to 0, otherwise it
    increments.  A non-finite loss counts as no improvement.
    """
    finite = math.isfinite(dev_loss)
    stalled = state.prev_dev_loss is not None and (
        not finite or dev_loss > (1 - state.significance) * state.prev_dev_loss)
    new_lr = max(state.decay * state.lr, state.floor)
    if stalled and state.epochs_at_current_lr >= state.min_dwell and new_lr < state.lr:
        state.lr = new_lr
        state.epochs_at_current_lr = 0
    else:
        state.epochs_at_current_lr += 1
    if finite:
        state.prev_dev_loss = dev_loss
    return state.lr


@dataclass
class TrainConfig:
    epochs: int = 80
    batch_size: int = 100
    initial_lr: float = 1e-3
    seed: int = 0
    variant: str = "ST-AttNet4"
    eval_batch_size: int = 500
    record_train_accuracy: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1 or self.initial_lr <= 0 or self.eval_batch_size < 1:
            raise ConfigError("batch_size and initial_lr must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_accuracy: float
    lr: float
    train_accuracy: float = float("nan")


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    aborted: str | None = None
    optimizer_steps: int = 0

    def __len__(self) -> int:
        return len(self.epochs)

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.epochs]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "train_accuracy", "dev_loss", "dev_accuracy", "lr"])
            for r in self.epochs:
                writer.writerow([r.epoch, repr(r.train_loss), repr(r.train_accuracy),
                                 repr(r.dev_loss), repr(r.dev_accuracy), repr(r.lr)])


def evaluate_loss(model, X, y, batch_size: int = 500) -> tuple[float, float]:
    """Mean cross-entropy and accuracy of ``model`` in inference mode."""
    previous = model.mode
    model.eval()
    total_loss, correct = 0.0, 0
    try:
        with no_grad():
            for start in range(0, len(y), batch_size):
                xb = np.asarray(X[start:start + batch_size])
                yb = np.asarray(y[start:start + batch_size])
                logits = model(Tensor(xb.astype(model.dtype, copy=False)))
                total_loss += softmax_cross_entropy(logits, yb).item() * len(yb)
                correct += int((logits.data.argmax(axis=1) == yb).sum())
    finally:
        model.set_mode(previous)
    return total_loss / len(y), correct / len(y)


def train_step(model, X, y, state: AdamState, batch=None) -> float:
    """Forward, backward and one Adam update on a single batch; returns the batch loss."""
    model.train()
    model.zero_grad()
    xb = X.data if isinstance(X, Tensor) else np.asarray(X)
    logits = model(Tensor(xb.astype(model.dtype, copy=False)))
    loss = softmax_cross_entropy(logits, y)
    value = loss.item()
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite training loss at batch {batch}")
    loss.backward()
    adam_step(list(model.named_parameters()), state, batch)
    return value


def fit(model, train_batches: Callable[[int], Iterable], dev_data: tuple, config: TrainConfig,
        train_data: tuple | None = None, on_epoch: Callable[[EpochRecord], None] | None = None):
    """Train ``model`` in place and return ``(model, history)``.

    ``train_batches(epoch)`` yields ``(X, y)`` batches; ``dev_data`` is
    ``(X_dev, y_dev)``.  After every epoch the dev set sets the learning rate
    and the weights with the best dev accuracy (lower dev loss breaks ties)
    are kept; those weights are loaded back before returning.  A non-finite
    loss or gradient stops training at the last good state.
    """
    X_dev, y_dev = dev_data
    history = History()
    if config.epochs == 0:
        return model, history
    adam = AdamState(lr=config.initial_lr)
    sched = LrSchedulerState(lr=config.initial_lr)
    best = None
    best_key = None
    for epoch in range(config.epochs):
        lr = sched.lr
        adam.lr = lr
        losses, sizes = [], []
        try:
            for b, (xb, yb) in enumerate(train_batches(epoch)):
                losses.append(train_step(model, xb, yb, adam, batch=(epoch, b)))
                sizes.append(len(yb))
                history.optimizer_steps += 1
        except (FloatingPointError, NonFiniteGradientError) as exc:
            history.aborted = str(exc)
            log.warning("training aborted in epoch %d: %s", epoch + 1, exc)
            break
        train_loss = float(np.average(losses, weights=sizes)) if losses else float("nan")
        dev_loss, dev_acc = evaluate_loss(model, X_dev, y_dev, config.eval_batch_size)
        train_acc = float("nan")
        if config.record_train_accuracy and train_data is not None:
            _, train_acc = evaluate_loss(model, *train_data, config.eval_batch_size)
        record = EpochRecord(epoch + 1, train_loss, dev_loss, dev_acc, lr, train_acc)
        history.epochs.append(record)
        log.info("epoch %d  train_loss %.4f  dev_loss %.4f  dev_acc %.4f  lr %.2e",
                 epoch + 1, train_loss, dev_loss, dev_acc, lr)
        if on_epoch is not None:
            on_epoch(record)
        key = (dev_acc, -dev_loss if math.isfinite(dev_loss) else -math.inf)
        if best_key is None or key > best_key:
            best_key, best = key, copy.deepcopy(model.state_dict())
            history.best_epoch = epoch + 1
        sched.update(dev_loss)
    if best is not None:
        model.load_state_dict(best)
    model.eval()
    return model, history
