"""Losses, Adam, the learning-rate schedule, and the epoch loop.

The schedule follows the training protocol used throughout this
artifact: learning rate is cut threefold after ``lr_patience`` epochs
without validation improvement, training stops after
``early_stop_patience`` such epochs, and the best-validation parameter
snapshot is restored at the end. Improvement means the validation loss
dropped by more than ``improvement_threshold`` below the best seen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, ParameterError
from .network import Network
from .tensor import RngState, as_tensor


@dataclass
class TrainConfig:
    max_epochs: int = 10000
    early_stop_patience: int = 300
    initial_lr: float = 0.001
    lr_reduce_factor: float = 3.0
    lr_patience: int = 100
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    improvement_threshold: float = 1e-9
    seed: int = 0
    # dry-run switch: keep parameters frozen (no optimizer updates); used to
    # verify the schedule/stopping machinery against a flat loss curve
    freeze_params: bool = False

    def validate(self):
        problems = []
        if self.max_epochs < 1:
            problems.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.early_stop_patience < 1:
            problems.append(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.lr_patience < 1:
            problems.append(f"lr_patience must be >= 1, got {self.lr_patience}")
        if self.initial_lr <= 0:
            problems.append(f"initial_lr must be positive, got {self.initial_lr}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if problems:
            raise ParameterError("invalid train config: " + "; ".join(problems))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    wall_time: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("epoch,train_loss,val_loss,lr\n")
            for rec in self.epochs:
                fh.write(f"{rec.epoch},{rec.train_loss!r},{rec.val_loss!r},{rec.lr!r}\n")

    def lr_trace(self) -> list[float]:
        return [rec.lr for rec in self.epochs]


# --- losses ----------------------------------------------------------------

_BCE_CLAMP = 1e-7


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = pred.size
    return float((diff * diff).mean()), 2.0 * diff / n


def bce_loss(pred, target):
    """Binary cross-entropy with predictions clamped away from {0, 1}."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    p = np.clip(pred, _BCE_CLAMP, 1.0 - _BCE_CLAMP)
    n = pred.size
    value = float(-(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)).mean())
    grad = (p - target) / (p * (1.0 - p)) / n
    return value, grad


def loss(head: str, pred, target):
    if head == "regression":
        return mse_loss(pred, target)
    if head == "classification":
        return bce_loss(pred, target)
    raise ParameterError(f"unknown head {head!r}")


# --- Adam -------------------------------------------------------------------


class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {key: np.zeros_like(arr) for key, arr in params.items()}
        self.v = {key: np.zeros_like(arr) for key, arr in params.items()}


def adam_step(params, grads, state: AdamState, lr: float, t: int,
              beta1=0.9, beta2=0.999, epsilon=1e-8):
    """One in-place Adam update with bias correction; ``t`` is 1-based."""
    if t < 1:
        raise ParameterError(f"step index must be >= 1, got {t}")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {p.shape} for {key}")
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + epsilon)


# --- schedule ----------------------------------------------------------------


class LrSchedule:
    """Plateau-driven lr reduction and early stopping with best tracking.

    The live learning rate is always ``initial_lr / factor**reductions``
    so the trace divides by exactly the reduce factor at every change.
    """

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.best = np.inf
        self.reductions = 0
        self._since_improve_lr = 0
        self._since_improve_stop = 0

    @property
    def lr(self) -> float:
        return self.cfg.initial_lr / self.cfg.lr_reduce_factor ** self.reductions

    def update(self, val_loss: float):
        """Returns (improved, stop) for one epoch's validation loss."""
        if val_loss < self.best - self.cfg.improvement_threshold:
            self.best = val_loss
            self._since_improve_lr = 0
            self._since_improve_stop = 0
            return True, False
        self._since_improve_lr += 1
        self._since_improve_stop += 1
        if self._since_improve_stop >= self.cfg.early_stop_patience:
            return False, True
        if self._since_improve_lr >= self.cfg.lr_patience:
            self.reductions += 1
            self._since_improve_lr = 0
        return False, False


# --- epoch loop ---------------------------------------------------------------


def predict_all(net: Network, inputs: np.ndarray) -> np.ndarray:
    """Inference-mode predictions for a stack of (window, features) inputs."""
    return np.array([net.forward(inputs[i])[0] for i in range(inputs.shape[0])])


def evaluate_loss(net: Network, inputs, targets, head: str) -> float:
    total = 0.0
    for i in range(inputs.shape[0]):
        value, _ = loss(head, net.forward(inputs[i]), targets[i:i + 1])
        total += value
    return total / inputs.shape[0]


def fit(net: Network, train_set, val_set, cfg: TrainConfig):
    """Mini-batch training loop; returns the best-validation network and log.

    ``train_set``/``val_set`` are (inputs, targets) pairs with inputs of
    shape (n, window, features) and targets of shape (n,), already
    scaled/labeled for the network's head.
    """
    cfg.validate()
    train_x, train_y = (as_tensor(a) for a in train_set)
    val_x, val_y = (as_tensor(a) for a in val_set)
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise DataError("fit needs non-empty train and validation sets")
    head = net.config.head
    n = train_x.shape[0]

    rng = RngState(cfg.seed)
    shuffle_rng = rng.spawn(1)
    dropout_rng = rng.spawn(2)

    params = net.params()
    adam = AdamState(params)
    sched = LrSchedule(cfg)
    log = TrainLog()
    best_snapshot = net.snapshot()
    step = 0

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        lr = sched.lr
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc = {key: np.zeros_like(arr) for key, arr in params.items()}
            for idx in batch:
                value, grad = loss(
                    head,
                    net.forward(train_x[idx], training=True, rng=dropout_rng),
                    train_y[idx:idx + 1],
                )
                loss_sum += value
                for key, g in net.backward(grad).items():
                    acc[key] += g
            if not cfg.freeze_params:
                scale = 1.0 / len(batch)
                for key in acc:
                    acc[key] *= scale
                step += 1
                adam_step(params, acc, adam, lr, step,
                          cfg.beta1, cfg.beta2, cfg.adam_epsilon)
        train_loss = loss_sum / n
        val_loss = evaluate_loss(net, val_x, val_y, head)
        improved, stop = sched.update(val_loss)
        if improved:
            best_snapshot = net.snapshot()
        log.epochs.append(EpochRecord(epoch, train_loss, val_loss, lr,
                                      time.perf_counter() - t0))
        if stop:
            log.stop_reason = "early_stop"
            break
    else:
        log.stop_reason = "max_epochs"

    net.set_params(best_snapshot)
    return net, log
