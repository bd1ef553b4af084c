"""Training loop: seeded mini-batch epochs, dev-set early stopping with
best-weight restoration, and whole-split evaluation."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DivergenceError
from .metrics import Metrics, compute_metrics, mse_loss
from .models import Model
from .optim import Adam, SGD
from .rng import derive_rng

EVAL_BATCH = 64


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 20
    early_stop_patience: int = 3
    seed: int = 0
    precision: str = "f32"
    # optional extension: stop as soon as dev mean R^2 reaches this value
    target_dev_r2: float | None = None

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be >= 0")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be 'f32' or 'f64', got {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


@dataclass
class EpochStats:
    epoch: int
    train_mse: float
    dev_mse: float
    dev_mean_r2: float


@dataclass
class FitResult:
    model: Model
    history: list[EpochStats] = field(default_factory=list)

    @property
    def best_dev_mse(self) -> float:
        return min(h.dev_mse for h in self.history)


class ArrayDataset:
    """Minimal in-memory dataset: named splits of (inputs, targets) pairs."""

    def __init__(self, splits: dict[str, tuple[np.ndarray, np.ndarray]]):
        for name, (x, y) in splits.items():
            if len(x) != len(y):
                raise DataError(f"split {name!r}: {len(x)} inputs vs {len(y)} targets")
        self.splits = splits

    def size(self, split: str) -> int:
        return len(self.splits[split][0])

    def batch(self, split: str, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.splits[split]
        return x[indices], y[indices]


def evaluate(model: Model, dataset, split: str, batch_size: int = EVAL_BATCH) -> Metrics:
    """Metrics over an entire split in eval mode; side-effect free."""
    n = dataset.size(split)
    if n == 0:
        raise DataError(f"split {split!r} is empty")
    preds = []
    targets = []
    for lo in range(0, n, batch_size):
        idx = np.arange(lo, min(lo + batch_size, n))
        x, y = dataset.batch(split, idx)
        preds.append(model.forward(x, train=False))
        targets.append(y)
    return compute_metrics(np.concatenate(preds).astype(np.float64),
                           np.concatenate(targets).astype(np.float64))


def fit(model: Model, dataset, config: TrainConfig) -> FitResult:
    """Mini-batch training with per-epoch dev evaluation.

    Shuffling, dropout and initialization draw from independent sub-streams
    of ``config.seed``. The weights of the best dev-MSE epoch are restored
    before returning. Stops early after ``early_stop_patience`` consecutive
    non-improving epochs, or once ``target_dev_r2`` is reached (when set).
    """
    n_train = dataset.size("train")
    if n_train == 0:
        raise DataError("train split is empty")
    if dataset.size("dev") == 0:
        raise DataError("dev split is empty")

    shuffle_rng = derive_rng(config.seed, "shuffle")
    dropout_rng = derive_rng(config.seed, "dropout")
    params = model.parameters()
    if config.optimizer == "adam":
        opt = Adam(params, lr=config.learning_rate, beta1=config.beta1,
                   beta2=config.beta2, eps=config.eps)
    else:
        opt = SGD(params, lr=config.learning_rate)

    dtype = config.dtype
    history: list[EpochStats] = []
    best_mse = np.inf
    best_weights = model.clone_parameters()
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n_train)
        total = 0.0
        for lo in range(0, n_train, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            x, y = dataset.batch("train", idx)
            x = x.astype(dtype, copy=False)
            y = y.astype(dtype, copy=False)
            out = model.forward(x, train=True, rng=dropout_rng)
            loss, grad = mse_loss(out, y)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch} "
                    f"(batch starting at {lo})"
                )
            total += loss * len(idx)
            model.zero_grads()
            model.backward(grad)
            opt.step(model.gradients())
        train_mse = total / n_train
        dev = evaluate(model, dataset, "dev")
        history.append(EpochStats(epoch, train_mse, dev.mse, dev.mean_r2))
        if dev.mse < best_mse:
            best_mse = dev.mse
            best_weights = model.clone_parameters()
            stale = 0
        else:
            stale += 1
        if config.target_dev_r2 is not None and dev.mean_r2 >= config.target_dev_r2:
            break
        if stale > 0 and stale >= config.early_stop_patience:
            break
    model.set_parameters(best_weights)
    return FitResult(model=model, history=history)


def history_to_csv(history: list[EpochStats]) -> str:
    buf = io.StringIO()
    buf.write("epoch,train_mse,dev_mse,dev_mean_r2\n")
    for row in history:
        buf.write(f"{row.epoch},{row.train_mse!r},{row.dev_mse!r},{row.dev_mean_r2!r}\n")
    return buf.getvalue()
