"""Two-layer MLP with hand-written backpropagation for downstream utility.

Architecture: fixed input standardization -> linear(d, h) -> ReLU -> dropout
-> linear(h, c). Training minimizes label-smoothed cross-entropy plus an L2
penalty by mini-batch SGD with an optional cosine-annealed learning rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core.errors import ConfigurationError, ContractError
from .core.io import read_blocks, write_blocks
from .core.types import EmbeddingDataset

MODEL_MAGIC = b"DPNN"
MODEL_VERSION = 1
_VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class MlpConfig:
    hidden_dim: int = 128
    dropout: float = 0.5
    epochs: int = 50
    batch_size: int = 512
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    label_smoothing: float = 0.2
    lr_schedule: str = "cosine"

    def __post_init__(self):
        for name in ("hidden_dim", "epochs", "batch_size"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value}")
        if not self.learning_rate > 0 or self.weight_decay < 0:
            raise ConfigurationError("learning_rate must be positive and weight_decay nonnegative")
        if not (0 <= self.dropout < 1 and 0 <= self.label_smoothing < 1):
            raise ConfigurationError("dropout and label_smoothing must lie in [0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError("lr_schedule must be 'constant' or 'cosine'")


@dataclass(eq=False)
class MlpModel:
    w1: np.ndarray
    b1: np.ndarray
    norm_mean: np.ndarray
    norm_var: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    loss_history: tuple = field(default=())

    @property
    def d(self) -> int:
        return self.w1.shape[0]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]

    def params(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def smoothed_targets(labels, num_classes, smoothing) -> np.ndarray:
    targets = np.full((labels.shape[0], num_classes), smoothing / num_classes)
    targets[np.arange(labels.shape[0]), labels] += 1.0 - smoothing
    return targets


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grads(params, X, targets, norm_mean, norm_var, weight_decay, mask=None):
    """Loss and gradients for one batch.

    ``mask`` is the (already rescaled) dropout mask over hidden units; None
    means no dropout. The L2 penalty ``weight_decay / 2 * ||W||^2`` covers
    both weight matrices but not the biases.
    """
    z = (X - norm_mean) / np.sqrt(norm_var)
    pre = z @ params["w1"] + params["b1"]
    hidden = np.maximum(pre, 0.0)
    if mask is not None:
        hidden = hidden * mask
    logits = hidden @ params["w2"] + params["b2"]
    log_probs = _log_softmax(logits)
    batch = X.shape[0]
    loss = -(targets * log_probs).sum() / batch
    loss += 0.5 * weight_decay * ((params["w1"] ** 2).sum() + (params["w2"] ** 2).sum())

    dlogits = (np.exp(log_probs) - targets) / batch
    grads = {"w2": hidden.T @ dlogits + weight_decay * params["w2"], "b2": dlogits.sum(axis=0)}
    dhidden = dlogits @ params["w2"].T
    if mask is not None:
        dhidden = dhidden * mask
    dpre = dhidden * (pre > 0)
    grads["w1"] = z.T @ dpre + weight_decay * params["w1"]
    grads["b1"] = dpre.sum(axis=0)
    return float(loss), grads


def init_mlp(d, num_classes, hidden_dim, norm_mean, norm_var, rng) -> MlpModel:
    return MlpModel(
        w1=rng.normal(0.0, math.sqrt(2.0 / d), size=(d, hidden_dim)),
        b1=np.zeros(hidden_dim),
        norm_mean=np.asarray(norm_mean, dtype=np.float64),
        norm_var=np.maximum(np.asarray(norm_var, dtype=np.float64), _VAR_FLOOR),
        w2=rng.normal(0.0, math.sqrt(1.0 / hidden_dim), size=(hidden_dim, num_classes)),
        b2=np.zeros(num_classes),
    )


def train_mlp(train: EmbeddingDataset, cfg: MlpConfig, rng) -> MlpModel:
    if train.labels is None:
        raise ContractError("training data needs labels")
    if np.unique(train.labels).size < 2:
        raise ContractError("training data must contain at least two classes")
    X, y = train.data, train.labels
    n, d = X.shape
    c = int(y.max()) + 1
    model = init_mlp(d, c, cfg.hidden_dim, X.mean(axis=0), X.var(axis=0), rng)
    params = model.params()
    targets = smoothed_targets(y, c, cfg.label_smoothing)
    batch = min(cfg.batch_size, n)
    keep = 1.0 - cfg.dropout
    history = []
    for epoch in range(cfg.epochs):
        if cfg.lr_schedule == "cosine":
            lr = cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
        else:
            lr = cfg.learning_rate
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            mask = None
            if cfg.dropout > 0:
                mask = (rng.random((idx.size, cfg.hidden_dim)) < keep) / keep
            loss, grads = loss_and_grads(params, X[idx], targets[idx], model.norm_mean,
                                         model.norm_var, cfg.weight_decay, mask)
            total += loss * idx.size
            for name, g in grads.items():
                params[name] -= lr * g
        history.append(total / n)
    model.loss_history = tuple(history)
    return model


def predict_logits(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ContractError(f"expected inputs of dimension {model.d}, got shape {X.shape}")
    z = (X - model.norm_mean) / np.sqrt(model.norm_var)
    return np.maximum(z @ model.w1 + model.b1, 0.0) @ model.w2 + model.b2


def predict(model: MlpModel, X) -> np.ndarray:
    return np.argmax(predict_logits(model, X), axis=1)


def evaluate(model: MlpModel, test: EmbeddingDataset) -> float:
    """Fraction of test points whose argmax prediction equals the label."""
    if test is None or test.n == 0:
        raise ContractError("test set is empty")
    if test.labels is None:
        raise ContractError("test data needs labels")
    if test.d != model.d:
        raise ContractError(f"model expects d={model.d}, test data has d={test.d}")
    return float(np.mean(predict(model, test.data) == test.labels))


def subsample(ds: EmbeddingDataset, n, rng) -> EmbeddingDataset:
    """Random subset of size ``n`` (the whole set when it is no larger)."""
    if ds.n <= n:
        return ds
    return ds.take(np.sort(rng.choice(ds.n, size=n, replace=False)))


def save_mlp(model: MlpModel, path) -> None:
    blocks = {"w1": model.w1, "b1": model.b1, "norm_mean": model.norm_mean,
              "norm_var": model.norm_var, "w2": model.w2, "b2": model.b2,
              "loss_history": np.asarray(model.loss_history, dtype=np.float64)}
    write_blocks(path, MODEL_MAGIC, MODEL_VERSION, blocks)


def load_mlp(path) -> MlpModel:
    version, blocks, _ = read_blocks(path, MODEL_MAGIC)
    if version != MODEL_VERSION:
        raise ContractError(f"unsupported MLP model version {version}")
    history = tuple(float(v) for v in blocks.pop("loss_history", ()))
    return MlpModel(loss_history=history, **blocks)
