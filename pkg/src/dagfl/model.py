"""Flat-parameter softmax classifiers with SGD training and federated averaging.

Models are immutable float64 vectors plus a shape descriptor. Two
architectures: a plain linear softmax head (hidden_dim = 0) and a single
ReLU hidden layer. Loss is mean cross-entropy; gradients are analytic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

WEIGHT_INIT_RANGE = 0.05

PARAMS_FORMAT = "dagfl-model v1"


@dataclass(frozen=True)
class ModelShape:
    input_dim: int
    hidden_dim: int  # 0 selects the linear head
    classes: int

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.hidden_dim < 0:
            raise ValueError(f"hidden_dim must be >= 0, got {self.hidden_dim}")
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")

    def size(self) -> int:
        d, h, c = self.input_dim, self.hidden_dim, self.classes
        if h == 0:
            return c * d + c
        return h * d + h + c * h + c


@dataclass(frozen=True)
class ModelParams:
    values: np.ndarray
    shape: ModelShape

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("parameter vector must be one-dimensional")
        if values.size != self.shape.size():
            raise ValueError(
                f"parameter vector has {values.size} entries, "
                f"shape requires {self.shape.size()}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter vector contains non-finite entries")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def digest(self) -> str:
        s = self.shape
        head = f"{s.input_dim},{s.hidden_dim},{s.classes}:".encode()
        return hashlib.sha256(head + self.values.tobytes()).hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    minibatch_size: int
    epochs: int = 1

    def __post_init__(self):
        # learning_rate 0 is the documented no-op used by identity tests
        if not (self.learning_rate >= 0):
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.minibatch_size < 1:
            raise ValueError(f"minibatch_size must be >= 1, got {self.minibatch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


def init_params(shape: ModelShape, rng: np.random.Generator) -> ModelParams:
    values = rng.uniform(-WEIGHT_INIT_RANGE, WEIGHT_INIT_RANGE, size=shape.size())
    return ModelParams(values, shape)


def _unpack(params: ModelParams):
    s = params.shape
    v = params.values
    d, h, c = s.input_dim, s.hidden_dim, s.classes
    if h == 0:
        W = v[: c * d].reshape(c, d)
        b = v[c * d :]
        return W, b
    o = 0
    W1 = v[o : o + h * d].reshape(h, d)
    o += h * d
    b1 = v[o : o + h]
    o += h
    W2 = v[o : o + c * h].reshape(c, h)
    o += c * h
    b2 = v[o :]
    return W1, b1, W2, b2


def _check_features(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.shape.input_dim:
        raise ValueError(
            f"features must be (n, {params.shape.input_dim}), got {X.shape}"
        )
    return X


def _forward(params: ModelParams, X: np.ndarray):
    """Returns (logits, hidden pre-activation or None, hidden activation or None)."""
    if params.shape.hidden_dim == 0:
        W, b = _unpack(params)
        return X @ W.T + b, None, None
    W1, b1, W2, b2 = _unpack(params)
    pre = X @ W1.T + b1
    act = np.maximum(pre, 0.0)
    return act @ W2.T + b2, pre, act


def _mean_ce(logits: np.ndarray, y: np.ndarray) -> float:
    # log-sum-exp keeps the loss finite for any finite logits
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(y)), y]))


def loss_and_gradient(params: ModelParams, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and its gradient as a flat vector."""
    X = _check_features(params, X)
    y = np.asarray(y)
    n = len(y)
    if n == 0:
        raise ValueError("empty batch")
    logits, pre, act = _forward(params, X)
    loss = _mean_ce(logits, y)

    zmax = logits.max(axis=1, keepdims=True)
    ez = np.exp(logits - zmax)
    probs = ez / ez.sum(axis=1, keepdims=True)
    dz = probs
    dz[np.arange(n), y] -= 1.0
    dz /= n

    if params.shape.hidden_dim == 0:
        dW = dz.T @ X
        db = dz.sum(axis=0)
        grad = np.concatenate([dW.ravel(), db])
    else:
        _W1, _b1, W2, _b2 = _unpack(params)
        dW2 = dz.T @ act
        db2 = dz.sum(axis=0)
        dact = dz @ W2
        dpre = dact * (pre > 0.0)
        dW1 = dpre.T @ X
        db1 = dpre.sum(axis=0)
        grad = np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])
    return loss, grad


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = _check_features(params, X)
    logits, _, _ = _forward(params, X)
    # np.argmax resolves ties toward the lowest class index
    return np.argmax(logits, axis=1)


def evaluate(params: ModelParams, shard) -> tuple[float, float]:
    """Accuracy and mean cross-entropy of the model on a data shard."""
    if len(shard.labels) == 0:
        raise ValueError("cannot evaluate on an empty shard")
    X = _check_features(params, shard.features)
    y = shard.labels
    logits, _, _ = _forward(params, X)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == y))
    return accuracy, _mean_ce(logits, y)


def train(
    start: ModelParams, shard, cfg: TrainConfig, rng: np.random.Generator
) -> tuple[ModelParams, float]:
    """Minibatch SGD from `start` over the shard.

    Each epoch reshuffles the shard and walks it in chunks of
    cfg.minibatch_size, including the final partial chunk. Returns the new
    parameters and the mean over all minibatch losses (measured before each
    step).
    """
    n = len(shard.labels)
    if n == 0:
        raise ValueError("cannot train on an empty shard")
    X = _check_features(start, shard.features)
    y = shard.labels
    values = start.values.copy()
    params = start
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            batch = order[lo : lo + cfg.minibatch_size]
            loss, grad = loss_and_gradient(params, X[batch], y[batch])
            losses.append(loss)
            if cfg.learning_rate != 0.0:
                values = params.values - cfg.learning_rate * grad
                params = ModelParams(values, start.shape)
    return params, float(np.mean(losses))


def federated_average(
    models: list[ModelParams], weights: list[float] | None = None
) -> ModelParams:
    """Weighted average of parameter vectors; uniform 1/len by default."""
    if not models:
        raise ValueError("cannot average zero models")
    shape = models[0].shape
    for m in models[1:]:
        if m.shape != shape:
            raise ValueError("cannot average models of different shapes")
    if weights is None:
        weights = [1.0 / len(models)] * len(models)
    if len(weights) != len(models):
        raise ValueError("one weight per model required")
    if any(w < 0 for w in weights):
        raise ValueError("weights must be non-negative")
    total = sum(weights)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {total!r}")
    out = np.zeros(shape.size())
    for w, m in zip(weights, models):
        out += w * m.values
    return ModelParams(out, shape)


def global_objective(node_losses: list[float]) -> float:
    """Uniform mean of per-node mean losses (equal shard sizes)."""
    if not node_losses:
        raise ValueError("no node losses given")
    return float(np.mean(node_losses))


def save_params(params: ModelParams, path: str) -> None:
    s = params.shape
    with open(path, "w") as f:
        f.write(f"{PARAMS_FORMAT} {s.input_dim} {s.hidden_dim} {s.classes}\n")
        for x in params.values:
            f.write(repr(float(x)) + "\n")


def load_params(path: str) -> ModelParams:
    with open(path) as f:
        header = f.readline().split()
        if header[:2] != PARAMS_FORMAT.split():
            raise ValueError(f"unrecognized model file header in {path}")
        shape = ModelShape(int(header[2]), int(header[3]), int(header[4]))
        values = np.array([float(line) for line in f], dtype=np.float64)
    return ModelParams(values, shape)
