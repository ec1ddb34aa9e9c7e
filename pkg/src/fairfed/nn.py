"""Single-hidden-layer ReLU MLP with analytic gradients and minibatch SGD.

Parameters live in one flat float64 vector laid out row-major as
``W1 (in x hidden), b1, W2 (hidden x classes), b2``.  All functions are
pure: they never mutate their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import ConfigError, DomainError, ShapeError

DEFAULT_HIDDEN = 128


def param_count(input_dim: int, hidden_dim: int, num_classes: int) -> int:
    return input_dim * hidden_dim + hidden_dim + hidden_dim * num_classes + num_classes


@dataclass(frozen=True, eq=False)
class ModelParams:
    input_dim: int
    hidden_dim: int
    num_classes: int
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        expected = param_count(self.input_dim, self.hidden_dim, self.num_classes)
        if values.ndim != 1 or values.size != expected:
            raise ShapeError(f"expected {expected} parameters, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.input_dim, self.hidden_dim, self.num_classes

    def with_values(self, values: np.ndarray) -> ModelParams:
        return ModelParams(self.input_dim, self.hidden_dim, self.num_classes, values)

    def unpack(self):
        """Views ``(W1, b1, W2, b2)`` into :attr:`values`."""
        d, h, c = self.dims
        v = self.values
        i = d * h
        W1 = v[:i].reshape(d, h)
        b1 = v[i:i + h]
        W2 = v[i + h:i + h + h * c].reshape(h, c)
        b2 = v[i + h + h * c:]
        return W1, b1, W2, b2

    @classmethod
    def pack(cls, W1, b1, W2, b2) -> ModelParams:
        W1 = np.asarray(W1, dtype=np.float64)
        W2 = np.asarray(W2, dtype=np.float64)
        d, h = W1.shape
        c = W2.shape[1]
        values = np.concatenate([W1.ravel(), np.ravel(b1), W2.ravel(), np.ravel(b2)])
        return cls(d, h, c, values)


@dataclass(frozen=True, eq=False)
class Batch:
    """Feature matrix with integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ShapeError(f"{X.shape[0]} feature rows but labels of shape {y.shape}")
        if y.size and y.min() < 0:
            raise DomainError("labels must be non-negative")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    def subset(self, index) -> Batch:
        return Batch(self.features[index], self.labels[index])


def _check_batch(params: ModelParams, batch: Batch, *, nonempty=True):
    if batch.features.shape[1] != params.input_dim:
        raise ShapeError(
            f"feature width {batch.features.shape[1]} != input_dim {params.input_dim}")
    if nonempty and len(batch) == 0:
        raise DomainError("batch is empty")
    if len(batch) and batch.labels.max() >= params.num_classes:
        raise DomainError(f"label {batch.labels.max()} >= num_classes {params.num_classes}")


def init_params(seed, dims: tuple[int, int, int]) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    d, h, c = (int(x) for x in dims)
    if min(d, h, c) < 1:
        raise ConfigError(f"all dimensions must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (d + h))
    lim2 = np.sqrt(6.0 / (h + c))
    W1 = rng.uniform(-lim1, lim1, size=(d, h))
    W2 = rng.uniform(-lim2, lim2, size=(h, c))
    return ModelParams.pack(W1, np.zeros(h), W2, np.zeros(c))


def forward(params: ModelParams, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"expected (n, {params.input_dim}) features, got {X.shape}")
    W1, b1, W2, b2 = params.unpack()
    hidden = np.maximum(X @ W1 + b1, 0.0)
    return hidden @ W2 + b2


def loss_and_grad(params: ModelParams, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the flat parameters."""
    _check_batch(params, batch)
    grad = np.empty_like(params.values)
    loss = kernels.mlp_loss_grad(params.values, batch.features, batch.labels,
                                 *params.dims, grad)
    return float(loss), grad


def loss(params: ModelParams, batch: Batch) -> float:
    return loss_and_grad(params, batch)[0]


def sgd_epochs(params: ModelParams, data: Batch, epochs: int, lr: float,
               batch_size: int, seed) -> ModelParams:
    """Plain minibatch SGD, reshuffling every epoch from ``seed``.

    The trailing partial batch is kept.
    """
    if epochs < 0 or batch_size < 1 or not lr > 0:
        raise ConfigError(f"bad SGD settings: epochs={epochs} lr={lr} batch_size={batch_size}")
    if epochs == 0:
        return params
    _check_batch(params, data)
    values = params.values.copy()
    rng = np.random.default_rng(seed)
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n).astype(np.int64)
        kernels.sgd_epoch(values, data.features, data.labels, order, *params.dims,
                          float(lr), int(batch_size))
    return params.with_values(values)


def predict(params: ModelParams, features) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    return np.argmax(forward(params, features), axis=1)


def accuracy(params: ModelParams, data: Batch) -> float:
    if len(data) == 0:
        raise DomainError("accuracy of an empty batch is undefined")
    _check_batch(params, data)
    return float(np.mean(predict(params, data.features) == data.labels))
