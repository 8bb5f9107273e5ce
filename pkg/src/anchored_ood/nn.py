"""Dense MLP with exact backpropagation, cross-entropy loss and momentum SGD.

Every tensor is a float64 ``numpy.ndarray``; batches are row-major
``(batch, features)`` matrices and layer weights are stored ``(fan_in, fan_out)``
so that a layer is ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ShapeError

DTYPE = np.float64


def as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {x.shape}")
    return x


# --------------------------------------------------------------------------
# Elementwise / row-wise functions
# --------------------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def logsumexp_rows(logits) -> np.ndarray:
    """Row-wise ``log(sum(exp(z)))`` stabilized by subtracting the row max."""
    z = as_matrix(logits)
    m = z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]


def log_softmax(logits) -> np.ndarray:
    z = as_matrix(logits)
    return z - logsumexp_rows(z)[:, None]


def softmax(logits) -> np.ndarray:
    z = as_matrix(logits)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------


@dataclass
class MlpModel:
    """Fully connected ReLU network; the last layer is linear (logits).

    ``layer_sizes[0]`` is the input width (``2*d`` for an anchored model)
    and ``layer_sizes[-1]`` is the number of classes.
    """

    layer_sizes: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ShapeError("an MLP needs at least an input and an output size")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("number of parameter tensors does not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ShapeError(
                    f"layer {i}: weight {w.shape} / bias {b.shape} inconsistent with {expected}"
                )

    @classmethod
    def init(cls, layer_sizes: Sequence[int], seed: int = 0) -> "MlpModel":
        """He-uniform weights (``U(-sqrt(6/fan_in), sqrt(6/fan_in))``), zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out, dtype=DTYPE))
        return cls(tuple(layer_sizes), weights, biases, init_seed=seed)

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def params(self) -> List[np.ndarray]:
        """Parameters in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "MlpModel":
        return MlpModel(
            self.layer_sizes,
            [np.asarray(p, dtype=DTYPE) for p in params[0::2]],
            [np.asarray(p, dtype=DTYPE) for p in params[1::2]],
            self.activation,
            self.init_seed,
        )

    def copy(self) -> "MlpModel":
        return self.with_params([p.copy() for p in self.params()])


def _check_input(model: MlpModel, batch: np.ndarray) -> np.ndarray:
    batch = as_matrix(batch)
    if batch.shape[1] != model.input_dim:
        raise ShapeError(
            f"batch has {batch.shape[1]} features but the model expects {model.input_dim}"
        )
    return batch


def _forward_cache(model: MlpModel, batch: np.ndarray):
    acts = [batch]
    pre = []
    h = batch
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else relu(z)
        acts.append(h)
    return acts, pre


def forward(model: MlpModel, batch) -> np.ndarray:
    """Logits of shape ``(batch, num_classes)``."""
    batch = _check_input(model, batch)
    return _forward_cache(model, batch)[0][-1]


def predict(model: MlpModel, batch) -> np.ndarray:
    return forward(model, batch).argmax(axis=1)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    lsm = log_softmax(logits)
    return float(-lsm[np.arange(len(labels)), labels].mean())


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != n_rows:
        raise ShapeError(f"expected {n_rows} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integer class indices")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels


def backward(model: MlpModel, batch, labels, return_logits: bool = False):
    """Gradients of the mean cross-entropy w.r.t. every parameter.

    Returns ``(grads, loss)`` with ``grads`` ordered like :meth:`MlpModel.params`,
    or ``(grads, loss, logits)`` when ``return_logits`` is set.
    """
    batch = _check_input(model, batch)
    labels = _check_labels(labels, batch.shape[0], model.num_classes)
    acts, pre = _forward_cache(model, batch)
    logits = acts[-1]
    n = batch.shape[0]

    lsm = log_softmax(logits)
    loss = float(-lsm[np.arange(n), labels].mean())

    delta = np.exp(lsm)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grads: List[np.ndarray] = [None] * (2 * len(model.weights))
    for i in range(len(model.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0)
    if return_logits:
        return grads, loss, logits
    return grads, loss


# --------------------------------------------------------------------------
# Optimizer
# --------------------------------------------------------------------------


@dataclass
class SgdConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: Tuple[Tuple[int, float], ...] = ()
    epochs: int = 100
    batch_size: int = 64
    shuffle_seed: int = 0

    def __post_init__(self):
        self.schedule = tuple((int(e), float(m)) for e, m in self.schedule)
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if any(m <= 0 for _, m in self.schedule):
            raise ValueError("schedule multipliers must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def lr_at(self, epoch: int) -> float:
        """Learning rate in force during ``epoch`` (0-based).

        A schedule entry ``(e, m)`` multiplies the rate from epoch ``e`` on,
        i.e. after ``e`` epochs have completed.
        """
        lr = self.lr
        for e, m in self.schedule:
            if epoch >= e:
                lr *= m
        return lr


@dataclass
class SgdState:
    momentum_buffers: List[np.ndarray] = field(default_factory=list)
    steps: int = 0


def sgd_step(
    model: MlpModel,
    grads: Sequence[np.ndarray],
    state: SgdState,
    config: SgdConfig,
    lr: float | None = None,
) -> Tuple[MlpModel, SgdState]:
    """One heavy-ball step: ``g += wd*p; buf = mu*buf + g; p -= lr*buf``.

    ``lr`` overrides ``config.lr`` (the training loop passes the scheduled rate).
    """
    params = model.params()
    if len(grads) != len(params):
        raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
    lr = config.lr if lr is None else lr

    buffers = state.momentum_buffers or [np.zeros_like(p) for p in params]
    new_params, new_buffers = [], []
    for p, g, buf in zip(params, grads, buffers):
        g = g + config.weight_decay * p if config.weight_decay else g
        buf = config.momentum * buf + g
        new_buffers.append(buf)
        new_params.append(p - lr * buf)
    return model.with_params(new_params), SgdState(new_buffers, state.steps + 1)
