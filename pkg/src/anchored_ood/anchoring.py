"""Anchored input representation ``x -> [c, x - c]`` and the anchored training loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .nn import MlpModel, SgdConfig, SgdState, as_matrix, backward, sgd_step

TRANSFORM_KINDS = ("identity", "gaussian_noise", "random_scale", "random_mask")


def anchor_inputs(inputs, anchors) -> np.ndarray:
    """Concatenate ``[anchor, input - anchor]`` row by row (or one anchor for all rows)."""
    inputs = as_matrix(inputs)
    anchors = as_matrix(anchors)
    if anchors.shape[1] != inputs.shape[1]:
        raise ShapeError(f"anchor dim {anchors.shape[1]} != input dim {inputs.shape[1]}")
    anchors = np.broadcast_to(anchors, inputs.shape)
    return np.hstack([anchors, inputs - anchors])


@dataclass
class AnchoredBatch:
    """One mini-batch in anchored form.

    ``residuals`` always use the anchors *before* any consistency transform;
    ``anchors`` holds whatever the model sees in the first half.
    """

    anchors: np.ndarray
    residuals: np.ndarray
    labels: np.ndarray
    transformed: bool = False

    @property
    def concatenated(self) -> np.ndarray:
        return np.hstack([self.anchors, self.residuals])


def _anchor_indices(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    if m >= n:
        return rng.permutation(m)[:n]
    # fewer anchors than inputs: concatenated permutations keep usage balanced
    reps = -(-n // m)
    return np.concatenate([rng.permutation(m) for _ in range(reps)])[:n]


def make_anchored_batch(
    inputs,
    labels,
    anchor_source,
    rng: np.random.Generator | None = None,
    permutation: Sequence[int] | None = None,
) -> AnchoredBatch:
    """Pair each input with a row of ``anchor_source`` chosen by a seeded shuffle.

    ``permutation`` fixes the assignment explicitly (``anchor_source[permutation[i]]``
    anchors ``inputs[i]``); otherwise ``rng`` draws it.
    """
    inputs = as_matrix(inputs)
    source = as_matrix(anchor_source)
    if source.shape[0] < 1:
        raise ValueError("anchor source is empty")
    if source.shape[1] != inputs.shape[1]:
        raise ShapeError(f"anchor dim {source.shape[1]} != input dim {inputs.shape[1]}")
    if permutation is None:
        rng = rng if rng is not None else np.random.default_rng()
        idx = _anchor_indices(inputs.shape[0], source.shape[0], rng)
    else:
        idx = np.asarray(permutation, dtype=np.int64)
        if idx.shape != (inputs.shape[0],):
            raise ShapeError("permutation length must equal the number of inputs")
    anchors = source[idx]
    return AnchoredBatch(anchors, inputs - anchors, np.asarray(labels))


# --------------------------------------------------------------------------
# Consistency transforms on the anchor half
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Transform:
    """One anchor perturbation.

    ``gaussian_noise``: params ``(sigma,)``; ``random_scale``: ``(low, high)``
    per-row factor; ``random_mask``: ``(p,)`` per-feature zeroing probability.
    """

    kind: str
    params: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        k, p = self.kind, self.params
        if k not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform {k!r}; choose from {TRANSFORM_KINDS}")
        ok = {
            "identity": len(p) == 0,
            "gaussian_noise": len(p) == 1 and p[0] >= 0,
            "random_scale": len(p) == 2 and 0 < p[0] <= p[1],
            "random_mask": len(p) == 1 and 0 <= p[0] <= 1,
        }[k]
        if not ok:
            raise ValueError(f"invalid parameters {p} for transform {k!r}")

    def __call__(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian_noise":
            if self.params[0] == 0:
                return x
            return x + self.params[0] * rng.standard_normal(x.shape)
        if self.kind == "random_scale":
            return x * rng.uniform(self.params[0], self.params[1], (x.shape[0], 1))
        if self.kind == "random_mask":
            if self.params[0] == 0:
                return x
            return x * (rng.random(x.shape) >= self.params[0])
        return x

    def describe(self) -> str:
        return ":".join([self.kind, *(repr(p) for p in self.params)])

    @classmethod
    def parse(cls, text: str) -> "Transform":
        """Parse ``kind[:p1[:p2]]``, e.g. ``random_scale:0.8:1.2``."""
        kind, *params = text.strip().split(":")
        return cls(kind, tuple(float(p) for p in params))


@dataclass
class ConsistencySpec:
    transforms: Tuple[Transform, ...] = ()
    apply_every: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        self.transforms = tuple(self.transforms)
        if self.apply_every < 1:
            raise ValueError("apply_every must be >= 1")

    @property
    def is_noop(self) -> bool:
        return all(t.kind == "identity" for t in self.transforms)


def apply_consistency(
    batch: AnchoredBatch, spec: ConsistencySpec, batch_index: int, rng: np.random.Generator
) -> AnchoredBatch:
    """Replace the anchor half by ``T(anchor)`` when ``batch_index % apply_every == 0``.

    Transforms compose in declared order. Residuals and labels are never touched.
    """
    if batch_index % spec.apply_every or spec.is_noop:
        return batch
    anchors = batch.anchors
    for t in spec.transforms:
        anchors = t(anchors, rng)
    return AnchoredBatch(anchors, batch.residuals, batch.labels, transformed=True)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float
    lr: float


@dataclass
class TrainResult:
    model: MlpModel
    trace: List[EpochRecord] = field(default_factory=list)


def _batch_rng(seed: int, epoch: int, batch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, batch])


def _train(model, features, labels, sgd, spec, anchored) -> TrainResult:
    x = as_matrix(features)
    y = np.asarray(labels, dtype=np.int64)
    n, d = x.shape
    width = 2 * d if anchored else d
    if model.input_dim != width:
        raise ShapeError(
            f"model input width {model.input_dim} != {width} "
            f"({'anchored' if anchored else 'vanilla'} data of dim {d})"
        )
    spec = spec or ConsistencySpec()
    state = SgdState()
    trace = []
    global_batch = 0
    for epoch in range(sgd.epochs):
        lr = sgd.lr_at(epoch)
        order = np.random.default_rng([sgd.shuffle_seed, epoch]).permutation(n)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, n, sgd.batch_size)):
            global_batch += 1
            idx = order[start : start + sgd.batch_size]
            xb, yb = x[idx], y[idx]
            if anchored:
                # anchor pool is the mini-batch itself
                batch = make_anchored_batch(xb, yb, xb, _batch_rng(sgd.shuffle_seed, epoch, b))
                batch = apply_consistency(
                    batch, spec, global_batch, _batch_rng(spec.rng_seed, epoch, b)
                )
                inputs = batch.concatenated
            else:
                inputs = xb
            grads, loss, logits = backward(model, inputs, yb, return_logits=True)
            model, state = sgd_step(model, grads, state, sgd, lr=lr)
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == yb).sum())
        trace.append(EpochRecord(epoch, loss_sum / n, correct / n, lr))
    return TrainResult(model, trace)


def train_anchored(
    model: MlpModel, features, labels, sgd: SgdConfig, spec: ConsistencySpec | None = None
) -> TrainResult:
    """Anchored SGD training; the anchor for each sample is a shuffled row of its own mini-batch.

    The per-epoch trace records mean loss and accuracy over the anchored
    batches seen during that epoch (computed before each step).
    """
    return _train(model, features, labels, sgd, spec, anchored=True)


def train_vanilla(model: MlpModel, features, labels, sgd: SgdConfig) -> TrainResult:
    return _train(model, features, labels, sgd, None, anchored=False)
