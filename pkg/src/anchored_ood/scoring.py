"""Anchor-marginalized inference, heteroscedastic temperature scaling and OOD scores.

For a test input ``x`` and ``K`` anchors ``c_k`` the model produces logits
``f([c_k, x - c_k])``. Their mean over anchors is the prediction ``H``; the
per-sample temperature ``tau`` is the sum over classes of the (population)
standard deviation across anchors of ``sigmoid(logits)``. Calibrated logits
are ``H / max(tau, eps)`` ("direct") or ``H / (1 + exp(tau))`` ("softened").
The AMP score is ``-mean_classes(log_softmax(H_c))``; higher means more
in-distribution.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Sequence

import numpy as np

from .anchoring import anchor_inputs
from .errors import ShapeError
from .nn import MlpModel, as_matrix, forward, log_softmax, logsumexp_rows, sigmoid

SCORE_RULES = ("amp", "msp", "entropy", "energy")
# orientation handed to the metrics module
HIGHER_IS_ID = {"amp": True, "msp": True, "entropy": False, "energy": False,
                "msp_calibrated": True, "entropy_calibrated": False}
SCORE_CSV_VERSION = "scores/1"
SCORE_CSV_COLUMNS = ("sample_id", "label", "is_ood", "tau", "amp", "msp", "entropy",
                     "energy", "pred_class")


@dataclass(frozen=True)
class TemperatureMode:
    variant: str = "softened"
    epsilon: float = 1e-6
    ddof: int = 0

    def __post_init__(self):
        if self.variant not in ("direct", "softened"):
            raise ValueError(f"unknown temperature variant {self.variant!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.ddof not in (0, 1):
            raise ValueError("ddof must be 0 (population) or 1 (sample)")

    def denominator(self, tau: np.ndarray) -> np.ndarray:
        tau = np.asarray(tau, dtype=np.float64)
        if self.variant == "direct":
            return np.maximum(tau, self.epsilon)
        return 1.0 + np.exp(tau)


@dataclass
class ScoredSample:
    mean_logits: np.ndarray
    tau: float
    calibrated_logits: np.ndarray
    scores: Dict[str, float]
    k_anchors: int

    @property
    def pred_class(self) -> int:
        return int(np.argmax(self.mean_logits))


def anchored_logits(model: MlpModel, inputs, anchors) -> np.ndarray:
    """Logits for every (anchor, input) pair, shape ``(K, n, N)``."""
    inputs = as_matrix(inputs)
    anchors = as_matrix(anchors)
    if anchors.shape[0] == 0:
        raise ValueError("at least one anchor is required (K >= 1)")
    if model.input_dim != 2 * inputs.shape[1]:
        raise ShapeError(
            f"anchored model expects input width {model.input_dim}, "
            f"got data of dim {inputs.shape[1]} (anchored width {2 * inputs.shape[1]})"
        )
    return np.stack([forward(model, anchor_inputs(inputs, c)) for c in anchors])


def marginalize(preds: np.ndarray, mode: TemperatureMode = TemperatureMode()):
    """Reduce ``(K, n, N)`` per-anchor logits to ``(H, tau, H_c)``.

    Reductions run over values sorted along the anchor axis so the result is
    bitwise independent of anchor order.
    """
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 3 or preds.shape[0] == 0:
        raise ValueError("expected a non-empty (K, n, N) stack of logits")
    k = preds.shape[0]
    # shifting by the per-entry minimum keeps identical anchors exact (H == logits, tau == 0)
    ordered = np.sort(preds, axis=0)
    h = ordered[0] + (ordered - ordered[:1]).mean(axis=0)
    probs = np.sort(sigmoid(preds), axis=0)
    if k == 1 or k - mode.ddof < 1:
        tau = np.zeros(preds.shape[1])
    else:
        tau = (probs - probs[:1]).std(axis=0, ddof=mode.ddof).sum(axis=1)
    hc = h / mode.denominator(tau)[:, None]
    return h, tau, hc


def amp_score(calibrated_logits) -> np.ndarray | float:
    """``-(1/N) * sum_classes log softmax(H_c)``; minimum ``ln N`` at uniform logits."""
    z = np.asarray(calibrated_logits, dtype=np.float64)
    out = -log_softmax(z).mean(axis=1)
    return float(out[0]) if z.ndim == 1 else out


def baseline_scores(mean_logits) -> Dict[str, np.ndarray]:
    """MSP, predictive entropy and energy (``-logsumexp``) from mean logits.

    Entropy and energy are stored raw: lower values indicate ID.
    """
    z = as_matrix(mean_logits)
    lsm = log_softmax(z)
    p = np.exp(lsm)
    return {
        "msp": p.max(axis=1),
        "entropy": -(p * lsm).sum(axis=1),
        "energy": -logsumexp_rows(z),
    }


def calibrated_variants(calibrated_logits) -> Dict[str, np.ndarray]:
    """AMP plus MSP and entropy evaluated on the calibrated logits."""
    z = as_matrix(calibrated_logits)
    base = baseline_scores(z)
    return {"amp": amp_score(z), "msp_calibrated": base["msp"],
            "entropy_calibrated": base["entropy"]}


def marginalized_inference(
    model: MlpModel, x, anchors, mode: TemperatureMode = TemperatureMode()
) -> ScoredSample:
    """Score a single input against ``K`` anchors."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    h, tau, hc = marginalize(anchored_logits(model, x, anchors), mode)
    scores = {"amp": float(amp_score(hc)[0])}
    scores.update({k: float(v[0]) for k, v in baseline_scores(h).items()})
    return ScoredSample(h[0], float(tau[0]), hc[0], scores, len(as_matrix(anchors)))


# --------------------------------------------------------------------------
# Dataset-level scoring
# --------------------------------------------------------------------------


@dataclass
class ScoreTable:
    """Column-oriented per-sample scores; one row per test sample."""

    sample_id: np.ndarray
    label: np.ndarray
    is_ood: np.ndarray
    tau: np.ndarray
    amp: np.ndarray
    msp: np.ndarray
    entropy: np.ndarray
    energy: np.ndarray
    pred_class: np.ndarray
    meta: Dict[str, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.sample_id)

    def rule(self, name: str) -> np.ndarray:
        if name not in SCORE_RULES and name != "tau":
            raise KeyError(f"unknown scoring rule {name!r}")
        return getattr(self, name)

    def select(self, mask) -> "ScoreTable":
        mask = np.asarray(mask)
        return ScoreTable(*(getattr(self, c)[mask] for c in SCORE_CSV_COLUMNS), meta=dict(self.meta))

    @classmethod
    def concat(cls, tables: Sequence["ScoreTable"]) -> "ScoreTable":
        cols = [np.concatenate([getattr(t, c) for t in tables]) for c in SCORE_CSV_COLUMNS]
        cols[0] = np.arange(len(cols[0]))
        return cls(*cols, meta=dict(tables[0].meta) if tables else {})

    def to_csv(self) -> str:
        buf = io.StringIO()
        meta = ",".join(f"{k}={self.meta[k]}" for k in sorted(self.meta))
        buf.write(f"# format={SCORE_CSV_VERSION}" + (f",{meta}" if meta else "") + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SCORE_CSV_COLUMNS)
        for i in range(len(self)):
            w.writerow([
                int(self.sample_id[i]), int(self.label[i]), int(self.is_ood[i]),
                *(repr(float(getattr(self, c)[i])) for c in ("tau", "amp", "msp", "entropy", "energy")),
                int(self.pred_class[i]),
            ])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "ScoreTable":
        lines = Path(path).read_text().splitlines()
        meta = {}
        if lines and lines[0].startswith("#"):
            for item in lines[0][1:].strip().split(","):
                k, _, v = item.partition("=")
                meta[k] = v
            lines = lines[1:]
        rows = list(csv.reader(lines))
        if not rows or tuple(rows[0]) != SCORE_CSV_COLUMNS:
            raise ValueError(f"score CSV header must be {','.join(SCORE_CSV_COLUMNS)}")
        body = rows[1:]
        ints = ("sample_id", "label", "is_ood", "pred_class")
        cols = []
        for j, name in enumerate(SCORE_CSV_COLUMNS):
            kind = np.int64 if name in ints else np.float64
            cols.append(np.array([r[j] for r in body], dtype=kind))
        meta.pop("format", None)
        return cls(*cols, meta=meta)


def draw_anchors(anchor_pool, k: int, seed: int) -> np.ndarray:
    """``k`` rows sampled uniformly without replacement; one fixed draw per evaluation run."""
    pool = as_matrix(anchor_pool)
    if pool.shape[0] == 0:
        raise ValueError("anchor pool is empty")
    if not 1 <= k <= pool.shape[0]:
        raise ValueError(f"K must lie in [1, {pool.shape[0]}], got {k}")
    idx = np.random.default_rng(seed).choice(pool.shape[0], size=k, replace=False)
    return pool[np.sort(idx)]


def score_dataset(
    model: MlpModel,
    features,
    anchor_pool=None,
    k: int = 5,
    mode: TemperatureMode = TemperatureMode(),
    seed: int = 0,
    labels=None,
    is_ood=None,
    anchored: bool = True,
    anchors=None,
) -> ScoreTable:
    """Score every row of ``features``.

    The same ``k`` anchors (drawn once from ``anchor_pool`` with ``seed``, or
    passed explicitly) are reused for every sample. With ``anchored=False``
    the model is a vanilla classifier: ``tau`` is 0 and AMP uses the raw logits.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0] if x.size else 0
    if anchored and anchors is None:
        anchors = draw_anchors(anchor_pool, k, seed)
    meta = {"k": str(len(anchors) if anchored else 0), "temperature": mode.variant,
            "anchored": str(anchored).lower()}
    if n == 0:
        empty = np.zeros(0)
        ints = np.zeros(0, dtype=np.int64)
        return ScoreTable(ints, ints, ints, empty, empty, empty, empty, empty, ints, meta)
    x = as_matrix(x)
    if anchored:
        h, tau, hc = marginalize(anchored_logits(model, x, anchors), mode)
    else:
        h = forward(model, x)
        tau, hc = np.zeros(n), h
    base = baseline_scores(h)
    labels = np.full(n, -1, np.int64) if labels is None else np.asarray(labels, np.int64)
    is_ood = np.zeros(n, np.int64) if is_ood is None else np.broadcast_to(np.asarray(is_ood, np.int64), (n,))
    return ScoreTable(
        np.arange(n), labels, np.array(is_ood), tau, amp_score(hc),
        base["msp"], base["entropy"], base["energy"], h.argmax(axis=1), meta,
    )


def split_populations(table: ScoreTable, rule: str):
    """``(id_scores, ood_scores, higher_is_id)`` for one rule of a mixed table."""
    scores = table.rule(rule)
    ood = table.is_ood.astype(bool)
    return scores[~ood], scores[ood], HIGHER_IS_ID[rule]
