"""OOD detection metrics over an in-distribution and an OOD score population.

Conventions: ID is the positive class for FPR/TPR and DTACC; a sample is
classified ID when ``score >= threshold`` (after orienting scores so higher
means ID). AUROC counts ties as 1/2.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Dict, Iterable

import numpy as np
from scipy.stats import rankdata

METRIC_COLUMNS = ("fpr95", "auroc", "aupr_in", "aupr_out", "dtacc")
METRICS_CSV_VERSION = "metrics/1"


@dataclass
class ScorePopulations:
    id_scores: np.ndarray
    ood_scores: np.ndarray
    higher_is_id: bool = True

    def __post_init__(self):
        self.id_scores = np.asarray(self.id_scores, dtype=np.float64).ravel()
        self.ood_scores = np.asarray(self.ood_scores, dtype=np.float64).ravel()
        if self.id_scores.size == 0 or self.ood_scores.size == 0:
            raise ValueError("both score populations must be non-empty")
        if not (np.all(np.isfinite(self.id_scores)) and np.all(np.isfinite(self.ood_scores))):
            raise ValueError("scores must be finite")

    def oriented(self):
        """``(id, ood)`` with the sign flipped if needed so that higher means ID."""
        if self.higher_is_id:
            return self.id_scores, self.ood_scores
        return -self.id_scores, -self.ood_scores


def _pop(pop_or_id, ood=None, higher_is_id=True) -> ScorePopulations:
    if isinstance(pop_or_id, ScorePopulations):
        return pop_or_id
    return ScorePopulations(pop_or_id, ood, higher_is_id)


def fpr_at_tpr(pop, ood=None, higher_is_id=True, tpr_target: float = 0.95) -> float:
    """OOD false-positive rate at the largest threshold whose ID TPR is >= ``tpr_target``."""
    p = _pop(pop, ood, higher_is_id)
    ids, oods = p.oriented()
    n = ids.size
    desc = np.sort(ids)[::-1]
    # smallest k with k/n >= target, evaluated with the same float division as TPR
    k = int(np.searchsorted(np.arange(1, n + 1) / n, tpr_target, side="left")) + 1
    k = min(k, n)
    threshold = desc[k - 1]
    return float(np.count_nonzero(oods >= threshold) / oods.size)


def auroc(pop, ood=None, higher_is_id=True) -> float:
    """Mann-Whitney U statistic ``P(id > ood) + 0.5 P(id == ood)``."""
    p = _pop(pop, ood, higher_is_id)
    ids, oods = p.oriented()
    ranks = rankdata(np.concatenate([ids, oods]))
    n1, n0 = ids.size, oods.size
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def _average_precision(pos: np.ndarray, neg: np.ndarray) -> float:
    """Step-interpolated PR area ``sum_t (R_t - R_{t-1}) * P_t`` over distinct thresholds."""
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-scores, kind="mergesort")
    scores, is_pos = scores[order], is_pos[order]
    tp = np.cumsum(is_pos)
    fp = np.cumsum(1.0 - is_pos)
    # last index of each run of tied scores
    last = np.r_[np.flatnonzero(np.diff(scores)), scores.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / pos.size
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def aupr(pop, ood=None, higher_is_id=True, positive: str = "in") -> float:
    """Area under the precision-recall curve with ID (``"in"``) or OOD (``"out"``) positive."""
    p = _pop(pop, ood, higher_is_id)
    ids, oods = p.oriented()
    if positive == "in":
        return _average_precision(ids, oods)
    if positive == "out":
        return _average_precision(-oods, -ids)
    raise ValueError("positive must be 'in' or 'out'")


def dtacc(pop, ood=None, higher_is_id=True) -> float:
    """``max_t 0.5 * (TPR(t) + TNR(t))`` over every distinct threshold (plus one above all)."""
    p = _pop(pop, ood, higher_is_id)
    ids, oods = p.oriented()
    thresholds = np.unique(np.concatenate([ids, oods]))
    ids_sorted, oods_sorted = np.sort(ids), np.sort(oods)
    # counts of scores >= t
    tp = ids.size - np.searchsorted(ids_sorted, thresholds, side="left")
    fp = oods.size - np.searchsorted(oods_sorted, thresholds, side="left")
    acc = 0.5 * (tp / ids.size + (oods.size - fp) / oods.size)
    # a threshold above every score (all classified OOD) scores exactly 0.5
    return float(max(acc.max(), 0.5))


def all_metrics(pop, ood=None, higher_is_id=True) -> Dict[str, float]:
    p = _pop(pop, ood, higher_is_id)
    return {
        "fpr95": fpr_at_tpr(p),
        "auroc": auroc(p),
        "aupr_in": aupr(p, positive="in"),
        "aupr_out": aupr(p, positive="out"),
        "dtacc": dtacc(p),
    }


def overlap_coefficient(a_counts, b_counts) -> float:
    """``sum_bins min(p_a, p_b)`` for two histograms on shared bin edges."""
    a = np.asarray(a_counts, dtype=np.float64)
    b = np.asarray(b_counts, dtype=np.float64)
    return float(np.minimum(a / a.sum(), b / b.sum()).sum())


def metrics_csv(rows: Dict[str, Dict[str, float]]) -> str:
    buf = io.StringIO()
    buf.write(f"# format={METRICS_CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("rule",) + METRIC_COLUMNS)
    for rule, m in rows.items():
        w.writerow([rule] + [repr(float(m[c])) for c in METRIC_COLUMNS])
    return buf.getvalue()


def metrics_table(rows: Dict[str, Dict[str, float]]) -> str:
    """Fixed-width text table, values in percent."""
    head = f"{'rule':<20}" + "".join(f"{h:>10}" for h in ("FPR95", "AUROC", "AUPR-In", "AUPR-Out", "DTACC"))
    lines = [head, "-" * len(head)]
    for rule, m in rows.items():
        lines.append(f"{rule:<20}" + "".join(f"{100 * m[c]:>10.2f}" for c in METRIC_COLUMNS))
    return "\n".join(lines) + "\n"


def evaluate_rules(table, rules: Iterable[str]) -> Dict[str, Dict[str, float]]:
    """Metrics for each scoring rule of a mixed ID/OOD :class:`ScoreTable`."""
    from .scoring import split_populations

    return {r: all_metrics(*split_populations(table, r)) for r in rules}
