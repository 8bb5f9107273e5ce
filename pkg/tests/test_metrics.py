import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anchored_ood.metrics import (
    ScorePopulations,
    all_metrics,
    aupr,
    auroc,
    dtacc,
    fpr_at_tpr,
    metrics_csv,
    metrics_table,
    overlap_coefficient,
)

from oracles import brute_auroc, brute_average_precision, brute_dtacc, brute_fpr95

scores = st.lists(st.integers(-6, 6).map(lambda v: v / 2), min_size=1, max_size=40)


def test_perfect_separation():
    m = all_metrics([3.0, 4.0, 5.0], [0.0, 1.0])
    assert m == {"fpr95": 0.0, "auroc": 1.0, "aupr_in": 1.0, "aupr_out": 1.0, "dtacc": 1.0}


def test_reversed_separation():
    m = all_metrics([0.0, 1.0], [3.0, 4.0])
    assert m["auroc"] == 0.0
    assert m["fpr95"] == 1.0
    assert m["dtacc"] == 0.5


def test_all_tied_scores():
    m = all_metrics([1.0] * 4, [1.0] * 6)
    assert m["auroc"] == 0.5
    assert m["fpr95"] == 1.0
    assert m["aupr_in"] == pytest.approx(0.4)
    assert m["aupr_out"] == pytest.approx(0.6)


def test_orientation_flag_matches_negation():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=30), rng.normal(1.0, size=25)
    flipped = all_metrics(ScorePopulations(a, b, higher_is_id=False))
    negated = all_metrics(-a, -b)
    assert flipped == negated


def test_known_small_fpr():
    # 20 ID scores 1..20: TPR >= 0.95 needs threshold 2, so OOD scores >= 2 count
    ids = np.arange(1, 21, dtype=float)
    oods = np.array([0.5, 1.5, 2.0, 10.0])
    assert fpr_at_tpr(ids, oods) == 0.5


def test_rejects_empty_and_nonfinite():
    with pytest.raises(ValueError):
        auroc([], [1.0])
    with pytest.raises(ValueError):
        auroc([np.nan], [1.0])
    with pytest.raises(ValueError):
        aupr([1.0], [0.0], positive="both")


@settings(max_examples=150, deadline=None)
@given(scores, scores)
def test_metrics_match_brute_force(ids, oods):
    ids, oods = np.array(ids), np.array(oods)
    assert fpr_at_tpr(ids, oods) == brute_fpr95(ids, oods)
    assert auroc(ids, oods) == pytest.approx(brute_auroc(ids, oods), abs=1e-12)
    assert aupr(ids, oods, positive="in") == pytest.approx(brute_average_precision(ids, oods), abs=1e-12)
    assert aupr(ids, oods, positive="out") == pytest.approx(brute_average_precision(-oods, -ids), abs=1e-12)
    assert dtacc(ids, oods) == brute_dtacc(ids, oods)


@settings(max_examples=100, deadline=None)
@given(scores, scores, st.floats(0.1, 10), st.floats(-5, 5))
def test_metrics_invariant_to_monotone_maps(ids, oods, scale, shift):
    ids, oods = np.array(ids), np.array(oods)
    base = all_metrics(ids, oods)
    mapped = all_metrics(np.exp(ids) * scale + shift, np.exp(oods) * scale + shift)
    for key in base:
        assert mapped[key] == pytest.approx(base[key], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(scores, scores)
def test_auroc_symmetry_and_bounds(ids, oods):
    ids, oods = np.array(ids), np.array(oods)
    a = auroc(ids, oods)
    assert 0.0 <= a <= 1.0
    assert a + auroc(oods, ids) == pytest.approx(1.0, abs=1e-12)
    m = all_metrics(ids, oods)
    assert 0.5 <= m["dtacc"] <= 1.0
    assert 0.0 <= m["fpr95"] <= 1.0


def test_overlap_coefficient():
    assert overlap_coefficient([1, 2, 1], [1, 2, 1]) == pytest.approx(1.0)
    assert overlap_coefficient([3, 0], [0, 5]) == 0.0
    assert overlap_coefficient([1, 1], [1, 3]) == pytest.approx(0.25 + 0.5)


def test_metrics_csv_and_table():
    rows = {"amp": {"fpr95": 0.1, "auroc": 0.9, "aupr_in": 0.8, "aupr_out": 0.7, "dtacc": 0.85}}
    text = metrics_csv(rows)
    assert text.splitlines()[0] == "# format=metrics/1"
    assert text.splitlines()[1] == "rule,fpr95,auroc,aupr_in,aupr_out,dtacc"
    assert text.splitlines()[2] == "amp,0.1,0.9,0.8,0.7,0.85"
    assert "90.00" in metrics_table(rows)


def trapezoid_auroc(ids, oods):
    """ROC curve over all distinct thresholds, integrated with the trapezoid rule."""
    thresholds = np.r_[np.inf, np.unique(np.r_[ids, oods])[::-1]]
    tpr = [np.mean(ids >= t) for t in thresholds]
    fpr = [np.mean(oods >= t) for t in thresholds]
    return float(np.trapezoid(tpr, fpr))


@settings(max_examples=100, deadline=None)
@given(scores, scores)
def test_auroc_equals_trapezoid_roc(ids, oods):
    ids, oods = np.array(ids), np.array(oods)
    assert auroc(ids, oods) == pytest.approx(trapezoid_auroc(ids, oods), abs=1e-12)


def test_identical_populations():
    x = np.random.default_rng(3).normal(size=200)
    assert fpr_at_tpr(x, x) == pytest.approx(0.95, abs=0.005)
    assert auroc(x, x) == 0.5
    assert dtacc(x, x) == 0.5


def test_listed_fpr_case():
    ids = np.round(np.linspace(0.9, 0.05, 20), 10)
    oods = np.full(10, 0.55)
    assert fpr_at_tpr(ids, oods) == brute_fpr95(ids, oods) == 1.0
    assert fpr_at_tpr(ids + 0.5, oods) == 0.0


@settings(max_examples=60, deadline=None)
@given(scores, scores, st.floats(0.01, 5))
def test_fpr_non_increasing_when_ood_scores_drop(ids, oods, shift):
    ids, oods = np.array(ids), np.array(oods)
    assert fpr_at_tpr(ids, oods - shift) <= fpr_at_tpr(ids, oods)
