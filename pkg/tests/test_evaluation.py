import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import accuracy_score, precision_recall_fscore_support

from vpnwave.evaluation import (
    EvaluationReport,
    comparison_matrix,
    evaluate,
    evaluate_predictions,
    misclassification_breakdown,
    pct,
)
from vpnwave.exceptions import DataError
from vpnwave.models import LinearSVMDetector
from vpnwave.synth import generate_separable_features


def test_perfect_predictor():
    y = np.array([0] * 25 + [1] * 25)
    r = evaluate_predictions(y, y)
    assert (r.accuracy, r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0, 1.0)
    assert r.confusion == [[25, 0], [0, 25]]
    assert r.confusion_row_pct == [[100.0, 0.0], [0.0, 100.0]]


def test_constant_nonvpn_predictor():
    y = np.array([0] * 80 + [1] * 20)
    r = evaluate_predictions(y, np.zeros(100, dtype=int))
    assert r.accuracy == pytest.approx(0.80)
    assert r.per_class["VPN"]["recall"] == 0.0
    assert r.confusion == [[80, 0], [20, 0]]
    # weighted: precision = 0.8 * 0.8, recall = 0.8, f1 = 0.8 * (2*0.8/1.8)
    assert r.precision == pytest.approx(0.64)
    assert r.recall == pytest.approx(0.80)
    assert r.f1 == pytest.approx(0.8 * 1.6 / 1.8)


@settings(max_examples=100, deadline=None)
@given(data=st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=2, max_size=300))
def test_metrics_match_sklearn(data):
    y_true = np.array([a for a, _ in data])
    y_pred = np.array([b for _, b in data])
    if np.unique(y_true).size < 2:
        with pytest.raises(DataError):
            evaluate_predictions(y_true, y_pred)
        return
    r = evaluate_predictions(y_true, y_pred)
    p, rc, f, _ = precision_recall_fscore_support(y_true, y_pred, average="weighted", zero_division=0)
    assert r.accuracy == pytest.approx(accuracy_score(y_true, y_pred), abs=1e-12)
    assert (r.precision, r.recall, r.f1) == pytest.approx((p, rc, f), abs=1e-12)
    pm, rm, fm, _ = precision_recall_fscore_support(y_true, y_pred, average="macro", zero_division=0)
    assert (r.macro["precision"], r.macro["recall"], r.macro["f1"]) == pytest.approx((pm, rm, fm), abs=1e-12)
    assert sum(map(sum, r.confusion)) == len(data)


def test_breakdown_counts_and_rates():
    y_true = np.array([0, 1, 1, 0, 1, 0, 1])
    y_pred = np.array([1, 0, 1, 0, 0, 1, 1])
    cats = ["Chat", "Chat", "Chat", "VoIP", "Streaming", "Streaming", "VoIP"]
    bd = misclassification_breakdown(y_true, y_pred, cats)
    assert bd["Chat"] == {"nonVPN_misclassified": 1, "VPN_misclassified": 1, "misclassified": 2, "size": 3, "error_rate": 2 / 3}
    assert bd["VoIP"]["misclassified"] == 0 and bd["VoIP"]["error_rate"] == 0.0
    assert bd["Streaming"]["error_rate"] == 1.0
    r = evaluate_predictions(y_true, y_pred, cats)
    assert r.check()


def test_empty_test_set():
    with pytest.raises(DataError):
        evaluate_predictions([], [])


def test_check_detects_tampering():
    y = np.array([0, 0, 1, 1])
    r = evaluate_predictions(y, np.array([0, 1, 1, 1]))
    r.f1 = 0.99
    with pytest.raises(AssertionError):
        r.check()


def test_evaluate_model_and_json_roundtrip():
    X, y = generate_separable_features(60, 5, margin=6, seed=0)
    m = LinearSVMDetector().fit(X, y)
    m.metadata_ = {"levels": 12, "filtered": True, "seed": 0}
    cats = ["Chat"] * 60 + ["VoIP"] * 60
    r = evaluate(m, X, y, categories=cats)
    assert r.model_id == "SVM12_filtered"
    r2 = evaluate(m, X, y, categories=cats)
    assert r.to_json() == r2.to_json()
    back = EvaluationReport.from_dict(json.loads(r.to_json()))
    assert back.to_json() == r.to_json()


def test_pct_rounding():
    assert pct(0.985) == 99 and pct(0.9849) == 98 and pct(1.0) == 100 and pct(0.0) == 0


def _report(kind, levels, filtered, acc_true):
    n = 1000
    y = np.array([0] * 500 + [1] * 500)
    pred = y.copy()
    wrong = int(round((1 - acc_true) * n))
    pred[:wrong] = 1 - pred[:wrong]
    md = {"kind": kind, "levels": levels, "filtered": filtered}
    from vpnwave.evaluation import model_label

    return evaluate_predictions(y, pred, model_id=model_label(md), metadata=md)


def test_comparison_grid():
    reports = [
        _report(k, j, f, acc)
        for k, base in (("RF", 0.99), ("NN", 0.95), ("SVM", 0.88))
        for j in (5, 12)
        for f in (False, True)
        for acc in [base - (0.03 if f else 0.0) + (0.01 if j == 12 else 0.0)]
    ]
    rows, csv_text, series = comparison_matrix(reports[::-1])
    assert len(rows) == 12
    assert [r["model_id"] for r in rows][:4] == ["RF12", "RF12_filtered", "RF5", "RF5_filtered"]
    assert csv_text.count("\n") == 13
    assert series["groups"]["SVM12"]["unfiltered"] > series["groups"]["SVM12"]["filtered"]
    one_rows, _, _ = comparison_matrix(reports[:1])
    assert len(one_rows) == 1


def test_comparison_records_rounding_ties():
    a = _report("RF", 12, False, 0.991)
    b = _report("RF", 5, False, 0.989)
    _, _, series = comparison_matrix([a, b])
    assert series["rounding_ties"] == [["RF12", "RF5"]]
