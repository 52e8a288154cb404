"""Classification metrics, confusion matrices and per-category error analysis.

Headline precision/recall/F1 are support-weighted averages over the two
classes; macro and per-class values are reported alongside so any other
convention can be read off the same report. The confusion matrix has rows
for the true class and columns for the predicted class, both ordered
``(nonVPN, VPN)``.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DataError
from .flows import LABELS

REPORT_SCHEMA = "vpnwave-report/1"
COMPARISON_SCHEMA = "vpnwave-comparison/1"
_KIND_ORDER = {"RF": 0, "NN": 1, "SVM": 2}


def pct(x):
    """Integer percent with halves rounded up."""
    return int(math.floor(x * 100.0 + 0.5 + 1e-9))


def confusion_matrix(y_true, y_pred):
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


def metrics_from_confusion(cm):
    """Accuracy plus per-class, macro and weighted precision/recall/F1."""
    cm = np.asarray(cm)
    total = cm.sum()
    per_class = {}
    for c, name in enumerate(LABELS):
        tp = cm[c, c]
        pred = cm[:, c].sum()
        support = cm[c, :].sum()
        p = tp / pred if pred else 0.0
        r = tp / support if support else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        per_class[name] = {"precision": float(p), "recall": float(r), "f1": float(f), "support": int(support)}
    macro = {m: float(np.mean([per_class[n][m] for n in LABELS])) for m in ("precision", "recall", "f1")}
    weighted = {
        m: float(sum(per_class[n][m] * per_class[n]["support"] for n in LABELS) / total)
        for m in ("precision", "recall", "f1")
    }
    return {
        "accuracy": float(np.trace(cm) / total),
        "per_class": per_class,
        "macro": macro,
        "weighted": weighted,
    }


def misclassification_breakdown(y_true, y_pred, categories):
    """Per-category misclassification counts split by true label, plus rates."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    categories = np.asarray(categories, dtype=object)
    out = {}
    for cat in sorted(set(categories.tolist())):
        mask = categories == cat
        wrong = mask & (y_true != y_pred)
        n_nonvpn = int(np.sum(wrong & (y_true == 0)))
        n_vpn = int(np.sum(wrong & (y_true == 1)))
        size = int(mask.sum())
        out[cat] = {
            "nonVPN_misclassified": n_nonvpn,
            "VPN_misclassified": n_vpn,
            "misclassified": n_nonvpn + n_vpn,
            "size": size,
            "error_rate": (n_nonvpn + n_vpn) / size if size else 0.0,
        }
    return out


@dataclass
class EvaluationReport:
    model_id: str
    metadata: dict
    n_test: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: list
    confusion_row_pct: list
    per_class: dict
    macro: dict
    percent: dict
    per_category: dict = field(default_factory=dict)
    averaging: str = "weighted"
    schema: str = REPORT_SCHEMA

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data):
        if data.get("schema") != REPORT_SCHEMA:
            raise DataError(f"unsupported report schema {data.get('schema')!r}")
        return cls(**data)

    def check(self):
        """Re-derive every metric from the confusion matrix and compare."""
        cm = np.asarray(self.confusion)
        if cm.sum() != self.n_test:
            raise AssertionError("confusion matrix does not sum to the test-set size")
        m = metrics_from_confusion(cm)
        got = (self.accuracy, self.precision, self.recall, self.f1)
        want = (m["accuracy"], m["weighted"]["precision"], m["weighted"]["recall"], m["weighted"]["f1"])
        if not np.allclose(got, want, rtol=0, atol=1e-12):
            raise AssertionError(f"metrics {got} inconsistent with confusion matrix {want}")
        if self.per_category:
            off_diag = int(cm[0, 1] + cm[1, 0])
            if sum(v["misclassified"] for v in self.per_category.values()) != off_diag:
                raise AssertionError("per-category misclassifications do not match the confusion matrix")
        return True


def evaluate_predictions(y_true, y_pred, categories=None, model_id="model", metadata=None):
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.size == 0:
        raise DataError("empty test set")
    if y_true.shape != y_pred.shape:
        raise DataError("predictions and labels differ in length")
    if np.unique(y_true).size < 2:
        raise DataError("test set must contain both labels")
    cm = confusion_matrix(y_true, y_pred)
    m = metrics_from_confusion(cm)
    rows = cm.sum(axis=1, keepdims=True)
    row_pct = np.where(rows > 0, cm / np.maximum(rows, 1) * 100.0, 0.0)
    w = m["weighted"]
    report = EvaluationReport(
        model_id=model_id,
        metadata=dict(metadata or {}),
        n_test=int(y_true.size),
        accuracy=m["accuracy"],
        precision=w["precision"],
        recall=w["recall"],
        f1=w["f1"],
        confusion=cm.tolist(),
        confusion_row_pct=row_pct.tolist(),
        per_class=m["per_class"],
        macro=m["macro"],
        percent={k: pct(v) for k, v in (("accuracy", m["accuracy"]), *w.items())},
        per_category=misclassification_breakdown(y_true, y_pred, categories) if categories is not None else {},
    )
    report.check()
    return report


def evaluate(model, X, y, categories=None, model_id=None, metadata=None):
    """Evaluate a fitted detector on a labelled test set."""
    if len(y) == 0:
        raise DataError("empty test set")
    y_pred = model.predict(X)
    meta = dict(getattr(model, "metadata_", {}) or {})
    meta.update(metadata or {})
    meta.setdefault("kind", model.kind)
    return evaluate_predictions(y, y_pred, categories, model_id or model_label(meta), meta)


def model_label(metadata):
    """Configuration name such as ``RF12`` or ``SVM5_filtered``."""
    name = f"{metadata.get('kind', 'model')}{metadata.get('levels', '')}"
    return name + ("_filtered" if metadata.get("filtered") else "")


def _sort_key(report):
    md = report.metadata
    return (_KIND_ORDER.get(md.get("kind"), 9), -int(md.get("levels") or 0), bool(md.get("filtered")), report.model_id)


COMPARISON_COLUMNS = (
    "model_id", "kind", "levels", "filtered", "n_test",
    "accuracy", "precision", "recall", "f1",
    "accuracy_pct", "precision_pct", "recall_pct", "f1_pct",
)


def comparison_matrix(reports):
    """Summary rows, a CSV rendering and a bar-chart friendly JSON series."""
    reports = sorted(reports, key=_sort_key)
    rows = []
    for r in reports:
        rows.append(
            {
                "model_id": r.model_id,
                "kind": r.metadata.get("kind"),
                "levels": r.metadata.get("levels"),
                "filtered": bool(r.metadata.get("filtered")),
                "n_test": r.n_test,
                "accuracy": r.accuracy,
                "precision": r.precision,
                "recall": r.recall,
                "f1": r.f1,
                "accuracy_pct": r.percent["accuracy"],
                "precision_pct": r.percent["precision"],
                "recall_pct": r.percent["recall"],
                "f1_pct": r.percent["f1"],
            }
        )
    ties = [
        [a["model_id"], b["model_id"]]
        for i, a in enumerate(rows)
        for b in rows[i + 1 :]
        if a["accuracy_pct"] == b["accuracy_pct"] and a["accuracy"] != b["accuracy"]
    ]
    groups = {}
    for row in rows:
        base = f"{row['kind']}{row['levels']}"
        groups.setdefault(base, {})["filtered" if row["filtered"] else "unfiltered"] = row["accuracy"]
    series = {
        "schema": COMPARISON_SCHEMA,
        "labels": [row["model_id"] for row in rows],
        "accuracy": [row["accuracy"] for row in rows],
        "accuracy_pct": [row["accuracy_pct"] for row in rows],
        "f1": [row["f1"] for row in rows],
        "groups": groups,
        "rounding_ties": ties,
    }
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COMPARISON_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return rows, buf.getvalue(), series
