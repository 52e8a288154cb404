"""Pipeline stages and the end-to-end experiment driver.

The stage subcommands and :func:`run_experiment` call the same functions, so
a staged run and an end-to-end run write identical artifacts.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import comparison_matrix, evaluate, model_label
from .exceptions import ConfigError, DataError
from .features import extract, feature_names
from .flows import filter_min_packets, flow_count_report, meter_files
from .io import (
    FeatureTable,
    read_features_csv,
    write_features_csv,
    write_flow_counts_csv,
    write_flows_csv,
    write_json,
)
from .models import load_model, make_detector, save_model, split

logger = logging.getLogger(__name__)

LOCK_NAME = ".lock"
FAILED_NAME = "FAILED"


def feature_file_name(levels, filtered):
    return f"features_J{levels}{'_filtered' if filtered else ''}.csv"


def build_feature_table(flows, levels, wavelet="haar", min_pkts=0, timeout=None):
    """Extract wavelet features from flows; ``min_pkts > 0`` drops short flows first."""
    flows = list(flows)
    if min_pkts:
        flows = filter_min_packets(flows, min_pkts).kept
    names = feature_names(levels)
    vecs = [extract(f, levels, wavelet) for f in flows]
    X = np.vstack([v.values for v in vecs]) if vecs else np.empty((0, len(names)))
    return FeatureTable(
        X=X,
        names=names,
        labels=[v.label for v in vecs],
        categories=[v.category for v in vecs],
        files=[v.file for v in vecs],
        keys=[v.key for v in vecs],
        segments=[v.segment for v in vecs],
        levels=levels,
        wavelet=wavelet,
        min_pkts=int(min_pkts),
        timeout=timeout,
    )


def train_on_table(table, kind, seed=0, train_fraction=0.8):
    """Fit one detector on the training side of the seeded split."""
    if len(table) == 0:
        raise DataError("feature table is empty")
    y = table.y
    train_idx, _ = split(table.X, y, train_fraction=train_fraction, seed=seed)
    model = make_detector(kind, seed=seed).fit(table.X[train_idx], y[train_idx])
    model.metadata_ = {
        "kind": model.kind,
        "levels": table.levels,
        "wavelet": table.wavelet,
        "filtered": table.filtered,
        "min_pkts": table.min_pkts,
        "timeout": table.timeout,
        "seed": seed,
        "train_fraction": train_fraction,
        "n_rows": len(table),
        "n_train": int(len(train_idx)),
    }
    if kind.upper() == "SVM":
        model.metadata_["converged"] = bool(model.converged_)
    return model


def evaluate_on_table(model, table, use_split=True):
    """Evaluate on the held-out rows recorded in the model metadata.

    With ``use_split=False`` every row of ``table`` is a test row, which is
    the right choice for an independent test capture.
    """
    md = getattr(model, "metadata_", {}) or {}
    y = table.y
    if use_split:
        if md.get("n_rows") not in (None, len(table)):
            logger.warning(
                "feature table has %d rows but the model was trained on a table of %d; "
                "the recomputed split will not match the training split",
                len(table), md["n_rows"],
            )
        _, test_idx = split(table.X, y, train_fraction=md.get("train_fraction", 0.8), seed=md.get("seed", 0))
    else:
        test_idx = np.arange(len(table))
    cats = [table.categories[i] for i in test_idx]
    return evaluate(model, table.X[test_idx], y[test_idx], categories=cats)


# -- end-to-end ------------------------------------------------------------------


@dataclass
class Bundle:
    out: Path
    reports: dict = field(default_factory=dict)
    comparison: list = field(default_factory=list)
    flow_counts: list = field(default_factory=list)


class OutputLock:
    """Exclusive ownership of an output directory for one run."""

    def __init__(self, out):
        self.path = Path(out) / LOCK_NAME

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"{self.path.parent} is in use by another run (remove {self.path} if stale)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _check_inputs(cfg):
    for p in cfg.pcaps + cfg.features:
        if not Path(p).is_file():
            raise DataError(f"input not found: {p}")


def _feature_tables(cfg, out, bundle):
    if cfg.features:
        for p in cfg.features:
            yield read_features_csv(p)
        return
    flows, summaries = meter_files(
        cfg.pcaps, rules=cfg.label_rules, timeout=cfg.timeout, idle_timeout=cfg.idle_timeout, workers=cfg.workers
    )
    if not flows:
        raise DataError("no TCP/UDP flows found in the inputs")
    write_flows_csv(flows, out / "flows.csv", timeout=cfg.timeout)
    with open(out / "skip_summary.jsonl", "w") as fh:
        for s in summaries:
            fh.write(s.to_json() + "\n")
    bundle.flow_counts = flow_count_report(flows, filter_min_packets(flows, cfg.min_pkts).kept)
    write_flow_counts_csv(bundle.flow_counts, out / "flow_counts.csv")
    for levels in cfg.levels:
        for filtered in cfg.filter_states:
            table = build_feature_table(
                flows, levels, cfg.wavelet, cfg.min_pkts if filtered else 0, timeout=cfg.timeout
            )
            write_features_csv(table, out / feature_file_name(levels, filtered))
            yield table


def run_experiment(cfg):
    """Run the whole grid and write the output bundle.

    On failure the partial artifacts stay in place next to a ``FAILED``
    marker holding the error, and the exception propagates.
    """
    cfg.validate()
    _check_inputs(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = Bundle(out=out)
    with OutputLock(out):
        (out / FAILED_NAME).unlink(missing_ok=True)
        try:
            (out / "config.ini").write_text(cfg.to_ini())
            (out / "models").mkdir(exist_ok=True)
            (out / "reports").mkdir(exist_ok=True)
            for table in _feature_tables(cfg, out, bundle):
                for kind in cfg.models:
                    model = train_on_table(table, kind, seed=cfg.seed, train_fraction=cfg.train_fraction)
                    name = model_label(model.metadata_)
                    save_model(model, out / "models" / f"{name}.json", metadata=model.metadata_)
                    report = evaluate_on_table(model, table)
                    (out / "reports" / f"{name}.json").write_text(report.to_json())
                    bundle.reports[name] = report
                    logger.info("%s: accuracy %.4f f1 %.4f", name, report.accuracy, report.f1)
            rows, csv_text, series = comparison_matrix(list(bundle.reports.values()))
            (out / "comparison.csv").write_text(csv_text)
            write_json(series, out / "comparison.json")
            bundle.comparison = rows
        except BaseException as exc:
            (out / FAILED_NAME).write_text(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
            raise
    return bundle


def load_and_evaluate(model_path, features_path, use_split=True):
    return evaluate_on_table(load_model(model_path), read_features_csv(features_path), use_split=use_split)
