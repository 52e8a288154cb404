"""Versioned CSV contracts between pipeline stages.

Each file starts with a schema line such as ``#vpnwave flows/1 timeout=41``
followed by an ordinary CSV header. Floats are written with ``repr`` so a
reload reproduces every value bit for bit.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import SchemaError
from .flows import LABELS, VPN, FlowKey

FLOWS_SCHEMA = "flows/1"
FEATURES_SCHEMA = "features/1"
FLOW_COLUMNS = ("file", "key", "segment", "label", "category", "pkt_count", "duration_s", "fwd_sizes", "bwd_sizes")
FEATURE_META_COLUMNS = ("label", "category", "file", "key", "segment")


def _fmt(value):
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _schema_line(schema, **meta):
    parts = [f"#vpnwave {schema}"] + [f"{k}={_fmt(v)}" for k, v in meta.items()]
    return " ".join(parts) + "\n"


def _read_schema_line(fh, expected, path):
    line = fh.readline().rstrip("\r\n")
    parts = line.split()
    if len(parts) < 2 or parts[0] != "#vpnwave":
        raise SchemaError(f"{path}: missing '#vpnwave {expected}' schema line")
    if parts[1] != expected:
        raise SchemaError(f"{path}: incompatible schema {parts[1]!r}, this version reads {expected!r}")
    meta = {}
    for item in parts[2:]:
        k, _, v = item.partition("=")
        meta[k] = None if v == "none" else v
    return meta


@dataclass
class FlowRow:
    """A flow reloaded from the flow table (sizes only, no timestamps)."""

    file: str
    key: FlowKey
    segment_index: int
    label: str
    category: str
    duration: float
    fwd_sizes: list
    bwd_sizes: list

    @property
    def packet_count(self):
        return len(self.fwd_sizes) + len(self.bwd_sizes)

    def sort_key(self):
        return (self.file, str(self.key), self.segment_index)


def write_flows_csv(flows, path, timeout=None):
    with open(path, "w", newline="") as fh:
        fh.write(_schema_line(FLOWS_SCHEMA, timeout=timeout))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FLOW_COLUMNS)
        for f in flows:
            w.writerow(
                [
                    f.file,
                    str(f.key),
                    f.segment_index,
                    f.label,
                    f.category,
                    f.packet_count,
                    repr(float(f.duration)),
                    json.dumps([int(s) for s in f.fwd_sizes], separators=(",", ":")),
                    json.dumps([int(s) for s in f.bwd_sizes], separators=(",", ":")),
                ]
            )


def read_flows_csv(path):
    """Return ``(rows, meta)`` where ``meta`` holds the schema-line fields."""
    with open(path, newline="") as fh:
        meta = _read_schema_line(fh, FLOWS_SCHEMA, path)
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FLOW_COLUMNS:
            raise SchemaError(f"{path}: unexpected flow table header {reader.fieldnames}")
        rows = []
        for rec in reader:
            row = FlowRow(
                file=rec["file"],
                key=FlowKey.parse(rec["key"]),
                segment_index=int(rec["segment"]),
                label=rec["label"],
                category=rec["category"],
                duration=float(rec["duration_s"]),
                fwd_sizes=json.loads(rec["fwd_sizes"]),
                bwd_sizes=json.loads(rec["bwd_sizes"]),
            )
            if row.packet_count != int(rec["pkt_count"]):
                raise SchemaError(f"{path}: pkt_count disagrees with size arrays for {rec['key']}")
            rows.append(row)
    if meta.get("timeout") is not None:
        meta["timeout"] = float(meta["timeout"])
    return rows, meta


@dataclass
class FeatureTable:
    """Feature matrix plus per-row labels and flow references."""

    X: np.ndarray
    names: list
    labels: list
    categories: list
    files: list
    keys: list
    segments: list
    levels: int
    wavelet: str
    min_pkts: int = 0
    timeout: float = None

    @property
    def y(self):
        return np.array([1 if lab == VPN else 0 for lab in self.labels], dtype=np.int64)

    @property
    def filtered(self):
        return self.min_pkts > 0

    def __len__(self):
        return self.X.shape[0]


def write_features_csv(table, path):
    with open(path, "w", newline="") as fh:
        fh.write(
            _schema_line(
                FEATURES_SCHEMA,
                levels=table.levels,
                wavelet=table.wavelet,
                min_pkts=table.min_pkts,
                timeout=table.timeout,
            )
        )
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*table.names, *FEATURE_META_COLUMNS])
        for i in range(len(table)):
            w.writerow(
                [repr(float(v)) for v in table.X[i]]
                + [table.labels[i], table.categories[i], table.files[i], table.keys[i], table.segments[i]]
            )


def read_features_csv(path):
    from .features import feature_names

    with open(path, newline="") as fh:
        meta = _read_schema_line(fh, FEATURES_SCHEMA, path)
        reader = csv.reader(fh)
        header = next(reader, None)
        try:
            levels = int(meta["levels"])
        except (KeyError, TypeError, ValueError):
            raise SchemaError(f"{path}: schema line lacks levels=") from None
        names = feature_names(levels)
        if header is None or header != [*names, *FEATURE_META_COLUMNS]:
            raise SchemaError(f"{path}: header does not match {len(names)} features for levels={levels}")
        n = len(names)
        values, labels, cats, files, keys, segs = [], [], [], [], [], []
        for rec in reader:
            values.append([float(v) for v in rec[:n]])
            lab, cat, file, key, seg = rec[n:]
            if lab not in LABELS:
                raise SchemaError(f"{path}: unknown label {lab!r}")
            labels.append(lab)
            cats.append(cat)
            files.append(file)
            keys.append(key)
            segs.append(int(seg))
    X = np.array(values, dtype=np.float64).reshape(len(values), n)
    timeout = meta.get("timeout")
    return FeatureTable(
        X=X,
        names=names,
        labels=labels,
        categories=cats,
        files=files,
        keys=keys,
        segments=segs,
        levels=levels,
        wavelet=meta.get("wavelet") or "haar",
        min_pkts=int(meta.get("min_pkts") or 0),
        timeout=float(timeout) if timeout is not None else None,
    )


def write_flow_counts_csv(rows, path):
    cols = ("category", "nonVPN", "VPN", "total", "filtered", "reduction_pct")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
