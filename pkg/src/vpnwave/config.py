"""Experiment configuration read from and written to INI files.

Example::

    [input]
    pcaps = captures/vpn_chat_00.pcap captures/nonvpn_voip_00.pcap

    [metering]
    timeout = 41
    min_pkts = 20

    [features]
    levels = 5, 12
    wavelet = haar
    filter = both

    [models]
    models = rf, nn, svm
    seed = 0

    [labels]
    vpn_chat* = VPN, Chat
"""

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError
from .flows import DEFAULT_ACTIVE_TIMEOUT, DEFAULT_MIN_PACKETS, DEFAULT_RULES, LABELS, LabelRule
from .models import DETECTORS
from .wavelet import available_families

FILTER_STATES = {"both": (False, True), "on": (True,), "off": (False,)}


def parse_timeout(text):
    """``"none"`` means complete flows; anything else is seconds."""
    if text is None:
        return None
    if isinstance(text, (int, float)):
        value = float(text)
    else:
        s = str(text).strip().lower()
        if s in ("none", "complete", ""):
            return None
        try:
            value = float(s)
        except ValueError:
            raise ConfigError(f"timeout must be 'none' or seconds, got {text!r}") from None
    if not value > 0:
        raise ConfigError(f"timeout must be positive, got {text!r}")
    return value


def parse_levels(text):
    if isinstance(text, int):
        items = [text]
    elif isinstance(text, (list, tuple)):
        items = list(text)
    else:
        items = [t for t in str(text).replace(",", " ").split() if t]
    out = []
    for t in items:
        try:
            j = int(t)
        except (TypeError, ValueError):
            raise ConfigError(f"levels must be integers, got {t!r}") from None
        if j < 1:
            raise ConfigError(f"levels must be >= 1, got {j}")
        if j not in out:
            out.append(j)
    if not out:
        raise ConfigError("at least one level count is required")
    return out


def parse_models(text):
    items = text if isinstance(text, (list, tuple)) else str(text).replace(",", " ").split()
    out = []
    for m in items:
        kind = str(m).strip().upper()
        if kind not in DETECTORS:
            raise ConfigError(f"unknown model {m!r}; choose from rf, nn, svm")
        if kind not in out:
            out.append(kind)
    if not out:
        raise ConfigError("at least one model is required")
    return out


def _fmt_timeout(t):
    if t is None:
        return "none"
    return str(int(t)) if float(t).is_integer() else repr(float(t))


@dataclass
class ExperimentConfig:
    """Every knob of an end-to-end run.

    Either ``pcaps`` or ``features`` is given. Feature CSV input skips
    metering, so the metering options are then ignored and the level count is
    taken from each file.
    """

    pcaps: list = field(default_factory=list)
    features: list = field(default_factory=list)
    timeout: float = DEFAULT_ACTIVE_TIMEOUT
    idle_timeout: float = None
    min_pkts: int = DEFAULT_MIN_PACKETS
    levels: list = field(default_factory=lambda: [5, 12])
    wavelet: str = "haar"
    filter: str = "both"
    models: list = field(default_factory=lambda: ["RF", "NN", "SVM"])
    seed: int = 0
    train_fraction: float = 0.8
    workers: int = 1
    out: str = "results"
    label_rules: list = field(default_factory=lambda: list(DEFAULT_RULES))

    def validate(self):
        self.levels = parse_levels(self.levels)
        self.models = parse_models(self.models)
        self.timeout = parse_timeout(self.timeout)
        self.idle_timeout = parse_timeout(self.idle_timeout)
        if self.filter not in FILTER_STATES:
            raise ConfigError(f"filter must be one of {sorted(FILTER_STATES)}, got {self.filter!r}")
        if isinstance(self.min_pkts, bool) or int(self.min_pkts) != self.min_pkts or self.min_pkts < 1:
            raise ConfigError(f"min_pkts must be a positive integer, got {self.min_pkts!r}")
        self.min_pkts = int(self.min_pkts)
        if self.wavelet not in available_families():
            raise ConfigError(f"unknown wavelet {self.wavelet!r}; choose from {available_families()}")
        if not 0.0 < float(self.train_fraction) < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")
        if bool(self.pcaps) == bool(self.features):
            raise ConfigError("give either pcap inputs or feature CSVs, not both or neither")
        if not self.label_rules:
            raise ConfigError("label mapping is empty")
        return self

    @property
    def filter_states(self):
        return FILTER_STATES[self.filter]

    def to_ini(self):
        cp = _parser()
        cp["input"] = {"pcaps": "\n".join(map(str, self.pcaps)), "features": "\n".join(map(str, self.features))}
        cp["metering"] = {
            "timeout": _fmt_timeout(self.timeout),
            "idle_timeout": _fmt_timeout(self.idle_timeout),
            "min_pkts": str(self.min_pkts),
            "workers": str(self.workers),
        }
        cp["features"] = {
            "levels": ", ".join(map(str, self.levels)),
            "wavelet": self.wavelet,
            "filter": self.filter,
        }
        cp["models"] = {
            "models": ", ".join(m.lower() for m in self.models),
            "seed": str(self.seed),
            "train_fraction": repr(float(self.train_fraction)),
        }
        cp["output"] = {"out": str(self.out)}
        cp["labels"] = {r.pattern: f"{r.label}, {r.category}" for r in self.label_rules}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, path):
        cp = _parser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_parser(cp, base=Path(path).parent)

    @classmethod
    def from_parser(cls, cp, base=None):
        known = {"input", "metering", "features", "models", "output", "labels"}
        unknown = set(cp.sections()) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls()

        def get(section, key, default=None):
            return cp.get(section, key, fallback=default) if cp.has_section(section) else default

        def paths(text):
            items = (text or "").split()
            return [str(Path(base, p)) if base and not Path(p).is_absolute() else p for p in items]

        cfg.pcaps = paths(get("input", "pcaps"))
        cfg.features = paths(get("input", "features"))
        cfg.timeout = get("metering", "timeout", _fmt_timeout(cfg.timeout))
        cfg.idle_timeout = get("metering", "idle_timeout", "none")
        cfg.min_pkts = _int(get("metering", "min_pkts", cfg.min_pkts), "min_pkts")
        cfg.workers = _int(get("metering", "workers", 1), "workers")
        cfg.levels = get("features", "levels", cfg.levels)
        cfg.wavelet = get("features", "wavelet", cfg.wavelet)
        cfg.filter = get("features", "filter", cfg.filter)
        cfg.models = get("models", "models", cfg.models)
        cfg.seed = _int(get("models", "seed", cfg.seed), "seed")
        cfg.train_fraction = float(get("models", "train_fraction", cfg.train_fraction))
        cfg.out = get("output", "out", cfg.out)
        if cp.has_section("labels"):
            cfg.label_rules = parse_label_rules(cp["labels"].items())
        return cfg


def parse_label_rules(items):
    """``[(pattern, "label, category"), ...]`` to :class:`LabelRule` objects."""
    rules = []
    for pattern, value in items:
        parts = [p.strip() for p in value.split(",")]
        if len(parts) != 2 or parts[0] not in LABELS or not parts[1]:
            raise ConfigError(f"label rule {pattern!r} must read 'VPN|nonVPN, Category', got {value!r}")
        rules.append(LabelRule(pattern, parts[0], parts[1]))
    return rules


def _int(value, name):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {value!r}") from None


def _parser():
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str  # glob patterns are case-sensitive keys
    return cp
