"""Bidirectional flow metering, labeling and the short-flow filter.

Packets are grouped by their direction-independent 5-tuple. Whoever sends
the first packet of a segment is the initiator ("forward" side). In
complete mode one flow per 5-tuple is produced; with an active timeout ``T``
a segment is closed as soon as a packet arrives more than ``T`` seconds
after the segment's first packet, and that packet opens the next segment.
"""

import fnmatch
import logging
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

VPN = "VPN"
NON_VPN = "nonVPN"
LABELS = (NON_VPN, VPN)
CATEGORIES = ("Chat", "CommandControl", "FileTransfer", "Streaming", "VoIP")
UNKNOWN = "Unknown"

DEFAULT_ACTIVE_TIMEOUT = 41
DEFAULT_MIN_PACKETS = 20


@dataclass(frozen=True, order=True)
class FlowKey:
    """5-tuple with the segment initiator on the ``a`` side."""

    protocol: int
    ip_a: str
    port_a: int
    ip_b: str
    port_b: int

    def __str__(self):
        return f"{int(self.protocol)}|{self.ip_a}|{self.port_a}|{self.ip_b}|{self.port_b}"

    @classmethod
    def parse(cls, text):
        try:
            proto, ip_a, port_a, ip_b, port_b = text.split("|")
            return cls(int(proto), ip_a, int(port_a), ip_b, int(port_b))
        except ValueError:
            raise ValueError(f"malformed flow key {text!r}") from None

    def endpoints(self):
        """Direction-independent identity of the conversation."""
        a, b = (self.ip_a, self.port_a), (self.ip_b, self.port_b)
        return (int(self.protocol), *sorted((a, b)))


@dataclass
class Flow:
    key: FlowKey
    fwd_sizes: list = field(default_factory=list)
    bwd_sizes: list = field(default_factory=list)
    fwd_ts: list = field(default_factory=list)
    bwd_ts: list = field(default_factory=list)
    first_ts: float = 0.0
    last_ts: float = 0.0
    segment_index: int = 0
    label: str = NON_VPN
    category: str = UNKNOWN
    file: str = ""

    @property
    def packet_count(self):
        return len(self.fwd_sizes) + len(self.bwd_sizes)

    @property
    def duration(self):
        return self.last_ts - self.first_ts

    def sort_key(self):
        return (self.file, str(self.key), self.segment_index)


class _Segment:
    __slots__ = ("flow", "first_us", "last_us")

    def __init__(self, key, index, ts_us):
        self.flow = Flow(key=key, segment_index=index)
        self.first_us = self.last_us = ts_us

    def add(self, pkt):
        f = self.flow
        if pkt.src_ip == f.key.ip_a and pkt.src_port == f.key.port_a:
            f.fwd_sizes.append(pkt.payload_len)
            f.fwd_ts.append(pkt.ts)
        else:
            f.bwd_sizes.append(pkt.payload_len)
            f.bwd_ts.append(pkt.ts)
        self.last_us = pkt.ts_us

    def finish(self):
        self.flow.first_ts = self.first_us / 1_000_000
        self.flow.last_ts = self.last_us / 1_000_000
        return self.flow


def _seconds_to_us(value, name):
    if value is None:
        return None
    if value <= 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return int(round(value * 1_000_000))


class FlowMeter:
    """Assemble packet records into flow segments.

    Parameters
    ----------
    timeout : float or None
        Active timeout in seconds; ``None`` meters complete flows.
    idle_timeout : float or None
        Optional idle timeout, disabled by default.
    reorder_window : float
        Packets older than the newest seen packet by more than this many
        seconds are counted in ``out_of_order_``; they are still placed by
        their timestamp because the input is sorted before metering.
    """

    def __init__(self, timeout=None, idle_timeout=None, reorder_window=1.0):
        self.timeout = timeout
        self.idle_timeout = idle_timeout
        self.reorder_window = reorder_window
        self.out_of_order_ = 0

    def meter(self, packets, file="", label=NON_VPN, category=UNKNOWN):
        timeout_us = _seconds_to_us(self.timeout, "timeout")
        idle_us = _seconds_to_us(self.idle_timeout, "idle_timeout")
        window_us = int(round(self.reorder_window * 1_000_000))

        packets = list(packets)
        newest = None
        self.out_of_order_ = 0
        for p in packets:
            if newest is not None and newest - p.ts_us > window_us:
                self.out_of_order_ += 1
            newest = p.ts_us if newest is None else max(newest, p.ts_us)
        if self.out_of_order_:
            logger.warning("%s: %d packets out of order beyond %.3f s", file, self.out_of_order_, self.reorder_window)

        open_segments = {}
        next_index = Counter()
        done = []
        for p in sorted(packets, key=lambda r: r.ts_us):
            a, b = (p.src_ip, p.src_port), (p.dst_ip, p.dst_port)
            ident = (int(p.protocol), *sorted((a, b)))
            seg = open_segments.get(ident)
            if seg is not None:
                expired = timeout_us is not None and p.ts_us - seg.first_us > timeout_us
                idle = idle_us is not None and p.ts_us - seg.last_us > idle_us
                if expired or idle:
                    done.append(seg.finish())
                    seg = None
            if seg is None:
                key = FlowKey(int(p.protocol), p.src_ip, p.src_port, p.dst_ip, p.dst_port)
                seg = _Segment(key, next_index[ident], p.ts_us)
                next_index[ident] += 1
                open_segments[ident] = seg
            seg.add(p)
        done.extend(seg.finish() for seg in open_segments.values())
        for f in done:
            f.file, f.label, f.category = file, label, category
        done.sort(key=Flow.sort_key)
        return done


def meter(packets, timeout=None, **kwargs):
    """Meter ``packets`` into flows; ``timeout=None`` gives complete flows."""
    return FlowMeter(timeout=timeout).meter(packets, **kwargs)


@dataclass(frozen=True)
class LabelRule:
    pattern: str
    label: str
    category: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise ConfigError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.category not in (*CATEGORIES, UNKNOWN):
            raise ConfigError(f"unknown category {self.category!r}")

    def matches(self, name):
        return fnmatch.fnmatchcase(name.lower(), self.pattern.lower())


_APP_CATEGORIES = [
    ("*chat*", "Chat"),
    ("*ssh*", "CommandControl"),
    ("*rdp*", "CommandControl"),
    ("*c2*", "CommandControl"),
    ("*command*", "CommandControl"),
    ("*sftp*", "FileTransfer"),
    ("*rsync*", "FileTransfer"),
    ("*scp*", "FileTransfer"),
    ("*ftp*", "FileTransfer"),
    ("*file*", "FileTransfer"),
    ("*netflix*", "Streaming"),
    ("*youtube*", "Streaming"),
    ("*vimeo*", "Streaming"),
    ("*stream*", "Streaming"),
    ("*voip*", "VoIP"),
    ("*zoiper*", "VoIP"),
    ("*sip*", "VoIP"),
    ("*skype*", "VoIP"),
]

# VNAT-style file names: "<vpn|nonvpn>_<application>_<capture>.pcap"
DEFAULT_RULES = tuple(
    LabelRule(prefix + app, label, category)
    for prefix, label in (("nonvpn_", NON_VPN), ("vpn_", VPN))
    for app, category in _APP_CATEGORIES
)


def label_flow(source_file_name, rules=DEFAULT_RULES):
    """``(label, category)`` for a capture file: first matching rule wins."""
    rules = list(rules)
    if not rules:
        raise ConfigError("label mapping is empty")
    name = Path(source_file_name).name
    for rule in rules:
        if rule.matches(name):
            return rule.label, rule.category
    logger.warning("no label rule matches %r; using (nonVPN, Unknown)", name)
    return NON_VPN, UNKNOWN


@dataclass
class FilterResult:
    kept: list
    removed: list
    min_pkts: int

    @property
    def reduction_pct(self):
        total = len(self.kept) + len(self.removed)
        return 100.0 * len(self.removed) / total if total else 0.0

    def by_category(self):
        """``{category: {"retained": n, "removed": m, "reduction_pct": r}}``."""
        out = defaultdict(lambda: {"retained": 0, "removed": 0})
        for f in self.kept:
            out[f.category]["retained"] += 1
        for f in self.removed:
            out[f.category]["removed"] += 1
        for stats in out.values():
            total = stats["retained"] + stats["removed"]
            stats["reduction_pct"] = 100.0 * stats["removed"] / total if total else 0.0
        return dict(out)


def filter_min_packets(flows, min_pkts=DEFAULT_MIN_PACKETS):
    """Split flows into those with ``packet_count >= min_pkts`` and the rest."""
    if isinstance(min_pkts, bool) or int(min_pkts) != min_pkts or min_pkts < 1:
        raise ConfigError(f"min_pkts must be a positive integer, got {min_pkts!r}")
    kept, removed = [], []
    for f in flows:
        (kept if f.packet_count >= min_pkts else removed).append(f)
    return FilterResult(kept=kept, removed=removed, min_pkts=int(min_pkts))


def flow_count_report(before, after):
    """Per-category flow counts before and after filtering.

    ``nonVPN``/``VPN``/``total`` count the unfiltered flows, ``filtered`` the
    retained ones and ``reduction_pct`` is ``(total - filtered) / total``.
    """
    counts = Counter((f.category, f.label) for f in before)
    kept = Counter(f.category for f in after)
    categories = list(CATEGORIES)
    extra = {c for c, _ in counts} | set(kept)
    categories += sorted(extra - set(CATEGORIES))
    rows = []
    for cat in categories:
        nonvpn, vpn = counts[(cat, NON_VPN)], counts[(cat, VPN)]
        total = nonvpn + vpn
        rows.append(
            {
                "category": cat,
                "nonVPN": nonvpn,
                "VPN": vpn,
                "total": total,
                "filtered": kept[cat],
                "reduction_pct": 100.0 * (total - kept[cat]) / total if total else 0.0,
            }
        )
    return rows


def _meter_one(args):
    from .ingest import PcapReader

    path, rules, timeout, idle_timeout = args
    reader = PcapReader(path)
    label, category = label_flow(path, rules)
    fm = FlowMeter(timeout=timeout, idle_timeout=idle_timeout)
    flows = fm.meter(reader, file=Path(path).name, label=label, category=category)
    return flows, reader.summary


def meter_files(paths, rules=DEFAULT_RULES, timeout=None, idle_timeout=None, workers=1):
    """Meter each capture independently and merge in canonical order.

    Returns ``(flows, summaries)`` where ``summaries`` holds one
    :class:`~vpnwave.ingest.SkipSummary` per input file.
    """
    rules = tuple(rules)
    jobs = [(str(p), rules, timeout, idle_timeout) for p in sorted(map(str, paths))]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_meter_one, jobs))
    else:
        results = [_meter_one(j) for j in jobs]
    flows = [f for fl, _ in results for f in fl]
    flows.sort(key=Flow.sort_key)
    return flows, [s for _, s in results]
