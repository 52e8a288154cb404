"""Synthetic captures and feature sets with known ground truth.

Generated pcaps hold only headers (snaplen-truncated records); the original
frame length and the IP/UDP length fields describe the full packet, which is
all the reader needs to recover payload sizes. Every file comes with a JSON
manifest describing each intended flow and its expected segmentation, which
serves as the oracle for the ingest and metering stages.
"""

import ipaddress
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError
from .flows import CATEGORIES, DEFAULT_ACTIVE_TIMEOUT, LABELS, NON_VPN, UNKNOWN, VPN, FlowKey

MANIFEST_SCHEMA = "vpnwave-manifest/1"

TCP, UDP = 6, 17
_MAX_PAYLOAD = {TCP: 1460, UDP: 1472}


# -- wire format -----------------------------------------------------------


class PcapWriter:
    """Minimal little-endian classic pcap writer (Ethernet, microseconds)."""

    def __init__(self, fh, snaplen=65535, linktype=1):
        self.fh = fh
        self.snaplen = snaplen
        fh.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, snaplen, linktype))

    def write(self, ts_us, frame, orig_len=None):
        data = frame[: self.snaplen]
        sec, usec = divmod(int(ts_us), 1_000_000)
        self.fh.write(struct.pack("<IIII", sec, usec, len(data), orig_len or len(frame)))
        self.fh.write(data)


def _ethernet(ethertype):
    return b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01" + struct.pack("!H", ethertype)


def _transport_header(proto, sport, dport, payload_len):
    if proto == TCP:
        # data offset 5 words, ACK|PSH
        return struct.pack("!HHIIBBHHH", sport, dport, 0, 0, 5 << 4, 0x18, 65535, 0, 0)
    return struct.pack("!HHHH", sport, dport, 8 + payload_len, 0)


def build_frame(src, dst, sport, dport, proto, payload_len, frag_offset=0, more_fragments=False):
    """Ethernet frame headers for one packet; returns ``(headers, full_length)``.

    With a non-zero ``frag_offset`` no transport header is emitted, as in a
    real trailing fragment.
    """
    src_ip, dst_ip = ipaddress.ip_address(src), ipaddress.ip_address(dst)
    trailing = frag_offset != 0
    l4 = b"" if trailing else _transport_header(proto, sport, dport, payload_len)
    body_len = len(l4) + payload_len
    if src_ip.version == 4:
        flags = (0x2000 if more_fragments else 0) | (frag_offset & 0x1FFF)
        ip = struct.pack(
            "!BBHHHBBH4s4s", 0x45, 0, 20 + body_len, 0, flags, 64, proto, 0, src_ip.packed, dst_ip.packed
        )
        hdr = _ethernet(0x0800) + ip + l4
    else:
        nxt, ext = proto, b""
        if frag_offset or more_fragments:
            ext = struct.pack("!BBHI", proto, 0, (frag_offset << 3) | int(more_fragments), 0)
            nxt = 44
        ip = struct.pack("!IHBB16s16s", 6 << 28, len(ext) + body_len, nxt, 64, src_ip.packed, dst_ip.packed)
        hdr = _ethernet(0x86DD) + ip + ext + l4
    return hdr, len(hdr) + payload_len


def _arp_frame():
    body = struct.pack("!HHBBH6s4s6s4s", 1, 0x0800, 6, 4, 1, b"\x02" * 6, b"\x0a\x00\x00\x01", b"\x00" * 6, b"\x0a\x00\x00\x02")
    return _ethernet(0x0806) + body


def _icmp_frame(src, dst):
    icmp = struct.pack("!BBHHH", 8, 0, 0, 1, 1)
    ip = struct.pack(
        "!BBHHHBBH4s4s", 0x45, 0, 20 + len(icmp), 0, 0, 64, 1, 0,
        ipaddress.ip_address(src).packed, ipaddress.ip_address(dst).packed,
    )
    return _ethernet(0x0800) + ip + icmp


# -- distributions ----------------------------------------------------------


@dataclass(frozen=True)
class Dist:
    """A small parametric distribution, serialisable into manifests.

    kinds: ``constant(value)``, ``uniform(low, high)``, ``normal(mean, sd)``,
    ``bimodal(low, high, p_high, jitter)``, ``heavy_tail(scale, alpha, cap)``,
    ``choice(values, weights)``, ``geometric(mean)``, ``lognormal(median, sigma)``,
    ``exponential(mean)``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.params
        checks = {
            "constant": lambda: p["value"] >= 0,
            "uniform": lambda: 0 <= p["low"] <= p["high"],
            "normal": lambda: p["sd"] >= 0,
            "bimodal": lambda: 0 <= p["p_high"] <= 1 and p.get("jitter", 0) >= 0,
            "heavy_tail": lambda: p["scale"] > 0 and p["alpha"] > 0,
            "choice": lambda: len(p["values"]) > 0
            and len(p.get("weights", p["values"])) == len(p["values"])
            and all(w >= 0 for w in p.get("weights", [1])),
            "geometric": lambda: p["mean"] >= 1,
            "lognormal": lambda: p["median"] > 0 and p["sigma"] >= 0,
            "exponential": lambda: p["mean"] > 0,
        }
        if self.kind not in checks:
            raise ConfigError(f"unknown distribution kind {self.kind!r}")
        try:
            ok = checks[self.kind]()
        except (KeyError, TypeError):
            ok = False
        if not ok:
            raise ConfigError(f"invalid parameters for {self.kind}: {self.params}")

    def sample(self, rng, n):
        p, k = self.params, self.kind
        if k == "constant":
            return np.full(n, float(p["value"]))
        if k == "uniform":
            return rng.uniform(p["low"], p["high"], n)
        if k == "normal":
            return rng.normal(p["mean"], p["sd"], n)
        if k == "bimodal":
            hi = rng.random(n) < p["p_high"]
            return np.where(hi, p["high"], p["low"]) + rng.normal(0, p.get("jitter", 0), n)
        if k == "heavy_tail":
            out = p["scale"] * (1.0 + rng.pareto(p["alpha"], n))
            return np.minimum(out, p.get("cap", np.inf))
        if k == "choice":
            w = np.asarray(p.get("weights", [1] * len(p["values"])), dtype=float)
            return rng.choice(np.asarray(p["values"], dtype=float), size=n, p=w / w.sum())
        if k == "geometric":
            return rng.geometric(1.0 / p["mean"], n).astype(float)
        if k == "lognormal":
            return p["median"] * np.exp(rng.normal(0, p["sigma"], n))
        return rng.exponential(p["mean"], n)


def constant(value):
    return Dist("constant", {"value": value})


@dataclass
class TrafficProfile:
    """Recipe for ``count`` flows of one (label, category) class.

    ``length`` draws packets per flow, ``fwd_sizes``/``bwd_sizes`` payload
    sizes per direction, ``inter_arrival`` the gap in seconds between
    consecutive packets of a flow and ``bwd_fraction`` the probability that a
    packet (other than the first) travels in the backward direction.
    """

    category: str
    label: str
    count: int
    length: Dist = field(default_factory=lambda: constant(25))
    fwd_sizes: Dist = field(default_factory=lambda: constant(100))
    bwd_sizes: Dist = None
    inter_arrival: Dist = field(default_factory=lambda: Dist("exponential", {"mean": 0.05}))
    bwd_fraction: float = 0.5
    protocol: int = TCP
    server_port: int = 443
    ipv6: bool = False
    flow_spacing: float = 1.0

    def __post_init__(self):
        if self.label not in LABELS:
            raise ConfigError(f"label must be one of {LABELS}")
        if self.category not in (*CATEGORIES, UNKNOWN):
            raise ConfigError(f"unknown category {self.category!r}")
        if self.count < 0:
            raise ConfigError("count must be non-negative")
        if not 0.0 <= self.bwd_fraction <= 1.0:
            raise ConfigError("bwd_fraction must be a probability")
        if self.protocol not in (TCP, UDP):
            raise ConfigError("protocol must be 6 (TCP) or 17 (UDP)")
        if self.flow_spacing < 0:
            raise ConfigError("flow_spacing must be non-negative")


@dataclass
class ExplicitFlow:
    """A single flow with fully specified packets (times in seconds)."""

    ts: list
    sizes: list
    directions: list = None  # 0 = forward, 1 = backward; default all forward
    label: str = NON_VPN
    category: str = UNKNOWN
    protocol: int = UDP

    def __post_init__(self):
        if len(self.ts) != len(self.sizes) or not self.ts:
            raise ConfigError("explicit flow needs equally long, non-empty ts and sizes")
        if self.directions is None:
            self.directions = [0] * len(self.ts)
        if self.directions[0] != 0:
            raise ConfigError("the first packet of a flow must be forward")


# -- ground truth -----------------------------------------------------------


def _endpoints(g, ipv6):
    if ipv6:
        client = str(ipaddress.IPv6Address("fd00::1:0") + g)
        server = str(ipaddress.IPv6Address("fd00::2:0") + (g % 60000))
    else:
        client = str(ipaddress.IPv4Address("10.0.0.1") + g)
        server = str(ipaddress.IPv4Address("172.16.0.1") + (g % 60000))
    return client, 20000 + g % 40000, server


def expected_segments(ts_us, directions, sizes, key, timeout):
    """Segmentation oracle for one flow under an active timeout (or ``None``)."""
    segs = []
    limit = None if timeout is None else int(round(timeout * 1_000_000))
    for t, d, s in zip(ts_us, directions, sizes):
        if not segs or (limit is not None and t - segs[-1]["first_us"] > limit):
            initiator_is_client = d == 0
            segs.append({"first_us": t, "last_us": t, "flip": not initiator_is_client, "fwd": [], "bwd": []})
        seg = segs[-1]
        seg["last_us"] = t
        is_fwd = (d == 0) != seg["flip"]
        (seg["fwd"] if is_fwd else seg["bwd"]).append(int(s))
    out = []
    for i, seg in enumerate(segs):
        k = FlowKey(key.protocol, key.ip_b, key.port_b, key.ip_a, key.port_a) if seg["flip"] else key
        out.append(
            {
                "segment": i,
                "key": str(k),
                "fwd_sizes": seg["fwd"],
                "bwd_sizes": seg["bwd"],
                "first_us": seg["first_us"],
                "last_us": seg["last_us"],
            }
        )
    return out


def _profile_flows(profile, rng, g0, t0_us):
    flows = []
    lengths = np.maximum(1, np.rint(profile.length.sample(rng, profile.count))).astype(int)
    bwd_dist = profile.bwd_sizes or profile.fwd_sizes
    cap = _MAX_PAYLOAD[profile.protocol]
    for i, n in enumerate(lengths):
        dirs = (rng.random(n) < profile.bwd_fraction).astype(int)
        dirs[0] = 0
        fwd = np.clip(np.rint(profile.fwd_sizes.sample(rng, n)), 0, cap).astype(int)
        bwd = np.clip(np.rint(bwd_dist.sample(rng, n)), 0, cap).astype(int)
        sizes = np.where(dirs == 0, fwd, bwd)
        gaps = np.maximum(1, np.rint(profile.inter_arrival.sample(rng, n - 1) * 1e6)).astype(np.int64)
        start = t0_us + int(round(i * profile.flow_spacing * 1e6)) + int(rng.integers(0, 1000))
        ts = np.concatenate([[start], start + np.cumsum(gaps)]).astype(np.int64)
        flows.append(
            {
                "g": g0 + i,
                "ts_us": ts.tolist(),
                "sizes": sizes.tolist(),
                "directions": dirs.tolist(),
                "label": profile.label,
                "category": profile.category,
                "protocol": profile.protocol,
                "server_port": profile.server_port,
                "ipv6": profile.ipv6,
            }
        )
    return flows


def _explicit_flow(flow, g, t0_us):
    return {
        "g": g,
        "ts_us": [t0_us + int(round(t * 1e6)) for t in flow.ts],
        "sizes": [int(s) for s in flow.sizes],
        "directions": list(flow.directions),
        "label": flow.label,
        "category": flow.category,
        "protocol": flow.protocol,
        "server_port": 443,
        "ipv6": False,
    }


def generate_pcap(profiles, seed, path, timeout=DEFAULT_ACTIVE_TIMEOUT, noise=None, start_time=1_600_000_000):
    """Write a synthetic capture and return its ground-truth manifest.

    Parameters
    ----------
    profiles : list of TrafficProfile or ExplicitFlow
    seed : int
    path : path-like
        Output pcap; the manifest is written next to it as ``<path>.json``.
    timeout : float or None
        Active timeout the manifest's expected segmentation is computed for.
    noise : dict, optional
        Extra packets the reader must skip: ``{"arp": n, "icmp": n,
        "fragments": n}``.
    """
    profiles = list(profiles)
    if not profiles:
        raise ConfigError("at least one profile is required")
    rng = np.random.default_rng(seed)
    t0_us = int(start_time) * 1_000_000
    raw_flows = []
    for prof in profiles:
        if isinstance(prof, ExplicitFlow):
            raw_flows.append(_explicit_flow(prof, len(raw_flows), t0_us))
        else:
            raw_flows.extend(_profile_flows(prof, rng, len(raw_flows), t0_us))

    events = []  # (ts_us, order, frame, orig_len)
    manifest_flows = []
    for f in raw_flows:
        client, cport, server = _endpoints(f["g"], f["ipv6"])
        key = FlowKey(f["protocol"], client, cport, server, f["server_port"])
        for seq, (t, d, s) in enumerate(zip(f["ts_us"], f["directions"], f["sizes"])):
            a, b = ((client, cport), (server, f["server_port"]))[:: 1 if d == 0 else -1]
            frame, orig = build_frame(a[0], b[0], a[1], b[1], f["protocol"], s)
            events.append((t, f["g"], seq, frame, orig))
        manifest_flows.append(
            {
                "key": str(key),
                "label": f["label"],
                "category": f["category"],
                "ts_us": f["ts_us"],
                "sizes": f["sizes"],
                "directions": f["directions"],
                "packet_count": len(f["sizes"]),
                "segments": expected_segments(f["ts_us"], f["directions"], f["sizes"], key, timeout),
            }
        )

    noise = dict(noise or {})
    span = max((e[0] for e in events), default=t0_us) - t0_us + 1
    extra = {"non_ip": 0, "non_tcp_udp": 0, "fragments": 0}
    for i in range(int(noise.get("arp", 0))):
        events.append((t0_us + int(rng.integers(0, span)), -1, i, _arp_frame(), None))
        extra["non_ip"] += 1
    for i in range(int(noise.get("icmp", 0))):
        events.append((t0_us + int(rng.integers(0, span)), -2, i, _icmp_frame("192.168.0.1", "192.168.0.2"), None))
        extra["non_tcp_udp"] += 1
    for i in range(int(noise.get("fragments", 0))):
        frame, orig = build_frame("192.168.1.1", "192.168.1.2", 0, 0, UDP, 1480, frag_offset=185)
        events.append((t0_us + int(rng.integers(0, span)), -3, i, frame, orig))
        extra["fragments"] += 1
    events.sort(key=lambda e: (e[0], e[1], e[2]))

    path = Path(path)
    try:
        with open(path, "wb") as fh:
            w = PcapWriter(fh, snaplen=128)
            for t, _, _, frame, orig in events:
                w.write(t, frame, orig)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "file": path.name,
        "seed": int(seed),
        "timeout": timeout,
        "packets_total": len(events),
        "packets_kept": sum(len(f["sizes"]) for f in manifest_flows),
        "skipped": extra,
        "flows": manifest_flows,
    }
    manifest_path = path.with_name(path.name + ".json")
    manifest_path.write_text(json.dumps(manifest, sort_keys=True))
    return manifest


def corpus_file_name(profile, index):
    prefix = "vpn" if profile.label == VPN else "nonvpn"
    return f"{prefix}_{profile.category.lower()}_{index:02d}.pcap"


def generate_corpus(profiles, seed, out_dir, timeout=DEFAULT_ACTIVE_TIMEOUT):
    """One capture per profile, named so the default label rules recover the
    profile's label and category. Returns the list of manifests."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).spawn(len(profiles))
    manifests = []
    for i, (prof, ss) in enumerate(zip(profiles, seeds)):
        sub_seed = int(ss.generate_state(1)[0])
        manifests.append(generate_pcap([prof], sub_seed, out_dir / corpus_file_name(prof, i), timeout=timeout))
    return manifests


def load_manifest(path):
    data = json.loads(Path(path).read_text())
    if data.get("schema") != MANIFEST_SCHEMA:
        raise DataError(f"{path}: unsupported manifest schema {data.get('schema')!r}")
    return data


def profile_to_dict(profile):
    return asdict(profile)


# -- feature-level generators -------------------------------------------------


def generate_separable_features(n_per_class, n_features, margin, seed):
    """Two unit-variance Gaussian clusters whose means are ``margin`` apart.

    Returns ``(X, y)`` with ``y`` in {0 (nonVPN), 1 (VPN)}; rows are shuffled.
    """
    if margin < 0:
        raise ConfigError("margin must be non-negative")
    rng = np.random.default_rng(seed)
    direction = np.ones(n_features) / np.sqrt(n_features)
    X0 = rng.normal(size=(n_per_class, n_features)) - 0.5 * margin * direction
    X1 = rng.normal(size=(n_per_class, n_features)) + 0.5 * margin * direction
    X = np.vstack([X0, X1])
    y = np.repeat([0, 1], n_per_class)
    order = rng.permutation(len(y))
    return X[order], y[order]


# -- corpus presets -----------------------------------------------------------


def _demo_profiles(scale):
    n = max(2, int(round(30 * scale)))
    shapes = {
        "Chat": (Dist("lognormal", {"median": 90, "sigma": 0.5}), Dist("geometric", {"mean": 25})),
        "CommandControl": (Dist("bimodal", {"low": 48, "high": 300, "p_high": 0.2, "jitter": 10}), Dist("geometric", {"mean": 40})),
        "FileTransfer": (Dist("bimodal", {"low": 52, "high": 1400, "p_high": 0.8, "jitter": 20}), Dist("geometric", {"mean": 60})),
        "Streaming": (Dist("heavy_tail", {"scale": 600, "alpha": 2.0, "cap": 1460}), Dist("geometric", {"mean": 80})),
        "VoIP": (Dist("normal", {"mean": 160, "sd": 12}), Dist("geometric", {"mean": 50})),
    }
    out = []
    for cat, (sizes, length) in shapes.items():
        for label in LABELS:
            vpn_sizes = Dist("normal", {"mean": 250 if cat in ("Chat", "VoIP", "CommandControl") else 1100, "sd": 60})
            out.append(
                TrafficProfile(
                    category=cat,
                    label=label,
                    count=n,
                    length=length,
                    fwd_sizes=vpn_sizes if label == VPN else sizes,
                    protocol=UDP if cat == "VoIP" else TCP,
                    server_port=1194 if label == VPN else 443,
                    flow_spacing=0.5,
                )
            )
    return out


def _overlap_profiles(scale):
    # Short flows separate on packet size alone. In long flows the label is the
    # XOR of whether each direction has a narrow or a wide size distribution.
    # Every feature depends on one direction only, so a linear score is a sum
    # of a forward and a backward term and cannot represent the XOR.
    n_long = max(4, int(round(120 * scale)))
    n_short = max(4, int(round(300 * scale)))
    means = dict(zip(CATEGORIES, (90.0, 180.0, 1100.0, 700.0, 350.0)))
    out = []
    for cat in CATEGORIES:
        mu = means[cat]
        for fwd_cv, bwd_cv in ((0.04, 0.04), (0.6, 0.6), (0.04, 0.6), (0.6, 0.04)):
            out.append(
                TrafficProfile(
                    category=cat,
                    label=VPN if fwd_cv == bwd_cv else NON_VPN,
                    count=n_long,
                    length=Dist("uniform", {"low": 24, "high": 90}),
                    fwd_sizes=Dist("normal", {"mean": mu, "sd": mu * fwd_cv}),
                    bwd_sizes=Dist("normal", {"mean": mu, "sd": mu * bwd_cv}),
                    flow_spacing=0.2,
                )
            )
        for label in LABELS:
            out.append(
                TrafficProfile(
                    category=cat,
                    label=label,
                    count=n_short,
                    length=Dist("uniform", {"low": 2, "high": 15}),
                    fwd_sizes=Dist("normal", {"mean": 700.0 if label == VPN else 120.0, "sd": 40}),
                    flow_spacing=0.2,
                )
            )
    return out


PRESETS = {"demo": _demo_profiles, "overlap": _overlap_profiles}


def preset_profiles(name, scale=1.0):
    """Profiles of a named corpus preset; ``scale`` multiplies the flow counts."""
    try:
        build = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown synth preset {name!r}; choose from {sorted(PRESETS)}") from None
    if not scale > 0:
        raise ConfigError("scale must be positive")
    return build(scale)
