"""Classic pcap reader producing one :class:`PacketRecord` per TCP/UDP packet.

Only the first fragment (offset zero) of a fragmented IP datagram is kept;
later fragments carry no transport header and are dropped. Payload sizes
come from header length fields, so captures truncated by a small snaplen
still yield exact sizes as long as the headers themselves were captured.
"""

import enum
import json
import logging
import socket
import struct
from dataclasses import asdict, dataclass, field

from .exceptions import PcapFormatError

logger = logging.getLogger(__name__)

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229
_RAW_LINKTYPES = {LINKTYPE_RAW, 12, 14, LINKTYPE_IPV4, LINKTYPE_IPV6}

_MAGIC = {
    b"\xd4\xc3\xb2\xa1": ("<", False),
    b"\xa1\xb2\xc3\xd4": (">", False),
    b"\x4d\x3c\xb2\xa1": ("<", True),
    b"\xa1\xb2\x3c\x4d": (">", True),
}
_PCAPNG_MAGIC = b"\x0a\x0d\x0d\x0a"

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_VLAN = 0x8100

_IPV6_EXT = {0, 43, 60}
_IPV6_FRAGMENT = 44
_IPV6_AH = 51


class Protocol(enum.IntEnum):
    OTHER = 0
    TCP = 6
    UDP = 17


@dataclass(frozen=True)
class PacketRecord:
    """One parsed packet; ``ts_us`` is the capture time in integer microseconds."""

    ts_us: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: Protocol
    payload_len: int
    frag_offset_zero: bool = True

    @property
    def ts(self):
        return self.ts_us / 1_000_000


@dataclass
class SkipSummary:
    """Per-file packet accounting; ``kept + skipped == total`` always holds."""

    file: str
    total: int = 0
    kept: int = 0
    non_ip: int = 0
    non_tcp_udp: int = 0
    fragments: int = 0
    truncated: int = 0
    malformed: int = 0
    linktype: int = None
    nanosecond: bool = False

    @property
    def skipped(self):
        return self.non_ip + self.non_tcp_udp + self.fragments + self.truncated + self.malformed

    def to_dict(self):
        d = asdict(self)
        d["skipped"] = self.skipped
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def fragment_policy(frag_offset, more_fragments=False):
    """Keep a packet iff its fragment offset is zero.

    The more-fragments flag does not matter: a first fragment (offset 0, MF
    set) still carries the transport header and is kept.
    """
    return frag_offset == 0


# reasons returned by the header parsers instead of a record
_NON_IP, _NON_TRANSPORT, _FRAGMENT, _TRUNCATED, _MALFORMED = (
    "non_ip",
    "non_tcp_udp",
    "fragments",
    "truncated",
    "malformed",
)


def _transport(data, off, proto, ip_payload_len):
    """Ports and payload size from a TCP/UDP header at ``data[off:]``."""
    if proto == Protocol.TCP:
        if len(data) < off + 20:
            return _TRUNCATED
        sport, dport = struct.unpack_from("!HH", data, off)
        doff = (data[off + 12] >> 4) * 4
        if doff < 20:
            return _MALFORMED
        payload = ip_payload_len - doff
    else:
        if len(data) < off + 8:
            return _TRUNCATED
        sport, dport, ulen = struct.unpack_from("!HHH", data, off)
        if ulen < 8:
            return _MALFORMED
        payload = ulen - 8
    if payload < 0:
        return _MALFORMED
    return sport, dport, payload


def _parse_ipv4(data, off, ts_us):
    if len(data) < off + 20:
        return _TRUNCATED
    vihl = data[off]
    if vihl >> 4 != 4:
        return _MALFORMED
    ihl = (vihl & 0x0F) * 4
    total_len, flags_frag = struct.unpack_from("!H2xH", data, off + 2)
    proto = data[off + 9]
    if ihl < 20 or total_len < ihl:
        return _MALFORMED
    if not fragment_policy(flags_frag & 0x1FFF, bool(flags_frag & 0x2000)):
        return _FRAGMENT
    if proto not in (Protocol.TCP, Protocol.UDP):
        return _NON_TRANSPORT
    res = _transport(data, off + ihl, proto, total_len - ihl)
    if isinstance(res, str):
        return res
    src = socket.inet_ntop(socket.AF_INET, data[off + 12 : off + 16])
    dst = socket.inet_ntop(socket.AF_INET, data[off + 16 : off + 20])
    return PacketRecord(ts_us, src, dst, res[0], res[1], Protocol(proto), res[2])


def _parse_ipv6(data, off, ts_us):
    if len(data) < off + 40:
        return _TRUNCATED
    if data[off] >> 4 != 6:
        return _MALFORMED
    payload_len = struct.unpack_from("!H", data, off + 4)[0]
    nxt = data[off + 6]
    src = socket.inet_ntop(socket.AF_INET6, data[off + 8 : off + 24])
    dst = socket.inet_ntop(socket.AF_INET6, data[off + 24 : off + 40])
    pos = off + 40
    ext_len = 0
    while nxt in _IPV6_EXT or nxt in (_IPV6_FRAGMENT, _IPV6_AH):
        if len(data) < pos + 8:
            return _TRUNCATED
        if nxt == _IPV6_FRAGMENT:
            frag_offset = struct.unpack_from("!H", data, pos + 2)[0] >> 3
            if not fragment_policy(frag_offset, bool(data[pos + 3] & 1)):
                return _FRAGMENT
            hlen = 8
        elif nxt == _IPV6_AH:
            hlen = (data[pos + 1] + 2) * 4
        else:
            hlen = (data[pos + 1] + 1) * 8
        nxt = data[pos]
        pos += hlen
        ext_len += hlen
    if nxt not in (Protocol.TCP, Protocol.UDP):
        return _NON_TRANSPORT
    res = _transport(data, pos, nxt, payload_len - ext_len)
    if isinstance(res, str):
        return res
    return PacketRecord(ts_us, src, dst, res[0], res[1], Protocol(nxt), res[2])


def _parse_ip(data, off, ts_us, version=None):
    if len(data) <= off:
        return _TRUNCATED
    version = version or data[off] >> 4
    if version == 4:
        return _parse_ipv4(data, off, ts_us)
    if version == 6:
        return _parse_ipv6(data, off, ts_us)
    return _NON_IP


def parse_frame(data, linktype, ts_us):
    """Parse one captured frame into a :class:`PacketRecord` or a skip reason."""
    if linktype == LINKTYPE_ETHERNET:
        if len(data) < 14:
            return _TRUNCATED
        ethertype = struct.unpack_from("!H", data, 12)[0]
        off = 14
        if ethertype == ETH_VLAN:
            if len(data) < 18:
                return _TRUNCATED
            ethertype = struct.unpack_from("!H", data, 16)[0]
            off = 18
        if ethertype == ETH_IPV4:
            return _parse_ip(data, off, ts_us, 4)
        if ethertype == ETH_IPV6:
            return _parse_ip(data, off, ts_us, 6)
        return _NON_IP
    return _parse_ip(data, 0, ts_us)


@dataclass
class PcapReader:
    """Iterate over the TCP/UDP packets of a classic pcap file.

    The skip summary in :attr:`summary` is complete once iteration finishes.

    Raises
    ------
    PcapFormatError
        On a malformed global header, a pcapng file or an unsupported link
        type. Truncated trailing records are counted, not raised.
    """

    path: str
    summary: SkipSummary = field(init=False)

    def __post_init__(self):
        self.path = str(self.path)
        self.summary = SkipSummary(file=self.path)

    def __iter__(self):
        self.summary = summary = SkipSummary(file=self.path)
        with open(self.path, "rb") as fh:
            header = fh.read(24)
            if header[:4] == _PCAPNG_MAGIC:
                raise PcapFormatError(f"{self.path}: pcapng is not supported, convert to classic pcap")
            if len(header) < 24 or header[:4] not in _MAGIC:
                raise PcapFormatError(f"{self.path}: not a classic pcap file (bad global header)")
            endian, nano = _MAGIC[header[:4]]
            linktype = struct.unpack_from(endian + "I", header, 20)[0] & 0x0FFFFFFF
            if linktype != LINKTYPE_ETHERNET and linktype not in _RAW_LINKTYPES:
                raise PcapFormatError(f"{self.path}: unsupported link type {linktype}")
            summary.linktype, summary.nanosecond = linktype, nano
            rec = struct.Struct(endian + "IIII")
            while True:
                head = fh.read(16)
                if not head:
                    break
                summary.total += 1
                if len(head) < 16:
                    summary.truncated += 1
                    logger.warning("%s: truncated record header at end of file", self.path)
                    break
                sec, frac, caplen, _ = rec.unpack(head)
                data = fh.read(caplen)
                if len(data) < caplen:
                    summary.truncated += 1
                    logger.warning("%s: truncated packet record at end of file", self.path)
                    break
                ts_us = sec * 1_000_000 + (frac // 1000 if nano else frac)
                res = parse_frame(data, linktype, ts_us)
                if isinstance(res, str):
                    setattr(summary, res, getattr(summary, res) + 1)
                    continue
                summary.kept += 1
                yield res


def read_pcap(path, with_summary=False):
    """Read all TCP/UDP packets of ``path`` in file order.

    Returns the list of records, or ``(records, summary)`` when
    ``with_summary`` is true.
    """
    reader = PcapReader(path)
    records = list(reader)
    if with_summary:
        return records, reader.summary
    return records
