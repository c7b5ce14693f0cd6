"""Trace ingestion: pcap and CSV readers, flow keys, per-flow demultiplexing.

Only the client-to-server direction matters downstream, so readers accept a
predicate over the full five-tuple and drop everything else. Timestamps are
rebased to the first record of the trace and carried as integer nanoseconds.
"""

from __future__ import annotations

import csv
import enum
import io
import ipaddress
import logging
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Dict, Iterable, Iterator, List, Optional, TextIO

log = logging.getLogger(__name__)

CSV_HEADER = ("flow_id", "timestamp_ns", "payload_len", "is_pure_ack", "is_full_mtu")
DEFAULT_MTU = 1500

PCAP_MAGIC_US = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
IPPROTO_TCP = 6
IPPROTO_UDP = 17
TCP_FLAG_ACK = 0x10
# IPv6 extension headers we step over; fragments (44) are not reassembled
_IPV6_EXT_HEADERS = {0, 43, 60}


class ParseError(ValueError):
    """Fatal trace error. ``line`` is set for CSV input."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class KeyMode(enum.Enum):
    FIVE_TUPLE = "five-tuple"
    IP_PAIR = "ip-pair"
    # opaque flow ids from the CSV interchange format
    LABEL = "label"


@dataclass(frozen=True)
class FlowKey:
    key_mode: KeyMode
    src_addr: str
    dst_addr: str = ""
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    protocol: Optional[int] = None

    @classmethod
    def five_tuple(cls, src: str, dst: str, sport: int, dport: int, proto: int) -> "FlowKey":
        return cls(KeyMode.FIVE_TUPLE, src, dst, sport, dport, proto)

    @classmethod
    def ip_pair(cls, src: str, dst: str) -> "FlowKey":
        return cls(KeyMode.IP_PAIR, src, dst)

    @classmethod
    def label(cls, flow_id: str) -> "FlowKey":
        return cls(KeyMode.LABEL, flow_id)

    def project(self, mode: KeyMode) -> "FlowKey":
        """Re-key a five-tuple under ``mode``; IP_PAIR drops ports and protocol."""
        if mode is self.key_mode:
            return self
        if mode is KeyMode.IP_PAIR:
            return FlowKey.ip_pair(self.src_addr, self.dst_addr)
        raise ValueError(f"cannot project {self.key_mode.value} key to {mode.value}")

    def __str__(self) -> str:
        if self.key_mode is KeyMode.LABEL:
            return self.src_addr
        if self.key_mode is KeyMode.IP_PAIR:
            return f"{self.src_addr}>{self.dst_addr}"
        return f"{self.src_addr}:{self.src_port}>{self.dst_addr}:{self.dst_port}/{self.protocol}"


@dataclass(frozen=True)
class PacketObservation:
    flow: FlowKey
    timestamp_ns: int
    payload_len: int
    is_pure_ack: bool = False
    is_full_mtu: bool = False


FlowFilter = Callable[[FlowKey], bool]


@dataclass
class PcapStats:
    records: int = 0
    emitted: int = 0
    filtered: int = 0
    skipped: int = 0
    clamped: int = 0
    skip_reasons: Dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.skip_reasons[reason] += 1


@dataclass
class _Decoded:
    key: FlowKey
    ip_total_len: int
    payload_len: int
    is_pure_ack: bool


def _decode_transport(proto: int, seg: bytes, src: str, dst: str, ip_total_len: int,
                      stats: PcapStats) -> Optional[_Decoded]:
    if proto == IPPROTO_TCP:
        if len(seg) < 20:
            stats.skip("truncated-tcp")
            return None
        sport, dport, _seq, _ack, off_flags = struct.unpack("!HHIIH", seg[:14])
        hdr_len = (off_flags >> 12) * 4
        flags = off_flags & 0x1FF
        if hdr_len < 20 or len(seg) < hdr_len:
            stats.skip("truncated-tcp")
            return None
        payload = max(0, len(seg) - hdr_len)
        return _Decoded(
            FlowKey.five_tuple(src, dst, sport, dport, proto),
            ip_total_len,
            payload,
            bool(flags & TCP_FLAG_ACK) and payload == 0,
        )
    if proto == IPPROTO_UDP:
        if len(seg) < 8:
            stats.skip("truncated-udp")
            return None
        sport, dport, ulen = struct.unpack("!HHH", seg[:6])
        return _Decoded(FlowKey.five_tuple(src, dst, sport, dport, proto), ip_total_len,
                        max(0, ulen - 8), False)
    stats.skip("not-tcp-udp")
    return None


def _decode_ipv4(pkt: bytes, stats: PcapStats) -> Optional[_Decoded]:
    if len(pkt) < 20:
        stats.skip("truncated-ip")
        return None
    ihl = (pkt[0] & 0x0F) * 4
    total_len = struct.unpack("!H", pkt[2:4])[0]
    frag = struct.unpack("!H", pkt[6:8])[0] & 0x1FFF
    proto = pkt[9]
    if ihl < 20 or total_len < ihl or len(pkt) < total_len:
        stats.skip("truncated-ip")
        return None
    if frag:
        stats.skip("ip-fragment")
        return None
    src = str(ipaddress.IPv4Address(pkt[12:16]))
    dst = str(ipaddress.IPv4Address(pkt[16:20]))
    # ignore Ethernet trailer padding beyond the IP datagram
    return _decode_transport(proto, pkt[ihl:total_len], src, dst, total_len, stats)


def _decode_ipv6(pkt: bytes, stats: PcapStats) -> Optional[_Decoded]:
    if len(pkt) < 40:
        stats.skip("truncated-ip")
        return None
    payload_len = struct.unpack("!H", pkt[4:6])[0]
    total_len = 40 + payload_len
    if len(pkt) < total_len:
        stats.skip("truncated-ip")
        return None
    nxt = pkt[6]
    src = str(ipaddress.IPv6Address(pkt[8:24]))
    dst = str(ipaddress.IPv6Address(pkt[24:40]))
    off = 40
    while nxt in _IPV6_EXT_HEADERS:
        if off + 2 > total_len:
            stats.skip("truncated-ip")
            return None
        nxt, ext_len = pkt[off], (pkt[off + 1] + 1) * 8
        off += ext_len
    if nxt == 44:
        stats.skip("ip-fragment")
        return None
    return _decode_transport(nxt, pkt[off:total_len], src, dst, total_len, stats)


def _decode_frame(frame: bytes, linktype: int, stats: PcapStats) -> Optional[_Decoded]:
    if linktype == LINKTYPE_ETHERNET:
        if len(frame) < 14:
            stats.skip("truncated-ethernet")
            return None
        ethertype = struct.unpack("!H", frame[12:14])[0]
        pkt = frame[14:]
    else:
        pkt = frame
        version = pkt[0] >> 4 if pkt else 0
        ethertype = {4: ETHERTYPE_IPV4, 6: ETHERTYPE_IPV6}.get(version, 0)
    if ethertype == ETHERTYPE_IPV4:
        return _decode_ipv4(pkt, stats)
    if ethertype == ETHERTYPE_IPV6:
        return _decode_ipv6(pkt, stats)
    stats.skip("non-ip")
    return None


def iter_pcap(stream: BinaryIO, direction_filter: Optional[FlowFilter] = None,
              key_mode: KeyMode = KeyMode.FIVE_TUPLE, mtu: int = DEFAULT_MTU,
              stats: Optional[PcapStats] = None) -> Iterator[PacketObservation]:
    """Yield forward-direction observations from a libpcap stream.

    ``direction_filter`` sees the five-tuple key before it is projected to
    ``key_mode``. Frames that cannot be decoded are skipped and counted in
    ``stats``; a bad global header raises :class:`ParseError`.
    """
    if stats is None:
        stats = PcapStats()
    if key_mode is KeyMode.LABEL:
        raise ValueError("label keys are only produced by the CSV reader")
    header = stream.read(24)
    if len(header) < 24:
        raise ParseError("pcap global header truncated")
    for endian in ("<", ">"):
        magic = struct.unpack(endian + "I", header[:4])[0]
        if magic in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
            break
    else:
        raise ParseError(f"bad pcap magic {header[:4].hex()}")
    ts_scale = 1000 if magic == PCAP_MAGIC_US else 1
    linktype = struct.unpack(endian + "I", header[20:24])[0] & 0x0FFFFFFF
    if linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW):
        raise ParseError(f"unsupported pcap link type {linktype}")
    rec_hdr = struct.Struct(endian + "IIII")

    base: Optional[int] = None
    last_ts = 0
    while True:
        raw = stream.read(rec_hdr.size)
        if not raw:
            return
        if len(raw) < rec_hdr.size:
            stats.skip("truncated-record")
            log.warning("pcap record header truncated at end of file")
            return
        sec, frac, incl_len, _orig_len = rec_hdr.unpack(raw)
        frame = stream.read(incl_len)
        stats.records += 1
        if len(frame) < incl_len:
            stats.skip("truncated-record")
            log.warning("pcap record %d truncated at end of file", stats.records)
            return
        ts = sec * 1_000_000_000 + frac * ts_scale
        if base is None:
            base = ts
        ts -= base
        decoded = _decode_frame(frame, linktype, stats)
        if decoded is None:
            continue
        if direction_filter is not None and not direction_filter(decoded.key):
            stats.filtered += 1
            continue
        if ts < last_ts:
            stats.clamped += 1
            ts = last_ts
        last_ts = ts
        stats.emitted += 1
        yield PacketObservation(
            flow=decoded.key.project(key_mode),
            timestamp_ns=ts,
            payload_len=decoded.payload_len,
            is_pure_ack=decoded.is_pure_ack,
            is_full_mtu=decoded.ip_total_len == mtu,
        )


def parse_pcap(stream: BinaryIO, direction_filter: Optional[FlowFilter] = None,
               key_mode: KeyMode = KeyMode.FIVE_TUPLE, mtu: int = DEFAULT_MTU,
               stats: Optional[PcapStats] = None) -> List[PacketObservation]:
    stats = stats if stats is not None else PcapStats()
    out = list(iter_pcap(stream, direction_filter, key_mode, mtu, stats))
    if stats.skipped:
        log.warning("skipped %d undecodable frames: %s", stats.skipped, dict(stats.skip_reasons))
    return out


def _parse_bool(text: str, line: int, column: str) -> bool:
    if text == "0":
        return False
    if text == "1":
        return True
    raise ParseError(f"{column} must be 0 or 1, got {text!r}", line)


def _parse_uint(text: str, line: int, column: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"{column} is not an integer: {text!r}", line) from None
    if value < 0:
        raise ParseError(f"{column} is negative: {value}", line)
    return value


def iter_csv(stream: TextIO) -> Iterator[PacketObservation]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise ParseError(f"header must be {','.join(CSV_HEADER)}", 1)
    last_ts: Dict[str, int] = {}
    keys: Dict[str, FlowKey] = {}
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise ParseError(f"expected {len(CSV_HEADER)} columns, got {len(row)}", line)
        flow_id, ts_s, len_s, ack_s, mtu_s = row
        ts = _parse_uint(ts_s, line, "timestamp_ns")
        prev = last_ts.get(flow_id)
        if prev is not None and ts < prev:
            raise ParseError(f"timestamp regression for flow {flow_id!r}: {ts} < {prev}", line)
        last_ts[flow_id] = ts
        key = keys.get(flow_id)
        if key is None:
            key = keys[flow_id] = FlowKey.label(flow_id)
        yield PacketObservation(
            flow=key,
            timestamp_ns=ts,
            payload_len=_parse_uint(len_s, line, "payload_len"),
            is_pure_ack=_parse_bool(ack_s, line, "is_pure_ack"),
            is_full_mtu=_parse_bool(mtu_s, line, "is_full_mtu"),
        )


def parse_csv(stream: TextIO | str) -> List[PacketObservation]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    return list(iter_csv(stream))


def write_csv(observations: Iterable[PacketObservation], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for o in observations:
        writer.writerow((str(o.flow), o.timestamp_ns, o.payload_len,
                         int(o.is_pure_ack), int(o.is_full_mtu)))


def serialize_csv(observations: Iterable[PacketObservation]) -> str:
    buf = io.StringIO()
    write_csv(observations, buf)
    return buf.getvalue()


def demux(observations: Iterable[PacketObservation]) -> Dict[FlowKey, List[PacketObservation]]:
    """Stable partition of a time-ordered stream into per-flow sequences."""
    flows: Dict[FlowKey, List[PacketObservation]] = {}
    for o in observations:
        flows.setdefault(o.flow, []).append(o)
    return flows
