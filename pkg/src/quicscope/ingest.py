"""Telescope capture ingestion: filtering, sanitization, AS mapping, sessions.

The pipeline is ingest -> sanitize -> annotate_operators -> sessionize. Each
stage is a stateless per-record transform except sessionization, which
accumulates per-key state. Input captures are expected in timestamp order
(standard for single-vantage telescope files); ordering is not re-checked.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional

from .pcap import PcapReader
from .wire import (
    Datagram,
    Direction,
    LongHeader,
    PacketType,
    PlausibilityConfig,
    classify_direction,
    is_plausible_quic,
    split_coalesced,
)

DEFAULT_IDLE_GAP = 60.0


@dataclass
class CaptureRecord:
    """One QUIC datagram with its parsed long-header packets.

    `operator`/`asn` identify the server side (source of a response,
    destination of a request) and are filled in by annotate_operators.
    """

    datagram: Datagram
    direction: Direction
    packets: list[LongHeader]
    operator: Optional[str] = None
    asn: Optional[int] = None

    @property
    def timestamp(self) -> float:
        return self.datagram.timestamp

    @property
    def src_ip(self) -> str:
        return self.datagram.src_ip

    @property
    def dst_ip(self) -> str:
        return self.datagram.dst_ip

    @property
    def datagram_length(self) -> int:
        return len(self.datagram.payload)


@dataclass
class IngestCounters:
    total: int = 0
    non_quic_port: int = 0
    implausible: int = 0
    short_header_only: int = 0
    emitted: int = 0
    requests_dropped: int = 0
    responses_seen: int = 0
    requests_seen: int = 0

    def removed_fraction(self) -> float:
        seen = self.emitted
        if seen == 0:
            return 0.0
        return self.requests_dropped / seen

    def as_dict(self) -> dict[str, float]:
        return {
            "total_datagrams": self.total,
            "non_quic_port": self.non_quic_port,
            "implausible_payload": self.implausible,
            "short_header_only": self.short_header_only,
            "records_emitted": self.emitted,
            "responses": self.responses_seen,
            "requests": self.requests_seen,
            "requests_dropped_by_sanitization": self.requests_dropped,
            "sanitization_removed_fraction": round(self.removed_fraction(), 6),
        }


def ingest(
    capture_source: str | Path | Iterable[Datagram],
    config: Optional[PlausibilityConfig] = None,
    counters: Optional[IngestCounters] = None,
) -> Iterator[CaptureRecord]:
    """Yield plausible QUIC records from a pcap path or datagram iterable.

    Non-QUIC ports and implausible payloads are counted, never emitted.
    Raises UnreadableCapture for files that are not classic pcap.
    """
    if counters is None:
        counters = IngestCounters()
    if isinstance(capture_source, (str, Path)):
        datagrams: Iterable[Datagram] = PcapReader(capture_source).datagrams()
    else:
        datagrams = capture_source
    if config is None:
        config = PlausibilityConfig()
    for d in datagrams:
        counters.total += 1
        direction = classify_direction(d)
        if direction == Direction.NON_QUIC:
            counters.non_quic_port += 1
            continue
        packets = split_coalesced(d.payload)
        if not packets or not is_plausible_quic(d.payload, config):
            # short-header traffic is counted separately; it is valid QUIC
            # but carries nothing the long-header analyses consume
            if not packets and d.payload and d.payload[0] and not d.payload[0] & 0x80:
                counters.short_header_only += 1
            else:
                counters.implausible += 1
            continue
        counters.emitted += 1
        if direction == Direction.RESPONSE:
            counters.responses_seen += 1
        else:
            counters.requests_seen += 1
        yield CaptureRecord(d, direction, packets)


class ScannerList:
    """Acknowledged scan-project source prefixes and exact addresses."""

    def __init__(self, networks: Iterable[ipaddress.IPv4Network] = ()):
        self._networks = sorted(set(networks), key=lambda n: (int(n.network_address), n.prefixlen))

    @classmethod
    def load(cls, path: str | Path) -> "ScannerList":
        networks = []
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            networks.append(ipaddress.ip_network(line if "/" in line else line + "/32"))
        return cls(networks)

    def __contains__(self, ip: str) -> bool:
        addr = ipaddress.ip_address(ip)
        return any(addr in net for net in self._networks)

    def __len__(self) -> int:
        return len(self._networks)


def sanitize(
    records: Iterable[CaptureRecord],
    scanners: ScannerList,
    counters: Optional[IngestCounters] = None,
) -> Iterator[CaptureRecord]:
    """Drop requests originating from acknowledged scanners.

    Responses are never dropped: the sanitization target is client-side scan
    traffic, and backscatter sources are the measurement signal. Idempotent.
    """
    for record in records:
        if record.direction == Direction.REQUEST and record.datagram.src_ip in scanners:
            if counters is not None:
                counters.requests_dropped += 1
            continue
        yield record


class PrefixTable:
    """Longest-prefix-match table mapping IPv4 addresses to (ASN, operator)."""

    def __init__(self, entries: Iterable[tuple[ipaddress.IPv4Network, int, str]] = ()):
        self._by_length: dict[int, dict[int, tuple[int, str]]] = {}
        for network, asn, label in entries:
            bucket = self._by_length.setdefault(network.prefixlen, {})
            bucket[int(network.network_address)] = (asn, label)

    @classmethod
    def load(cls, path: str | Path) -> "PrefixTable":
        entries = []
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            prefix, asn, label = line.split("\t")
            entries.append((ipaddress.ip_network(prefix), int(asn), label))
        return cls(entries)

    def lookup(self, ip: str) -> Optional[tuple[int, str]]:
        addr = int(ipaddress.ip_address(ip))
        for length in sorted(self._by_length, reverse=True):
            masked = addr & (0xFFFFFFFF << (32 - length)) & 0xFFFFFFFF
            hit = self._by_length[length].get(masked)
            if hit is not None:
                return hit
        return None


def map_to_as(ip: str, table: PrefixTable) -> Optional[tuple[int, str]]:
    """Longest-prefix match of `ip`; None when no prefix covers it."""
    return table.lookup(ip)


def annotate_operators(
    records: Iterable[CaptureRecord], table: PrefixTable
) -> Iterator[CaptureRecord]:
    """Attach (asn, operator) of the server-side address to each record."""
    for record in records:
        server_ip = record.src_ip if record.direction == Direction.RESPONSE else record.dst_ip
        hit = table.lookup(server_ip)
        if hit is not None:
            record.asn, record.operator = hit
        yield record


class SessionKey(NamedTuple):
    """Sessions group packets with the same SCID, DCID, and address pair."""

    src_ip: str
    dst_ip: str
    scid: bytes
    dcid: bytes


class TimelineEntry(NamedTuple):
    offset: float
    packet_type: PacketType
    datagram_length: int
    coalesced: bool


@dataclass
class Session:
    """Ordered per-key packet timeline, offsets relative to the first packet."""

    key: SessionKey
    timeline: list[TimelineEntry] = field(default_factory=list)
    direction: Direction = Direction.RESPONSE
    version: int = 0
    operator: Optional[str] = None
    asn: Optional[int] = None
    start_ts: float = 0.0


def sessionize(records: Iterable, idle_gap: float = DEFAULT_IDLE_GAP) -> list[Session]:
    """Group timestamp-ordered records into sessions.

    Every long-header packet lands in exactly one session; a coalesced
    datagram contributes one timeline entry per inner packet at the same
    offset. A gap of `idle_gap` seconds or more closes the session and a
    later packet under the same key opens a new one. Accepts anything
    record-shaped (live CaptureRecords or rows loaded from a store).
    """
    finished: list[Session] = []
    open_sessions: dict[SessionKey, tuple[Session, float]] = {}
    for record in records:
        ts = record.timestamp
        length = record.datagram_length
        coalesced = len(record.packets) > 1
        for packet in record.packets:
            key = SessionKey(
                record.src_ip,
                record.dst_ip,
                packet.scid.data,
                packet.dcid.data,
            )
            entry = open_sessions.get(key)
            if entry is not None and ts - entry[1] < idle_gap:
                session = entry[0]
            else:
                if entry is not None:
                    finished.append(entry[0])
                session = Session(
                    key=key,
                    direction=record.direction,
                    version=packet.version,
                    operator=record.operator,
                    asn=record.asn,
                    start_ts=ts,
                )
            session.timeline.append(
                TimelineEntry(ts - session.start_ts, packet.packet_type, length, coalesced)
            )
            open_sessions[key] = (session, ts)
    finished.extend(session for session, _ in open_sessions.values())
    finished.sort(key=lambda s: (s.start_ts, s.key))
    return finished
