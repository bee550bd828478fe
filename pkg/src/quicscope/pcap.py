"""Classic pcap reading and writing for IPv4/UDP telescope captures.

Reading supports both byte orders, microsecond and nanosecond magics, and
link types Ethernet (1) and raw IP (101). Writing always produces
little-endian microsecond files with raw-IP framing, which keeps simulator
output minimal and byte-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

from .wire import Datagram

MAGIC_USEC_LE = 0xA1B2C3D4
MAGIC_NSEC_LE = 0xA1B23C4D

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW_IP = 101

_GLOBAL_HEADER = struct.Struct("<IHHiIII")
_RECORD_HEADER = struct.Struct("<IIII")


class UnreadableCapture(IOError):
    """The capture file cannot be opened or is not a classic pcap file."""


@dataclass
class CaptureCounters:
    """Per-read accounting for everything that was skipped."""

    records: int = 0
    malformed: int = 0
    non_ipv4: int = 0
    non_udp: int = 0
    fragmented: int = 0
    datagrams: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "records": self.records,
            "malformed": self.malformed,
            "non_ipv4": self.non_ipv4,
            "non_udp": self.non_udp,
            "fragmented": self.fragmented,
            "datagrams": self.datagrams,
        }


def _ip_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f">{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _ip_to_bytes(ip: str) -> bytes:
    return bytes(int(part) for part in ip.split("."))


def _bytes_to_ip(raw: bytes) -> str:
    return ".".join(str(b) for b in raw)


def build_ipv4_udp(d: Datagram) -> bytes:
    """Serialize a Datagram as an IPv4+UDP packet (deterministic fields)."""
    src = _ip_to_bytes(d.src_ip)
    dst = _ip_to_bytes(d.dst_ip)
    udp_len = 8 + len(d.payload)
    total_len = 20 + udp_len
    header = struct.pack(">BBHHHBBH4s4s", 0x45, 0, total_len, 0, 0, 64, 17, 0, src, dst)
    header = header[:10] + struct.pack(">H", _ip_checksum(header)) + header[12:]
    pseudo = src + dst + struct.pack(">BBH", 0, 17, udp_len)
    udp = struct.pack(">HHHH", d.src_port, d.dst_port, udp_len, 0) + d.payload
    checksum = _ip_checksum(pseudo + udp)
    if checksum == 0:
        checksum = 0xFFFF
    udp = udp[:6] + struct.pack(">H", checksum) + udp[8:]
    return header + udp


def parse_ipv4_udp(packet: bytes, timestamp: float, counters: CaptureCounters) -> Datagram | None:
    """Decode an IPv4 packet into a Datagram; returns None (and counts why)
    for anything that is not a complete first-fragment UDP packet."""
    if len(packet) < 20 or packet[0] >> 4 != 4:
        counters.non_ipv4 += 1
        return None
    ihl = (packet[0] & 0x0F) * 4
    if ihl < 20 or len(packet) < ihl:
        counters.malformed += 1
        return None
    flags_frag = struct.unpack_from(">H", packet, 6)[0]
    if flags_frag & 0x1FFF:
        counters.fragmented += 1
        return None
    if packet[9] != 17:
        counters.non_udp += 1
        return None
    if len(packet) < ihl + 8:
        counters.malformed += 1
        return None
    src_ip = _bytes_to_ip(packet[12:16])
    dst_ip = _bytes_to_ip(packet[16:20])
    src_port, dst_port, udp_len = struct.unpack_from(">HHH", packet, ihl)
    if udp_len < 8:
        counters.malformed += 1
        return None
    payload = packet[ihl + 8 : ihl + udp_len]
    return Datagram(timestamp, src_ip, dst_ip, src_port, dst_port, payload)


def _strip_ethernet(frame: bytes, counters: CaptureCounters) -> bytes | None:
    if len(frame) < 14:
        counters.malformed += 1
        return None
    ethertype = struct.unpack_from(">H", frame, 12)[0]
    offset = 14
    if ethertype == 0x8100:  # single 802.1Q tag
        if len(frame) < 18:
            counters.malformed += 1
            return None
        ethertype = struct.unpack_from(">H", frame, 16)[0]
        offset = 18
    if ethertype != 0x0800:
        counters.non_ipv4 += 1
        return None
    return frame[offset:]


class PcapReader:
    """Iterate UDP/IPv4 datagrams out of a classic pcap file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.counters = CaptureCounters()
        try:
            header = self.path.open("rb").read(24)
        except OSError as exc:
            raise UnreadableCapture(f"cannot open {self.path}: {exc}") from exc
        if len(header) < 24:
            raise UnreadableCapture(f"{self.path}: too short for a pcap global header")
        magic_le = struct.unpack("<I", header[:4])[0]
        magic_be = struct.unpack(">I", header[:4])[0]
        if magic_le in (MAGIC_USEC_LE, MAGIC_NSEC_LE):
            self._endian = "<"
            magic = magic_le
        elif magic_be in (MAGIC_USEC_LE, MAGIC_NSEC_LE):
            self._endian = ">"
            magic = magic_be
        else:
            raise UnreadableCapture(f"{self.path}: not a classic pcap file (magic {header[:4].hex()})")
        self._ts_divisor = 1e6 if magic == MAGIC_USEC_LE else 1e9
        fields = struct.unpack(self._endian + "HHiIII", header[4:24])
        self.linktype = fields[5]
        if self.linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW_IP):
            raise UnreadableCapture(f"{self.path}: unsupported link type {self.linktype}")

    def datagrams(self) -> Iterator[Datagram]:
        record = struct.Struct(self._endian + "IIII")
        with self.path.open("rb") as fh:
            fh.seek(24)
            while True:
                head = fh.read(16)
                if not head:
                    break
                if len(head) < 16:
                    self.counters.malformed += 1
                    break
                ts_sec, ts_frac, incl_len, _orig = record.unpack(head)
                data = fh.read(incl_len)
                self.counters.records += 1
                if len(data) < incl_len:
                    self.counters.malformed += 1
                    break
                timestamp = ts_sec + ts_frac / self._ts_divisor
                if self.linktype == LINKTYPE_ETHERNET:
                    packet = _strip_ethernet(data, self.counters)
                    if packet is None:
                        continue
                else:
                    packet = data
                d = parse_ipv4_udp(packet, timestamp, self.counters)
                if d is None:
                    continue
                self.counters.datagrams += 1
                yield d


class PcapWriter:
    """Write Datagrams into a little-endian microsecond raw-IP pcap."""

    def __init__(self, fh: BinaryIO, snaplen: int = 65535):
        self._fh = fh
        fh.write(_GLOBAL_HEADER.pack(MAGIC_USEC_LE, 2, 4, 0, 0, snaplen, LINKTYPE_RAW_IP))

    def write(self, d: Datagram) -> None:
        packet = build_ipv4_udp(d)
        usec_total = int(round(d.timestamp * 1e6))
        sec, usec = divmod(usec_total, 1_000_000)
        self._fh.write(_RECORD_HEADER.pack(sec, usec, len(packet), len(packet)))
        self._fh.write(packet)


def write_pcap(path: str | Path, datagrams: Iterator[Datagram] | list[Datagram]) -> int:
    """Write all datagrams to `path`; returns the record count."""
    count = 0
    with Path(path).open("wb") as fh:
        writer = PcapWriter(fh)
        for d in datagrams:
            writer.write(d)
            count += 1
    return count
