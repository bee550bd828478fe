"""Line-delimited stores and plot-ready tables.

Sessions and datagram summaries travel between pipeline stages as JSONL;
analysis outputs land as delimited text with a one-line header (or JSONL in
structured-record mode). All writers are byte-deterministic for identical
inputs, which is what makes whole-pipeline runs reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .ingest import CaptureRecord, Session, SessionKey, TimelineEntry
from .wire import ConnectionId, Direction, PacketType


def fmt_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_table(
    path: str | Path,
    header: Sequence[str],
    rows: Iterable[Sequence],
    fmt: str = "tsv",
) -> Path:
    """Write a table as TSV (default) or JSONL records; returns the path."""
    path = Path(path)
    if fmt == "jsonl":
        path = path.with_suffix(".jsonl")
        with path.open("w") as fh:
            for row in rows:
                record = {col: (None if v is None else v) for col, v in zip(header, row)}
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        return path
    with path.open("w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(fmt_value(v) for v in row) + "\n")
    return path


def read_table(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    """Read a TSV table back as (header, rows-as-string-dicts); empty cells
    come back as empty strings."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        return [], []
    header = lines[0].split("\t")
    rows = [dict(zip(header, line.split("\t"))) for line in lines[1:] if line]
    return header, rows


def write_jsonl(path: str | Path, records: Iterable[dict]) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def read_jsonl(path: str | Path) -> Iterable[dict]:
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


# --- session store -----------------------------------------------------------


def save_sessions(path: str | Path, sessions: Iterable[Session]) -> Path:
    def rows():
        for s in sessions:
            yield {
                "src": s.key.src_ip,
                "dst": s.key.dst_ip,
                "scid": s.key.scid.hex(),
                "dcid": s.key.dcid.hex(),
                "direction": s.direction.value,
                "version": s.version,
                "operator": s.operator,
                "asn": s.asn,
                "start_ts": s.start_ts,
                "timeline": [[e.offset, e.packet_type.value, e.datagram_length, e.coalesced] for e in s.timeline],
            }

    return write_jsonl(path, rows())


def load_sessions(path: str | Path) -> list[Session]:
    sessions = []
    for raw in read_jsonl(path):
        key = SessionKey(raw["src"], raw["dst"], bytes.fromhex(raw["scid"]), bytes.fromhex(raw["dcid"]))
        timeline = [
            TimelineEntry(offset, PacketType(ptype), length, coalesced)
            for offset, ptype, length, coalesced in raw["timeline"]
        ]
        sessions.append(
            Session(
                key=key,
                timeline=timeline,
                direction=Direction(raw["direction"]),
                version=raw["version"],
                operator=raw.get("operator"),
                asn=raw.get("asn"),
                start_ts=raw.get("start_ts", 0.0),
            )
        )
    return sessions


# --- datagram store ----------------------------------------------------------


@dataclass(frozen=True)
class PacketSummary:
    packet_type: PacketType
    version: int
    scid: ConnectionId
    dcid: ConnectionId


@dataclass(frozen=True)
class DatagramRow:
    """Stored per-datagram summary; satisfies the record protocol the
    fingerprint and classifier stages consume."""

    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    direction: Direction
    datagram_length: int
    packets: tuple[PacketSummary, ...]
    operator: Optional[str] = None
    asn: Optional[int] = None


def save_datagrams(path: str | Path, records: Iterable[CaptureRecord]) -> Path:
    def rows():
        for r in records:
            yield {
                "ts": r.timestamp,
                "src": r.src_ip,
                "dst": r.dst_ip,
                "sport": r.datagram.src_port,
                "dport": r.datagram.dst_port,
                "direction": r.direction.value,
                "length": r.datagram_length,
                "operator": r.operator,
                "asn": r.asn,
                "packets": [
                    [p.packet_type.value, p.version, p.scid.hex(), p.dcid.hex()] for p in r.packets
                ],
            }

    return write_jsonl(path, rows())


def load_datagrams(path: str | Path) -> list[DatagramRow]:
    rows = []
    for raw in read_jsonl(path):
        packets = tuple(
            PacketSummary(
                PacketType(ptype),
                version,
                ConnectionId(bytes.fromhex(scid)),
                ConnectionId(bytes.fromhex(dcid)),
            )
            for ptype, version, scid, dcid in raw["packets"]
        )
        rows.append(
            DatagramRow(
                timestamp=raw["ts"],
                src_ip=raw["src"],
                dst_ip=raw["dst"],
                src_port=raw["sport"],
                dst_port=raw["dport"],
                direction=Direction(raw["direction"]),
                datagram_length=raw["length"],
                packets=packets,
                operator=raw.get("operator"),
                asn=raw.get("asn"),
            )
        )
    return rows


# --- run manifest ------------------------------------------------------------


def write_manifest(
    out_dir: str | Path,
    subcommand: str,
    tool_version: str,
    seed: Optional[int],
    inputs: dict[str, Optional[str]],
    outputs: list[str],
    parameters: Optional[dict] = None,
) -> Path:
    """Every run documents itself; identical manifests imply byte-identical
    outputs, so nothing time- or host-dependent belongs in here."""
    manifest = {
        "tool": "quicscope",
        "tool_version": tool_version,
        "subcommand": subcommand,
        "seed": seed,
        "inputs": {k: (str(v) if v is not None else None) for k, v in sorted(inputs.items())},
        "outputs": sorted(outputs),
        "parameters": parameters or {},
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
