"""Per-operator stack fingerprinting: version usage, coalescence, packet
lengths, and retransmission timing, matched against known configurations.

All statistics are associative aggregations, so shards can be merged exactly.
RTO estimation is median-based: robust to capture jitter and free of any
histogram binning choice.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .ingest import CaptureRecord, Session
from .scid import ScidScheme, SchemeKind
from .wire import Direction, PacketType, TYPE_LABELS, VersionRegistry

DEFAULT_MIN_SESSIONS = 30
RTO_MATCH_TOLERANCE = 0.25
# Offsets closer than this merge into one resend round (a server that sends
# Initial and Handshake as two datagrams emits them back to back).
ROUND_MERGE_TOLERANCE = 1e-3
OTHERS_LABEL = "others"


class FingerprintError(ValueError):
    pass


class InsufficientData(FingerprintError):
    pass


class Role:
    CLIENT = "client"
    SERVER = "server"


@dataclass
class VersionTally:
    """Session counts and shares per (role, version label). Each session
    counts exactly once regardless of how many datagrams it spans."""

    counts: dict[tuple[str, str], int] = field(default_factory=dict)

    def add(self, role: str, label: str, n: int = 1) -> None:
        key = (role, label)
        self.counts[key] = self.counts.get(key, 0) + n

    def role_total(self, role: str) -> int:
        return sum(n for (r, _), n in self.counts.items() if r == role)

    def share(self, role: str, label: str) -> float:
        total = self.role_total(role)
        if total == 0:
            return 0.0
        return self.counts.get((role, label), 0) / total

    def rows(self) -> list[tuple[str, str, int, float]]:
        return [
            (role, label, n, self.share(role, label))
            for (role, label), n in sorted(self.counts.items())
        ]

    def merge(self, other: "VersionTally") -> "VersionTally":
        """Exact shard combination; tallies are associative-commutative."""
        merged = VersionTally(dict(self.counts))
        for (role, label), n in other.counts.items():
            merged.add(role, label, n)
        return merged


def version_tally(sessions: Iterable[Session], registry: VersionRegistry) -> VersionTally:
    """Count each session once under its negotiated version label; versions
    missing from the registry land in the `others` bucket. Response sessions
    reflect the server side, request sessions the client side."""
    tally = VersionTally()
    for session in sessions:
        role = Role.SERVER if session.direction == Direction.RESPONSE else Role.CLIENT
        label = registry.label(session.version)
        tally.add(role, label if label is not None else OTHERS_LABEL)
    return tally


def _datagram_category(packets: Sequence) -> str:
    return " & ".join(TYPE_LABELS[p.packet_type] for p in packets)


@dataclass
class PacketTypeStats:
    """Datagram counts per (operator, packet-type-or-coalesced category)."""

    counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def add(self, operator: str, category: str, n: int = 1) -> None:
        bucket = self.counts.setdefault(operator, {})
        bucket[category] = bucket.get(category, 0) + n

    def percentages(self, operator: str) -> dict[str, float]:
        bucket = self.counts.get(operator, {})
        total = sum(bucket.values())
        if total == 0:
            return {}
        return {cat: 100.0 * n / total for cat, n in sorted(bucket.items())}

    def coalesced_share(self, operator: str) -> float:
        return sum(pct for cat, pct in self.percentages(operator).items() if "&" in cat)

    def merge(self, other: "PacketTypeStats") -> "PacketTypeStats":
        merged = PacketTypeStats({op: dict(bucket) for op, bucket in self.counts.items()})
        for op, bucket in other.counts.items():
            for category, n in bucket.items():
                merged.add(op, category, n)
        return merged


def packet_type_stats(records: Iterable[CaptureRecord]) -> PacketTypeStats:
    """Tabulate datagrams by their packet-type combination; a coalesced
    combination such as `Initial & Handshake` is its own category."""
    out = PacketTypeStats()
    for record in records:
        out.add(record.operator or "Unknown", _datagram_category(record.packets))
    return out


@dataclass
class LengthHistogram:
    """Counts keyed by (packet-type tuple, datagram length) per operator."""

    counts: dict[str, dict[tuple[tuple[str, ...], int], int]] = field(default_factory=dict)

    def add(self, operator: str, types: tuple[str, ...], length: int, n: int = 1) -> None:
        bucket = self.counts.setdefault(operator, {})
        key = (types, length)
        bucket[key] = bucket.get(key, 0) + n

    def top(self, operator: str, k: int = 7) -> list[tuple[tuple[str, ...], int, int]]:
        bucket = self.counts.get(operator, {})
        ranked = sorted(bucket.items(), key=lambda item: (-item[1], item[0]))
        return [(types, length, n) for (types, length), n in ranked[:k]]

    def shapes(self, operator: str) -> set[tuple[tuple[str, ...], int]]:
        return set(self.counts.get(operator, {}))

    def merge(self, other: "LengthHistogram") -> "LengthHistogram":
        merged = LengthHistogram({op: dict(bucket) for op, bucket in self.counts.items()})
        for op, bucket in other.counts.items():
            for (types, length), n in bucket.items():
                merged.add(op, types, length, n)
        return merged


def length_histogram(records: Iterable[CaptureRecord]) -> LengthHistogram:
    out = LengthHistogram()
    for record in records:
        types = tuple(TYPE_LABELS[p.packet_type] for p in record.packets)
        out.add(record.operator or "Unknown", types, record.datagram_length)
    return out


@dataclass(frozen=True)
class RtoEstimate:
    initial_rto: float
    backoff_base: float
    max_retransmissions: tuple[int, int]
    sample_count: int

    def __post_init__(self) -> None:
        if self.initial_rto <= 0:
            raise FingerprintError("initial RTO must be positive")
        if self.backoff_base < 1:
            raise FingerprintError("backoff base below 1 is not a backoff")
        if self.max_retransmissions[0] > self.max_retransmissions[1]:
            raise FingerprintError("retransmission range inverted")


def resend_rounds(session: Session, tolerance: float = ROUND_MERGE_TOLERANCE) -> list[float]:
    """Distinct send instants of Initial/Handshake packets in a session.

    Entries closer than `tolerance` collapse into one round, so a server that
    ships Initial and Handshake as two datagrams still counts one round per
    timeout, matching how retransmission counts are reported.
    """
    offsets = sorted(
        e.offset
        for e in session.timeline
        if e.packet_type in (PacketType.INITIAL, PacketType.HANDSHAKE)
    )
    rounds: list[float] = []
    for off in offsets:
        if not rounds or off - rounds[-1] > tolerance:
            rounds.append(off)
    return rounds


def resend_count(session: Session) -> int:
    """Number of resend rounds after the first response."""
    return max(0, len(resend_rounds(session)) - 1)


def resend_count_distribution(sessions: Iterable[Session]) -> dict[int, int]:
    """Histogram of per-session resend counts; total mass equals the number
    of sessions."""
    histogram: dict[int, int] = {}
    for session in sessions:
        n = resend_count(session)
        histogram[n] = histogram.get(n, 0) + 1
    return dict(sorted(histogram.items()))


def _median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2


def _percentile(values: Sequence[int], q: float) -> int:
    ordered = sorted(values)
    rank = max(0, min(len(ordered) - 1, round(q * (len(ordered) - 1))))
    return ordered[rank]


def estimate_rto(
    sessions: Iterable[Session], min_sessions: int = DEFAULT_MIN_SESSIONS
) -> RtoEstimate:
    """Estimate the retransmission configuration of one operator.

    initial RTO: median offset of the first resend round. Backoff: median
    ratio of consecutive gaps between resend rounds (needs sessions with at
    least three resends). Retransmission count reported as the 5th-95th
    percentile range of per-session resend counts.
    """
    qualifying: list[list[float]] = []
    for session in sessions:
        rounds = resend_rounds(session)
        if len(rounds) >= 3:  # first response + >= 2 resends
            qualifying.append(rounds)
    if len(qualifying) < min_sessions:
        raise InsufficientData(
            f"{len(qualifying)} sessions with >=2 resends, need {min_sessions}"
        )
    first_offsets = [rounds[1] for rounds in qualifying]
    ratios: list[float] = []
    for rounds in qualifying:
        resends = rounds[1:]
        gaps = [b - a for a, b in zip(resends, resends[1:])]
        ratios.extend(b / a for a, b in zip(gaps, gaps[1:]) if a > 0)
    if not ratios:
        raise InsufficientData("no session has enough resends to estimate backoff")
    counts = [len(rounds) - 1 for rounds in qualifying]
    return RtoEstimate(
        initial_rto=_median(first_offsets),
        backoff_base=_median(ratios),
        max_retransmissions=(_percentile(counts, 0.05), _percentile(counts, 0.95)),
        sample_count=len(qualifying),
    )


@dataclass(frozen=True)
class FingerprintProfile:
    """One row of the known-configuration table."""

    operator: str
    rto: RtoEstimate
    coalescence: bool
    server_chosen_ids: bool
    structured_scids: bool


def load_known_profiles(path: Optional[str | Path] = None) -> list[FingerprintProfile]:
    """Load the known-configuration table (ships with measured defaults for
    the three profiled hypergiants; the file is editable)."""
    if path is None:
        ref = resources.files("quicscope").joinpath("data/profiles.json")
        with resources.as_file(ref) as p:
            raw = json.loads(Path(p).read_text())
    else:
        raw = json.loads(Path(path).read_text())
    profiles = []
    for operator, cfg in raw["profiles"].items():
        lo, hi = cfg["retransmission_range"]
        profiles.append(
            FingerprintProfile(
                operator=operator,
                rto=RtoEstimate(cfg["initial_rto"], cfg["backoff_base"], (lo, hi), 0),
                coalescence=cfg["coalescence"],
                server_chosen_ids=cfg["server_chosen_ids"],
                structured_scids=cfg["structured_scids"],
            )
        )
    return profiles


def match_profile(
    observed: FingerprintProfile,
    known: Sequence[FingerprintProfile],
    rto_tolerance: float = RTO_MATCH_TOLERANCE,
) -> Optional[str]:
    """Match an observed fingerprint against known configurations.

    Coalescence and structured-SCID flags must agree exactly; the initial RTO
    must fall within `rto_tolerance` relative error. Ties break toward the
    smallest relative RTO distance. None means no profile qualifies.
    """
    best: Optional[tuple[float, str]] = None
    for candidate in known:
        if candidate.coalescence != observed.coalescence:
            continue
        if candidate.structured_scids != observed.structured_scids:
            continue
        distance = abs(observed.rto.initial_rto - candidate.rto.initial_rto) / candidate.rto.initial_rto
        if distance > rto_tolerance:
            continue
        if best is None or distance < best[0]:
            best = (distance, candidate.operator)
    return best[1] if best else None


def observed_profile(
    operator: str,
    sessions: Sequence[Session],
    records: Iterable[CaptureRecord],
    scheme: Optional[ScidScheme] = None,
    min_sessions: int = DEFAULT_MIN_SESSIONS,
) -> FingerprintProfile:
    """Assemble the observed fingerprint of one operator from its sessions,
    records, and (optionally) an SCID scheme classification."""
    rto = estimate_rto(sessions, min_sessions=min_sessions)
    coalescence = any(len(r.packets) > 1 for r in records)
    structured = scheme is not None and scheme.kind == SchemeKind.STRUCTURED
    server_chosen = scheme is None or scheme.kind != SchemeKind.ECHO_OF_CLIENT_DCID
    return FingerprintProfile(
        operator=operator,
        rto=rto,
        coalescence=coalescence,
        server_chosen_ids=server_chosen,
        structured_scids=structured,
    )
