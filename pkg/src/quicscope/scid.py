"""Server connection-ID analysis: positional nybble statistics, randomness
testing, scheme classification, and codecs for known hypergiant layouts.

Bit indices follow network convention: bit b of an SCID lives in octet b // 8
at position 7 - (b % 8), i.e. bit 0 is the most significant bit of octet 0.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .wire import ConnectionId

DEFAULT_ALPHA = 0.001
DEFAULT_MIN_SAMPLES = 500
ECHO_PREFIX_OCTETS = 8
ECHO_MATCH_THRESHOLD = 0.99
CLOUDFLARE_SCID_LENGTH = 20
CLOUDFLARE_FIRST_OCTET = 0x01
LOW_HOST_ID_ZERO_BITS = 9


class ScidAnalysisError(ValueError):
    pass


class MixedLengths(ScidAnalysisError):
    """Nybble statistics need a single-length population; group by length first."""


class InsufficientSamples(ScidAnalysisError):
    pass


class CodecError(ValueError):
    pass


class FieldOverflow(CodecError):
    pass


class BadLength(CodecError):
    pass


class UnknownScidVersion(CodecError):
    def __init__(self, version: int):
        super().__init__(f"SCID version bits decode to {version}, expected 1 or 2")
        self.version = version


def _as_bytes(scids: Iterable[ConnectionId | bytes]) -> list[bytes]:
    return [bytes(s) for s in scids]


@dataclass(frozen=True)
class NybbleFrequencyMatrix:
    """Counts of nybble values by position over an SCID population."""

    counts: np.ndarray  # shape (positions, 16), int64
    total: int

    @property
    def positions(self) -> int:
        return self.counts.shape[0]

    def relative(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros_like(self.counts, dtype=float)
        return self.counts / self.total

    def rows(self) -> Iterable[tuple[int, int, int, float]]:
        """(position, value, count, relative frequency) rows for export."""
        rel = self.relative()
        for pos in range(self.positions):
            for value in range(16):
                yield pos, value, int(self.counts[pos, value]), float(rel[pos, value])

    def merge(self, other: "NybbleFrequencyMatrix") -> "NybbleFrequencyMatrix":
        """Exact combination of per-shard matrices over the same SCID length."""
        if self.total == 0:
            return other
        if other.total == 0:
            return self
        if self.positions != other.positions:
            raise MixedLengths("cannot merge matrices of different SCID lengths")
        return NybbleFrequencyMatrix(self.counts + other.counts, self.total + other.total)


def nybble_frequencies(scids: Sequence[ConnectionId | bytes]) -> NybbleFrequencyMatrix:
    """Count nybble values per position; position 0 is the high nybble of
    octet 0. All SCIDs must share one length."""
    data = _as_bytes(scids)
    if not data:
        return NybbleFrequencyMatrix(np.zeros((0, 16), dtype=np.int64), 0)
    lengths = {len(s) for s in data}
    if len(lengths) != 1:
        raise MixedLengths(f"population mixes SCID lengths {sorted(lengths)}")
    octets = lengths.pop()
    arr = np.frombuffer(b"".join(data), dtype=np.uint8).reshape(len(data), octets)
    nybbles = np.empty((len(data), octets * 2), dtype=np.uint8)
    nybbles[:, 0::2] = arr >> 4
    nybbles[:, 1::2] = arr & 0x0F
    counts = np.stack(
        [np.bincount(nybbles[:, pos], minlength=16) for pos in range(octets * 2)]
    ).astype(np.int64)
    return NybbleFrequencyMatrix(counts, len(data))


class PositionVerdict(Enum):
    UNIFORM = "uniform"
    SKEWED = "skewed"


def uniformity_test(
    matrix: NybbleFrequencyMatrix,
    alpha: float = DEFAULT_ALPHA,
    min_samples: int = DEFAULT_MIN_SAMPLES,
) -> list[PositionVerdict]:
    """Pearson chi-square of each position against the uniform 1/16 law,
    Bonferroni-corrected across positions."""
    if matrix.total < min_samples:
        raise InsufficientSamples(f"{matrix.total} SCIDs < required {min_samples}")
    threshold = alpha / matrix.positions
    expected = matrix.total / 16.0
    verdicts = []
    for pos in range(matrix.positions):
        chi2 = float(((matrix.counts[pos] - expected) ** 2 / expected).sum())
        p_value = float(stats.chi2.sf(chi2, 15))
        verdicts.append(
            PositionVerdict.SKEWED if p_value < threshold else PositionVerdict.UNIFORM
        )
    return verdicts


class SchemeKind(Enum):
    RANDOM = "random"
    STRUCTURED = "structured"
    ECHO_OF_CLIENT_DCID = "echo_of_client_dcid"


@dataclass(frozen=True)
class ScidScheme:
    kind: SchemeKind
    flagged_positions: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if self.kind == SchemeKind.STRUCTURED and not self.flagged_positions:
            raise ScidAnalysisError("structured scheme requires flagged positions")


def classify_scheme(
    scids: Sequence[ConnectionId | bytes],
    client_dcids: Optional[Sequence[ConnectionId | bytes]] = None,
    alpha: float = DEFAULT_ALPHA,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    echo_threshold: float = ECHO_MATCH_THRESHOLD,
) -> ScidScheme:
    """Classify an SCID population as random, structured, or an echo of the
    client-chosen DCID.

    Echo detection takes precedence and requires the paired client DCIDs; the
    first 8 octets must match on at least `echo_threshold` of pairs (tolerating
    capture loss). Otherwise positional uniformity decides.
    """
    if client_dcids is not None:
        pairs = list(zip(_as_bytes(scids), _as_bytes(client_dcids)))
        if pairs:
            matches = sum(
                1
                for s, d in pairs
                if len(s) >= ECHO_PREFIX_OCTETS
                and s[:ECHO_PREFIX_OCTETS] == d[:ECHO_PREFIX_OCTETS]
            )
            if matches / len(pairs) >= echo_threshold:
                return ScidScheme(SchemeKind.ECHO_OF_CLIENT_DCID)
    matrix = nybble_frequencies(scids)
    verdicts = uniformity_test(matrix, alpha=alpha, min_samples=min_samples)
    flagged = frozenset(
        pos for pos, v in enumerate(verdicts) if v == PositionVerdict.SKEWED
    )
    if flagged:
        return ScidScheme(SchemeKind.STRUCTURED, flagged)
    return ScidScheme(SchemeKind.RANDOM)


# Facebook SCID field layout: (start bit, width) per field, by SCID version.
# v2 leaves bits 2-7 random, so its host field starts on octet 1.
FACEBOOK_SCID_OCTETS = 8
_FB_LAYOUTS = {
    1: {"host_id": (2, 16), "worker_id": (18, 8), "process_id": (26, 1)},
    2: {"host_id": (8, 24), "worker_id": (32, 8), "process_id": (40, 1)},
}
_VERSION_FIELD = (0, 2)


@dataclass(frozen=True)
class FacebookScidFields:
    scid_version: int
    host_id: int
    worker_id: int
    process_id: int


def _pack_bits(acc: int, value: int, start: int, width: int, name: str) -> int:
    if value < 0 or value >= 1 << width:
        raise FieldOverflow(f"{name} {value} does not fit in {width} bits")
    shift = 64 - start - width
    return acc | (value << shift)


def _extract_bits(raw: int, start: int, width: int) -> int:
    shift = 64 - start - width
    return (raw >> shift) & ((1 << width) - 1)


def encode_facebook_scid(
    fields: FacebookScidFields, random_bits_seed: Optional[int] = None
) -> ConnectionId:
    """Pack fields into an 8-octet SCID.

    Bits outside the field layout are zero when no seed is given, otherwise
    filled from a deterministic generator in ascending bit order. The layout
    follows fields.scid_version; version values outside {1, 2} are packed
    with the v1 layout and will not decode.
    """
    layout = _FB_LAYOUTS.get(fields.scid_version, _FB_LAYOUTS[1])
    acc = _pack_bits(0, fields.scid_version, *_VERSION_FIELD, name="scid_version")
    acc = _pack_bits(acc, fields.host_id, *layout["host_id"], name="host_id")
    acc = _pack_bits(acc, fields.worker_id, *layout["worker_id"], name="worker_id")
    acc = _pack_bits(acc, fields.process_id, *layout["process_id"], name="process_id")
    if random_bits_seed is not None:
        rng = random.Random(random_bits_seed)
        used = {b for start, width in [_VERSION_FIELD, *layout.values()] for b in range(start, start + width)}
        for bit in range(64):
            if bit not in used and rng.getrandbits(1):
                acc |= 1 << (63 - bit)
    return ConnectionId(acc.to_bytes(FACEBOOK_SCID_OCTETS, "big"))


def decode_facebook_scid(scid: ConnectionId | bytes) -> FacebookScidFields:
    """Inverse of encode_facebook_scid over the field bits.

    Raises BadLength for anything but 8 octets and UnknownScidVersion when
    the version bits are not 1 or 2 (the exception carries the decoded value).
    """
    raw_bytes = bytes(scid)
    if len(raw_bytes) != FACEBOOK_SCID_OCTETS:
        raise BadLength(f"expected {FACEBOOK_SCID_OCTETS} octets, got {len(raw_bytes)}")
    raw = int.from_bytes(raw_bytes, "big")
    version = _extract_bits(raw, *_VERSION_FIELD)
    layout = _FB_LAYOUTS.get(version)
    if layout is None:
        raise UnknownScidVersion(version)
    return FacebookScidFields(
        scid_version=version,
        host_id=_extract_bits(raw, *layout["host_id"]),
        worker_id=_extract_bits(raw, *layout["worker_id"]),
        process_id=_extract_bits(raw, *layout["process_id"]),
    )


def low_host_id(fields: FacebookScidFields) -> bool:
    """True iff the 9 most significant bits of the v1 host ID are zero
    (host_id < 128). Off-net deployments draw from this low range."""
    return fields.host_id < 1 << (16 - LOW_HOST_ID_ZERO_BITS)


def detect_cloudflare_signature(scids: Sequence[ConnectionId | bytes]) -> bool:
    """True iff every SCID is 20 octets starting with 0x01."""
    data = _as_bytes(scids)
    if not data:
        raise ScidAnalysisError("signature check needs at least one SCID")
    return all(
        len(s) == CLOUDFLARE_SCID_LENGTH and s[0] == CLOUDFLARE_FIRST_OCTET for s in data
    )


def scid_length_stats(
    scids_per_operator: dict[str, Sequence[ConnectionId | bytes]],
) -> dict[str, dict[int, int]]:
    """Unique-SCID counts per (operator, SCID length)."""
    out: dict[str, dict[int, int]] = {}
    for operator, scids in scids_per_operator.items():
        lengths: dict[int, set[bytes]] = {}
        for s in _as_bytes(scids):
            lengths.setdefault(len(s), set()).add(s)
        out[operator] = {length: len(unique) for length, unique in sorted(lengths.items())}
    return out
