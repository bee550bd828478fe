"""Off-net deployment detection: per-source feature vectors, named
classification rules, and confusion-matrix evaluation against ground truth.

TLS-certificate and PTR collection happen elsewhere; ground-truth labels
arrive as a plain `ip<TAB>label` file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .fingerprint import InsufficientData, RtoEstimate, estimate_rto
from .ingest import CaptureRecord, Session, sessionize
from .scid import (
    CLOUDFLARE_SCID_LENGTH,
    FACEBOOK_SCID_OCTETS,
    decode_facebook_scid,
    detect_cloudflare_signature,
    low_host_id,
)
from .wire import Direction, TYPE_LABELS

NOT_OPERATOR = "NotOperator"
DEFAULT_SOURCE_MIN_SESSIONS = 5

RULE_NAMES = (
    "Inter arrival time",
    "SCID & Inter arrival time",
    "SCID & coalescence & Inter arrival time",
    "QUIC packet length",
    "SCID & coalescence & QUIC packet length",
    "Coalescence",
    "SCID",
    "SCID & coalescence",
    "SCID off-net (low host ID)",
)


class ClassifierError(ValueError):
    pass


class UnknownRule(ClassifierError):
    pass


class MissingLabel(ClassifierError):
    pass


@dataclass(frozen=True)
class SourceFeatures:
    """Observable traits of one backscatter source address.

    Absent features are None, never defaulted: a source with one packet has
    no retransmission signature, and low_host_id exists only when at least
    one SCID decoded under the Facebook v1 layout.
    """

    source: str
    scid_structured: bool
    scid_scheme_match: Optional[str]
    coalescence: bool
    rto_signature: Optional[RtoEstimate]
    length_signature: frozenset[tuple[tuple[str, ...], int]]
    low_host_id: Optional[bool]


@dataclass
class SourceInputs:
    """Raw per-source material the feature extractor consumes."""

    source: str
    sessions: list[Session] = field(default_factory=list)
    scids: list[bytes] = field(default_factory=list)
    shapes: set[tuple[tuple[str, ...], int]] = field(default_factory=set)
    any_coalesced: bool = False


def collect_source_inputs(
    records: Sequence[CaptureRecord], idle_gap: float = 60.0
) -> dict[str, SourceInputs]:
    """Group response traffic by source address and sessionize it."""
    inputs: dict[str, SourceInputs] = {}
    responses = [r for r in records if r.direction == Direction.RESPONSE]
    for record in responses:
        src = record.src_ip
        entry = inputs.setdefault(src, SourceInputs(source=src))
        types = tuple(TYPE_LABELS[p.packet_type] for p in record.packets)
        entry.shapes.add((types, record.datagram_length))
        if len(record.packets) > 1:
            entry.any_coalesced = True
        for packet in record.packets:
            entry.scids.append(packet.scid.data)
    for session in sessionize(responses, idle_gap=idle_gap):
        src = session.key.src_ip
        if src in inputs:
            inputs[src].sessions.append(session)
    return inputs


def _facebook_scheme(scids: Sequence[bytes]) -> bool:
    if not scids:
        return False
    if any(len(s) != FACEBOOK_SCID_OCTETS for s in scids):
        return False
    for s in scids:
        try:
            decode_facebook_scid(s)
        except Exception:
            return False
    return True


def extract_features(
    inputs: SourceInputs, min_rto_sessions: int = DEFAULT_SOURCE_MIN_SESSIONS
) -> SourceFeatures:
    """Deterministically assemble the feature vector of one source."""
    unique_scids = sorted(set(inputs.scids))
    scheme_match: Optional[str] = None
    if unique_scids:
        if all(len(s) == CLOUDFLARE_SCID_LENGTH for s in unique_scids) and detect_cloudflare_signature(
            unique_scids
        ):
            scheme_match = "Cloudflare"
        elif _facebook_scheme(unique_scids):
            scheme_match = "Facebook"
    low: Optional[bool] = None
    v1_fields = []
    for s in unique_scids:
        if len(s) != FACEBOOK_SCID_OCTETS:
            continue
        try:
            fields = decode_facebook_scid(s)
        except Exception:
            continue
        if fields.scid_version == 1:
            v1_fields.append(fields)
    if v1_fields:
        low = all(low_host_id(f) for f in v1_fields)
    rto: Optional[RtoEstimate] = None
    try:
        rto = estimate_rto(inputs.sessions, min_sessions=min_rto_sessions)
    except InsufficientData:
        rto = None
    return SourceFeatures(
        source=inputs.source,
        scid_structured=scheme_match is not None,
        scid_scheme_match=scheme_match,
        coalescence=inputs.any_coalesced,
        rto_signature=rto,
        length_signature=frozenset(inputs.shapes),
        low_host_id=low,
    )


def low_host_id_predicate(fields) -> bool:
    """Detection predicate from the v1 host-ID field: the 9 most significant
    bits must be zero (host_id < 128)."""
    return low_host_id(fields)


@dataclass(frozen=True)
class RuleParams:
    """Thresholds shared by all rules; loadable from a JSON rule-set file."""

    target_operator: str = "Facebook"
    rto_reference: float = 0.4
    rto_tolerance: float = 0.25
    backoff_reference: float = 2.0
    backoff_tolerance: float = 0.5
    count_range: tuple[int, int] = (7, 9)
    expected_coalescence: bool = False
    reference_shapes: Optional[frozenset[tuple[tuple[str, ...], int]]] = None

    @classmethod
    def load(cls, path: str | Path) -> "RuleParams":
        raw = json.loads(Path(path).read_text())
        shapes = raw.get("reference_shapes")
        return cls(
            target_operator=raw.get("target_operator", "Facebook"),
            rto_reference=raw.get("rto_reference", 0.4),
            rto_tolerance=raw.get("rto_tolerance", 0.25),
            backoff_reference=raw.get("backoff_reference", 2.0),
            backoff_tolerance=raw.get("backoff_tolerance", 0.5),
            count_range=tuple(raw.get("count_range", (7, 9))),
            expected_coalescence=raw.get("expected_coalescence", False),
            reference_shapes=(
                frozenset((tuple(types), length) for types, length in shapes)
                if shapes
                else None
            ),
        )


def _rto_matches(features: SourceFeatures, params: RuleParams) -> bool:
    rto = features.rto_signature
    if rto is None:
        return False
    if abs(rto.initial_rto - params.rto_reference) / params.rto_reference > params.rto_tolerance:
        return False
    if abs(rto.backoff_base - params.backoff_reference) > params.backoff_tolerance:
        return False
    lo, hi = rto.max_retransmissions
    return lo <= params.count_range[1] and hi >= params.count_range[0]


def _scid_matches(features: SourceFeatures, params: RuleParams) -> bool:
    return features.scid_scheme_match == params.target_operator


def _coalescence_matches(features: SourceFeatures, params: RuleParams) -> bool:
    return features.coalescence == params.expected_coalescence


def _length_matches(features: SourceFeatures, params: RuleParams) -> bool:
    if params.reference_shapes is None or not features.length_signature:
        return False
    return features.length_signature <= params.reference_shapes


def _low_host_matches(features: SourceFeatures, params: RuleParams) -> bool:
    return _scid_matches(features, params) and features.low_host_id is True


_RULES = {
    "Inter arrival time": (_rto_matches,),
    "SCID & Inter arrival time": (_scid_matches, _rto_matches),
    "SCID & coalescence & Inter arrival time": (_scid_matches, _coalescence_matches, _rto_matches),
    "QUIC packet length": (_length_matches,),
    "SCID & coalescence & QUIC packet length": (_scid_matches, _coalescence_matches, _length_matches),
    "Coalescence": (_coalescence_matches,),
    "SCID": (_scid_matches,),
    "SCID & coalescence": (_scid_matches, _coalescence_matches),
    "SCID off-net (low host ID)": (_low_host_matches,),
}


def classify(
    features: SourceFeatures, rule: str, params: Optional[RuleParams] = None
) -> str:
    """Apply one named rule; returns the target operator or NotOperator."""
    predicates = _RULES.get(rule)
    if predicates is None:
        raise UnknownRule(f"no rule named {rule!r}; known: {', '.join(RULE_NAMES)}")
    if params is None:
        params = RuleParams()
    if all(p(features, params) for p in predicates):
        return params.target_operator
    return NOT_OPERATOR


@dataclass
class GroundTruth:
    """Source address -> operator label (or NotOperator)."""

    labels: dict[str, str]

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        labels = {}
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            ip, _, label = line.partition("\t")
            labels[ip] = label.strip()
        return cls(labels)

    def __contains__(self, ip: str) -> bool:
        return ip in self.labels

    def __getitem__(self, ip: str) -> str:
        return self.labels[ip]


@dataclass(frozen=True)
class EvalMetrics:
    """Confusion-matrix metrics; a None rate marks a zero denominator."""

    tp: int
    fp: int
    tn: int
    fn: int
    tpr: Optional[float]
    fpr: Optional[float]
    tnr: Optional[float]
    fnr: Optional[float]
    precision: Optional[float]
    recall: Optional[float]

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "EvalMetrics":
        def ratio(num: int, den: int) -> Optional[float]:
            return num / den if den else None

        return cls(
            tp=tp,
            fp=fp,
            tn=tn,
            fn=fn,
            tpr=ratio(tp, tp + fn),
            fpr=ratio(fp, fp + tn),
            tnr=ratio(tn, fp + tn),
            fnr=ratio(fn, tp + fn),
            precision=ratio(tp, tp + fp),
            recall=ratio(tp, tp + fn),
        )


def evaluate(
    predictions: dict[str, str], truth: GroundTruth, positive_label: str
) -> EvalMetrics:
    """Score predictions against ground truth for one operator.

    Every predicted source must carry a truth label; sources labelled with a
    different operator than `positive_label` count as negatives.
    """
    tp = fp = tn = fn = 0
    for ip in sorted(predictions):
        if ip not in truth:
            raise MissingLabel(f"no ground-truth label for {ip}")
        predicted_positive = predictions[ip] == positive_label
        actually_positive = truth[ip] == positive_label
        if predicted_positive and actually_positive:
            tp += 1
        elif predicted_positive:
            fp += 1
        elif actually_positive:
            fn += 1
        else:
            tn += 1
    return EvalMetrics.from_counts(tp, fp, tn, fn)
