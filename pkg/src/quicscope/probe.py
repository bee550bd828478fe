"""Active measurement campaigns over a pluggable transport.

The default transport is an in-process loopback onto the deployment
simulator; a raw-network adapter exists for lab use but is off by default,
rate limited, and deliberately minimal (it observes the server's first
response without completing the cryptographic handshake). Campaigns cover
host-ID harvesting, discovery curves, Jaccard clustering of VIPs, and
load-balancer-type detection via connection-state probing. None of this
should be pointed at anycast targets: a follow-up probe may reach a
different site entirely.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Iterator, Optional, Protocol

import numpy as np

from .scid import decode_facebook_scid
from .sim import QUIC_PORT, DeploymentSimulator, NotAVip
from .wire import Datagram, LongHeader, PacketType, encode_long_header, split_coalesced

DEFAULT_PROBE_INTERVAL = 1.0
DEFAULT_MAX_WAIT = 600.0
DEFAULT_JACCARD_THRESHOLD = 0.5
FAILURE_ABORT_RATE = 0.5
FAILURE_ABORT_MIN_ATTEMPTS = 20


class ProbeError(RuntimeError):
    pass


class TransportUnavailable(ProbeError):
    pass


class EmptyHarvest(ProbeError):
    pass


class ExcessiveFailureRate(ProbeError):
    pass


@dataclass(frozen=True)
class HandshakeReply:
    server_scid: bytes
    vip: str
    src_port: int
    client_scid: bytes


class Transport(Protocol):
    """Minimal surface the campaign logic needs from any transport."""

    def now(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...

    def handshake(
        self,
        vip: str,
        src_port: int,
        dcid: Optional[bytes] = None,
        scid: Optional[bytes] = None,
    ) -> Optional[HandshakeReply]: ...


class SimulatorTransport:
    """Loopback transport driving a DeploymentSimulator on its virtual clock.

    Handshakes complete synchronously: the simulator emits the first response
    round inside deliver(), and a successful exchange is acknowledged so the
    server cancels its retransmissions.
    """

    def __init__(self, sim: DeploymentSimulator, client_ip: str = "192.0.2.99", seed: int = 0):
        self.sim = sim
        self.client_ip = client_ip
        self.rng = random.Random(seed)
        self.inbox = sim.register_inbox(client_ip)

    def now(self) -> float:
        return self.sim.clock.now

    def sleep(self, seconds: float) -> None:
        self.sim.clock.run_until(self.sim.clock.now + seconds)

    def handshake(
        self,
        vip: str,
        src_port: int,
        dcid: Optional[bytes] = None,
        scid: Optional[bytes] = None,
    ) -> Optional[HandshakeReply]:
        if dcid is None:
            dcid = self.rng.randbytes(8)
        if scid is None:
            scid = self.rng.randbytes(8)
        initial = LongHeader.build(
            PacketType.INITIAL, 0x00000001, dcid=dcid, scid=scid, payload=b"\x5a" * 120
        )
        body = encode_long_header(initial)
        body += b"\x00" * max(0, 1200 - len(body))
        mark = len(self.inbox)
        try:
            self.sim.deliver(
                Datagram(self.sim.clock.now, self.client_ip, vip, src_port, QUIC_PORT, body)
            )
        except NotAVip as exc:
            raise TransportUnavailable(str(exc)) from exc
        for d in self.inbox[mark:]:
            if d.src_ip != vip or d.dst_port != src_port:
                continue
            packets = split_coalesced(d.payload)
            if not packets:
                continue
            server_scid = packets[0].scid.data
            ack = LongHeader.build(
                PacketType.INITIAL, 0x00000001, dcid=server_scid, scid=scid, payload=b"\x01"
            )
            self.sim.deliver(
                Datagram(
                    self.sim.clock.now, self.client_ip, vip, src_port, QUIC_PORT,
                    encode_long_header(ack),
                )
            )
            return HandshakeReply(server_scid=server_scid, vip=vip, src_port=src_port, client_scid=scid)
        return None


class RawNetworkTransport:
    """Best-effort UDP adapter for lab targets. Off by default, rate limited.

    Sends a padded Initial and reports the SCID of whatever long-header
    response arrives. It does not complete the TLS handshake, so production
    stacks that require a valid ClientHello will not answer it; use it only
    against endpoints you operate. Not part of the acceptance surface.
    """

    def __init__(self, client_ip: str = "0.0.0.0", timeout: float = 2.0, min_gap: float = 0.2, seed: int = 0):
        self.client_ip = client_ip
        self.timeout = timeout
        self.min_gap = min_gap
        self.rng = random.Random(seed)
        self._last_send = 0.0

    def now(self) -> float:
        import time

        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        import time

        time.sleep(seconds)

    def handshake(
        self,
        vip: str,
        src_port: int,
        dcid: Optional[bytes] = None,
        scid: Optional[bytes] = None,
    ) -> Optional[HandshakeReply]:
        import socket
        import time

        gap = self.min_gap - (time.monotonic() - self._last_send)
        if gap > 0:
            time.sleep(gap)
        if dcid is None:
            dcid = self.rng.randbytes(8)
        if scid is None:
            scid = self.rng.randbytes(8)
        initial = LongHeader.build(
            PacketType.INITIAL, 0x00000001, dcid=dcid, scid=scid, payload=b"\x5a" * 120
        )
        body = encode_long_header(initial)
        body += b"\x00" * max(0, 1200 - len(body))
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.bind((self.client_ip, src_port))
            sock.settimeout(self.timeout)
            self._last_send = time.monotonic()
            sock.sendto(body, (vip, QUIC_PORT))
            data, _addr = sock.recvfrom(65535)
        except OSError:
            return None
        finally:
            sock.close()
        packets = split_coalesced(data)
        if not packets:
            return None
        return HandshakeReply(
            server_scid=packets[0].scid.data, vip=vip, src_port=src_port, client_scid=scid
        )


class PortStrategy(Enum):
    DECREASING_FROM_MAX = "decreasing_from_max"
    RANDOM_SEEDED = "random_seeded"


def port_sequence(strategy: PortStrategy, n: int, seed: int = 0, start: int = 65535) -> Iterator[int]:
    span = 65535 - 1024 + 1
    if strategy == PortStrategy.DECREASING_FROM_MAX:
        for i in range(n):
            yield 1024 + (start - 1024 - i) % span
    else:
        rng = random.Random(seed)
        for _ in range(n):
            yield rng.randint(1024, 65535)


@dataclass(frozen=True)
class ProbeCampaign:
    targets: list[str]
    handshakes_per_vip: int
    port_strategy: PortStrategy = PortStrategy.DECREASING_FROM_MAX
    inter_probe_gap: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.handshakes_per_vip < 1:
            raise ProbeError("handshakes_per_vip must be >= 1")


@dataclass
class HostIdHarvest:
    """Decoded host IDs of one VIP, in handshake order."""

    vip: str
    observations: list[tuple[int, int]] = field(default_factory=list)
    attempts: int = 0
    failures: int = 0

    @property
    def unique_ids(self) -> set[int]:
        return {host_id for _, host_id in self.observations}


Codec = Callable[[bytes], int]


def facebook_host_codec(scid: bytes) -> int:
    return decode_facebook_scid(scid).host_id


def harvest_host_ids(
    vip: str,
    n: int,
    transport: Transport,
    codec: Codec = facebook_host_codec,
    port_strategy: PortStrategy = PortStrategy.DECREASING_FROM_MAX,
    inter_probe_gap: float = 0.0,
    seed: int = 0,
) -> HostIdHarvest:
    """Complete up to n handshakes against one VIP, varying the client port,
    and decode the host ID out of each server SCID.

    Individual failures (timeouts, undecodable SCIDs) are recorded and do not
    stop the harvest, but a failure rate above 50% aborts the campaign.
    """
    if n < 1:
        raise ProbeError("need at least one handshake")
    harvest = HostIdHarvest(vip=vip)
    for index, port in enumerate(port_sequence(port_strategy, n, seed=seed)):
        if inter_probe_gap and index:
            transport.sleep(inter_probe_gap)
        reply = transport.handshake(vip, port)
        harvest.attempts += 1
        if reply is None:
            harvest.failures += 1
        else:
            try:
                harvest.observations.append((index, codec(reply.server_scid)))
            except Exception:
                harvest.failures += 1
        if (
            harvest.attempts >= FAILURE_ABORT_MIN_ATTEMPTS
            and harvest.failures / harvest.attempts > FAILURE_ABORT_RATE
        ):
            raise ExcessiveFailureRate(
                f"{harvest.failures}/{harvest.attempts} probes to {vip} failed"
            )
    return harvest


def harvest_from_ids(vip: str, host_ids: Iterable[int]) -> HostIdHarvest:
    """Synthesize a complete harvest from a known instance set (ground truth
    shortcut for clustering over many VIPs)."""
    harvest = HostIdHarvest(vip=vip)
    for index, host_id in enumerate(sorted(set(host_ids))):
        harvest.observations.append((index, host_id))
        harvest.attempts += 1
    return harvest


def discovery_curve(harvest: HostIdHarvest) -> list[tuple[int, float]]:
    """Fraction of the final unique host-ID set discovered after each
    handshake; monotone non-decreasing, ends at exactly 1.0."""
    final = len(harvest.unique_ids)
    if final == 0:
        raise EmptyHarvest(f"no host IDs harvested from {harvest.vip}")
    seen: set[int] = set()
    by_index = {index: host_id for index, host_id in harvest.observations}
    curve = []
    for attempt in range(harvest.attempts):
        host_id = by_index.get(attempt)
        if host_id is not None:
            seen.add(host_id)
        curve.append((attempt + 1, len(seen) / final))
    return curve


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union


@dataclass
class ClusterReport:
    """VIP partition under host-ID set similarity."""

    vips: list[str]
    signatures: dict[str, frozenset]
    clusters: list[list[str]]
    threshold: float

    def jaccard(self, vip_a: str, vip_b: str) -> float:
        return jaccard(self.signatures[vip_a], self.signatures[vip_b])

    def matrix(self) -> np.ndarray:
        """Full symmetric Jaccard matrix in self.vips order."""
        sigs = sorted({self.signatures[v] for v in self.vips}, key=sorted)
        sig_index = {s: i for i, s in enumerate(sigs)}
        pair = np.ones((len(sigs), len(sigs)))
        for i, a in enumerate(sigs):
            for j in range(i + 1, len(sigs)):
                pair[i, j] = pair[j, i] = jaccard(a, sigs[j])
        idx = np.array([sig_index[self.signatures[v]] for v in self.vips])
        return pair[np.ix_(idx, idx)]


def cluster_vips(
    harvests: dict[str, HostIdHarvest] | Iterable[HostIdHarvest],
    threshold: float = DEFAULT_JACCARD_THRESHOLD,
) -> ClusterReport:
    """Partition VIPs into connected components under Jaccard >= threshold.

    Identical host-ID sets are deduplicated before the pairwise pass, which
    keeps hypergiant-scale inputs (thousands of VIPs sharing a few hundred
    distinct sets) fast.
    """
    if not isinstance(harvests, dict):
        harvests = {h.vip: h for h in harvests}
    if len(harvests) < 2:
        raise ProbeError("clustering needs at least two VIPs")
    vips = sorted(harvests)
    signatures = {vip: frozenset(harvests[vip].unique_ids) for vip in vips}
    distinct = sorted({signatures[v] for v in vips}, key=sorted)
    parent = list(range(len(distinct)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(len(distinct)):
        for j in range(i + 1, len(distinct)):
            if jaccard(distinct[i], distinct[j]) >= threshold:
                parent[find(i)] = find(j)
    sig_index = {s: i for i, s in enumerate(distinct)}
    groups: dict[int, list[str]] = {}
    for vip in vips:
        groups.setdefault(find(sig_index[signatures[vip]]), []).append(vip)
    clusters = sorted(groups.values(), key=lambda g: g[0])
    return ClusterReport(vips=vips, signatures=signatures, clusters=clusters, threshold=threshold)


class LbType(Enum):
    CID_AWARE = "cid_aware"
    FIVE_TUPLE = "five_tuple"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class LbTypeVerdict:
    kind: LbType
    fail_window: Optional[float] = None
    held_host_id: Optional[int] = None
    followup_host_id: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind == LbType.CID_AWARE and not (self.fail_window and self.fail_window > 0):
            raise ProbeError("CID-aware verdict requires a positive fail window")


def detect_lb_type(
    vip: str,
    transport: Transport,
    probe_interval: float = DEFAULT_PROBE_INTERVAL,
    max_wait: float = DEFAULT_MAX_WAIT,
    codec: Optional[Codec] = None,
    seed: int = 0,
) -> LbTypeVerdict:
    """Infer the load-balancer type of a VIP from connection-state probing.

    Complete a handshake, hold the connection idle, and once per
    probe_interval attempt a follow-up handshake from a fresh 5-tuple and
    client CID while reusing the held server CID. An immediate follow-up
    success indicates 5-tuple balancing; a window of timeouts that ends in a
    success indicates CID-aware balancing (the window tracks the server's
    connection-state lifetime). Unsuitable for anycast targets.
    """
    rng = random.Random(seed)
    first_port = rng.randint(40000, 65000)
    held = transport.handshake(vip, first_port)
    if held is None:
        raise TransportUnavailable(f"initial handshake with {vip} failed")
    held_host = _try_decode(codec, held.server_scid)
    start = transport.now()
    first_fail: Optional[float] = None
    port = first_port
    while transport.now() - start < max_wait:
        transport.sleep(probe_interval)
        port = port - 1 if port > 1024 else 65535
        reply = transport.handshake(vip, port, dcid=held.server_scid, scid=rng.randbytes(8))
        if reply is None:
            if first_fail is None:
                first_fail = transport.now()
            continue
        followup_host = _try_decode(codec, reply.server_scid)
        if first_fail is None:
            return LbTypeVerdict(
                LbType.FIVE_TUPLE,
                held_host_id=held_host,
                followup_host_id=followup_host,
            )
        return LbTypeVerdict(
            LbType.CID_AWARE,
            fail_window=transport.now() - first_fail,
            held_host_id=held_host,
            followup_host_id=followup_host,
        )
    return LbTypeVerdict(LbType.INCONCLUSIVE, held_host_id=held_host)


def _try_decode(codec: Optional[Codec], scid: bytes) -> Optional[int]:
    if codec is None:
        return None
    try:
        return codec(scid)
    except Exception:
        return None


def run_campaign(
    campaign: ProbeCampaign,
    transport: Transport,
    codec: Codec = facebook_host_codec,
) -> dict[str, HostIdHarvest]:
    """Harvest every campaign target; per-VIP campaigns are independent."""
    harvests = {}
    for vip in campaign.targets:
        harvests[vip] = harvest_host_ids(
            vip,
            campaign.handshakes_per_vip,
            transport,
            codec=codec,
            port_strategy=campaign.port_strategy,
            inter_probe_gap=campaign.inter_probe_gap,
            seed=campaign.seed,
        )
    return harvests
