"""Deterministic simulation of hypergiant frontend clusters.

Models VIPs fronting layer-7 load balancer instances with QUIC server state
machines: connection-ID generation per operator scheme, retransmission
schedules, 5-tuple or CID-aware routing, and silent discard of packets that
are inconsistent with live connection state. A seeded virtual clock makes
every scenario replayable down to identical capture bytes.
"""

from __future__ import annotations

import hashlib
import heapq
import ipaddress
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .scid import (
    FACEBOOK_SCID_OCTETS,
    FacebookScidFields,
    decode_facebook_scid,
    encode_facebook_scid,
)
from .wire import Datagram, LongHeader, PacketType, encode_long_header, split_coalesced

QUIC_PORT = 443
PROTO_UDP = 17
INITIAL_FILLER = b"\x5a" * 120
HANDSHAKE_FILLER = b"\x5b" * 90
DEFAULT_STATE_LIFETIME = 240.0
DEFAULT_VERSION = 0x00000001


class SimError(ValueError):
    pass


class InvalidConfig(SimError):
    pass


class NotAVip(SimError):
    pass


class ScidSchemeKind(Enum):
    FACEBOOK_V1 = "facebook_v1"
    FACEBOOK_V2 = "facebook_v2"
    CLOUDFLARE_FIXED = "cloudflare_fixed"
    ECHO_CLIENT_DCID = "echo_client_dcid"
    UNIFORM_RANDOM = "uniform_random"


class RoutingMode(Enum):
    FIVE_TUPLE = "five_tuple"
    CID_AWARE = "cid_aware"


@dataclass(frozen=True)
class StackProfile:
    """Server stack configuration driving response behavior."""

    operator: str
    initial_rto: float
    backoff_base: float
    max_retransmissions: int
    coalescence: bool
    scid_scheme: ScidSchemeKind
    scid_length: int = 8
    version: int = DEFAULT_VERSION
    process_id: int = 0
    padding_policy: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.initial_rto <= 0:
            raise InvalidConfig("initial_rto must be positive")
        if self.max_retransmissions < 0:
            raise InvalidConfig("max_retransmissions must be >= 0")


def _default_profiles_raw() -> dict:
    ref = resources.files("quicscope").joinpath("data/profiles.json")
    with resources.as_file(ref) as p:
        return json.loads(Path(p).read_text())


def default_stack_profile(operator: str, path: Optional[str | Path] = None) -> StackProfile:
    """Stack profile for a named operator from the shipped (or given) table."""
    raw = json.loads(Path(path).read_text()) if path else _default_profiles_raw()
    try:
        cfg = raw["profiles"][operator]
    except KeyError as exc:
        raise InvalidConfig(f"no profile for operator {operator!r}") from exc
    return StackProfile(
        operator=operator,
        initial_rto=cfg["initial_rto"],
        backoff_base=cfg["backoff_base"],
        max_retransmissions=cfg["simulated_retransmissions"],
        coalescence=cfg["coalescence"],
        scid_scheme=ScidSchemeKind(cfg["scid_scheme"]),
        scid_length=cfg.get("scid_length", 8),
        padding_policy=dict(cfg.get("padding_policy", {})),
    )


class ConnState(Enum):
    PENDING = "pending"
    ESTABLISHED = "established"


@dataclass
class Connection:
    server_cid: bytes
    client_cid: bytes
    five_tuple: tuple
    created_at: float
    expires_at: float
    state: ConnState = ConnState.PENDING
    resend_events: list = field(default_factory=list)

    def live(self, now: float) -> bool:
        return now < self.expires_at


@dataclass
class L7LBInstance:
    """One layer-7 load balancer endpoint behind the cluster's VIPs."""

    host_id: int
    workers: int
    state_lifetime: float = DEFAULT_STATE_LIFETIME
    connection_table: dict[bytes, Connection] = field(default_factory=dict)

    def lookup(self, cid: bytes, now: float) -> Optional[Connection]:
        conn = self.connection_table.get(cid)
        if conn is None:
            return None
        if not conn.live(now):
            del self.connection_table[cid]
            return None
        return conn


class Disposition(Enum):
    ACCEPT = "accept"
    SILENT_DISCARD = "silent_discard"
    NEW_CONNECTION = "new_connection"


def handle_packet(
    instance: L7LBInstance, packet: LongHeader, five_tuple: tuple, now: float
) -> tuple[Disposition, Optional[Connection]]:
    """Connection state-machine decision for one incoming packet.

    A packet matched to a live connection must be silently discarded when it
    is inconsistent with that connection's state: a fresh Initial reusing a
    live server CID is the canonical case. An unknown-CID Initial opens a new
    connection; a consistent continuation is accepted.
    """
    conn = instance.lookup(packet.dcid.data, now)
    if conn is not None:
        fresh_initial = packet.packet_type == PacketType.INITIAL and (
            packet.scid.data != conn.client_cid or five_tuple != conn.five_tuple
        )
        if fresh_initial:
            return Disposition.SILENT_DISCARD, conn
        return Disposition.ACCEPT, conn
    if packet.packet_type == PacketType.INITIAL:
        return Disposition.NEW_CONNECTION, None
    return Disposition.SILENT_DISCARD, None


# --- virtual clock -----------------------------------------------------------


class Event:
    __slots__ = ("time", "fn", "cancelled")

    def __init__(self, time: float, fn: Callable[[], None]):
        self.time = time
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class VirtualClock:
    """Event-driven clock; identical schedules replay identically."""

    def __init__(self) -> None:
        self.now = 0.0
        self._heap: list[tuple[float, int, Event]] = []
        self._seq = 0

    def schedule(self, at: float, fn: Callable[[], None]) -> Event:
        if at < self.now:
            raise SimError(f"cannot schedule at {at} before now {self.now}")
        event = Event(at, fn)
        heapq.heappush(self._heap, (at, self._seq, event))
        self._seq += 1
        return event

    def run_until(self, t: float) -> None:
        """Fire all events with time <= t, then advance to t."""
        while self._heap and self._heap[0][0] <= t:
            at, _, event = heapq.heappop(self._heap)
            if event.cancelled:
                continue
            self.now = at
            event.fn()
        if t > self.now:
            self.now = t

    def pending(self) -> int:
        return sum(1 for _, _, e in self._heap if not e.cancelled)


# --- routing -----------------------------------------------------------------


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = x + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _key64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big")


def five_tuple_of(d: Datagram) -> tuple:
    return (d.src_ip, d.dst_ip, d.src_port, d.dst_port, PROTO_UDP)


@dataclass
class ClusterConfig:
    vips: list[str]
    l7lb_count: int = 0
    host_ids: Optional[list[int]] = None
    host_id_base: int = 0
    workers: int = 4
    routing_mode: RoutingMode = RoutingMode.FIVE_TUPLE
    state_lifetime: float = DEFAULT_STATE_LIFETIME
    profile: Optional[StackProfile] = None
    name: str = ""


class FrontendCluster:
    """VIPs fronting a set of L7LB instances under one routing policy.

    Every VIP maps to the full instance set; host IDs are unique within the
    cluster.
    """

    def __init__(
        self,
        vips: list[str],
        instances: list[L7LBInstance],
        routing_mode: RoutingMode,
        profile: StackProfile,
        name: str = "",
    ):
        if not vips:
            raise InvalidConfig("cluster needs at least one VIP")
        if not instances:
            raise InvalidConfig("cluster needs at least one L7LB instance")
        host_ids = [inst.host_id for inst in instances]
        if len(set(host_ids)) != len(host_ids):
            raise InvalidConfig("duplicate host IDs in cluster")
        width = 24 if profile.scid_scheme == ScidSchemeKind.FACEBOOK_V2 else 16
        if profile.scid_scheme in (ScidSchemeKind.FACEBOOK_V1, ScidSchemeKind.FACEBOOK_V2):
            if max(host_ids) >= 1 << width:
                raise InvalidConfig(f"host ID exceeds {width}-bit scheme width")
        self.vips = list(vips)
        self.vip_set = set(vips)
        self.instances = instances
        self.routing_mode = routing_mode
        self.profile = profile
        self.name = name
        self.by_host_id = {inst.host_id: inst for inst in instances}
        self.cid_directory: dict[bytes, tuple[L7LBInstance, float]] = {}
        self._instance_keys = np.array(
            [_key64(f"l7lb|{name}|{inst.host_id}") for inst in instances], dtype=np.uint64
        )

    def host_id_set(self) -> set[int]:
        return set(self.by_host_id)

    def rendezvous(self, five_tuple: tuple) -> L7LBInstance:
        tuple_key = np.uint64(_key64("|".join(str(part) for part in five_tuple)))
        weights = _splitmix64(self._instance_keys ^ tuple_key)
        return self.instances[int(weights.argmax())]

    def directory_lookup(self, cid: bytes, now: float) -> Optional[L7LBInstance]:
        hit = self.cid_directory.get(cid)
        if hit is None:
            return None
        instance, expires_at = hit
        if now >= expires_at:
            del self.cid_directory[cid]
            return None
        return instance

    def register_cid(self, cid: bytes, instance: L7LBInstance, expires_at: float) -> None:
        self.cid_directory[cid] = (instance, expires_at)

    def decode_host_id(self, dcid: bytes) -> Optional[int]:
        if self.profile.scid_scheme not in (
            ScidSchemeKind.FACEBOOK_V1,
            ScidSchemeKind.FACEBOOK_V2,
        ):
            return None
        if len(dcid) != FACEBOOK_SCID_OCTETS:
            return None
        try:
            return decode_facebook_scid(dcid).host_id
        except Exception:
            return None


def build_cluster(config: ClusterConfig) -> FrontendCluster:
    """Materialize a cluster: requested VIPs and L7LB instances with either an
    explicit host-ID list or sequential IDs from `host_id_base`."""
    if config.profile is None:
        raise InvalidConfig("cluster config needs a stack profile")
    if config.host_ids is not None:
        host_ids = list(config.host_ids)
        if len(set(host_ids)) != len(host_ids):
            raise InvalidConfig("explicit host ID list contains duplicates")
    else:
        if config.l7lb_count < 1:
            raise InvalidConfig("l7lb_count must be >= 1")
        host_ids = list(range(config.host_id_base, config.host_id_base + config.l7lb_count))
    instances = [
        L7LBInstance(host_id=h, workers=config.workers, state_lifetime=config.state_lifetime)
        for h in host_ids
    ]
    return FrontendCluster(
        vips=config.vips,
        instances=instances,
        routing_mode=config.routing_mode,
        profile=config.profile,
        name=config.name or (config.vips[0] if config.vips else "cluster"),
    )


def route(
    cluster: FrontendCluster,
    five_tuple: tuple,
    dcid: Optional[bytes] = None,
    now: float = 0.0,
) -> L7LBInstance:
    """Pick the serving instance for a packet addressed to a cluster VIP.

    Five-tuple mode uses rendezvous hashing. CID-aware mode first honors a
    live connection entry, then a host ID decoded from the DCID, then falls
    back to the tuple hash.
    """
    dst_ip = five_tuple[1]
    if dst_ip not in cluster.vip_set:
        raise NotAVip(f"{dst_ip} is not a VIP of this cluster")
    if cluster.routing_mode == RoutingMode.CID_AWARE and dcid:
        instance = cluster.directory_lookup(dcid, now)
        if instance is not None:
            return instance
        host_id = cluster.decode_host_id(dcid)
        if host_id is not None and host_id in cluster.by_host_id:
            return cluster.by_host_id[host_id]
    return cluster.rendezvous(five_tuple)


# --- deployment + flood ------------------------------------------------------


def _generate_ips(base: str, count: int) -> list[str]:
    start = int(ipaddress.ip_address(base))
    return [str(ipaddress.ip_address(start + i)) for i in range(count)]


@dataclass
class FloodConfig:
    """Spoofed-source flood: who spoofs, how long, and whether anyone ACKs."""

    sources: list[str]
    duration: float
    sessions_per_vip: Optional[int] = None
    arrival_window: float = 0.0
    ack_probability: float = 0.0
    ack_delay: float = 0.05


@dataclass
class DeploymentConfig:
    clusters: list[ClusterConfig]
    flood: Optional[FloodConfig] = None
    seed: int = 0

    @classmethod
    def from_json(cls, path: str | Path) -> "DeploymentConfig":
        raw = json.loads(Path(path).read_text())
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "DeploymentConfig":
        default_operator = raw.get("operator")
        clusters = []
        for i, c in enumerate(raw.get("clusters", [])):
            operator = c.get("operator", default_operator)
            if "profile" in c:
                p = c["profile"]
                profile = StackProfile(
                    operator=p.get("operator", operator or "custom"),
                    initial_rto=p["initial_rto"],
                    backoff_base=p.get("backoff_base", 2.0),
                    max_retransmissions=p["max_retransmissions"],
                    coalescence=p.get("coalescence", False),
                    scid_scheme=ScidSchemeKind(p.get("scid_scheme", "uniform_random")),
                    scid_length=p.get("scid_length", 8),
                    version=p.get("version", DEFAULT_VERSION),
                    process_id=p.get("process_id", 0),
                    padding_policy=dict(p.get("padding_policy", {})),
                )
            elif operator is not None:
                profile = default_stack_profile(operator)
            else:
                raise InvalidConfig(f"cluster {i}: neither operator nor profile given")
            vips = c.get("vips") or _generate_ips(c["vip_base"], c["vip_count"])
            clusters.append(
                ClusterConfig(
                    vips=vips,
                    l7lb_count=c.get("l7lb_count", 0),
                    host_ids=c.get("host_ids"),
                    host_id_base=c.get("host_id_base", 0),
                    workers=c.get("workers", 4),
                    routing_mode=RoutingMode(c.get("routing_mode", "five_tuple")),
                    state_lifetime=c.get("state_lifetime", DEFAULT_STATE_LIFETIME),
                    profile=profile,
                    name=c.get("name", f"cluster{i}"),
                )
            )
        flood = None
        if "flood" in raw:
            f = raw["flood"]
            sources = f.get("sources") or _generate_ips(f["source_base"], f["source_count"])
            flood = FloodConfig(
                sources=sources,
                duration=f["duration"],
                sessions_per_vip=f.get("sessions_per_vip"),
                arrival_window=f.get("arrival_window", 0.0),
                ack_probability=f.get("ack_probability", 0.0),
                ack_delay=f.get("ack_delay", 0.05),
            )
        return cls(clusters=clusters, flood=flood, seed=raw.get("seed", 0))


@dataclass
class SessionTruth:
    """Ground truth for one served handshake."""

    vip: str
    source: str
    source_port: int
    operator: str
    server_scid: bytes
    client_dcid: bytes
    client_scid: bytes
    host_id: int
    worker_id: Optional[int]


@dataclass
class FloodResult:
    datagrams: list[Datagram]
    truth: list[SessionTruth]

    def echo_pairs(self) -> list[tuple[bytes, bytes]]:
        """(server SCID, client DCID) pairs for echo-scheme verification."""
        return [(t.server_scid, t.client_dcid) for t in self.truth]

    def operator_by_vip(self) -> dict[str, str]:
        return {t.vip: t.operator for t in self.truth}


class DeploymentSimulator:
    """Single-threaded deterministic event loop over one deployment."""

    def __init__(self, config: DeploymentConfig):
        self.config = config
        self.clock = VirtualClock()
        self.rng = random.Random(config.seed)
        self.clusters = [build_cluster(c) for c in config.clusters]
        self.vip_map: dict[str, FrontendCluster] = {}
        for cluster in self.clusters:
            for vip in cluster.vips:
                if vip in self.vip_map:
                    raise InvalidConfig(f"VIP {vip} assigned to two clusters")
                self.vip_map[vip] = cluster
        self.capture: list[Datagram] = []
        self.truth: list[SessionTruth] = []
        self._inboxes: dict[str, list[Datagram]] = {}

    # -- plumbing --

    def register_inbox(self, ip: str) -> list[Datagram]:
        return self._inboxes.setdefault(ip, [])

    def _emit(self, d: Datagram) -> None:
        inbox = self._inboxes.get(d.dst_ip)
        if inbox is not None:
            inbox.append(d)
        else:
            self.capture.append(d)

    def cluster_for(self, vip: str) -> FrontendCluster:
        cluster = self.vip_map.get(vip)
        if cluster is None:
            raise NotAVip(f"{vip} is not a configured VIP")
        return cluster

    # -- server behavior --

    def _generate_scid(
        self, cluster: FrontendCluster, instance: L7LBInstance, client_initial: LongHeader
    ) -> tuple[bytes, Optional[int]]:
        profile = cluster.profile
        scheme = profile.scid_scheme
        for _ in range(8):
            worker_id: Optional[int] = None
            if scheme == ScidSchemeKind.FACEBOOK_V1:
                worker_id = self.rng.randrange(instance.workers)
                scid = bytes(
                    encode_facebook_scid(
                        FacebookScidFields(1, instance.host_id, worker_id, profile.process_id),
                        random_bits_seed=self.rng.getrandbits(64),
                    )
                )
            elif scheme == ScidSchemeKind.FACEBOOK_V2:
                worker_id = self.rng.randrange(instance.workers)
                scid = bytes(
                    encode_facebook_scid(
                        FacebookScidFields(2, instance.host_id, worker_id, profile.process_id),
                        random_bits_seed=self.rng.getrandbits(64),
                    )
                )
            elif scheme == ScidSchemeKind.CLOUDFLARE_FIXED:
                scid = b"\x01" + self.rng.randbytes(profile.scid_length - 1)
            elif scheme == ScidSchemeKind.ECHO_CLIENT_DCID:
                prefix = client_initial.dcid.data[:8]
                if len(prefix) < 8:
                    prefix += self.rng.randbytes(8 - len(prefix))
                return prefix, None
            else:
                scid = self.rng.randbytes(profile.scid_length)
            if scid not in instance.connection_table:
                return scid, worker_id
        raise SimError("could not generate a unique server CID")

    def _response_datagrams(
        self,
        cluster: FrontendCluster,
        conn: Connection,
        client_addr: tuple[str, int],
        vip: str,
    ) -> list[Datagram]:
        """Build the datagrams of one response round (Initial + Handshake)."""
        profile = cluster.profile
        initial = LongHeader.build(
            PacketType.INITIAL,
            profile.version,
            dcid=conn.client_cid,
            scid=conn.server_cid,
            payload=INITIAL_FILLER,
        )
        handshake = LongHeader.build(
            PacketType.HANDSHAKE,
            profile.version,
            dcid=conn.client_cid,
            scid=conn.server_cid,
            payload=HANDSHAKE_FILLER,
        )
        policy = profile.padding_policy

        def pad(payload: bytes, category: str) -> bytes:
            target = policy.get(category, 0)
            if len(payload) < target:
                payload += b"\x00" * (target - len(payload))
            return payload

        now = self.clock.now
        dst_ip, dst_port = client_addr
        if profile.coalescence:
            body = pad(encode_long_header(initial) + encode_long_header(handshake), "Initial & Handshake")
            return [Datagram(now, vip, dst_ip, QUIC_PORT, dst_port, body)]
        return [
            Datagram(now, vip, dst_ip, QUIC_PORT, dst_port, pad(encode_long_header(initial), "Initial")),
            Datagram(now, vip, dst_ip, QUIC_PORT, dst_port, pad(encode_long_header(handshake), "Handshake")),
        ]

    def serve_initial(
        self,
        cluster: FrontendCluster,
        instance: L7LBInstance,
        client_initial: LongHeader,
        client_addr: tuple[str, int],
        vip: str,
    ) -> Connection:
        """Open a connection and emit the response schedule: one immediate
        round plus up to max_retransmissions resend rounds at offsets
        initial_rto * backoff_base**k, cancelled by a client ACK."""
        profile = cluster.profile
        now = self.clock.now
        scid, worker_id = self._generate_scid(cluster, instance, client_initial)
        conn = Connection(
            server_cid=scid,
            client_cid=client_initial.scid.data,
            five_tuple=(client_addr[0], vip, client_addr[1], QUIC_PORT, PROTO_UDP),
            created_at=now,
            expires_at=now + instance.state_lifetime,
        )
        instance.connection_table[scid] = conn
        cluster.register_cid(scid, instance, conn.expires_at)
        self.truth.append(
            SessionTruth(
                vip=vip,
                source=client_addr[0],
                source_port=client_addr[1],
                operator=profile.operator,
                server_scid=scid,
                client_dcid=client_initial.dcid.data,
                client_scid=client_initial.scid.data,
                host_id=instance.host_id,
                worker_id=worker_id,
            )
        )

        def emit_round() -> None:
            for d in self._response_datagrams(cluster, conn, client_addr, vip):
                self._emit(d)

        emit_round()
        for k in range(profile.max_retransmissions):
            at = now + profile.initial_rto * profile.backoff_base**k
            conn.resend_events.append(self.clock.schedule(at, emit_round))
        return conn

    def deliver(self, d: Datagram) -> None:
        """Process one client datagram arriving at a VIP at the current time."""
        cluster = self.cluster_for(d.dst_ip)
        packets = split_coalesced(d.payload)
        if not packets:
            return
        packet = packets[0]
        tup = five_tuple_of(d)
        instance = route(cluster, tup, dcid=packet.dcid.data, now=self.clock.now)
        disposition, conn = handle_packet(instance, packet, tup, self.clock.now)
        if disposition == Disposition.NEW_CONNECTION:
            self.serve_initial(cluster, instance, packet, (d.src_ip, d.src_port), d.dst_ip)
        elif disposition == Disposition.ACCEPT and conn is not None:
            # consistent continuation from the client confirms the handshake
            conn.state = ConnState.ESTABLISHED
            for event in conn.resend_events:
                event.cancel()
            conn.resend_events.clear()

    # -- flood scenario --

    def run_flood(self, flood: FloodConfig) -> FloodResult:
        vips = [vip for cluster in self.clusters for vip in cluster.vips]
        arrivals: list[tuple[float, str, str]] = []  # (time, source, vip)
        if flood.sessions_per_vip is not None:
            source_cycle = 0
            for vip in vips:
                for _ in range(flood.sessions_per_vip):
                    src = flood.sources[source_cycle % len(flood.sources)]
                    source_cycle += 1
                    at = self.rng.uniform(0.0, flood.arrival_window) if flood.arrival_window else 0.0
                    arrivals.append((at, src, vip))
        else:
            for src in flood.sources:
                vip = self.rng.choice(vips)
                at = self.rng.uniform(0.0, flood.arrival_window) if flood.arrival_window else 0.0
                arrivals.append((at, src, vip))
        arrivals.sort(key=lambda a: a[0])

        def make_injector(src: str, vip: str) -> Callable[[], None]:
            def inject() -> None:
                src_port = self.rng.randint(1024, 65535)
                dcid = self.rng.randbytes(8)
                scid = self.rng.randbytes(8)
                initial = LongHeader.build(
                    PacketType.INITIAL, DEFAULT_VERSION, dcid=dcid, scid=scid, payload=INITIAL_FILLER
                )
                body = encode_long_header(initial)
                if len(body) < 1200:
                    body += b"\x00" * (1200 - len(body))
                d = Datagram(self.clock.now, src, vip, src_port, QUIC_PORT, body)
                self.deliver(d)
                if flood.ack_probability > 0 and self.rng.random() < flood.ack_probability:
                    server_scid = self.truth[-1].server_scid
                    ack = LongHeader.build(
                        PacketType.INITIAL,
                        DEFAULT_VERSION,
                        dcid=server_scid,
                        scid=scid,
                        payload=b"\x01",
                    )
                    ack_body = encode_long_header(ack)

                    def send_ack() -> None:
                        self.deliver(
                            Datagram(self.clock.now, src, vip, src_port, QUIC_PORT, ack_body)
                        )

                    self.clock.schedule(self.clock.now + flood.ack_delay, send_ack)

            return inject

        for at, src, vip in arrivals:
            self.clock.schedule(at, make_injector(src, vip))
        self.clock.run_until(flood.duration)
        return FloodResult(datagrams=list(self.capture), truth=list(self.truth))


def simulate_flood(config: DeploymentConfig) -> FloodResult:
    """Run the configured flood; deterministic given (config, seed)."""
    if config.flood is None:
        raise InvalidConfig("deployment config has no flood section")
    return DeploymentSimulator(config).run_flood(config.flood)
