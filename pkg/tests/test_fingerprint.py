"""Fingerprinting statistics against constructed mixes and doubling oracles."""

import random

import pytest

from quicscope.fingerprint import (
    FingerprintProfile,
    InsufficientData,
    RtoEstimate,
    estimate_rto,
    length_histogram,
    load_known_profiles,
    match_profile,
    packet_type_stats,
    resend_count_distribution,
    version_tally,
)
from quicscope.ingest import Session, SessionKey, TimelineEntry, ingest
from quicscope.wire import Direction, PacketType, VersionRegistry

from conftest import make_response


def session_from_offsets(
    offsets,
    types=None,
    direction=Direction.RESPONSE,
    version=1,
    operator=None,
    key_suffix=b"\x00",
):
    """Build a Session directly from resend offsets (one entry per offset)."""
    key = SessionKey("198.51.100.1", "172.16.0.9", b"s" * 7 + key_suffix, b"d" * 8)
    timeline = [
        TimelineEntry(o, (types[i] if types else PacketType.INITIAL), 1200, False)
        for i, o in enumerate(offsets)
    ]
    return Session(key=key, timeline=timeline, direction=direction, version=version, operator=operator)


def doubling_offsets(rto: float, resends: int) -> list[float]:
    """Oracle schedule: first response at 0, resend k at rto * 2**k."""
    return [0.0] + [rto * 2**k for k in range(resends)]


class TestVersionTally:
    def test_table_shaped_mix(self):
        registry = VersionRegistry.default()
        mix = [(0x00000001, 7770), (0xFACEB002, 2120), (0xFF00001D, 50), (0xDEAD0001, 60)]
        sessions = []
        i = 0
        for version, count in mix:
            for _ in range(count):
                s = session_from_offsets([0.0], direction=Direction.REQUEST, version=version)
                sessions.append(s)
                i += 1
        tally = version_tally(sessions, registry)
        assert abs(tally.share("client", "QUICv1") - 0.777) < 0.005
        assert abs(tally.share("client", "Facebook mvfst 2") - 0.212) < 0.005
        assert abs(tally.share("client", "draft-29") - 0.005) < 0.005
        assert abs(tally.share("client", "others") - 0.006) < 0.005

    def test_session_counted_once_despite_many_datagrams(self):
        registry = VersionRegistry.default()
        from quicscope.ingest import sessionize

        records = list(ingest([make_response(t) for t in (0.0, 0.3, 0.6, 0.9, 1.2)]))
        sessions = sessionize(records)
        tally = version_tally(sessions, registry)
        assert tally.counts == {("server", "QUICv1"): 1}

    def test_empty_input(self):
        tally = version_tally([], VersionRegistry.default())
        assert tally.counts == {}
        assert tally.role_total("client") == 0

    def test_shares_sum_to_one(self):
        registry = VersionRegistry.default()
        rng = random.Random(5)
        sessions = [
            session_from_offsets(
                [0.0],
                direction=rng.choice([Direction.REQUEST, Direction.RESPONSE]),
                version=rng.choice([1, 0xFACEB002, 0xABCDEF01]),
            )
            for _ in range(500)
        ]
        tally = version_tally(sessions, registry)
        for role in ("client", "server"):
            if tally.role_total(role):
                total_share = sum(tally.share(role, label) for (r, label) in tally.counts if r == role)
                assert abs(total_share - 1.0) < 1e-9

    def test_permutation_invariance(self):
        registry = VersionRegistry.default()
        sessions = [session_from_offsets([0.0], version=v) for v in (1, 1, 0xFACEB002)]
        a = version_tally(sessions, registry)
        b = version_tally(sessions[::-1], registry)
        assert a.counts == b.counts

    def test_shard_merge_is_exact(self):
        registry = VersionRegistry.default()
        sessions = [session_from_offsets([0.0], version=v) for v in (1, 1, 0xFACEB002, 0xFF00001D)]
        whole = version_tally(sessions, registry)
        merged = version_tally(sessions[:2], registry).merge(version_tally(sessions[2:], registry))
        assert whole.counts == merged.counts


class TestPacketTypeStats:
    def test_coalesced_is_its_own_category(self):
        records = list(
            ingest(
                [
                    make_response(0.0, types=(PacketType.INITIAL, PacketType.HANDSHAKE)),
                    make_response(0.1, types=(PacketType.INITIAL,), dst="172.16.0.2"),
                ]
            )
        )
        for r in records:
            r.operator = "Google"
        stats = packet_type_stats(records)
        pct = stats.percentages("Google")
        assert pct["Initial & Handshake"] == 50.0
        assert pct["Initial"] == 50.0

    def test_facebook_coalesced_share_is_exactly_zero(self):
        records = list(
            ingest([make_response(0.1 * i, dst=f"172.16.0.{i}") for i in range(10)])
        )
        for r in records:
            r.operator = "Facebook"
        stats = packet_type_stats(records)
        assert stats.coalesced_share("Facebook") == 0.0

    def test_single_initial_corpus(self):
        records = list(ingest([make_response(0.0)]))
        stats = packet_type_stats(records)
        assert stats.percentages("Unknown") == {"Initial": 100.0}

    def test_percentages_sum_to_100(self):
        rng = random.Random(2)
        datagrams = []
        for i in range(200):
            types = (
                (PacketType.INITIAL, PacketType.HANDSHAKE)
                if rng.random() < 0.5
                else (rng.choice([PacketType.INITIAL, PacketType.HANDSHAKE]),)
            )
            datagrams.append(make_response(0.01 * i, dst=f"172.16.{i % 9}.1", types=types))
        records = list(ingest(datagrams))
        stats = packet_type_stats(records)
        assert abs(sum(stats.percentages("Unknown").values()) - 100.0) < 0.01

    def test_shard_merge_is_exact(self):
        rng = random.Random(6)
        datagrams = [
            make_response(
                0.01 * i,
                dst=f"172.16.{i % 5}.9",
                types=(PacketType.INITIAL, PacketType.HANDSHAKE) if i % 3 else (PacketType.INITIAL,),
            )
            for i in range(60)
        ]
        records = list(ingest(datagrams))
        whole = packet_type_stats(records)
        merged = packet_type_stats(records[:20]).merge(packet_type_stats(records[20:]))
        assert whole.counts == merged.counts
        hist_whole = length_histogram(records)
        hist_merged = length_histogram(records[:33]).merge(length_histogram(records[33:]))
        assert hist_whole.counts == hist_merged.counts


class TestLengthHistogram:
    def test_padded_initial_corpus(self):
        records = list(
            ingest([make_response(0.1 * i, dst=f"172.16.0.{i}", pad_to=1200) for i in range(5)])
        )
        hist = length_histogram(records)
        top = hist.top("Unknown", 1)
        assert top == [(("Initial",), 1200, 5)]

    def test_coalesced_key(self):
        records = list(
            ingest(
                [
                    make_response(
                        0.0, types=(PacketType.INITIAL, PacketType.HANDSHAKE), pad_to=1252
                    )
                ]
            )
        )
        hist = length_histogram(records)
        assert hist.top("Unknown") == [(("Initial", "Handshake"), 1252, 1)]

    def test_empty(self):
        hist = length_histogram([])
        assert hist.top("anyone") == []


class TestEstimateRto:
    def test_doubling_oracle_schedule(self):
        sessions = [session_from_offsets(doubling_offsets(0.3, 5), key_suffix=bytes([i])) for i in range(40)]
        est = estimate_rto(sessions)
        assert est.initial_rto == pytest.approx(0.3)
        assert est.backoff_base == pytest.approx(2.0)
        assert est.sample_count == 40

    def test_cumulative_doubling_oracle(self):
        # alternative doubling oracle: each wait doubles, so offsets are
        # rto * (2**(k+1) - 1): 0.3, 0.9, 2.1, 4.5, ...
        offsets = [0.0] + [0.3 * (2 ** (k + 1) - 1) for k in range(4)]
        assert offsets[1:] == pytest.approx([0.3, 0.9, 2.1, 4.5])
        sessions = [session_from_offsets(offsets, key_suffix=bytes([i])) for i in range(35)]
        est = estimate_rto(sessions)
        assert est.initial_rto == pytest.approx(0.3)
        assert est.backoff_base == pytest.approx(2.0)

    def test_facebook_like_range(self):
        rng = random.Random(11)
        sessions = [
            session_from_offsets(doubling_offsets(0.4, rng.choice([7, 8, 9])), key_suffix=bytes([i]))
            for i in range(60)
        ]
        est = estimate_rto(sessions)
        assert est.initial_rto == pytest.approx(0.4)
        lo, hi = est.max_retransmissions
        assert lo >= 7 and hi <= 9 and lo <= hi

    def test_insufficient_sessions(self):
        sessions = [session_from_offsets(doubling_offsets(0.3, 4), key_suffix=bytes([i])) for i in range(5)]
        with pytest.raises(InsufficientData):
            estimate_rto(sessions, min_sessions=30)

    def test_jitter_robustness(self):
        rng = random.Random(3)
        sessions = []
        for i in range(50):
            offsets = [0.0] + [0.3 * 2**k + rng.uniform(-0.01, 0.01) for k in range(5)]
            sessions.append(session_from_offsets(offsets, key_suffix=bytes([i])))
        est = estimate_rto(sessions)
        assert abs(est.initial_rto - 0.3) < 0.02
        assert abs(est.backoff_base - 2.0) < 0.15

    def test_sessions_without_resends_excluded(self):
        sessions = [session_from_offsets([0.0], key_suffix=bytes([i])) for i in range(50)]
        with pytest.raises(InsufficientData):
            estimate_rto(sessions)


class TestResendCounts:
    def test_distribution_mass_equals_sessions(self):
        rng = random.Random(9)
        sessions = [
            session_from_offsets(doubling_offsets(0.4, rng.randint(0, 9)), key_suffix=bytes([i]))
            for i in range(100)
        ]
        hist = resend_count_distribution(sessions)
        assert sum(hist.values()) == 100

    def test_two_datagram_rounds_count_once(self):
        # Initial and Handshake at the same instant belong to one round.
        offsets = [0.0, 0.0, 0.4, 0.4, 0.8, 0.8]
        types = [PacketType.INITIAL, PacketType.HANDSHAKE] * 3
        session = session_from_offsets(offsets, types=types)
        hist = resend_count_distribution([session])
        assert hist == {2: 1}

    def test_one_response_only(self):
        sessions = [session_from_offsets([0.0], key_suffix=bytes([i])) for i in range(4)]
        assert resend_count_distribution(sessions) == {0: 4}


class TestMatchProfile:
    def setup_method(self):
        self.known = load_known_profiles()

    @staticmethod
    def observed(rto, coalescence, structured):
        return FingerprintProfile(
            operator="observed",
            rto=RtoEstimate(rto, 2.0, (3, 6), 100),
            coalescence=coalescence,
            server_chosen_ids=True,
            structured_scids=structured,
        )

    def test_google_like(self):
        assert match_profile(self.observed(0.31, True, False), self.known) == "Google"

    def test_cloudflare_like(self):
        assert match_profile(self.observed(1.0, True, True), self.known) == "Cloudflare"

    def test_facebook_like(self):
        assert match_profile(self.observed(0.41, False, True), self.known) == "Facebook"

    def test_unknown_when_out_of_tolerance(self):
        assert match_profile(self.observed(5.0, False, False), self.known) is None

    def test_rto_separates_google_from_cloudflare(self):
        # both coalesce; structured flag and RTO disambiguate
        assert match_profile(self.observed(0.9, True, True), self.known) == "Cloudflare"
        assert match_profile(self.observed(0.9, True, False), self.known) is None

    def test_known_profile_table_values(self):
        by_name = {p.operator: p for p in self.known}
        assert by_name["Cloudflare"].rto.initial_rto == 1.0
        assert by_name["Cloudflare"].rto.max_retransmissions == (3, 6)
        assert by_name["Facebook"].rto.initial_rto == 0.4
        assert by_name["Facebook"].rto.max_retransmissions == (7, 9)
        assert not by_name["Facebook"].coalescence
        assert by_name["Google"].rto.initial_rto == 0.3
        assert by_name["Google"].rto.max_retransmissions == (3, 6)
        assert not by_name["Google"].structured_scids
        assert not by_name["Google"].server_chosen_ids
