"""SCID analysis: codec vs. an independent bit-packing oracle, nybble
statistics, uniformity calibration, and scheme classification."""

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quicscope.scid import (
    BadLength,
    FacebookScidFields,
    FieldOverflow,
    InsufficientSamples,
    MixedLengths,
    PositionVerdict,
    SchemeKind,
    UnknownScidVersion,
    classify_scheme,
    decode_facebook_scid,
    detect_cloudflare_signature,
    encode_facebook_scid,
    low_host_id,
    nybble_frequencies,
    scid_length_stats,
    uniformity_test,
)
from quicscope.wire import ConnectionId


def oracle_pack(fields: FacebookScidFields) -> bytes:
    """Independent packer: place each field bit by bit into a 64-slot array.

    Field layouts (by SCID version): v1 has version at bits 0-1, host at 2-17,
    worker at 18-25, process at 26; v2 has version at 0-1, host at 8-31,
    worker at 32-39, process at 40. Bit b maps to octet b // 8, position
    7 - b % 8. Field values are written most significant bit first.
    """
    if fields.scid_version == 2:
        spans = [(fields.scid_version, 0, 2), (fields.host_id, 8, 24), (fields.worker_id, 32, 8), (fields.process_id, 40, 1)]
    else:
        spans = [(fields.scid_version, 0, 2), (fields.host_id, 2, 16), (fields.worker_id, 18, 8), (fields.process_id, 26, 1)]
    bits = [0] * 64
    for value, start, width in spans:
        for i in range(width):
            bits[start + i] = (value >> (width - 1 - i)) & 1
    out = bytearray(8)
    for b, bit in enumerate(bits):
        if bit:
            out[b // 8] |= 1 << (7 - (b % 8))
    return bytes(out)


class TestFacebookCodec:
    def test_worked_vector_against_oracle(self):
        fields = FacebookScidFields(scid_version=1, host_id=5, worker_id=3, process_id=1)
        expected = bytes.fromhex("400140e000000000")
        assert oracle_pack(fields) == expected
        assert bytes(encode_facebook_scid(fields)) == expected

    def test_all_zero_fields_give_zero_octets(self):
        fields = FacebookScidFields(scid_version=0, host_id=0, worker_id=0, process_id=0)
        scid = encode_facebook_scid(fields)
        assert bytes(scid) == b"\x00" * 8
        with pytest.raises(UnknownScidVersion) as exc:
            decode_facebook_scid(scid)
        assert exc.value.version == 0

    def test_host_overflow_v1(self):
        with pytest.raises(FieldOverflow):
            encode_facebook_scid(FacebookScidFields(1, 70000, 0, 0))

    def test_worker_overflow(self):
        with pytest.raises(FieldOverflow):
            encode_facebook_scid(FacebookScidFields(1, 0, 256, 0))

    def test_process_overflow(self):
        with pytest.raises(FieldOverflow):
            encode_facebook_scid(FacebookScidFields(1, 0, 0, 2))

    def test_bad_length(self):
        with pytest.raises(BadLength):
            decode_facebook_scid(b"\x01" * 20)

    def test_decode_inverts_oracle(self):
        rng = random.Random(42)
        for _ in range(2000):
            version = rng.choice([1, 2])
            host_max = (1 << 16) - 1 if version == 1 else (1 << 24) - 1
            fields = FacebookScidFields(
                scid_version=version,
                host_id=rng.randint(0, host_max),
                worker_id=rng.randint(0, 255),
                process_id=rng.randint(0, 1),
            )
            assert decode_facebook_scid(oracle_pack(fields)) == fields

    def test_encode_matches_oracle_randomized(self):
        rng = random.Random(7)
        for _ in range(2000):
            version = rng.choice([1, 2])
            host_max = (1 << 16) - 1 if version == 1 else (1 << 24) - 1
            fields = FacebookScidFields(
                version, rng.randint(0, host_max), rng.randint(0, 255), rng.randint(0, 1)
            )
            assert bytes(encode_facebook_scid(fields)) == oracle_pack(fields)

    def test_random_bits_do_not_disturb_fields(self):
        fields = FacebookScidFields(1, 1234, 56, 1)
        for seed in range(50):
            scid = encode_facebook_scid(fields, random_bits_seed=seed)
            assert decode_facebook_scid(scid) == fields

    def test_random_bits_deterministic_per_seed(self):
        fields = FacebookScidFields(2, 99, 3, 0)
        a = encode_facebook_scid(fields, random_bits_seed=11)
        b = encode_facebook_scid(fields, random_bits_seed=11)
        c = encode_facebook_scid(fields, random_bits_seed=12)
        assert bytes(a) == bytes(b)
        assert bytes(a) != bytes(c)

    @given(
        version=st.sampled_from([1, 2]),
        host=st.integers(min_value=0, max_value=(1 << 16) - 1),
        big_host=st.integers(min_value=0, max_value=(1 << 24) - 1),
        worker=st.integers(min_value=0, max_value=255),
        process=st.integers(min_value=0, max_value=1),
        seed=st.one_of(st.none(), st.integers(min_value=0, max_value=2**32)),
    )
    @settings(max_examples=500)
    def test_round_trip_property(self, version, host, big_host, worker, process, seed):
        fields = FacebookScidFields(version, big_host if version == 2 else host, worker, process)
        assert decode_facebook_scid(encode_facebook_scid(fields, seed)) == fields


class TestLowHostId:
    @pytest.mark.parametrize("host,expected", [(5, True), (127, True), (128, False), (9000, False), (0, True)])
    def test_boundary(self, host, expected):
        assert low_host_id(FacebookScidFields(1, host, 0, 0)) is expected


class TestNybbleFrequencies:
    def test_exhaustive_position_zero(self):
        # 16 SCIDs enumerating every value at position 0, fixed elsewhere
        scids = [bytes([v << 4 | 0x01]) + b"\x23" * 3 for v in range(16)]
        m = nybble_frequencies(scids)
        assert m.total == 16
        assert m.positions == 8
        assert list(m.counts[0]) == [1] * 16
        assert m.counts[1][1] == 16  # low nybble of octet 0 always 0x1

    def test_facebook_population_concentrates_version_bits(self):
        rng = random.Random(3)
        scids = [
            bytes(
                encode_facebook_scid(
                    FacebookScidFields(1, rng.randint(0, 65535), rng.randint(0, 255), rng.randint(0, 1)),
                    random_bits_seed=rng.getrandbits(32),
                )
            )
            for _ in range(10000)
        ]
        m = nybble_frequencies(scids)
        # version bits "01" pin the high half of position 0 to nybbles 4-7
        assert m.counts[0][:4].sum() == 0
        assert m.counts[0][8:].sum() == 0
        assert m.counts[0][4:8].sum() == 10000

    def test_empty_population(self):
        m = nybble_frequencies([])
        assert m.total == 0
        assert m.positions == 0

    def test_mixed_lengths_rejected(self):
        with pytest.raises(MixedLengths):
            nybble_frequencies([b"\x01" * 8, b"\x02" * 20])

    def test_row_sums_equal_total(self):
        rng = np.random.default_rng(5)
        scids = [rng.bytes(8) for _ in range(777)]
        m = nybble_frequencies(scids)
        assert (m.counts.sum(axis=1) == m.total).all()

    def test_accepts_connection_ids(self):
        m = nybble_frequencies([ConnectionId(b"\xab" * 8)] * 3)
        assert m.total == 3
        assert m.counts[0][0xA] == 3

    def test_shard_merge_is_exact(self):
        rng = np.random.default_rng(44)
        scids = [rng.bytes(8) for _ in range(600)]
        whole = nybble_frequencies(scids)
        merged = nybble_frequencies(scids[:251]).merge(nybble_frequencies(scids[251:]))
        assert merged.total == whole.total
        assert (merged.counts == whole.counts).all()

    def test_merge_rejects_mixed_lengths(self):
        with pytest.raises(MixedLengths):
            nybble_frequencies([b"\x01" * 8]).merge(nybble_frequencies([b"\x01" * 20]))


class TestUniformityTest:
    def test_uniform_population_mostly_clean(self):
        rng = np.random.default_rng(2024)
        scids = [rng.bytes(8) for _ in range(100000)]
        verdicts = uniformity_test(nybble_frequencies(scids))
        assert verdicts.count(PositionVerdict.SKEWED) == 0

    def test_facebook_position_zero_flagged(self):
        rng = random.Random(8)
        scids = [
            bytes(
                encode_facebook_scid(
                    FacebookScidFields(1, rng.randint(0, 65535), rng.randint(0, 255), 0),
                    random_bits_seed=rng.getrandbits(32),
                )
            )
            for _ in range(10000)
        ]
        verdicts = uniformity_test(nybble_frequencies(scids))
        assert verdicts[0] == PositionVerdict.SKEWED

    def test_insufficient_samples(self):
        scids = [bytes(8) for _ in range(100)]
        with pytest.raises(InsufficientSamples):
            uniformity_test(nybble_frequencies(scids), min_samples=500)


class TestClassifyScheme:
    def test_uniform_random_population(self):
        rng = np.random.default_rng(31)
        scids = [rng.bytes(8) for _ in range(5000)]
        scheme = classify_scheme(scids)
        assert scheme.kind == SchemeKind.RANDOM
        assert not scheme.flagged_positions

    def test_facebook_population_structured(self):
        rng = random.Random(17)
        scids = [
            bytes(
                encode_facebook_scid(
                    FacebookScidFields(1, rng.randint(0, 65535), rng.randint(0, 3), 0),
                    random_bits_seed=rng.getrandbits(32),
                )
            )
            for _ in range(5000)
        ]
        scheme = classify_scheme(scids)
        assert scheme.kind == SchemeKind.STRUCTURED
        assert 0 in scheme.flagged_positions

    def test_echo_population_takes_precedence(self):
        rng = np.random.default_rng(12)
        dcids = [rng.bytes(8) for _ in range(2000)]
        scids = [d[:8] for d in dcids]
        scheme = classify_scheme(scids, client_dcids=dcids)
        assert scheme.kind == SchemeKind.ECHO_OF_CLIENT_DCID

    def test_echo_tolerates_small_loss(self):
        rng = np.random.default_rng(13)
        dcids = [rng.bytes(8) for _ in range(2000)]
        scids = [d[:8] for d in dcids]
        scids[0] = b"\xff" * 8  # one mismatch: 99.95% still matches
        assert classify_scheme(scids, client_dcids=dcids).kind == SchemeKind.ECHO_OF_CLIENT_DCID

    def test_non_echo_pairs_fall_through(self):
        rng = np.random.default_rng(14)
        dcids = [rng.bytes(8) for _ in range(2000)]
        scids = [rng.bytes(8) for _ in range(2000)]
        scheme = classify_scheme(scids, client_dcids=dcids)
        assert scheme.kind == SchemeKind.RANDOM


class TestCloudflareSignature:
    def test_conforming_population(self):
        rng = np.random.default_rng(9)
        scids = [b"\x01" + rng.bytes(19) for _ in range(170)]
        assert detect_cloudflare_signature(scids) is True

    def test_one_short_scid_breaks_it(self):
        rng = np.random.default_rng(10)
        scids = [b"\x01" + rng.bytes(19) for _ in range(10)] + [rng.bytes(8)]
        assert detect_cloudflare_signature(scids) is False

    def test_wrong_first_byte(self):
        scids = [b"\x02" + bytes(19)]
        assert detect_cloudflare_signature(scids) is False

    def test_monotone_under_nonconforming_additions(self):
        rng = np.random.default_rng(11)
        scids = [b"\x01" + rng.bytes(19) for _ in range(5)]
        assert detect_cloudflare_signature(scids)
        assert not detect_cloudflare_signature(scids + [b"\x01" + rng.bytes(7)])


class TestScidLengthStats:
    def test_unique_per_length(self):
        stats = scid_length_stats({"Facebook": [b"\x01" * 8, b"\x01" * 8, b"\x02" * 8]})
        assert stats == {"Facebook": {8: 2}}

    def test_mixed_lengths(self):
        stats = scid_length_stats({"Remaining": [b"\x01" * 8, b"\x02" * 20]})
        assert stats == {"Remaining": {8: 1, 20: 1}}

    def test_synthetic_facebook_population(self):
        rng = np.random.default_rng(6)
        unique = {rng.bytes(8) for _ in range(5000)}
        stats = scid_length_stats({"Facebook": list(unique)})
        assert stats["Facebook"] == {8: len(unique)}
