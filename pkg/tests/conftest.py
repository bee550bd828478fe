"""Shared builders for synthetic datagrams, records, and captures."""

import pytest

from quicscope.wire import Datagram, LongHeader, PacketType, encode_long_header


def make_response(
    ts: float,
    src: str = "198.51.100.1",
    dst: str = "172.16.5.5",
    dst_port: int = 50000,
    scid: bytes = b"\xbb" * 8,
    dcid: bytes = b"\xaa" * 8,
    version: int = 1,
    types: tuple[PacketType, ...] = (PacketType.INITIAL,),
    pad_to: int = 0,
    payload: bytes = b"\x11" * 40,
) -> Datagram:
    """Server->telescope datagram holding one or more coalesced packets."""
    body = b"".join(
        encode_long_header(LongHeader.build(t, version, dcid, scid, payload=payload))
        for t in types
    )
    if pad_to and len(body) < pad_to:
        body += b"\x00" * (pad_to - len(body))
    return Datagram(ts, src, dst, 443, dst_port, body)


def make_request(
    ts: float,
    src: str = "172.16.5.5",
    dst: str = "198.51.100.1",
    src_port: int = 50000,
    scid: bytes = b"\xcc" * 8,
    dcid: bytes = b"\xdd" * 8,
    version: int = 1,
) -> Datagram:
    body = encode_long_header(
        LongHeader.build(PacketType.INITIAL, version, dcid, scid, payload=b"\x22" * 30)
    )
    return Datagram(ts, src, dst, src_port, 443, body)


@pytest.fixture
def response_factory():
    return make_response


@pytest.fixture
def request_factory():
    return make_request
