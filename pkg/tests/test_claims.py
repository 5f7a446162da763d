from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsa.claims import (
    BLOCK_HASH_QUERY,
    AggregateAttestation,
    ClaimKind,
    ClaimStatement,
    Query,
    decode_attestation,
    decode_claim,
    encode_attestation,
    encode_claim,
    epoch_at,
)
from lsa.errors import EncodingOverflow, InvalidClaim, MalformedClaim
from oracles import ref_encode_claim

ZERO_BLOCK = ClaimStatement(ClaimKind.BLOCK_HASH, BLOCK_HASH_QUERY, bytes(32), 0, 0)


def call_claim(epoch=5, data=b"\x01", params=(("credential_id", b"cred-1"),), block=7):
    return ClaimStatement(ClaimKind.CONTRACT_CALL, Query("revocation_status", params), data, block, epoch)


names = st.text(min_size=0, max_size=12)


@st.composite
def claims(draw):
    if draw(st.booleans()):
        return ClaimStatement(
            ClaimKind.BLOCK_HASH,
            BLOCK_HASH_QUERY,
            draw(st.binary(min_size=32, max_size=32)),
            draw(st.integers(0, 2**64 - 1)),
            draw(st.integers(0, 2**64 - 1)),
        )
    param_names = draw(st.lists(names, unique=True, max_size=5))
    params = tuple((n, draw(st.binary(max_size=20))) for n in param_names)
    return ClaimStatement(
        ClaimKind.CONTRACT_CALL,
        Query(draw(st.text(max_size=20).filter(lambda s: len(s.encode()) <= 256)), params),
        draw(st.binary(max_size=40)),
        draw(st.integers(0, 2**64 - 1)),
        draw(st.integers(0, 2**64 - 1)),
    )


def test_all_zero_block_hash_layout():
    raw = encode_claim(ZERO_BLOCK)
    expected = (
        bytes.fromhex("4C 53 41 2D 43 4C 41 49 4D 2D 56 31 01")
        + bytes(16)
        + bytes.fromhex("00 00 00 0A")
        + b"block_hash"
        + bytes.fromhex("00 00")
        + bytes.fromhex("00 00 00 20")
        + bytes(32)
    )
    assert raw == expected


def test_epoch_difference_lands_in_epoch_field():
    a = ref_encode_claim(2, 5, 7, "revocation_status", [("credential_id", b"cred-1")], b"\x01")
    b = ref_encode_claim(2, 6, 7, "revocation_status", [("credential_id", b"cred-1")], b"\x01")
    assert encode_claim(call_claim(epoch=5)) == a
    assert encode_claim(call_claim(epoch=6)) == b
    diff = [i for i, (x, y) in enumerate(zip(a, b)) if x != y]
    assert diff and all(13 <= i <= 20 for i in diff)


@given(claims())
def test_matches_reference_encoder(claim):
    ref = ref_encode_claim(
        int(claim.kind), claim.epoch, claim.block_number, claim.query.call_name, claim.query.parameters, claim.data
    )
    assert encode_claim(claim) == ref


@given(claims())
def test_round_trip(claim):
    assert decode_claim(encode_claim(claim)) == claim


@settings(max_examples=300)
@given(claims(), claims())
def test_injective(a, b):
    if a != b:
        assert encode_claim(a) != encode_claim(b)
    else:
        assert encode_claim(a) == encode_claim(b)


def test_parameter_order_is_significant():
    p1 = (("x", b"1"), ("y", b"2"))
    a, b = call_claim(params=p1), call_claim(params=tuple(reversed(p1)))
    assert a != b
    assert encode_claim(a) != encode_claim(b)
    assert decode_claim(encode_claim(b)).query.parameters == tuple(reversed(p1))


@pytest.mark.parametrize(
    "mutate, code",
    [
        (lambda raw: raw.replace(b"LSA-CLAIM-V1", b"LSA-CLAIM-V2"), "bad_tag"),
        (lambda raw: raw + b"\x00", "trailing_bytes"),
        (lambda raw: raw[:-1], "truncated"),
        (lambda raw: raw[:5], "truncated"),
        (lambda raw: raw[:12] + b"\x07" + raw[13:], "unknown_kind"),
        (lambda raw: raw[:12] + b"\x02" + raw[13:], None),  # block-hash body under CONTRACT_CALL is valid
    ],
)
def test_decode_rejections(mutate, code):
    raw = mutate(encode_claim(ZERO_BLOCK))
    if code is None:
        assert decode_claim(raw).kind is ClaimKind.CONTRACT_CALL
        return
    with pytest.raises(MalformedClaim) as info:
        decode_claim(raw)
    assert info.value.code == code


def test_decode_rejects_block_hash_with_short_digest():
    raw = ref_encode_claim(1, 0, 0, "block_hash", [], bytes(31))
    with pytest.raises(MalformedClaim) as info:
        decode_claim(raw)
    assert info.value.code == "invalid_claim"


def test_decode_rejects_bad_utf8_and_duplicate_names():
    raw = bytearray(ref_encode_claim(2, 0, 0, "ab", [], b""))
    raw[12 + 1 + 16 + 4] = 0xFF
    with pytest.raises(MalformedClaim) as info:
        decode_claim(bytes(raw))
    assert info.value.code == "bad_utf8"
    dup = ref_encode_claim(2, 0, 0, "get", [("k", b"1"), ("k", b"2")], b"")
    with pytest.raises(MalformedClaim):
        decode_claim(dup)


def test_overflow_errors():
    with pytest.raises(EncodingOverflow):
        encode_claim(ClaimStatement(ClaimKind.CONTRACT_CALL, Query("x" * 257), b"", 0, 0))
    with pytest.raises(EncodingOverflow):
        encode_claim(ClaimStatement(ClaimKind.CONTRACT_CALL, Query("x"), b"", 2**64, 0))
    assert len(encode_claim(ClaimStatement(ClaimKind.CONTRACT_CALL, Query("x" * 256), b"", 0, 0))) > 256


def test_type_invariants():
    with pytest.raises(InvalidClaim):
        Query("get", (("k", b"1"), ("k", b"2")))
    with pytest.raises(InvalidClaim):
        ClaimStatement(ClaimKind.BLOCK_HASH, BLOCK_HASH_QUERY, b"short", 0, 0)
    with pytest.raises(InvalidClaim):
        ClaimStatement(ClaimKind.BLOCK_HASH, Query("get"), bytes(32), 0, 0)
    with pytest.raises(InvalidClaim):
        ClaimStatement(ClaimKind.CONTRACT_CALL, Query("get"), b"", -1, 0)
    with pytest.raises(InvalidClaim):
        Query("get", (("k", 5),))


@given(claims())
def test_json_round_trip(claim):
    assert ClaimStatement.from_json(claim.to_json()) == claim


def test_attestation_binary_round_trip(keys):
    claim = call_claim()
    att = AggregateAttestation(claim, b"\x11" * 96, tuple(k.public_key for k in keys[:3]), ("node-9",))
    raw = encode_attestation(att)
    assert decode_attestation(raw) == att
    with pytest.raises(MalformedClaim):
        decode_attestation(raw + b"\x00")


def test_aggregate_invariants(keys):
    with pytest.raises(InvalidClaim):
        AggregateAttestation(call_claim(), b"\x00" * 96, ())
    with pytest.raises(InvalidClaim):
        AggregateAttestation(call_claim(), b"\x00" * 96, (keys[0].public_key, keys[0].public_key))


@pytest.mark.parametrize("seconds, duration, epoch", [(0, 60, 0), (59.9, 60, 0), (60, 60, 1), (1_700_000_000, 60, 28_333_333)])
def test_epoch_at(seconds, duration, epoch):
    assert epoch_at(seconds, duration) == epoch
