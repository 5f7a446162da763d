"""Claim and attestation data model plus the canonical byte encodings.

Signatures are always computed over :func:`encode_claim` output, never over
JSON. The encoding is length-prefixed and domain-tagged::

    "LSA-CLAIM-V1" | kind:u8 | epoch:u64 | block_number:u64
    | varbytes(call_name) | param_count:u16
    | (varbytes(name) | varbytes(value))*  | varbytes(data)

where ``varbytes(x) = len(x):u32 | x`` and all integers are big-endian.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from lsa.errors import EncodingOverflow, InvalidClaim, MalformedClaim, TrustStoreError

CLAIM_TAG = b"LSA-CLAIM-V1"
ATTESTATION_TAG = b"LSA-ATTEST-V1"

DIGEST_SIZE = 32
PUBLIC_KEY_SIZE = 48
SIGNATURE_SIZE = 96
MAX_CALL_NAME = 256
MAX_VARBYTES = 0xFFFFFFFF
MAX_PARAMS = 0xFFFF
MAX_U64 = 0xFFFFFFFFFFFFFFFF

BLOCK_HASH_CALL = "block_hash"
DEFAULT_EPOCH_DURATION = 60


class ClaimKind(enum.IntEnum):
    BLOCK_HASH = 1
    CONTRACT_CALL = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: str | int) -> ClaimKind:
        if isinstance(value, str):
            aliases = {"call": cls.CONTRACT_CALL, "contract_call": cls.CONTRACT_CALL, "block_hash": cls.BLOCK_HASH}
            try:
                return aliases[value.lower()]
            except KeyError:
                raise ValueError(f"unknown claim kind {value!r}") from None
        return cls(value)


def epoch_at(unix_seconds: float, epoch_duration: int = DEFAULT_EPOCH_DURATION) -> int:
    """Index of the fixed-width time window containing ``unix_seconds``."""
    if epoch_duration <= 0:
        raise ValueError("epoch_duration must be positive")
    return math.floor(unix_seconds / epoch_duration)


def _is_bytes(value: Any) -> bool:
    return isinstance(value, (bytes, bytearray))


@dataclass(frozen=True)
class Query:
    call_name: str
    parameters: tuple[tuple[str, bytes], ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.call_name, str):
            raise InvalidClaim("call_name must be a string")
        for name, value in self.parameters:
            if not isinstance(name, str) or not _is_bytes(value):
                raise InvalidClaim("parameters must be (str, bytes) pairs")
        params = tuple((name, bytes(value)) for name, value in self.parameters)
        names = [name for name, _ in params]
        if len(set(names)) != len(names):
            raise InvalidClaim("duplicate parameter name")
        object.__setattr__(self, "parameters", params)

    def get(self, name: str) -> bytes | None:
        for key, value in self.parameters:
            if key == name:
                return value
        return None

    def to_json(self) -> dict:
        return {"call": self.call_name, "parameters": [[n, v.hex()] for n, v in self.parameters]}

    @classmethod
    def from_json(cls, obj: dict) -> Query:
        return cls(obj["call"], tuple((n, bytes.fromhex(v)) for n, v in obj.get("parameters", [])))


BLOCK_HASH_QUERY = Query(BLOCK_HASH_CALL)


@dataclass(frozen=True)
class ClaimStatement:
    kind: ClaimKind
    query: Query
    data: bytes
    block_number: int
    epoch: int

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", ClaimKind(self.kind))
        except ValueError:
            raise InvalidClaim(f"unknown claim kind {self.kind!r}") from None
        if not isinstance(self.query, Query):
            raise InvalidClaim("query must be a Query")
        if not _is_bytes(self.data):
            raise InvalidClaim("data must be bytes")
        object.__setattr__(self, "data", bytes(self.data))
        for name in ("block_number", "epoch"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise InvalidClaim(f"{name} must be a non-negative integer")
        if self.kind is ClaimKind.BLOCK_HASH:
            if len(self.data) != DIGEST_SIZE:
                raise InvalidClaim("block hash claims carry a 32-byte digest")
            if self.query != BLOCK_HASH_QUERY:
                raise InvalidClaim("block hash claims use the parameterless 'block_hash' call")

    def to_json(self) -> dict:
        return {
            "kind": self.kind.label,
            **self.query.to_json(),
            "data": self.data.hex(),
            "block_number": self.block_number,
            "epoch": self.epoch,
        }

    @classmethod
    def from_json(cls, obj: dict) -> ClaimStatement:
        return cls(
            kind=ClaimKind.parse(obj["kind"]),
            query=Query.from_json(obj),
            data=bytes.fromhex(obj["data"]),
            block_number=obj["block_number"],
            epoch=obj["epoch"],
        )


@dataclass(frozen=True)
class NodeAttestation:
    claim: ClaimStatement
    signature: bytes
    public_key: bytes
    node_id: str

    def to_json(self) -> dict:
        return {
            "claim": self.claim.to_json(),
            "signature": self.signature.hex(),
            "public_key": self.public_key.hex(),
            "node_id": self.node_id,
        }

    @classmethod
    def from_json(cls, obj: dict) -> NodeAttestation:
        return cls(
            claim=ClaimStatement.from_json(obj["claim"]),
            signature=bytes.fromhex(obj["signature"]),
            public_key=bytes.fromhex(obj["public_key"]),
            node_id=str(obj["node_id"]),
        )


@dataclass(frozen=True)
class AggregateAttestation:
    claim: ClaimStatement
    aggregate_signature: bytes
    signer_public_keys: tuple[bytes, ...]
    dissenters: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        keys = tuple(bytes(k) for k in self.signer_public_keys)
        if not keys:
            raise InvalidClaim("an aggregate needs at least one signer")
        if len(set(keys)) != len(keys):
            raise InvalidClaim("duplicate signer public key")
        object.__setattr__(self, "signer_public_keys", keys)
        object.__setattr__(self, "aggregate_signature", bytes(self.aggregate_signature))
        object.__setattr__(self, "dissenters", tuple(self.dissenters))

    def to_json(self) -> dict:
        return {
            "claim": self.claim.to_json(),
            "aggregate_signature": self.aggregate_signature.hex(),
            "signer_public_keys": [k.hex() for k in self.signer_public_keys],
            "dissenters": list(self.dissenters),
        }

    @classmethod
    def from_json(cls, obj: dict) -> AggregateAttestation:
        return cls(
            claim=ClaimStatement.from_json(obj["claim"]),
            aggregate_signature=bytes.fromhex(obj["aggregate_signature"]),
            signer_public_keys=tuple(bytes.fromhex(k) for k in obj["signer_public_keys"]),
            dissenters=tuple(obj.get("dissenters", ())),
        )


@dataclass(frozen=True)
class TrustedNode:
    node_id: str
    public_key: bytes
    proof_of_possession: bytes | None = None


@dataclass(frozen=True)
class TrustStore:
    """Verifier-side set of trusted node keys and the minimum signer count.

    ``threshold_k`` may be 0 when built in code (accept any valid aggregate);
    :func:`lsa.wallet.load_trust_store` insists on k >= 1. A k larger than the
    node count is allowed and simply never met.
    """

    nodes: tuple[TrustedNode, ...]
    threshold_k: int
    _keys: frozenset[bytes] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        nodes = tuple(self.nodes)
        ids = [n.node_id for n in nodes]
        if len(set(ids)) != len(ids):
            raise TrustStoreError("duplicate node_id in trust store")
        if not isinstance(self.threshold_k, int) or self.threshold_k < 0:
            raise TrustStoreError("threshold_k must be a non-negative integer")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "_keys", frozenset(n.public_key for n in nodes))

    @property
    def public_keys(self) -> frozenset[bytes]:
        return self._keys

    def count_trusted(self, keys: Iterable[bytes]) -> int:
        return len(self._keys.intersection(keys))

    def restricted_to(self, node_ids: Sequence[str], threshold_k: int | None = None) -> TrustStore:
        keep = tuple(n for n in self.nodes if n.node_id in set(node_ids))
        return TrustStore(keep, self.threshold_k if threshold_k is None else threshold_k)


# -- canonical encoding ------------------------------------------------------


def _varbytes(raw: bytes, what: str) -> bytes:
    if len(raw) > MAX_VARBYTES:
        raise EncodingOverflow(f"{what} exceeds {MAX_VARBYTES} bytes")
    return struct.pack(">I", len(raw)) + raw


def encode_claim(claim: ClaimStatement) -> bytes:
    call = claim.query.call_name.encode("utf-8")
    if len(call) > MAX_CALL_NAME:
        raise EncodingOverflow(f"call_name is {len(call)} bytes, limit {MAX_CALL_NAME}")
    if len(claim.query.parameters) > MAX_PARAMS:
        raise EncodingOverflow("too many parameters")
    if claim.epoch > MAX_U64 or claim.block_number > MAX_U64:
        raise EncodingOverflow("epoch and block_number must fit in 64 bits")
    out = [
        CLAIM_TAG,
        struct.pack(">BQQ", claim.kind, claim.epoch, claim.block_number),
        _varbytes(call, "call_name"),
        struct.pack(">H", len(claim.query.parameters)),
    ]
    for name, value in claim.query.parameters:
        out.append(_varbytes(name.encode("utf-8"), "parameter name"))
        out.append(_varbytes(value, "parameter value"))
    out.append(_varbytes(claim.data, "data"))
    return b"".join(out)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = bytes(raw)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise MalformedClaim("input truncated", code="truncated")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def varbytes(self) -> bytes:
        (length,) = self.unpack(">I")
        return self.take(length)

    def text(self) -> str:
        try:
            return self.varbytes().decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedClaim("string field is not valid UTF-8", code="bad_utf8") from None

    def finish(self) -> None:
        if self.pos != len(self.raw):
            raise MalformedClaim(f"{len(self.raw) - self.pos} trailing bytes", code="trailing_bytes")


def _read_claim(reader: _Reader) -> ClaimStatement:
    if reader.take(len(CLAIM_TAG)) != CLAIM_TAG:
        raise MalformedClaim("wrong domain tag", code="bad_tag")
    kind_byte, epoch, block_number = reader.unpack(">BQQ")
    try:
        kind = ClaimKind(kind_byte)
    except ValueError:
        raise MalformedClaim(f"unknown claim kind {kind_byte}", code="unknown_kind") from None
    call_name = reader.text()
    if len(call_name.encode("utf-8")) > MAX_CALL_NAME:
        raise MalformedClaim("call_name over the length bound", code="non_canonical")
    (count,) = reader.unpack(">H")
    params = []
    for _ in range(count):
        name = reader.text()
        params.append((name, reader.varbytes()))
    data = reader.varbytes()
    try:
        return ClaimStatement(kind, Query(call_name, tuple(params)), data, block_number, epoch)
    except InvalidClaim as exc:
        raise MalformedClaim(str(exc), code="invalid_claim") from None


def decode_claim(raw: bytes) -> ClaimStatement:
    """Inverse of :func:`encode_claim`; rejects anything it could not have produced."""
    reader = _Reader(raw)
    claim = _read_claim(reader)
    reader.finish()
    return claim


def encode_attestation(attestation: AggregateAttestation) -> bytes:
    """Compact binary form used for the offline showing channel.

    ``tag | varbytes(claim) | signature[96] | n:u16 | keys[48*n] | m:u16 | varbytes(dissenter)*m``
    """
    keys = attestation.signer_public_keys
    if any(len(k) != PUBLIC_KEY_SIZE for k in keys) or len(attestation.aggregate_signature) != SIGNATURE_SIZE:
        raise EncodingOverflow("public keys must be 48 bytes and the signature 96 bytes")
    if len(keys) > MAX_PARAMS or len(attestation.dissenters) > MAX_PARAMS:
        raise EncodingOverflow("too many signers or dissenters")
    parts = [
        ATTESTATION_TAG,
        _varbytes(encode_claim(attestation.claim), "claim"),
        attestation.aggregate_signature,
        struct.pack(">H", len(keys)),
        *keys,
        struct.pack(">H", len(attestation.dissenters)),
    ]
    parts.extend(_varbytes(d.encode("utf-8"), "dissenter") for d in attestation.dissenters)
    return b"".join(parts)


def decode_attestation(raw: bytes) -> AggregateAttestation:
    reader = _Reader(raw)
    if reader.take(len(ATTESTATION_TAG)) != ATTESTATION_TAG:
        raise MalformedClaim("wrong attestation tag", code="bad_tag")
    claim = decode_claim(reader.varbytes())
    signature = reader.take(SIGNATURE_SIZE)
    (n,) = reader.unpack(">H")
    keys = tuple(reader.take(PUBLIC_KEY_SIZE) for _ in range(n))
    (m,) = reader.unpack(">H")
    dissenters = tuple(reader.text() for _ in range(m))
    reader.finish()
    try:
        return AggregateAttestation(claim, signature, keys, dissenters)
    except InvalidClaim as exc:
        raise MalformedClaim(str(exc), code="invalid_claim") from None
