"""BLS multi-signatures over BLS12-381, proof-of-possession ciphersuite.

Public keys live in G1 (48-byte compressed), signatures in G2 (96-byte
compressed). Everything crossing this module's boundary is plain ``bytes``.
Curve arithmetic and pairings come from ``blspy``; this module pins the
ciphersuite and turns every malformed input into ``False`` instead of an
exception on the verification side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from blspy import G1Element, G2Element, PopSchemeMPL, PrivateKey

from lsa.claims import PUBLIC_KEY_SIZE, SIGNATURE_SIZE
from lsa.errors import EmptyAggregate

SECRET_KEY_SIZE = 32
CIPHERSUITE = b"BLS_SIG_BLS12381G2_XMD:SHA-256_SSWU_RO_POP_"
POP_CIPHERSUITE = b"BLS_POP_BLS12381G2_XMD:SHA-256_SSWU_RO_POP_"


@dataclass(frozen=True)
class KeyPair:
    secret_key: bytes
    public_key: bytes
    proof_of_possession: bytes

    def __repr__(self) -> str:
        return f"KeyPair(public_key={self.public_key.hex()[:16]}...)"


def keygen(seed: bytes) -> KeyPair:
    """Deterministic key generation (IETF KeyGen, HKDF-based).

    KeyGen re-salts internally until the scalar is non-zero, so a zero key is
    never returned.
    """
    if len(seed) < 32:
        raise ValueError("seed must be at least 32 bytes")
    sk = PopSchemeMPL.key_gen(bytes(seed))
    return KeyPair(bytes(sk), bytes(sk.get_g1()), bytes(PopSchemeMPL.pop_prove(sk)))


def _secret(secret_key: bytes) -> PrivateKey:
    if len(secret_key) != SECRET_KEY_SIZE:
        raise ValueError("secret key must be 32 bytes")
    return PrivateKey.from_bytes(bytes(secret_key))


def public_key_of(secret_key: bytes) -> bytes:
    return bytes(_secret(secret_key).get_g1())


def sign(secret_key: bytes, message: bytes) -> bytes:
    if not message:
        raise ValueError("refusing to sign an empty message")
    return bytes(PopSchemeMPL.sign(_secret(secret_key), bytes(message)))


def _g1(raw: bytes) -> G1Element | None:
    if len(raw) != PUBLIC_KEY_SIZE:
        return None
    try:
        point = G1Element.from_bytes(bytes(raw))
    except (ValueError, RuntimeError):
        return None
    # The identity would let anyone "sign" for free.
    if point == G1Element():
        return None
    return point


def _g2(raw: bytes) -> G2Element | None:
    if len(raw) != SIGNATURE_SIZE:
        return None
    try:
        return G2Element.from_bytes(bytes(raw))
    except (ValueError, RuntimeError):
        return None


def is_valid_public_key(public_key: bytes) -> bool:
    return _g1(public_key) is not None


def verify_single(public_key: bytes, message: bytes, signature: bytes) -> bool:
    pk, sig = _g1(public_key), _g2(signature)
    if pk is None or sig is None:
        return False
    return bool(PopSchemeMPL.verify(pk, bytes(message), sig))


def aggregate_signatures(signatures: Sequence[bytes]) -> bytes:
    """Group sum of the signatures; raises ``ValueError`` on a bad encoding."""
    if not signatures:
        raise EmptyAggregate("cannot aggregate an empty list of signatures")
    points = []
    for raw in signatures:
        point = _g2(raw)
        if point is None:
            raise ValueError("not a valid G2 signature encoding")
        points.append(point)
    return bytes(PopSchemeMPL.aggregate(points))


def verify_aggregate(public_keys: Iterable[bytes], message: bytes, aggregate: bytes) -> bool:
    """Same-message aggregate verification.

    Keys must already have passed :func:`verify_possession`; that is what makes
    plain key aggregation safe against rogue keys.
    """
    raw_keys = [bytes(k) for k in public_keys]
    if not raw_keys or len(set(raw_keys)) != len(raw_keys):
        return False
    keys = [_g1(k) for k in raw_keys]
    sig = _g2(aggregate)
    if sig is None or any(k is None for k in keys):
        return False
    return bool(PopSchemeMPL.fast_aggregate_verify(keys, bytes(message), sig))


def prove_possession(secret_key: bytes) -> bytes:
    return bytes(PopSchemeMPL.pop_prove(_secret(secret_key)))


def verify_possession(public_key: bytes, proof: bytes) -> bool:
    pk, sig = _g1(public_key), _g2(proof)
    if pk is None or sig is None:
        return False
    return bool(PopSchemeMPL.pop_verify(pk, sig))
