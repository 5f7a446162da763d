"""Ledger state attestations: signed, aggregatable claims about a replicated
ledger that a verifier can check without any network access."""

from lsa.claims import (
    AggregateAttestation,
    ClaimKind,
    ClaimStatement,
    NodeAttestation,
    Query,
    TrustedNode,
    TrustStore,
    decode_attestation,
    decode_claim,
    encode_attestation,
    encode_claim,
    epoch_at,
)
from lsa.errors import LSAError

__all__ = [
    "AggregateAttestation",
    "ClaimKind",
    "ClaimStatement",
    "LSAError",
    "NodeAttestation",
    "Query",
    "TrustStore",
    "TrustedNode",
    "decode_attestation",
    "decode_claim",
    "encode_attestation",
    "encode_claim",
    "epoch_at",
]
