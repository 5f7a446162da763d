"""Exception hierarchy. Every error carries a stable machine-readable ``code``
that is also used on the HTTP surface."""

from __future__ import annotations


class LSAError(Exception):
    code = "lsa_error"

    def __init__(self, message: str = "", *, code: str | None = None):
        super().__init__(message or self.code)
        if code is not None:
            self.code = code


class InvalidClaim(LSAError, ValueError):
    code = "invalid_claim"


class EncodingOverflow(LSAError, ValueError):
    code = "encoding_overflow"


class MalformedClaim(LSAError, ValueError):
    """Raised by the decoders. ``code`` is one of ``bad_tag``, ``truncated``,
    ``trailing_bytes``, ``unknown_kind``, ``bad_utf8``, ``invalid_claim``,
    ``non_canonical``."""

    code = "malformed_claim"


class WalletNotFound(LSAError, LookupError):
    code = "attestation_not_found"


class WalletFormatError(LSAError):
    code = "wallet_format"


class TrustStoreError(LSAError):
    code = "trust_store_format"


class EmptyAggregate(LSAError, ValueError):
    code = "empty_aggregate"


class KeyNotFound(LSAError, KeyError):
    code = "key_not_found"

    def __str__(self) -> str:
        return Exception.__str__(self)


class UnknownCall(LSAError):
    code = "unknown_call"


class InvalidParameters(LSAError):
    code = "invalid_parameters"


class EpochRejected(LSAError):
    code = "epoch_rejected"

    def __init__(self, message: str = "", *, local_epoch: int):
        super().__init__(message)
        self.local_epoch = local_epoch


class ClaimMismatch(LSAError):
    code = "claim_mismatch"


class InvalidNodeSignature(LSAError):
    code = "invalid_node_signature"

    def __init__(self, message: str = "", *, node_id: str):
        super().__init__(message or f"invalid signature from {node_id}")
        self.node_id = node_id


class InsufficientResponses(LSAError):
    code = "insufficient_responses"

    def __init__(self, message: str = "", *, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EpochDesync(InsufficientResponses):
    code = "epoch_desync"


class ConfigError(LSAError):
    code = "config_error"
