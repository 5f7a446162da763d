"""Offline verification of aggregate attestations.

Nothing in this module touches the network or the filesystem; every input is
an argument. All checks run every time so the report explains every failure,
not just the first one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

from lsa import mcrypto
from lsa.claims import BLOCK_HASH_CALL, AggregateAttestation, ClaimKind, TrustStore, encode_claim
from lsa.errors import LSAError
from lsa.ledger import MerkleProof, verify_proof

# (free parameter values by name, attested data) -> accept?
PolicyCheck = Callable[[Mapping[str, bytes], bytes], bool]

CHECK_ORDER = ("signature", "threshold", "freshness", "call_match", "parameter_match", "policy")


def accept_any(free_parameters: Mapping[str, bytes], data: bytes) -> bool:
    return True


@dataclass(frozen=True)
class VerifierRequest:
    expected_call: str
    fixed_parameters: tuple[tuple[str, bytes], ...] = ()
    free_parameter_names: tuple[str, ...] = ()
    max_epoch_age: int = 1
    policy_check: PolicyCheck = accept_any
    policy_name: str = "any"

    def __post_init__(self) -> None:
        object.__setattr__(self, "fixed_parameters", tuple((n, bytes(v)) for n, v in self.fixed_parameters))
        object.__setattr__(self, "free_parameter_names", tuple(self.free_parameter_names))
        fixed = {n for n, _ in self.fixed_parameters}
        if fixed & set(self.free_parameter_names):
            raise ValueError("fixed and free parameter names must be disjoint")
        if self.max_epoch_age < 0:
            raise ValueError("max_epoch_age must be >= 0")


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple[Check, ...]
    matched_trusted_signers: int
    block_number: int | None = None
    epoch: int | None = None
    data: bytes | None = field(default=None, repr=False)

    @property
    def accepted(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        return next(c for c in self.checks if c.name == name)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_json(self) -> dict:
        return {
            "accepted": self.accepted,
            "matched_trusted_signers": self.matched_trusted_signers,
            "block_number": self.block_number,
            "epoch": self.epoch,
            "data": self.data.hex() if self.data is not None else None,
            "checks": [c.to_json() for c in self.checks],
        }

    def render(self) -> str:
        lines = [f"{'ACCEPTED' if self.accepted else 'REJECTED'}  trusted signers: {self.matched_trusted_signers}"]
        if self.block_number is not None:
            lines.append(f"block {self.block_number}, epoch {self.epoch}")
        for c in self.checks:
            lines.append(f"  [{'pass' if c.passed else 'FAIL'}] {c.name:<16} {c.detail}")
        return "\n".join(lines)


def verify_attestation(
    attestation: AggregateAttestation,
    request: VerifierRequest,
    trust_store: TrustStore,
    current_epoch: int,
) -> VerificationReport:
    claim = attestation.claim
    checks: list[Check] = []

    try:
        message = encode_claim(claim)
    except LSAError as exc:
        message = None
        checks.append(Check("signature", False, f"claim cannot be encoded: {exc}"))
    if message is not None:
        ok = mcrypto.verify_aggregate(attestation.signer_public_keys, message, attestation.aggregate_signature)
        checks.append(Check("signature", ok, f"aggregate over {len(attestation.signer_public_keys)} keys"))

    trusted = trust_store.count_trusted(attestation.signer_public_keys)
    checks.append(Check("threshold", trusted >= trust_store.threshold_k, f"{trusted} trusted signers, need {trust_store.threshold_k}"))

    age = current_epoch - claim.epoch
    checks.append(Check("freshness", age <= request.max_epoch_age, f"age {age} epochs, max {request.max_epoch_age}"))

    call_ok = claim.query.call_name == request.expected_call
    checks.append(Check("call_match", call_ok, f"{claim.query.call_name!r} vs expected {request.expected_call!r}"))

    params = dict(claim.query.parameters)
    problems = []
    for name, value in request.fixed_parameters:
        if name not in params:
            problems.append(f"missing {name}")
        elif params[name] != value:
            problems.append(f"{name} has the wrong value")
    allowed = {n for n, _ in request.fixed_parameters} | set(request.free_parameter_names)
    problems.extend(f"unexpected {name}" for name in params if name not in allowed)
    checks.append(Check("parameter_match", not problems, "; ".join(problems) or "ok"))

    free = {n: params[n] for n in request.free_parameter_names if n in params}
    try:
        policy_ok = bool(request.policy_check(free, claim.data))
        detail = request.policy_name
    except Exception as exc:  # a faulty policy must not crash verification
        policy_ok, detail = False, f"{request.policy_name} raised {exc!r}"
    checks.append(Check("policy", policy_ok, detail))

    return VerificationReport(tuple(checks), trusted, claim.block_number, claim.epoch, claim.data)


def verify_raw_data(
    value: bytes,
    proof: MerkleProof,
    root_attestation: AggregateAttestation,
    request: VerifierRequest,
    trust_store: TrustStore,
    current_epoch: int,
) -> VerificationReport:
    """Authenticate ``value`` through a merkle proof anchored at an attested block root."""
    report = verify_attestation(root_attestation, request, trust_store, current_epoch)
    claim = root_attestation.claim
    if claim.kind is not ClaimKind.BLOCK_HASH:
        merkle = Check("merkle_proof", False, "root attestation is not a block hash claim")
    elif proof.value != value:
        merkle = Check("merkle_proof", False, "proof is for a different value")
    elif not verify_proof(proof, claim.data):
        merkle = Check("merkle_proof", False, "proof does not reach the attested root")
    else:
        merkle = Check("merkle_proof", True, f"key {proof.key.hex()} at block {claim.block_number}")
    return VerificationReport(report.checks + (merkle,), report.matched_trusted_signers, report.block_number, report.epoch, value)


def block_hash_request(max_epoch_age: int = 1) -> VerifierRequest:
    return VerifierRequest(BLOCK_HASH_CALL, max_epoch_age=max_epoch_age)


# -- named policies for file/CLI driven verification ----------------------------


def named_policy(spec: str) -> PolicyCheck:
    """``any``, ``data_is_zero_byte``, ``data_equals:<hex>``, ``data_nonempty``."""
    if spec == "any":
        return accept_any
    if spec == "data_is_zero_byte":
        return lambda free, data: data == b"\x00"
    if spec == "data_nonempty":
        return lambda free, data: len(data) > 0
    if spec.startswith("data_equals:"):
        expected = bytes.fromhex(spec.split(":", 1)[1])
        return lambda free, data: data == expected
    raise ValueError(f"unknown policy {spec!r}")


def request_from_json(doc: dict) -> VerifierRequest:
    policy = doc.get("policy", "any")
    return VerifierRequest(
        expected_call=doc["call"],
        fixed_parameters=tuple((n, bytes.fromhex(v)) for n, v in doc.get("fixed_parameters", [])),
        free_parameter_names=tuple(doc.get("free_parameters", [])),
        max_epoch_age=int(doc.get("max_epoch_age", 1)),
        policy_check=named_policy(policy),
        policy_name=policy,
    )

