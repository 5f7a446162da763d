"""Scatter-gather gateway: fan a query out to every registered node, keep the
largest group of identical, correctly signed claims and aggregate it.

The gateway is untrusted from the verifier's point of view; it only saves the
user a round of work. It can run as its own HTTP service
(:func:`create_gateway_app`) or embedded in a client via :meth:`Gateway.attest`.
"""

from __future__ import annotations

import asyncio
import json
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from lsa import mcrypto
from lsa.claims import (
    BLOCK_HASH_QUERY,
    DEFAULT_EPOCH_DURATION,
    AggregateAttestation,
    ClaimKind,
    NodeAttestation,
    Query,
    encode_claim,
    epoch_at,
)
from lsa.errors import (
    ClaimMismatch,
    ConfigError,
    EpochDesync,
    InsufficientResponses,
    InvalidNodeSignature,
    InvalidParameters,
    KeyNotFound,
    LSAError,
)
from lsa.node import error_response, parse_query_body

log = logging.getLogger(__name__)

# Per-node outcome labels.
ATTESTED = "attested"
DISSENT = "dissent"
INVALID_SIGNATURE = "invalid_signature"
EPOCH_REJECTED = "epoch_rejected"
TIMEOUT = "timeout"
UNREACHABLE = "unreachable"
ERROR = "error"


@dataclass(frozen=True)
class RegisteredNode:
    node_id: str
    base_url: str
    public_key: bytes
    proof_of_possession: bytes | None = None


@dataclass(frozen=True)
class GatewayPolicy:
    per_node_timeout_ms: int = 2000
    min_responses: int | None = None  # None: ceil(2n/3)

    def quorum(self, node_count: int) -> int:
        if self.min_responses is None:
            return math.ceil(2 * node_count / 3)
        return self.min_responses


@dataclass(frozen=True)
class NodeRegistry:
    nodes: tuple[RegisteredNode, ...]

    def __post_init__(self) -> None:
        nodes = tuple(self.nodes)
        if not nodes:
            raise ConfigError("node registry is empty")
        if len({n.node_id for n in nodes}) != len(nodes):
            raise ConfigError("duplicate node_id in registry")
        if len({n.public_key for n in nodes}) != len(nodes):
            raise ConfigError("duplicate public key in registry")
        for n in nodes:
            if n.proof_of_possession is not None and not mcrypto.verify_possession(n.public_key, n.proof_of_possession):
                raise ConfigError(f"{n.node_id}: proof of possession does not verify")
        object.__setattr__(self, "nodes", nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    def get(self, node_id: str) -> RegisteredNode | None:
        return next((n for n in self.nodes if n.node_id == node_id), None)


@dataclass(frozen=True)
class GatewayConfig:
    registry: NodeRegistry
    policy: GatewayPolicy = GatewayPolicy()
    epoch_duration: int = DEFAULT_EPOCH_DURATION

    def to_json(self) -> dict:
        nodes = []
        for n in self.registry.nodes:
            entry = {"node_id": n.node_id, "base_url": n.base_url, "public_key": n.public_key.hex()}
            if n.proof_of_possession is not None:
                entry["proof_of_possession"] = n.proof_of_possession.hex()
            nodes.append(entry)
        policy = {"per_node_timeout_ms": self.policy.per_node_timeout_ms}
        if self.policy.min_responses is not None:
            policy["min_responses"] = self.policy.min_responses
        return {"nodes": nodes, "policy": policy, "epoch_duration": self.epoch_duration}

    @classmethod
    def from_json(cls, doc: dict) -> GatewayConfig:
        try:
            registry = NodeRegistry(
                tuple(
                    RegisteredNode(
                        node_id=str(n["node_id"]),
                        base_url=str(n["base_url"]),
                        public_key=bytes.fromhex(n["public_key"]),
                        proof_of_possession=bytes.fromhex(n["proof_of_possession"]) if n.get("proof_of_possession") else None,
                    )
                    for n in doc["nodes"]
                )
            )
            raw_policy = doc.get("policy", {})
            policy = GatewayPolicy(
                per_node_timeout_ms=int(raw_policy.get("per_node_timeout_ms", 2000)),
                min_responses=raw_policy.get("min_responses"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad registry config: {exc}") from exc
        quorum = policy.quorum(len(registry))
        if not 1 <= quorum <= len(registry):
            raise ConfigError(f"min_responses={quorum} must be in 1..{len(registry)}")
        return cls(registry, policy, int(doc.get("epoch_duration", DEFAULT_EPOCH_DURATION)))

    @classmethod
    def load(cls, path: str | Path) -> GatewayConfig:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read registry {path}: {exc}") from exc
        return cls.from_json(doc)


@dataclass(frozen=True)
class NodeOutcome:
    node_id: str
    status: str
    detail: str = ""
    local_epoch: int | None = None

    def to_json(self) -> dict:
        out = {"node_id": self.node_id, "status": self.status}
        if self.detail:
            out["detail"] = self.detail
        if self.local_epoch is not None:
            out["local_epoch"] = self.local_epoch
        return out


@dataclass
class FanOutResult:
    epoch: int
    outcomes: dict[str, NodeOutcome]
    attestation: AggregateAttestation | None = None
    attestations: dict[str, NodeAttestation] = field(default_factory=dict)

    def nodes_with(self, *statuses: str) -> list[str]:
        return sorted(n for n, o in self.outcomes.items() if o.status in statuses)

    def diagnostics(self) -> dict:
        return {
            "epoch": self.epoch,
            "reachable": self.nodes_with(ATTESTED, DISSENT, INVALID_SIGNATURE, EPOCH_REJECTED, ERROR),
            "unreachable": self.nodes_with(TIMEOUT, UNREACHABLE),
            "nodes": [self.outcomes[n].to_json() for n in sorted(self.outcomes)],
        }


def aggregate_node_attestations(
    attestations: Sequence[NodeAttestation], dissenters: Sequence[str] = ()
) -> AggregateAttestation:
    """Fold node attestations over one claim into a single aggregate.

    Signer keys are ordered by ascending node_id so the output does not depend
    on arrival order.
    """
    if not attestations:
        raise InsufficientResponses("nothing to aggregate")
    first = encode_claim(attestations[0].claim)
    for att in attestations:
        if encode_claim(att.claim) != first:
            raise ClaimMismatch(f"{att.node_id} attested a different claim")
    for att in attestations:
        if not mcrypto.verify_single(att.public_key, first, att.signature):
            raise InvalidNodeSignature(node_id=att.node_id)
    ordered = sorted(attestations, key=lambda a: a.node_id)
    return AggregateAttestation(
        claim=attestations[0].claim,
        aggregate_signature=mcrypto.aggregate_signatures([a.signature for a in ordered]),
        signer_public_keys=tuple(a.public_key for a in ordered),
        dissenters=tuple(sorted(dissenters)),
    )


def pick_group(groups: Mapping[bytes, Sequence[NodeAttestation]]) -> bytes:
    """Largest group wins; ties go to the group holding the smallest node_id."""
    return min(groups, key=lambda c: (-len(groups[c]), min(a.node_id for a in groups[c])))


class Gateway:
    def __init__(
        self,
        config: GatewayConfig,
        *,
        clock: Callable[[], float] = time.time,
        transports: Mapping[str, httpx.AsyncBaseTransport] | None = None,
    ):
        self.config = config
        self.clock = clock
        # node_id -> transport override; in-process topologies route through ASGI here.
        self.transports = dict(transports or {})

    @property
    def registry(self) -> NodeRegistry:
        return self.config.registry

    def current_epoch(self) -> int:
        return epoch_at(self.clock(), self.config.epoch_duration)

    def _client(self, node: RegisteredNode) -> httpx.AsyncClient:
        return httpx.AsyncClient(base_url=node.base_url, transport=self.transports.get(node.node_id))

    async def _ask(self, node: RegisteredNode, path: str, body: dict) -> httpx.Response:
        async with self._client(node) as client:
            return await client.post(path, json=body)

    async def _poll(self, node: RegisteredNode, path: str, body: dict, expected: tuple) -> tuple[NodeOutcome, NodeAttestation | None]:
        timeout = self.config.policy.per_node_timeout_ms / 1000
        try:
            resp = await asyncio.wait_for(self._ask(node, path, body), timeout)
        except asyncio.TimeoutError:
            return NodeOutcome(node.node_id, TIMEOUT, f"no answer within {timeout:g}s"), None
        except httpx.TransportError as exc:
            return NodeOutcome(node.node_id, UNREACHABLE, type(exc).__name__), None
        try:
            payload = resp.json()
        except ValueError:
            return NodeOutcome(node.node_id, ERROR, f"HTTP {resp.status_code}, non-JSON body"), None
        if resp.status_code != 200:
            code = payload.get("error", "") if isinstance(payload, dict) else ""
            if code == "epoch_rejected":
                return NodeOutcome(node.node_id, EPOCH_REJECTED, "", payload.get("local_epoch")), None
            return NodeOutcome(node.node_id, ERROR, f"HTTP {resp.status_code} {code}".strip()), None
        try:
            att = NodeAttestation.from_json(payload)
        except (KeyError, TypeError, ValueError) as exc:
            return NodeOutcome(node.node_id, ERROR, f"unparseable attestation: {exc}"), None
        # Trust the registry, not what the node says about itself.
        att = NodeAttestation(att.claim, att.signature, att.public_key, node.node_id)
        if att.public_key != node.public_key:
            return NodeOutcome(node.node_id, INVALID_SIGNATURE, "public key differs from registry"), None
        if not mcrypto.verify_single(node.public_key, encode_claim(att.claim), att.signature):
            return NodeOutcome(node.node_id, INVALID_SIGNATURE, "signature does not verify"), None
        if (att.claim.kind, att.claim.query, att.claim.epoch) != expected:
            return NodeOutcome(node.node_id, DISSENT, "claim does not answer the request"), att
        return NodeOutcome(node.node_id, ATTESTED), att

    async def collect(self, query: Query, kind: ClaimKind) -> FanOutResult:
        kind = ClaimKind(kind)
        epoch = self.current_epoch()
        if kind is ClaimKind.BLOCK_HASH:
            if query != BLOCK_HASH_QUERY:
                raise InvalidParameters("block hash requests take no call or parameters")
            path, body = "/lsa/v1/attest/block_hash", {"epoch": epoch}
        else:
            path, body = "/lsa/v1/attest/call", {**query.to_json(), "epoch": epoch}
        expected = (kind, query, epoch)
        polled = await asyncio.gather(*(self._poll(n, path, body, expected) for n in self.registry.nodes))
        outcomes = {o.node_id: o for o, _ in polled}
        result = FanOutResult(epoch, outcomes)

        groups: dict[bytes, list[NodeAttestation]] = defaultdict(list)
        for outcome, att in polled:
            if outcome.status == ATTESTED:
                groups[encode_claim(att.claim)].append(att)
                result.attestations[outcome.node_id] = att
        quorum = self.config.policy.quorum(len(self.registry))

        if not groups:
            answered = [o for o in outcomes.values() if o.status not in (TIMEOUT, UNREACHABLE)]
            if answered and all(o.status == EPOCH_REJECTED for o in answered):
                raise EpochDesync("every responding node rejected the gateway epoch", diagnostics=result.diagnostics())
            raise InsufficientResponses(f"no usable attestations (need {quorum})", diagnostics=result.diagnostics())

        winner = pick_group(groups)
        if len(groups[winner]) < quorum:
            raise InsufficientResponses(
                f"largest consistent group has {len(groups[winner])} signers, need {quorum}",
                diagnostics=result.diagnostics(),
            )
        for claim_bytes, members in groups.items():
            if claim_bytes != winner:
                for att in members:
                    outcomes[att.node_id] = NodeOutcome(att.node_id, DISSENT, "attested a different claim")
        dissenters = result.nodes_with(DISSENT, INVALID_SIGNATURE)
        result.attestation = aggregate_node_attestations(groups[winner], dissenters)
        log.info("aggregated %d signatures at epoch %d, dissenters=%s", len(groups[winner]), epoch, dissenters)
        return result

    async def fan_out_attest(self, query: Query, kind: ClaimKind) -> AggregateAttestation:
        return (await self.collect(query, kind)).attestation

    def attest(self, query: Query, kind: ClaimKind) -> FanOutResult:
        """Blocking wrapper for embedding the gateway in a client."""
        return asyncio.run(self.collect(query, kind))

    async def fetch_raw(self, key: bytes) -> dict:
        """Raw value plus merkle proof from the first node that has it.

        Nothing here needs to be trusted; the proof is checked against an attested root.
        """
        timeout = self.config.policy.per_node_timeout_ms / 1000
        last: Exception | None = None
        for node in self.registry.nodes:
            try:
                async with self._client(node) as client:
                    resp = await asyncio.wait_for(client.get(f"/lsa/v1/raw/{key.hex()}"), timeout)
            except (asyncio.TimeoutError, httpx.TransportError) as exc:
                last = exc
                continue
            if resp.status_code == 200:
                return {**resp.json(), "node_id": node.node_id}
            if resp.json().get("error") == "key_not_found":
                raise KeyNotFound(f"key {key.hex()} not in ledger state")
        raise InsufficientResponses(f"no node returned raw data ({last!r})")


def create_gateway_app(gateway: Gateway) -> FastAPI:
    app = FastAPI(title="lsa-gateway")

    async def _run(query: Query, kind: ClaimKind) -> JSONResponse:
        try:
            result = await gateway.collect(query, kind)
        except InsufficientResponses as exc:
            return JSONResponse({"error": exc.code, "detail": str(exc), "diagnostics": exc.diagnostics}, status_code=503)
        return JSONResponse({**result.attestation.to_json(), "diagnostics": result.diagnostics()})

    @app.exception_handler(LSAError)
    async def _lsa_error(request: Request, exc: LSAError) -> JSONResponse:
        return error_response(exc)

    @app.post("/lsa/v1/aggregate/call")
    async def aggregate_call(request: Request) -> JSONResponse:
        return await _run(parse_query_body(await request.json()), ClaimKind.CONTRACT_CALL)

    @app.post("/lsa/v1/aggregate/block_hash")
    async def aggregate_block_hash() -> JSONResponse:
        return await _run(BLOCK_HASH_QUERY, ClaimKind.BLOCK_HASH)

    @app.get("/lsa/v1/raw/{key_hex}")
    async def raw(key_hex: str) -> dict:
        try:
            key = bytes.fromhex(key_hex)
        except ValueError:
            raise InvalidParameters("key must be hex") from None
        try:
            return await gateway.fetch_raw(key)
        except InsufficientResponses as exc:
            return JSONResponse({"error": exc.code, "detail": str(exc)}, status_code=503)

    @app.get("/lsa/v1/info")
    async def info() -> dict:
        return {**gateway.config.to_json(), "epoch": gateway.current_epoch()}

    return app
