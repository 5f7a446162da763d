"""Per-node attestation service: owns a ledger replica, answers queries with
signed node attestations, and exposes the HTTP surface under ``/lsa/v1``."""

from __future__ import annotations

import asyncio
import logging
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from lsa import mcrypto
from lsa.claims import (
    BLOCK_HASH_QUERY,
    DEFAULT_EPOCH_DURATION,
    ClaimKind,
    ClaimStatement,
    NodeAttestation,
    Query,
    encode_claim,
    epoch_at,
)
from lsa.errors import EpochRejected, InvalidParameters, LSAError
from lsa.ledger import LedgerState, MerkleProof, QueryRegistry, apply_block, default_registry, generate_proof

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodeConfig:
    node_id: str
    key_pair: mcrypto.KeyPair
    listen_address: str = "127.0.0.1:0"
    epoch_duration: int = DEFAULT_EPOCH_DURATION
    epoch_skew_tolerance: int = 1
    clock_offset: float = 0.0  # fault injection: shifts this node's clock

    def __post_init__(self) -> None:
        if self.epoch_duration <= 0:
            raise ValueError("epoch_duration must be positive")
        if self.epoch_skew_tolerance < 0:
            raise ValueError("epoch_skew_tolerance must be >= 0")


class NodeService:
    def __init__(
        self,
        config: NodeConfig,
        state: LedgerState | None = None,
        *,
        registry: QueryRegistry | None = None,
        clock: Callable[[], float] = time.time,
        data_hook: Callable[[bytes], bytes] | None = None,
    ):
        self.config = config
        self.registry = registry or default_registry()
        self.clock = clock
        # Test-only tampering of the attested data, used to simulate a byzantine node.
        self.data_hook = data_hook
        self._state = state or LedgerState.genesis()
        self._swap_lock = threading.Lock()
        self._block_cache: dict[tuple[int, int], NodeAttestation] = {}

    @property
    def node_id(self) -> str:
        return self.config.node_id

    @property
    def public_key(self) -> bytes:
        return self.config.key_pair.public_key

    @property
    def state(self) -> LedgerState:
        return self._state

    def apply_block(self, writes: Iterable[tuple[bytes, bytes]]) -> LedgerState:
        with self._swap_lock:
            self._state = apply_block(self._state, writes)
            return self._state

    def local_epoch(self) -> int:
        return epoch_at(self.clock() + self.config.clock_offset, self.config.epoch_duration)

    def _check_epoch(self, requested_epoch: int) -> None:
        if not isinstance(requested_epoch, int) or isinstance(requested_epoch, bool) or requested_epoch < 0:
            raise InvalidParameters("epoch must be a non-negative integer")
        local = self.local_epoch()
        if abs(requested_epoch - local) > self.config.epoch_skew_tolerance:
            raise EpochRejected(
                f"requested epoch {requested_epoch} is outside ±{self.config.epoch_skew_tolerance} of {local}",
                local_epoch=local,
            )

    def _issue(self, claim: ClaimStatement) -> NodeAttestation:
        signature = mcrypto.sign(self.config.key_pair.secret_key, encode_claim(claim))
        return NodeAttestation(claim, signature, self.public_key, self.node_id)

    def _tamper(self, data: bytes) -> bytes:
        return self.data_hook(data) if self.data_hook else data

    def attest_call(self, query: Query, requested_epoch: int) -> NodeAttestation:
        self._check_epoch(requested_epoch)
        snapshot = self._state
        data = self._tamper(self.registry.execute(snapshot, query))
        claim = ClaimStatement(ClaimKind.CONTRACT_CALL, query, data, snapshot.block_number, requested_epoch)
        return self._issue(claim)

    def attest_block_hash(self, requested_epoch: int) -> NodeAttestation:
        self._check_epoch(requested_epoch)
        snapshot = self._state
        cache_key = (snapshot.block_number, requested_epoch)
        cached = self._block_cache.get(cache_key)
        if cached is not None:
            return cached
        root = self._tamper(snapshot.block_root)
        claim = ClaimStatement(ClaimKind.BLOCK_HASH, BLOCK_HASH_QUERY, root, snapshot.block_number, requested_epoch)
        attestation = self._issue(claim)
        # Only the current block can be requested again; drop older entries.
        self._block_cache = {k: v for k, v in self._block_cache.items() if k[0] == snapshot.block_number}
        self._block_cache[cache_key] = attestation
        return attestation

    def get_raw(self, key: bytes) -> tuple[bytes, MerkleProof, int]:
        snapshot = self._state
        proof = generate_proof(snapshot.store, key)
        return proof.value, proof, snapshot.block_number

    def info(self) -> dict:
        return {
            "node_id": self.node_id,
            "public_key": self.public_key.hex(),
            "proof_of_possession": self.config.key_pair.proof_of_possession.hex(),
            "epoch_duration": self.config.epoch_duration,
            "block_number": self._state.block_number,
        }


def error_response(exc: LSAError, status: int = 422) -> JSONResponse:
    body: dict = {"error": exc.code, "detail": str(exc)}
    if isinstance(exc, EpochRejected):
        body["local_epoch"] = exc.local_epoch
    return JSONResponse(body, status_code=status)


def parse_query_body(body: dict) -> Query:
    try:
        return Query(str(body["call"]), tuple((str(n), bytes.fromhex(v)) for n, v in body.get("parameters", [])))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidParameters(f"bad query body: {exc}") from exc


def _epoch_from(body: dict) -> int:
    epoch = body.get("epoch")
    if not isinstance(epoch, int) or isinstance(epoch, bool):
        raise InvalidParameters("body must carry an integer 'epoch'")
    return epoch


def create_node_app(service: NodeService, *, delay_ms: int = 0) -> FastAPI:
    """HTTP front for one node. ``delay_ms`` holds every response back (fault injection)."""
    app = FastAPI(title=f"lsa-node {service.node_id}")

    async def _stall() -> None:
        if delay_ms:
            await asyncio.sleep(delay_ms / 1000)

    @app.exception_handler(LSAError)
    async def _lsa_error(request: Request, exc: LSAError) -> JSONResponse:
        return error_response(exc)

    @app.post("/lsa/v1/attest/call")
    async def attest_call(request: Request) -> dict:
        await _stall()
        body = await request.json()
        return service.attest_call(parse_query_body(body), _epoch_from(body)).to_json()

    @app.post("/lsa/v1/attest/block_hash")
    async def attest_block_hash(request: Request) -> dict:
        await _stall()
        body = await request.json()
        return service.attest_block_hash(_epoch_from(body)).to_json()

    @app.get("/lsa/v1/raw/{key_hex}")
    async def raw(key_hex: str) -> dict:
        await _stall()
        try:
            key = bytes.fromhex(key_hex)
        except ValueError:
            raise InvalidParameters("key must be hex") from None
        value, proof, block_number = service.get_raw(key)
        return {"value": value.hex(), "proof": proof.to_json(), "block_number": block_number}

    @app.get("/lsa/v1/info")
    async def info() -> dict:
        return service.info()

    return app
