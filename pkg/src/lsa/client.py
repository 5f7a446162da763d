"""User-side HTTP client for a standalone gateway."""

from __future__ import annotations

import httpx

from lsa.claims import AggregateAttestation, ClaimKind, Query
from lsa.errors import InsufficientResponses, KeyNotFound, LSAError
from lsa.ledger import MerkleProof


class GatewayUnavailable(LSAError):
    code = "gateway_unavailable"


class GatewayClient:
    def __init__(self, base_url: str, timeout: float = 10.0, transport: httpx.BaseTransport | None = None):
        self.base_url = base_url.rstrip("/")
        self._http = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> GatewayClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _send(self, method: str, path: str, **kw) -> dict:
        try:
            resp = self._http.request(method, path, **kw)
        except httpx.HTTPError as exc:
            raise GatewayUnavailable(f"gateway {self.base_url} unreachable: {exc}") from exc
        try:
            body = resp.json()
        except ValueError:
            raise GatewayUnavailable(f"gateway answered HTTP {resp.status_code} without JSON") from None
        if resp.status_code == 503:
            raise InsufficientResponses(body.get("detail", "insufficient responses"), diagnostics=body.get("diagnostics"))
        if resp.status_code != 200:
            if body.get("error") == "key_not_found":
                raise KeyNotFound(body.get("detail", ""))
            raise LSAError(body.get("detail", f"HTTP {resp.status_code}"), code=body.get("error", "http_error"))
        return body

    def aggregate(self, query: Query, kind: ClaimKind) -> tuple[AggregateAttestation, dict]:
        if kind is ClaimKind.BLOCK_HASH:
            body = self._send("POST", "/lsa/v1/aggregate/block_hash", json={})
        else:
            body = self._send("POST", "/lsa/v1/aggregate/call", json=query.to_json())
        return AggregateAttestation.from_json(body), body.get("diagnostics", {})

    def raw(self, key: bytes) -> tuple[bytes, MerkleProof, int]:
        body = self._send("GET", f"/lsa/v1/raw/{key.hex()}")
        return bytes.fromhex(body["value"]), MerkleProof.from_json(body["proof"]), int(body["block_number"])
