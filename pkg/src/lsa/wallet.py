"""JSON persistence for the user's wallet and the verifier's trust store.

Byte fields are lowercase hex without a prefix. Writes go through a temp
file and ``os.replace`` so a crash never leaves a half-written wallet.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from pathlib import Path
from typing import Callable, Mapping

from lsa import mcrypto
from lsa.claims import AggregateAttestation, Query, TrustedNode, TrustStore
from lsa.errors import TrustStoreError, WalletFormatError, WalletNotFound
from lsa.ledger import MerkleProof


def _atomic_write_json(path: Path, obj: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_wallet(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        return {"attestations": [], "proofs": []}
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise WalletFormatError(f"cannot read wallet {path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("attestations"), list):
        raise WalletFormatError(f"{path} is not a wallet file")
    doc.setdefault("proofs", [])
    return doc


def wallet_store(attestation: AggregateAttestation, path: str | os.PathLike, *, clock: Callable[[], float] = time.time) -> None:
    doc = _read_wallet(Path(path))
    entry = attestation.to_json()
    entry["stored_at"] = int(clock())
    doc["attestations"].append(entry)
    _atomic_write_json(Path(path), doc)


def wallet_entries(path: str | os.PathLike) -> list[AggregateAttestation]:
    doc = _read_wallet(Path(path))
    try:
        return [AggregateAttestation.from_json(e) for e in doc["attestations"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise WalletFormatError(f"corrupt wallet entry: {exc}") from exc


def wallet_load(query: Query, path: str | os.PathLike) -> AggregateAttestation:
    """Most recently stored attestation whose query matches exactly."""
    path = Path(path)
    if not path.exists():
        raise WalletNotFound(f"wallet {path} does not exist")
    for attestation in reversed(wallet_entries(path)):
        if attestation.claim.query == query:
            return attestation
    raise WalletNotFound(f"no attestation for {query.call_name} with the given parameters")


def wallet_find(path: str | os.PathLike, call_name: str, required: Mapping[str, bytes]) -> AggregateAttestation:
    """Most recent attestation for ``call_name`` whose parameters include ``required``.

    Used on the showing side, where the verifier fixes only some parameters.
    """
    path = Path(path)
    if not path.exists():
        raise WalletNotFound(f"wallet {path} does not exist")
    for attestation in reversed(wallet_entries(path)):
        query = attestation.claim.query
        if query.call_name == call_name and all(query.get(n) == v for n, v in required.items()):
            return attestation
    raise WalletNotFound(f"no attestation for {call_name} matching the requested parameters")


def wallet_store_proof(value: bytes, proof: MerkleProof, block_number: int, path: str | os.PathLike) -> None:
    """Keep a raw value and its merkle proof next to the block-hash attestations."""
    doc = _read_wallet(Path(path))
    doc["proofs"].append({"value": value.hex(), "proof": proof.to_json(), "block_number": block_number})
    _atomic_write_json(Path(path), doc)


def wallet_load_proof(key: bytes, block_number: int, path: str | os.PathLike) -> tuple[bytes, MerkleProof]:
    doc = _read_wallet(Path(path))
    try:
        for entry in reversed(doc["proofs"]):
            if entry["block_number"] == block_number and entry["proof"]["key"] == key.hex():
                return bytes.fromhex(entry["value"]), MerkleProof.from_json(entry["proof"])
    except (KeyError, TypeError, ValueError) as exc:
        raise WalletFormatError(f"corrupt proof entry: {exc}") from exc
    raise WalletNotFound(f"no merkle proof for key {key.hex()} at block {block_number}")


def trust_store_to_json(store: TrustStore) -> dict:
    nodes = []
    for node in store.nodes:
        entry = {"node_id": node.node_id, "public_key": node.public_key.hex()}
        if node.proof_of_possession is not None:
            entry["proof_of_possession"] = node.proof_of_possession.hex()
        nodes.append(entry)
    return {"threshold_k": store.threshold_k, "nodes": nodes}


def save_trust_store(store: TrustStore, path: str | os.PathLike) -> None:
    _atomic_write_json(Path(path), trust_store_to_json(store))


def trust_store_from_json(doc: dict, *, require_pop: bool = True) -> TrustStore:
    try:
        k = doc["threshold_k"]
        raw_nodes = doc["nodes"]
        nodes = tuple(
            TrustedNode(
                node_id=str(n["node_id"]),
                public_key=bytes.fromhex(n["public_key"]),
                proof_of_possession=bytes.fromhex(n["proof_of_possession"]) if "proof_of_possession" in n else None,
            )
            for n in raw_nodes
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise TrustStoreError(f"malformed trust store: {exc}") from exc
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise TrustStoreError("threshold_k must be a positive integer")
    for node in nodes:
        if not mcrypto.is_valid_public_key(node.public_key):
            raise TrustStoreError(f"{node.node_id}: not a valid public key")
        if node.proof_of_possession is None:
            if require_pop:
                raise TrustStoreError(f"{node.node_id}: missing proof of possession")
        elif not mcrypto.verify_possession(node.public_key, node.proof_of_possession):
            raise TrustStoreError(f"{node.node_id}: proof of possession does not verify")
    return TrustStore(nodes, k)


def load_trust_store(path: str | os.PathLike, *, require_pop: bool = True) -> TrustStore:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TrustStoreError(f"cannot read trust store {path}: {exc}") from exc
    return trust_store_from_json(doc, require_pop=require_pop)
