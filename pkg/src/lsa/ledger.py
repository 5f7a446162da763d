"""Deterministic replicated key-value ledger with a sorted binary merkle tree.

Tree layout:

* leaf     = SHA-256(0x00 | varbytes(key) | varbytes(value)), keys ascending
* internal = SHA-256(0x01 | left | right)
* a trailing odd node is promoted to the next level unchanged
* empty    = SHA-256(0x02)
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Sequence

from lsa.claims import DIGEST_SIZE, Query
from lsa.errors import InvalidParameters, KeyNotFound, UnknownCall

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
EMPTY_PREFIX = b"\x02"

REVOCATION_PREFIX = b"revocation/"
REVOKED = b"\x01"
NOT_REVOKED = b"\x00"


def _sha256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.digest()


def leaf_hash(key: bytes, value: bytes) -> bytes:
    return _sha256(LEAF_PREFIX, struct.pack(">I", len(key)), key, struct.pack(">I", len(value)), value)


def node_hash(left: bytes, right: bytes) -> bytes:
    return _sha256(NODE_PREFIX, left, right)


EMPTY_ROOT = _sha256(EMPTY_PREFIX)


class Side(enum.Enum):
    """Which side of the running hash the sibling sits on."""

    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class MerkleProof:
    key: bytes
    value: bytes
    leaf_index: int
    siblings: tuple[tuple[bytes, Side], ...]
    leaf_count: int

    def to_json(self) -> dict:
        return {
            "key": self.key.hex(),
            "value": self.value.hex(),
            "leaf_index": self.leaf_index,
            "leaf_count": self.leaf_count,
            "siblings": [{"digest": d.hex(), "side": s.value} for d, s in self.siblings],
        }

    @classmethod
    def from_json(cls, obj: dict) -> MerkleProof:
        return cls(
            key=bytes.fromhex(obj["key"]),
            value=bytes.fromhex(obj["value"]),
            leaf_index=int(obj["leaf_index"]),
            siblings=tuple((bytes.fromhex(s["digest"]), Side(s["side"])) for s in obj["siblings"]),
            leaf_count=int(obj["leaf_count"]),
        )


def _levels(store: Mapping[bytes, bytes]) -> list[list[bytes]]:
    level = [leaf_hash(k, store[k]) for k in sorted(store)]
    levels = [level]
    while len(level) > 1:
        nxt = [node_hash(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        levels.append(nxt)
        level = nxt
    return levels


def merkle_root(store: Mapping[bytes, bytes]) -> bytes:
    if not store:
        return EMPTY_ROOT
    return _levels(store)[-1][0]


def generate_proof(store: Mapping[bytes, bytes], key: bytes) -> MerkleProof:
    if key not in store:
        raise KeyNotFound(f"key {key.hex()} not in store")
    keys = sorted(store)
    index = keys.index(key)
    siblings = []
    pos = index
    for level in _levels(store)[:-1]:
        if pos % 2:
            siblings.append((level[pos - 1], Side.LEFT))
        elif pos + 1 < len(level):
            siblings.append((level[pos + 1], Side.RIGHT))
        # else: promoted, no sibling at this level
        pos //= 2
    return MerkleProof(key, store[key], index, tuple(siblings), len(keys))


def verify_proof(proof: MerkleProof, expected_root: bytes) -> bool:
    try:
        running = leaf_hash(bytes(proof.key), bytes(proof.value))
        for digest, side in proof.siblings:
            if len(digest) != DIGEST_SIZE:
                return False
            if side is Side.LEFT:
                running = node_hash(digest, running)
            elif side is Side.RIGHT:
                running = node_hash(running, digest)
            else:
                return False
    except (TypeError, ValueError):
        return False
    return running == expected_root


@dataclass(frozen=True)
class LedgerState:
    """Immutable snapshot. ``history`` holds (block_number, block_root) for
    every block boundary including genesis (block 0)."""

    store: Mapping[bytes, bytes]
    block_number: int
    block_root: bytes
    history: tuple[tuple[int, bytes], ...] = field(repr=False)

    @classmethod
    def genesis(cls, store: Mapping[bytes, bytes] | None = None) -> LedgerState:
        frozen = MappingProxyType(dict(store or {}))
        root = merkle_root(frozen)
        return cls(frozen, 0, root, ((0, root),))

    def get(self, key: bytes) -> bytes | None:
        return self.store.get(key)


def apply_block(state: LedgerState, writes: Iterable[tuple[bytes, bytes]]) -> LedgerState:
    store = dict(state.store)
    for key, value in writes:
        store[bytes(key)] = bytes(value)
    root = merkle_root(store)
    number = state.block_number + 1
    return LedgerState(MappingProxyType(store), number, root, state.history + ((number, root),))


def load_block_stream(path: str | Path) -> list[list[tuple[bytes, bytes]]]:
    """Read a JSON-lines block stream: one ``{"writes": [[hex, hex], ...]}`` per line."""
    blocks = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            blocks.append([(bytes.fromhex(k), bytes.fromhex(v)) for k, v in doc["writes"]])
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: bad block: {exc}") from exc
    return blocks


def dump_block_stream(blocks: Sequence[Sequence[tuple[bytes, bytes]]]) -> str:
    return "".join(json.dumps({"writes": [[k.hex(), v.hex()] for k, v in b]}) + "\n" for b in blocks)


# -- query procedures ----------------------------------------------------------

Procedure = Callable[[LedgerState, Mapping[str, bytes]], bytes]


@dataclass(frozen=True)
class QueryProcedure:
    name: str
    parameter_names: tuple[str, ...]
    body: Procedure

    def __call__(self, state: LedgerState, query: Query) -> bytes:
        given = [n for n, _ in query.parameters]
        if sorted(given) != sorted(self.parameter_names):
            raise InvalidParameters(f"{self.name} expects parameters {list(self.parameter_names)}, got {given}")
        return self.body(state, dict(query.parameters))


def _get(state: LedgerState, params: Mapping[str, bytes]) -> bytes:
    value = state.get(params["key"])
    if value is None:
        raise KeyNotFound(f"key {params['key'].hex()} not in ledger state")
    return value


def revocation_key(credential_id: bytes) -> bytes:
    return REVOCATION_PREFIX + credential_id


def _revocation_status(state: LedgerState, params: Mapping[str, bytes]) -> bytes:
    return REVOKED if revocation_key(params["credential_id"]) in state.store else NOT_REVOKED


def _list_root(state: LedgerState, params: Mapping[str, bytes]) -> bytes:
    # Root over the revocation list alone: one digest commits to the whole list.
    return merkle_root({k: v for k, v in state.store.items() if k.startswith(REVOCATION_PREFIX)})


class QueryRegistry:
    def __init__(self, procedures: Iterable[QueryProcedure] = ()):
        self._procedures: dict[str, QueryProcedure] = {}
        for proc in procedures:
            self.register(proc)

    def register(self, procedure: QueryProcedure) -> None:
        self._procedures[procedure.name] = procedure

    def names(self) -> list[str]:
        return sorted(self._procedures)

    def __contains__(self, name: str) -> bool:
        return name in self._procedures

    def execute(self, state: LedgerState, query: Query) -> bytes:
        try:
            proc = self._procedures[query.call_name]
        except KeyError:
            raise UnknownCall(f"no procedure named {query.call_name!r}") from None
        return proc(state, query)


def default_registry() -> QueryRegistry:
    return QueryRegistry(
        [
            QueryProcedure("get", ("key",), _get),
            QueryProcedure("revocation_status", ("credential_id",), _revocation_status),
            QueryProcedure("list_root", (), _list_root),
        ]
    )


def execute_query(state: LedgerState, query: Query, registry: QueryRegistry | None = None) -> bytes:
    return (registry or default_registry()).execute(state, query)
