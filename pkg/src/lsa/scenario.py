"""Fault-injection scenarios: build an in-process topology with faults, run
each query through fetch (gateway) and offline verification, and compare the
outcome with what the scenario expects.

Scenario files are JSON::

    {"name": "...", "seed": "...", "node_count": 5, "now": 1700000000,
     "block_stream": "blocks.jsonl", "epoch_duration": 60, "epoch_skew_tolerance": 1,
     "gateway": {"min_responses": 4, "per_node_timeout_ms": 300},
     "faults": [{"type": "DOWN", "node": "node-1"}, ...],
     "verifier": {"k": 3, "max_epoch_age": 1, "trusted": ["node-0", ...]},
     "queries": [{"kind": "call", "call": "get", "parameters": [["key", "61"]],
                  "policy": "any", "expect": "accepted",
                  "expect_signers": 4, "expect_dissenters": ["node-4"]},
                 {"kind": "block_hash", "raw_key": "61", "expect": "accepted"}]}

``expect`` is ``accepted``, ``rejected`` or ``fetch_failed``; ``expect_error``
optionally pins the fetch error code.
"""

from __future__ import annotations

import asyncio
import json
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from lsa.claims import BLOCK_HASH_QUERY, ClaimKind, Query, epoch_at
from lsa.errors import ConfigError, LSAError
from lsa.ledger import MerkleProof
from lsa.topology import Faults, InProcessTopology, TopologyConfig, node_id_for
from lsa.verifier import VerifierRequest, named_policy, verify_attestation, verify_raw_data
from lsa.wallet import wallet_load, wallet_load_proof, wallet_store, wallet_store_proof

EXPECTATIONS = ("accepted", "rejected", "fetch_failed")


@dataclass
class QuerySpec:
    kind: ClaimKind
    query: Query
    expect: str
    policy: str = "any"
    raw_key: bytes | None = None
    expect_error: str | None = None
    expect_signers: int | None = None
    expect_dissenters: list[str] | None = None

    @classmethod
    def from_json(cls, doc: dict) -> QuerySpec:
        kind = ClaimKind.parse(doc.get("kind", "call"))
        query = BLOCK_HASH_QUERY if kind is ClaimKind.BLOCK_HASH else Query.from_json(doc)
        expect = doc.get("expect", "accepted")
        if expect not in EXPECTATIONS:
            raise ConfigError(f"expect must be one of {EXPECTATIONS}")
        return cls(
            kind=kind,
            query=query,
            expect=expect,
            policy=doc.get("policy", "any"),
            raw_key=bytes.fromhex(doc["raw_key"]) if doc.get("raw_key") is not None else None,
            expect_error=doc.get("expect_error"),
            expect_signers=doc.get("expect_signers"),
            expect_dissenters=doc.get("expect_dissenters"),
        )


@dataclass
class ScenarioSpec:
    name: str
    topology: TopologyConfig
    faults: Faults
    queries: list[QuerySpec]
    now: float
    k: int
    max_epoch_age: int = 1
    trusted: list[str] | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_json(cls, doc: dict, base_dir: Path = Path(".")) -> ScenarioSpec:
        gateway = doc.get("gateway", {})
        verifier = doc.get("verifier", {})
        topo_doc = {
            key: doc[key]
            for key in ("node_count", "seed", "block_stream", "blocks", "epoch_duration", "epoch_skew_tolerance")
            if key in doc
        }
        topo_doc.update({k: v for k, v in gateway.items() if k in ("min_responses", "per_node_timeout_ms")})
        topo_doc["threshold_k"] = verifier.get("k", 3)
        topology = TopologyConfig.from_json(topo_doc, base_dir)
        if not doc.get("queries"):
            raise ConfigError("scenario has no queries")
        return cls(
            name=doc.get("name", "scenario"),
            topology=topology,
            faults=Faults.from_json(doc.get("faults", [])),
            queries=[QuerySpec.from_json(q) for q in doc["queries"]],
            now=float(doc.get("now", 1_700_000_000)),
            k=int(verifier.get("k", 3)),
            max_epoch_age=int(verifier.get("max_epoch_age", 1)),
            trusted=verifier.get("trusted"),
            raw=doc,
        )

    @classmethod
    def load(cls, path: str | Path) -> ScenarioSpec:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
        return cls.from_json(doc, path.parent)


def _query_label(spec: QuerySpec) -> dict:
    out = {"kind": spec.kind.label, **spec.query.to_json()}
    if spec.raw_key is not None:
        out["raw_key"] = spec.raw_key.hex()
    return out


async def _run_query(topo: InProcessTopology, spec: ScenarioSpec, q: QuerySpec, wallet: Path) -> dict:
    entry: dict = {"query": _query_label(q), "expected": q.expect}
    key_to_id = {n.public_key: n.node_id for n in topo.gateway.registry.nodes}
    try:
        result = await topo.gateway.collect(q.query, q.kind)
        raw = await topo.gateway.fetch_raw(q.raw_key) if q.raw_key is not None else None
    except LSAError as exc:
        entry.update(
            outcome="fetch_failed",
            error=exc.code,
            detail=str(exc),
            diagnostics=getattr(exc, "diagnostics", {}),
            signers=[],
            dissenters=[],
            accepted=False,
            checks=[],
        )
        return entry

    att = result.attestation
    wallet_store(att, wallet, clock=lambda: spec.now)
    stored = wallet_load(q.query, wallet)
    trust_store = topo.trust_store
    if spec.trusted is not None:
        trust_store = trust_store.restricted_to(spec.trusted, spec.k)
    current_epoch = epoch_at(spec.now, spec.topology.epoch_duration)
    if q.kind is ClaimKind.BLOCK_HASH:
        request = VerifierRequest("block_hash", max_epoch_age=spec.max_epoch_age)
        if raw is None:
            raise ConfigError("block_hash queries need a raw_key")
        wallet_store_proof(bytes.fromhex(raw["value"]), MerkleProof.from_json(raw["proof"]), raw["block_number"], wallet)
        value, proof = wallet_load_proof(q.raw_key, stored.claim.block_number, wallet)
        report = verify_raw_data(value, proof, stored, request, trust_store, current_epoch)
    else:
        request = VerifierRequest(
            q.query.call_name,
            fixed_parameters=q.query.parameters,
            max_epoch_age=spec.max_epoch_age,
            policy_check=named_policy(q.policy),
            policy_name=q.policy,
        )
        report = verify_attestation(stored, request, trust_store, current_epoch)
    entry.update(
        outcome="accepted" if report.accepted else "rejected",
        epoch=att.claim.epoch,
        block_number=att.claim.block_number,
        data=att.claim.data.hex(),
        signers=[key_to_id.get(k, k.hex()) for k in att.signer_public_keys],
        dissenters=list(att.dissenters),
        accepted=report.accepted,
        matched_trusted_signers=report.matched_trusted_signers,
        checks=[c.to_json() for c in report.checks],
        diagnostics=result.diagnostics(),
    )
    return entry


def _judge(q: QuerySpec, entry: dict) -> list[str]:
    diffs = []
    if entry["outcome"] != q.expect:
        diffs.append(f"outcome {entry['outcome']} != expected {q.expect}")
    if q.expect_error is not None and entry.get("error") != q.expect_error:
        diffs.append(f"error {entry.get('error')} != expected {q.expect_error}")
    if q.expect_signers is not None and len(entry["signers"]) != q.expect_signers:
        diffs.append(f"{len(entry['signers'])} signers != expected {q.expect_signers}")
    if q.expect_dissenters is not None and sorted(entry["dissenters"]) != sorted(q.expect_dissenters):
        diffs.append(f"dissenters {entry['dissenters']} != expected {q.expect_dissenters}")
    return diffs


def run_scenario(spec: ScenarioSpec) -> dict:
    topo = InProcessTopology(spec.topology, spec.faults, clock=lambda: spec.now)

    async def _all() -> list[dict]:
        entries = []
        with tempfile.TemporaryDirectory(prefix="lsa-scenario-") as tmp:
            wallet = Path(tmp) / "wallet.json"
            for q in spec.queries:  # sequential on purpose: report order is fixed
                entry = await _run_query(topo, spec, q, wallet)
                entry["diff"] = _judge(q, entry)
                entry["ok"] = not entry["diff"]
                entries.append(entry)
        return entries

    entries = asyncio.run(_all())
    return {
        "scenario": spec.name,
        "nodes": [node_id_for(i) for i in range(spec.topology.node_count)],
        "faults": spec.raw.get("faults", []),
        "k": spec.k,
        "passed": all(e["ok"] for e in entries),
        "queries": entries,
    }


def render_report(report: dict) -> str:
    lines = [f"scenario {report['scenario']}: {'PASS' if report['passed'] else 'FAIL'}"]
    for e in report["queries"]:
        q = e["query"]
        label = q["call"] if q["kind"] != "block_hash" else f"block_hash+raw({q.get('raw_key', '')})"
        lines.append(
            f"  [{'ok' if e['ok'] else 'MISMATCH'}] {label}: {e['outcome']} (expected {e['expected']}), "
            f"signers={len(e['signers'])} dissenters={e['dissenters']}"
        )
        if e.get("error"):
            lines.append(f"      error: {e['error']}: {e.get('detail', '')}")
        for d in e["diff"]:
            lines.append(f"      diff: {d}")
    return "\n".join(lines)
