from __future__ import annotations

import asyncio
import itertools
import random

import pytest
from fastapi.testclient import TestClient

from conftest import NOW, keypair
from lsa import mcrypto
from lsa.claims import BLOCK_HASH_QUERY, ClaimKind, ClaimStatement, NodeAttestation, Query, encode_claim, epoch_at
from lsa.errors import ClaimMismatch, ConfigError, EpochDesync, InsufficientResponses, InvalidNodeSignature
from lsa.gateway import (
    DISSENT,
    EPOCH_REJECTED,
    TIMEOUT,
    UNREACHABLE,
    GatewayConfig,
    GatewayPolicy,
    NodeRegistry,
    RegisteredNode,
    aggregate_node_attestations,
    create_gateway_app,
    pick_group,
)
from lsa.ledger import revocation_key
from lsa.topology import Faults, InProcessTopology, TopologyConfig

EPOCH = epoch_at(NOW)
BLOCKS = [[(b"a", b"1"), (revocation_key(b"cred-1"), b"\x01")]]
REVOKED = Query("revocation_status", (("credential_id", b"cred-1"),))


def topology(faults=None, **kw):
    cfg = TopologyConfig(node_count=kw.pop("n", 5), seed="gw-test", blocks=BLOCKS, **kw)
    return InProcessTopology(cfg, faults or Faults(), clock=lambda: NOW)


def collect(topo, query=REVOKED, kind=ClaimKind.CONTRACT_CALL):
    return asyncio.run(topo.gateway.collect(query, kind))


def node_att(i, claim):
    return NodeAttestation(claim, mcrypto.sign(keypair(i).secret_key, encode_claim(claim)), keypair(i).public_key, f"node-{i}")


CLAIM = ClaimStatement(ClaimKind.CONTRACT_CALL, REVOKED, b"\x01", 1, EPOCH)


def test_healthy_topology_aggregates_every_node():
    topo = topology()
    result = collect(topo)
    att = result.attestation
    assert len(att.signer_public_keys) == 5 and att.dissenters == ()
    assert att.signer_public_keys == tuple(s.public_key for s in topo.services)
    assert mcrypto.verify_aggregate(att.signer_public_keys, encode_claim(att.claim), att.aggregate_signature)
    assert att.claim.epoch == EPOCH and att.claim.data == b"\x01"


def test_block_hash_variant():
    topo = topology()
    att = collect(topo, BLOCK_HASH_QUERY, ClaimKind.BLOCK_HASH).attestation
    assert att.claim.data == topo.services[0].state.block_root
    assert len(att.signer_public_keys) == 5


def test_byzantine_node_becomes_dissenter():
    topo = topology(Faults(byzantine={"node-4"}))
    result = collect(topo)
    assert len(result.attestation.signer_public_keys) == 4
    assert result.attestation.dissenters == ("node-4",)
    assert result.outcomes["node-4"].status == DISSENT


def test_down_nodes_and_quorum():
    topo = topology(Faults(down={"node-0", "node-1", "node-2"}), min_responses=4)
    with pytest.raises(InsufficientResponses) as info:
        collect(topo)
    diag = info.value.diagnostics
    assert diag["unreachable"] == ["node-0", "node-1", "node-2"]
    assert diag["reachable"] == ["node-3", "node-4"]

    ok = topology(Faults(down={"node-0"}))
    result = collect(ok)
    assert len(result.attestation.signer_public_keys) == 4
    assert result.outcomes["node-0"].status == UNREACHABLE


def test_slow_node_times_out():
    topo = topology(Faults(slow={"node-1": 600}), per_node_timeout_ms=150)
    result = collect(topo)
    assert result.outcomes["node-1"].status == TIMEOUT
    assert len(result.attestation.signer_public_keys) == 4


def test_skewed_node_rejects_epoch_and_others_still_agree():
    topo = topology(Faults(clock_skew={"node-3": 120.0}))
    result = collect(topo)
    assert result.outcomes["node-3"].status == EPOCH_REJECTED
    assert result.outcomes["node-3"].local_epoch == EPOCH + 2
    assert {a.claim.epoch for a in result.attestations.values()} == {EPOCH}
    assert len(result.attestation.signer_public_keys) == 4


def test_all_nodes_rejecting_epoch_is_desync():
    skew = {f"node-{i}": 300.0 for i in range(5)}
    with pytest.raises(EpochDesync):
        collect(topology(Faults(clock_skew=skew)))


def test_aggregate_singleton_and_permutations():
    atts = [node_att(i, CLAIM) for i in range(4)]
    single = aggregate_node_attestations(atts[:1])
    assert single.aggregate_signature == atts[0].signature
    outputs = {aggregate_node_attestations(list(p)) for p in itertools.permutations(atts)}
    assert len(outputs) == 1


@pytest.mark.parametrize("n", range(2, 9))
def test_aggregate_output_verifies(n):
    agg = aggregate_node_attestations([node_att(i, CLAIM) for i in range(n)], dissenters=("node-z", "node-y"))
    assert mcrypto.verify_aggregate(agg.signer_public_keys, encode_claim(CLAIM), agg.aggregate_signature)
    assert agg.dissenters == ("node-y", "node-z")


def test_aggregate_rejects_mismatch_and_bad_signature():
    other = ClaimStatement(ClaimKind.CONTRACT_CALL, REVOKED, b"\x00", 1, EPOCH)
    with pytest.raises(ClaimMismatch):
        aggregate_node_attestations([node_att(0, CLAIM), node_att(1, other)])
    forged = NodeAttestation(CLAIM, node_att(2, CLAIM).signature, keypair(1).public_key, "node-1")
    with pytest.raises(InvalidNodeSignature) as info:
        aggregate_node_attestations([node_att(0, CLAIM), forged])
    assert info.value.node_id == "node-1"


def test_pick_group_tie_break():
    other = ClaimStatement(ClaimKind.CONTRACT_CALL, REVOKED, b"\x00", 1, EPOCH)
    a, b = encode_claim(CLAIM), encode_claim(other)
    groups = {a: [node_att(3, CLAIM), node_att(4, CLAIM)], b: [node_att(1, other), node_att(2, other)]}
    assert pick_group(groups) == b
    groups[a].append(node_att(5, CLAIM))
    assert pick_group(groups) == a


def test_registry_validation():
    kp = keypair(0)
    with pytest.raises(ConfigError):
        NodeRegistry(())
    with pytest.raises(ConfigError):
        NodeRegistry((RegisteredNode("x", "http://x", kp.public_key), RegisteredNode("x", "http://y", keypair(1).public_key)))
    with pytest.raises(ConfigError):
        NodeRegistry((RegisteredNode("x", "http://x", kp.public_key, keypair(1).proof_of_possession),))
    cfg = GatewayConfig(NodeRegistry((RegisteredNode("x", "http://x", kp.public_key, kp.proof_of_possession),)), GatewayPolicy(500, 1), 30)
    assert GatewayConfig.from_json(cfg.to_json()) == cfg
    doc = cfg.to_json()
    doc["policy"]["min_responses"] = 2
    with pytest.raises(ConfigError):
        GatewayConfig.from_json(doc)
    assert GatewayPolicy().quorum(5) == 4 and GatewayPolicy().quorum(3) == 2


def test_outputs_always_verify_under_random_faults():
    rng = random.Random(11)
    for _ in range(6):
        chosen = rng.sample([f"node-{i}" for i in range(5)], 2)
        faults = Faults(down={chosen[0]}, byzantine={chosen[1]})
        result = collect(topology(faults, min_responses=3))
        att = result.attestation
        assert mcrypto.verify_aggregate(att.signer_public_keys, encode_claim(att.claim), att.aggregate_signature)
        assert att.dissenters == (chosen[1],)


def test_gateway_http_front():
    client = TestClient(create_gateway_app(topology().gateway))
    resp = client.post("/lsa/v1/aggregate/call", json=REVOKED.to_json())
    body = resp.json()
    assert resp.status_code == 200 and len(body["signer_public_keys"]) == 5
    assert body["diagnostics"]["epoch"] == EPOCH
    assert client.post("/lsa/v1/aggregate/block_hash").status_code == 200
    raw = client.get("/lsa/v1/raw/" + b"a".hex()).json()
    assert raw["value"] == "31" and raw["block_number"] == 1
    assert client.get("/lsa/v1/info").json()["epoch"] == EPOCH

    down = TestClient(create_gateway_app(topology(Faults(down={f"node-{i}" for i in range(3)})).gateway))
    resp = down.post("/lsa/v1/aggregate/call", json=REVOKED.to_json())
    assert resp.status_code == 503 and resp.json()["error"] == "insufficient_responses"
