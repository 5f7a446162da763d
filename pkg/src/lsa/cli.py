"""``lsa`` command line.

Exit codes: 0 accepted / success, 1 rejected (or scenario mismatch),
2 fetch failure, 3 attestation missing from the wallet, 4 bad input.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
import time
from pathlib import Path

from lsa.claims import BLOCK_HASH_QUERY, DEFAULT_EPOCH_DURATION, ClaimKind, Query, epoch_at
from lsa.errors import ConfigError, LSAError, TrustStoreError, WalletFormatError, WalletNotFound

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_FETCH_FAILED = 2
EXIT_MISSING = 3
EXIT_BAD_INPUT = 4


def _param(text: str) -> tuple[str, bytes]:
    name, sep, value = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected name=hex, got {text!r}")
    try:
        return name, bytes.fromhex(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"parameter {name}: value is not hex") from None


def _hex(text: str) -> bytes:
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not hex") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsa", description="Ledger state attestations")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    topo = sub.add_parser("topology", help="run a simulated node topology")
    topo_sub = topo.add_subparsers(dest="action", required=True)
    up = topo_sub.add_parser("up", help="start nodes and a gateway")
    up.add_argument("--config", required=True, type=Path)
    up.add_argument("--duration", type=float, help="stop after this many seconds (default: until interrupted)")

    fetch = sub.add_parser("fetch", help="fetch an aggregate attestation into a wallet")
    fetch.add_argument("--call", default=None)
    fetch.add_argument("--param", action="append", type=_param, default=[], metavar="NAME=HEX")
    fetch.add_argument("--kind", choices=["call", "block_hash"], default="call")
    src = fetch.add_mutually_exclusive_group(required=True)
    src.add_argument("--gateway", help="standalone gateway base URL")
    src.add_argument("--embedded-gateway", action="store_true", help="fan out from this process")
    fetch.add_argument("--registry", type=Path, help="node registry (with --embedded-gateway)")
    fetch.add_argument("--wallet", required=True, type=Path)
    fetch.add_argument("--raw-key", action="append", type=_hex, default=[], metavar="HEX",
                       help="with --kind block_hash: also store value + merkle proof for this key")
    fetch.add_argument("--verify", action="store_true", help="check against a local trust store before storing")
    fetch.add_argument("--trust-store", type=Path)
    fetch.add_argument("--max-epoch-age", type=int, default=1)
    fetch.add_argument("--epoch-duration", type=int, default=DEFAULT_EPOCH_DURATION)
    fetch.add_argument("--timeout", type=float, default=10.0)

    verify = sub.add_parser("verify", help="verify a stored attestation offline")
    verify.add_argument("--wallet", required=True, type=Path)
    verify.add_argument("--request", required=True, type=Path)
    verify.add_argument("--trust-store", required=True, type=Path)
    verify.add_argument("--epoch", required=True, type=int, help="verifier's current epoch")
    verify.add_argument("--param", action="append", type=_param, default=[], metavar="NAME=HEX",
                        help="user-chosen value for a free parameter")
    verify.add_argument("--json", action="store_true")

    scen = sub.add_parser("scenario", help="fault-injection scenarios")
    scen_sub = scen.add_subparsers(dest="action", required=True)
    run = scen_sub.add_parser("run")
    run.add_argument("spec", type=Path)
    run.add_argument("--out", type=Path, help="write the JSON report here")
    run.add_argument("--json", action="store_true", help="print JSON instead of text")
    return parser


def cmd_topology_up(args: argparse.Namespace) -> int:
    from lsa.topology import LiveTopology, TopologyConfig

    try:
        config = TopologyConfig.load(args.config)
        topo = LiveTopology(config).start()
    except (LSAError, ValueError) as exc:
        print(f"startup failed: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    summary = topo.summary()
    summary.pop("trust_store_doc")
    print(json.dumps(summary, indent=2), flush=True)
    try:
        if args.duration is not None:
            time.sleep(args.duration)
        else:
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        topo.stop()
    return EXIT_OK


def _fetch_embedded(args: argparse.Namespace, query: Query, kind: ClaimKind):
    from lsa.gateway import Gateway, GatewayConfig

    if args.registry is None:
        raise ConfigError("--embedded-gateway needs --registry")
    gateway = Gateway(GatewayConfig.load(args.registry))

    async def _go():
        result = await gateway.collect(query, kind)
        raws = []
        for key in args.raw_key:
            body = await gateway.fetch_raw(key)
            raws.append(body)
        return result.attestation, result.diagnostics(), raws

    from lsa.ledger import MerkleProof

    att, diagnostics, bodies = asyncio.run(_go())
    raws = [(bytes.fromhex(b["value"]), MerkleProof.from_json(b["proof"]), int(b["block_number"])) for b in bodies]
    return att, diagnostics, raws, gateway.config.epoch_duration


def _fetch_remote(args: argparse.Namespace, query: Query, kind: ClaimKind):
    from lsa.client import GatewayClient

    with GatewayClient(args.gateway, timeout=args.timeout) as client:
        att, diagnostics = client.aggregate(query, kind)
        raws = [client.raw(key) for key in args.raw_key]
    return att, diagnostics, raws, args.epoch_duration


def cmd_fetch(args: argparse.Namespace) -> int:
    from lsa.verifier import VerifierRequest, block_hash_request, verify_attestation
    from lsa.wallet import load_trust_store, wallet_store, wallet_store_proof

    kind = ClaimKind.parse(args.kind)
    if kind is ClaimKind.BLOCK_HASH:
        query = BLOCK_HASH_QUERY
    elif not args.call:
        print("--call is required for --kind call", file=sys.stderr)
        return EXIT_BAD_INPUT
    else:
        query = Query(args.call, tuple(args.param))
    if args.raw_key and kind is not ClaimKind.BLOCK_HASH:
        print("--raw-key only makes sense with --kind block_hash", file=sys.stderr)
        return EXIT_BAD_INPUT
    if args.verify and args.trust_store is None:
        print("--verify needs --trust-store", file=sys.stderr)
        return EXIT_BAD_INPUT

    try:
        fetcher = _fetch_embedded if args.embedded_gateway else _fetch_remote
        att, diagnostics, raws, epoch_duration = fetcher(args, query, kind)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except LSAError as exc:
        print(f"fetch failed: {exc.code}: {exc}", file=sys.stderr)
        extra = getattr(exc, "diagnostics", None)
        if extra:
            print(json.dumps(extra, indent=2), file=sys.stderr)
        return EXIT_FETCH_FAILED

    if args.verify:
        try:
            store = load_trust_store(args.trust_store)
        except TrustStoreError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_BAD_INPUT
        if kind is ClaimKind.BLOCK_HASH:
            request = block_hash_request(args.max_epoch_age)
        else:
            request = VerifierRequest(query.call_name, query.parameters, max_epoch_age=args.max_epoch_age)
        report = verify_attestation(att, request, store, epoch_at(time.time(), epoch_duration))
        print(report.render())
        if not report.accepted:
            print("local verification failed; nothing stored", file=sys.stderr)
            return EXIT_REJECTED

    wallet_store(att, args.wallet)
    for value, proof, block_number in raws:
        wallet_store_proof(value, proof, block_number, args.wallet)
    print(
        f"stored {att.claim.query.call_name} attestation: signers={len(att.signer_public_keys)} "
        f"epoch={att.claim.epoch} block_number={att.claim.block_number} dissenters={list(att.dissenters)}"
    )
    if diagnostics.get("unreachable"):
        print(f"unreachable nodes: {diagnostics['unreachable']}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    from lsa.verifier import request_from_json, verify_attestation, verify_raw_data
    from lsa.wallet import load_trust_store, wallet_find, wallet_load_proof

    try:
        doc = json.loads(args.request.read_text())
        request = request_from_json(doc)
        raw_key = bytes.fromhex(doc["raw_key"]) if doc.get("raw_key") else None
        store = load_trust_store(args.trust_store)
    except (OSError, ValueError, KeyError, TrustStoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT

    required = dict(request.fixed_parameters)
    required.update(args.param)
    try:
        att = wallet_find(args.wallet, request.expected_call, required)
        if raw_key is not None:
            value, proof = wallet_load_proof(raw_key, att.claim.block_number, args.wallet)
            report = verify_raw_data(value, proof, att, request, store, args.epoch)
        else:
            report = verify_attestation(att, request, store, args.epoch)
    except WalletNotFound as exc:
        print(f"missing attestation: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except WalletFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT

    if args.json:
        print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    else:
        print(report.render())
    return EXIT_OK if report.accepted else EXIT_REJECTED


def cmd_scenario_run(args: argparse.Namespace) -> int:
    from lsa.scenario import ScenarioSpec, render_report, run_scenario

    try:
        spec = ScenarioSpec.load(args.spec)
    except (LSAError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    report = run_scenario(spec)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        args.out.write_text(text + "\n")
    print(text if args.json else render_report(report))
    return EXIT_OK if report["passed"] else EXIT_REJECTED


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "topology":
        return cmd_topology_up(args)
    if args.command == "fetch":
        return cmd_fetch(args)
    if args.command == "verify":
        return cmd_verify(args)
    return cmd_scenario_run(args)


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
