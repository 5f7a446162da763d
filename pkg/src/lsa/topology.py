"""Simulated multi-node deployments.

:class:`InProcessTopology` wires node apps to the gateway through httpx ASGI
transports: the full HTTP surface is exercised but no socket is opened, which
keeps fault scenarios deterministic. :class:`LiveTopology` serves the same
apps on real localhost ports with uvicorn.
"""

from __future__ import annotations

import hashlib
import json
import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import httpx
import uvicorn

from lsa import mcrypto
from lsa.claims import DEFAULT_EPOCH_DURATION, TrustedNode, TrustStore
from lsa.errors import ConfigError
from lsa.gateway import Gateway, GatewayConfig, GatewayPolicy, NodeRegistry, RegisteredNode, create_gateway_app
from lsa.ledger import LedgerState, load_block_stream
from lsa.node import NodeConfig, NodeService, create_node_app
from lsa.wallet import save_trust_store, trust_store_to_json

log = logging.getLogger(__name__)

Block = Sequence[tuple[bytes, bytes]]


def node_id_for(index: int) -> str:
    return f"node-{index}"


def node_seed(master_seed: str, index: int) -> bytes:
    return hashlib.sha256(b"lsa-node-key|" + master_seed.encode() + struct.pack(">I", index)).digest()


def flip_last_bit(data: bytes) -> bytes:
    if not data:
        return b"\x01"
    return data[:-1] + bytes([data[-1] ^ 1])


@dataclass
class Faults:
    down: set[str] = field(default_factory=set)
    byzantine: set[str] = field(default_factory=set)
    clock_skew: dict[str, float] = field(default_factory=dict)
    slow: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_json(cls, items: Sequence[dict]) -> Faults:
        faults = cls()
        for item in items:
            kind, node = item.get("type", "").upper(), item.get("node")
            if kind == "DOWN":
                faults.down.add(node)
            elif kind == "BYZANTINE_DATA":
                faults.byzantine.add(node)
            elif kind == "CLOCK_SKEW":
                faults.clock_skew[node] = float(item["seconds"])
            elif kind == "SLOW":
                faults.slow[node] = int(item["ms"])
            else:
                raise ConfigError(f"unknown fault type {item.get('type')!r}")
        return faults

    def targets(self) -> set[str]:
        return self.down | self.byzantine | set(self.clock_skew) | set(self.slow)


@dataclass
class TopologyConfig:
    node_count: int = 5
    seed: str = "lsa-demo"
    blocks: list = field(default_factory=list)
    epoch_duration: int = DEFAULT_EPOCH_DURATION
    epoch_skew_tolerance: int = 1
    threshold_k: int | None = None
    min_responses: int | None = None
    per_node_timeout_ms: int = 2000
    host: str = "127.0.0.1"
    base_port: int = 0  # 0: any free port
    gateway_port: int = 0
    out_dir: Path = Path(".")

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise ConfigError("node_count must be positive")

    @property
    def k(self) -> int:
        return self.threshold_k if self.threshold_k is not None else min(self.node_count, 3)

    @classmethod
    def from_json(cls, doc: dict, base_dir: Path = Path(".")) -> TopologyConfig:
        blocks = []
        if doc.get("block_stream"):
            blocks = load_block_stream(base_dir / doc["block_stream"])
        for b in doc.get("blocks", []):
            blocks.append([(bytes.fromhex(k), bytes.fromhex(v)) for k, v in b["writes"]])
        known = {"node_count", "seed", "epoch_duration", "epoch_skew_tolerance", "threshold_k", "min_responses",
                 "per_node_timeout_ms", "host", "base_port", "gateway_port"}
        kwargs = {k: v for k, v in doc.items() if k in known}
        out_dir = Path(doc.get("out_dir", "."))
        return cls(blocks=blocks, out_dir=out_dir if out_dir.is_absolute() else base_dir / out_dir, **kwargs)

    @classmethod
    def load(cls, path: str | Path) -> TopologyConfig:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read topology config {path}: {exc}") from exc
        return cls.from_json(doc, path.parent)


def build_services(config: TopologyConfig, faults: Faults | None = None, clock: Callable[[], float] = time.time) -> list[NodeService]:
    faults = faults or Faults()
    ids = [node_id_for(i) for i in range(config.node_count)]
    unknown = faults.targets() - set(ids)
    if unknown:
        raise ConfigError(f"faults target unknown nodes: {sorted(unknown)}")
    state = LedgerState.genesis()
    services = []
    for i, node_id in enumerate(ids):
        node_config = NodeConfig(
            node_id=node_id,
            key_pair=mcrypto.keygen(node_seed(config.seed, i)),
            epoch_duration=config.epoch_duration,
            epoch_skew_tolerance=config.epoch_skew_tolerance,
            clock_offset=faults.clock_skew.get(node_id, 0.0),
        )
        hook = flip_last_bit if node_id in faults.byzantine else None
        services.append(NodeService(node_config, state, clock=clock, data_hook=hook))
    for block in config.blocks:
        for svc in services:
            svc.apply_block(block)
    return services


def trust_store_for(services: Sequence[NodeService], threshold_k: int) -> TrustStore:
    return TrustStore(
        tuple(TrustedNode(s.node_id, s.public_key, s.config.key_pair.proof_of_possession) for s in services),
        threshold_k,
    )


def registry_for(services: Sequence[NodeService], urls: dict[str, str]) -> NodeRegistry:
    return NodeRegistry(
        tuple(
            RegisteredNode(s.node_id, urls[s.node_id], s.public_key, s.config.key_pair.proof_of_possession)
            for s in services
        )
    )


class UnreachableTransport(httpx.AsyncBaseTransport):
    """Stands in for a node that is down: every connection attempt fails."""

    async def handle_async_request(self, request: httpx.Request) -> httpx.Response:
        raise httpx.ConnectError("connection refused (node down)", request=request)


class InProcessTopology:
    def __init__(self, config: TopologyConfig, faults: Faults | None = None, *, clock: Callable[[], float] = time.time):
        self.config = config
        self.faults = faults or Faults()
        self.clock = clock
        self.services = build_services(config, self.faults, clock)
        self.apps = {s.node_id: create_node_app(s, delay_ms=self.faults.slow.get(s.node_id, 0)) for s in self.services}
        transports: dict[str, httpx.AsyncBaseTransport] = {}
        for s in self.services:
            if s.node_id in self.faults.down:
                transports[s.node_id] = UnreachableTransport()
            else:
                transports[s.node_id] = httpx.ASGITransport(app=self.apps[s.node_id])
        urls = {s.node_id: f"http://{s.node_id}.lsa.invalid" for s in self.services}
        self.gateway_config = GatewayConfig(
            registry_for(self.services, urls),
            GatewayPolicy(config.per_node_timeout_ms, config.min_responses),
            config.epoch_duration,
        )
        self.gateway = Gateway(self.gateway_config, clock=clock, transports=transports)
        self.trust_store = trust_store_for(self.services, config.k)

    def service(self, node_id: str) -> NodeService:
        return next(s for s in self.services if s.node_id == node_id)

    def apply_block(self, writes: Block) -> None:
        for svc in self.services:
            svc.apply_block(writes)


def _bound_socket(host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise ConfigError(f"cannot bind {host}:{port}: {exc}") from exc
    return sock


class _Server:
    def __init__(self, app, sock: socket.socket):
        self.sock = sock
        self.server = uvicorn.Server(uvicorn.Config(app, log_level="warning", lifespan="off"))
        self.thread = threading.Thread(target=self.server.run, kwargs={"sockets": [sock]}, daemon=True)

    @property
    def port(self) -> int:
        return self.sock.getsockname()[1]

    def start(self) -> None:
        self.thread.start()

    def wait_started(self, timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        while not self.server.started:
            if not self.thread.is_alive() or time.monotonic() > deadline:
                return False
            time.sleep(0.01)
        return True

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=5)
        self.sock.close()


class LiveTopology:
    """n node services and one gateway on localhost, plus the emitted trust store
    and registry files. Use as a context manager."""

    def __init__(self, config: TopologyConfig, faults: Faults | None = None, *, clock: Callable[[], float] = time.time):
        self.config = config
        self.faults = faults or Faults()
        self.clock = clock
        self.services = build_services(config, self.faults, clock)
        self._servers: dict[str, _Server] = {}
        self._ports: dict[str, int] = {}
        self.gateway: Gateway | None = None
        self.trust_store = trust_store_for(self.services, config.k)
        self.trust_store_path = Path(config.out_dir) / "trust_store.json"
        self.registry_path = Path(config.out_dir) / "registry.json"

    def node_url(self, node_id: str) -> str:
        return f"http://{self.config.host}:{self._ports[node_id]}"

    @property
    def gateway_url(self) -> str:
        return f"http://{self.config.host}:{self._servers['gateway'].port}"

    def start(self, timeout: float = 10.0) -> LiveTopology:
        try:
            for i, svc in enumerate(self.services):
                port = self.config.base_port + i if self.config.base_port else 0
                sock = _bound_socket(self.config.host, port)
                self._ports[svc.node_id] = sock.getsockname()[1]
                if svc.node_id in self.faults.down:
                    # Reserve the port but never serve: connections are refused.
                    sock.close()
                    continue
                app = create_node_app(svc, delay_ms=self.faults.slow.get(svc.node_id, 0))
                self._servers[svc.node_id] = _Server(app, sock)
            urls = {s.node_id: self.node_url(s.node_id) for s in self.services}
            gw_config = GatewayConfig(
                registry_for(self.services, urls),
                GatewayPolicy(self.config.per_node_timeout_ms, self.config.min_responses),
                self.config.epoch_duration,
            )
            self.gateway = Gateway(gw_config, clock=self.clock)
            self._servers["gateway"] = _Server(create_gateway_app(self.gateway), _bound_socket(self.config.host, self.config.gateway_port))
            for server in self._servers.values():
                server.start()
            for name, server in self._servers.items():
                if not server.wait_started(timeout):
                    raise ConfigError(f"{name} failed to start")
        except BaseException:
            self.stop()
            raise
        save_trust_store(self.trust_store, self.trust_store_path)
        self.registry_path.parent.mkdir(parents=True, exist_ok=True)
        self.registry_path.write_text(json.dumps(gw_config.to_json(), indent=2) + "\n")
        log.info("topology up: %d nodes, gateway at %s", len(self.services), self.gateway_url)
        return self

    def stop(self) -> None:
        for server in self._servers.values():
            server.stop()
        self._servers.clear()

    def apply_block(self, writes: Block) -> None:
        for svc in self.services:
            svc.apply_block(writes)

    def summary(self) -> dict:
        return {
            "gateway": self.gateway_url,
            "nodes": {s.node_id: self.node_url(s.node_id) for s in self.services},
            "down": sorted(self.faults.down),
            "trust_store": str(self.trust_store_path),
            "registry": str(self.registry_path),
            "trust_store_doc": trust_store_to_json(self.trust_store),
        }

    def __enter__(self) -> LiveTopology:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
