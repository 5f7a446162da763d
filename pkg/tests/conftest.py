from __future__ import annotations

import hashlib
import socket
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lsa import mcrypto  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
NOW = 1_700_000_000.0


def seed(i: int) -> bytes:
    return hashlib.sha256(b"test-key-%d" % i).digest()


_keys: dict[int, mcrypto.KeyPair] = {}


def keypair(i: int) -> mcrypto.KeyPair:
    if i not in _keys:
        _keys[i] = mcrypto.keygen(seed(i))
    return _keys[i]


@pytest.fixture
def keys():
    return [keypair(i) for i in range(25)]


class NetworkBlocked(RuntimeError):
    pass


@pytest.fixture
def no_network(monkeypatch):
    """Any attempt to open a socket connection raises."""

    def _blocked(*args, **kwargs):
        raise NetworkBlocked("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", _blocked)
    monkeypatch.setattr(socket.socket, "connect_ex", _blocked)
    monkeypatch.setattr(socket, "create_connection", _blocked)
    monkeypatch.setattr(socket, "getaddrinfo", _blocked)
    yield


# One line per acceptance criterion, echoed in the terminal summary so the
# verdicts show up even when output capture hides the prints.
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
