import ipaddress
import json
import socket
from pathlib import Path

import numpy as np
import pytest

from dpkg.corpus import SynthSpec, gen_synthetic
from dpkg.model import DPKGModel, DPKGNetwork
from dpkg.text import build_vocab

DATA = Path(__file__).parent / "data"
FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


def _is_loopback(address) -> bool:
    host = address[0] if isinstance(address, tuple) else address
    if host in ("localhost", ""):
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


@pytest.fixture(autouse=True)
def no_external_network(monkeypatch):
    """Any connection to a non-loopback address fails the test."""
    real_connect = socket.socket.connect

    def guarded(self, address):
        if self.family in (socket.AF_INET, socket.AF_INET6) and not _is_loopback(address):
            raise AssertionError(f"external network access attempted: {address!r}")
        return real_connect(self, address)

    monkeypatch.setattr(socket.socket, "connect", guarded)


@pytest.fixture(scope="session")
def frozen():
    return FROZEN


@pytest.fixture(scope="session")
def synth_corpus():
    return gen_synthetic(SynthSpec(seed=1, n_samples=80))


@pytest.fixture(scope="session")
def synth_vocab(synth_corpus):
    return build_vocab(synth_corpus)


def tiny_model(vocab, seed=0, d=16, mode="hard", dtype="float64", **kw) -> DPKGModel:
    net = DPKGNetwork(len(vocab), d_model=d, n_heads=2, d_ff=2 * d, n_enc_layers=1, n_dec_layers=1,
                      max_len=256, seed=seed, init_std=kw.pop("init_std", 0.3), dtype=dtype,
                      pad_id=vocab.pad_id, **kw)
    return DPKGModel(vocab, net, mode)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def hotpot_path():
    return DATA / "hotpot_sample.json"



ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
