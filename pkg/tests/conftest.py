import json
from pathlib import Path

import numpy as np
import pytest

from molfuse.encoder import EncoderConfig, EncoderParams
from molfuse.graphs import RbfConfig
from molfuse.synthetic import synthetic_corpus

FIXTURES = Path(__file__).parent / "fixtures"

TINY_RBF = RbfConfig(cutoff=5.0, n_centers=8, gamma=10.0)
TINY_ENCODER = EncoderConfig(n_hidden=8, n_rbf=8, n_iterations=2)


@pytest.fixture(scope="session")
def corpus100():
    """100-record fixture corpus in the QM9 layout (synthetic; see ledger)."""
    return synthetic_corpus(100, seed=2024)


@pytest.fixture
def tiny_rbf():
    return TINY_RBF


@pytest.fixture
def tiny_encoder_params():
    return EncoderParams.init(TINY_ENCODER, seed=101)


class FakeClock:
    """Deterministic clock for rate-limiter tests; sleeping advances time."""

    def __init__(self):
        self.now = 0.0
        self.slept = []

    def time(self):
        return self.now

    def sleep(self, seconds):
        self.slept.append(seconds)
        self.now += seconds

    def tick(self, seconds):
        self.now += seconds


class FakeTransport:
    """Replays recorded PUG REST fixture payloads; logs every send."""

    def __init__(self, routes=None):
        # routes: list of (method, url substring, status, body or path)
        self.routes = routes or []
        self.calls = []

    def add(self, method, url_part, status, body):
        self.routes.append((method, url_part, status, body))

    def add_fixture(self, method, url_part, status, fixture_name):
        body = (FIXTURES / "pubchem" / fixture_name).read_text(encoding="utf-8")
        self.routes.append((method, url_part, status, body))

    def __call__(self, method, url, data=None, headers=None):
        self.calls.append((method, url, data))
        for m, part, status, body in self.routes:
            if m == method and part in url:
                if m == "POST" and isinstance(body, dict):
                    # keyed POST bodies: match on the submitted structure key
                    key = next(iter(data.values()))
                    if key in body:
                        return body[key]
                    continue
                return status, body
        raise AssertionError(f"no fixture route for {method} {url} {data}")


def keyed_post_route(mapping):
    """Build a POST body map: structure key -> (status, payload text)."""
    out = {}
    for key, (status, body) in mapping.items():
        out[key] = (status, body if isinstance(body, str) else json.dumps(body))
    return out


@pytest.fixture
def fake_clock():
    return FakeClock()


def rng(seed=0):
    return np.random.default_rng(seed)
