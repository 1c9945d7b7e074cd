import pytest

from skp.crypto import DEFAULT_SUITE, Crypto
from skp.harness import seeded_keypair
from skp.protocol import AuthServer
from skp.registry import Registry


@pytest.fixture(scope="session")
def keypair():
    return seeded_keypair(1234)


@pytest.fixture
def crypto():
    return Crypto.seeded(42)


class Deployment:
    """One server with a registry and a seeded random source."""

    def __init__(self, keypair, seed=42, suite=DEFAULT_SUITE, rotate=True):
        self.crypto = Crypto.seeded(seed, suite)
        self.registry = Registry(suite)
        self.keypair = keypair
        self.server = AuthServer(self.registry, keypair, self.crypto, rotate=rotate)

    def device(self):
        return self.registry.register_device(self.crypto)


@pytest.fixture
def deployment(keypair):
    return Deployment(keypair)


@pytest.fixture
def make_deployment(keypair):
    def make(**kw):
        return Deployment(keypair, **kw)

    return make


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Context manager that records one PASS/FAIL line per acceptance criterion."""
    from contextlib import contextmanager

    results = request.config.stash.setdefault(_ACCEPTANCE, [])

    @contextmanager
    def record(number, title):
        ok = False
        try:
            yield
            ok = True
        finally:
            line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}"
            results.append(line)
            print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, [])
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
