import os
import subprocess
import sys
from pathlib import Path

import pytest
from click.testing import CliRunner

from skp.cli import (
    EXIT_CONNECTION,
    EXIT_EMPTY_VAULT,
    EXIT_REJECT_BASE,
    EXIT_TAG_MISMATCH,
    main,
)
from skp.protocol import RejectReason
from skp.registry import Registry

TESTDATA = Path(__file__).parent / "testdata"


def run(*args, env=None):
    result = CliRunner().invoke(main, [str(a) for a in args], env=env, catch_exceptions=False)
    return result


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def keys(workdir):
    assert run("--insecure-seed", 1, "keygen", "--out", "srv").exit_code == 0
    return "srv"


class Server:
    def __init__(self, registry, keys, seed=None):
        cmd = [sys.executable, "-m", "skp"]
        if seed is not None:
            cmd += ["--insecure-seed", str(seed)]
        cmd += ["serve", "--registry", registry, "--keys", keys, "--bind", "127.0.0.1:0"]
        self.proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        line = self.proc.stdout.readline()
        assert line.startswith("listening on"), line + self.proc.stderr.read()
        self.address = line.split()[-1]

    def stop(self):
        self.proc.terminate()
        self.proc.wait(timeout=10)


@pytest.fixture
def serve(keys):
    servers = []

    def start(registry="reg.skr"):
        s = Server(registry, keys)
        servers.append(s)
        return s

    yield start
    for s in servers:
        s.stop()


def test_keygen(workdir):
    assert run("keygen", "--out", "a").exit_code == 0
    assert run("keygen", "--out", "b").exit_code == 0
    assert Path("a.pub").read_bytes() != Path("b.pub").read_bytes()
    assert os.stat("a.key").st_mode & 0o777 == 0o600


def test_keygen_unwritable_leaves_nothing(workdir):
    result = run("keygen", "--out", "missing/dir/srv")
    assert result.exit_code != 0
    assert not Path("missing").exists()
    assert list(workdir.iterdir()) == []


def test_provision_twice(keys):
    assert run("provision", "--registry", "reg.skr", "--device", "d1.skd").exit_code == 0
    assert run("provision", "--device", "d2.skd", env={"SKP_REGISTRY": "reg.skr"}).exit_code == 0
    d1, d2 = Path("d1.skd").read_bytes(), Path("d2.skd").read_bytes()
    assert d1 != d2
    reg = Registry.load("reg.skr")
    assert len(reg) == 2
    for entry in reg:
        assert entry.sig.key not in d1 and entry.sig.key not in d2


def test_seed_flag_is_explicitly_insecure(workdir):
    assert run("--seed", "1", "keygen", "--out", "x").exit_code == 2
    result = CliRunner().invoke(main, ["--insecure-seed", "1", "keygen", "--out", "x"])
    assert "insecure" in result.output.lower()


def auth(server, device="d1.skd", key_out=None):
    args = ["auth", "--device", device, "--connect", server.address, "--server-pub", "srv.pub"]
    if key_out:
        args += ["--key-out", key_out]
    return run(*args)


def test_serve_auth_vault_round_trip(serve):
    run("provision", "--registry", "reg.skr", "--device", "d1.skd")
    run("provision", "--registry", "reg.skr", "--device", "d2.skd")
    server = serve()
    assert auth(server, key_out="k").exit_code == 0
    assert os.stat("k").st_mode & 0o777 == 0o600
    Path("in.txt").write_bytes(b"hello")
    assert run("vault", "seal", "--device", "d1.skd", "--data", "in.txt", "--key-file", "k", "--keep-key").exit_code == 0
    assert run("vault", "open", "--device", "d1.skd", "--data", "out.txt", "--key-file", "k").exit_code == 0
    assert Path("out.txt").read_bytes() == b"hello"
    assert not Path("k").exists()
    # a second device and a second round for the first both work
    assert auth(server, "d2.skd").exit_code == 0
    assert auth(server).exit_code == 0


def test_vault_failures(serve):
    run("provision", "--registry", "reg.skr", "--device", "d1.skd")
    server = serve()
    assert auth(server, key_out="k").exit_code == 0
    result = run("vault", "open", "--device", "d1.skd", "--data", "o", "--key-file", "k", "--keep-key")
    assert result.exit_code == EXIT_EMPTY_VAULT
    Path("in").write_bytes(b"data")
    run("vault", "seal", "--device", "d1.skd", "--data", "in", "--key-file", "k", "--keep-key")
    blob = bytearray(Path("d1.skd").read_bytes())
    blob[-1] ^= 1
    Path("d1.skd").write_bytes(bytes(blob))
    result = run("vault", "open", "--device", "d1.skd", "--data", "o", "--key-file", "k")
    assert result.exit_code == EXIT_TAG_MISMATCH
    assert Path("k").exists()  # failed commands change nothing
    assert not Path("o").exists()


def test_auth_against_stopped_server(serve):
    run("provision", "--registry", "reg.skr", "--device", "d1.skd")
    server = serve()
    server.stop()
    before = Path("d1.skd").read_bytes()
    assert auth(server).exit_code == EXIT_CONNECTION
    assert Path("d1.skd").read_bytes() == before


def test_auth_with_stale_device_after_registry_reset(serve):
    run("provision", "--registry", "old.skr", "--device", "d1.skd")
    run("provision", "--registry", "reg.skr", "--device", "other.skd")
    server = serve()
    before = Path("d1.skd").read_bytes()
    assert auth(server).exit_code == EXIT_REJECT_BASE + RejectReason.UNKNOWN_DEVICE
    assert Path("d1.skd").read_bytes() == before


def test_replayed_device_file_is_rejected(serve):
    run("provision", "--registry", "reg.skr", "--device", "d1.skd")
    server = serve()
    old = Path("d1.skd").read_bytes()
    assert auth(server).exit_code == 0
    assert auth(server).exit_code == 0
    Path("d1.skd").write_bytes(old)  # an r two rotations old
    assert auth(server).exit_code == EXIT_REJECT_BASE + RejectReason.REPLAY_DETECTED


def test_serve_persists_rotation(serve):
    run("provision", "--registry", "reg.skr", "--device", "d1.skd")
    before = Registry.load("reg.skr")
    server = serve()
    assert auth(server).exit_code == 0
    server.stop()
    after = Registry.load("reg.skr")
    (e_before,), (e_after,) = list(before), list(after)
    assert e_after.r_previous == e_before.r_current


def test_attack_commands(workdir):
    result = run("attack", "replay", "--seed", "7")
    assert result.exit_code == 0 and "ReplayDetected" in result.output
    result = run("attack", "anonymity", "--devices", "3", "--sessions", "3", "--repetitions", "2")
    assert result.exit_code == 0 and result.output.count("[PASS]") == 4
    assert run("attack", "drop-recovery").exit_code == 0
    assert run("attack", "tamper-matrix").exit_code == 0
    assert run("attack", "no-such-scenario").exit_code == 2


def test_exit_code_table_is_stable():
    result = run("exit-codes")
    assert result.output == (TESTDATA / "exit_codes.txt").read_text()
