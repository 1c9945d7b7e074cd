"""End-to-end acceptance criteria.

Run with ``pytest tests/test_acceptance.py -s`` to see each criterion's
PASS/FAIL line as it completes; the same lines are repeated in the
terminal summary.
"""
import os
import random
from pathlib import Path

from click.testing import CliRunner

from goldens import TESTDATA, golden_run
from skp.cli import EXIT_TAG_MISMATCH, main
from skp.crypto import DEFAULT_SUITE, Crypto, xor_digest
from skp.errors import AuthTagMismatch, SkpError
from skp.harness import (
    REQUEST,
    AdversaryScript,
    Eavesdrop,
    Replay,
    SimNetwork,
    anonymity_probe,
    run_honest_session,
)
from skp.protocol import AuthServer, RejectReason, device_build_request
from skp.records import DeviceState
from skp.registry import Registry
from skp.scenarios import TAMPER_EXPECTATIONS, drop_recovery, tamper_matrix
from skp.wire import decode, encode
from test_cli import Server
from test_crypto import PBKDF2_SHA256_VECTORS

R = RejectReason
TRIALS = 1000


def test_1_honest_runs(criterion, keypair):
    with criterion(1, "100 honest runs: both sides authenticate, k agrees, Sig.id_d matches"):
        pairs = 0
        for seed in range(10):
            crypto = Crypto.seeded(1000 + seed)
            registry = Registry()
            server = AuthServer(registry, keypair, crypto)
            devices = [registry.register_device(crypto) for _ in range(2)]
            for _ in range(5):
                for i, dev in enumerate(devices):
                    dd, sd, _, devices[i] = run_honest_session(dev, server, crypto)
                    assert sd.identified and sd.h_id == crypto.hash(dev.id_d)
                    assert dd.authenticated and str(dd) == "ServerAuthenticated"
                    entry = registry.lookup(sd.h_id)
                    server_k = crypto.derive_key(entry.sig.id_d, entry.r_current)
                    assert dd.k == server_k
                    assert dd.sig == entry.sig and dd.sig.id_d == dev.id_d
                    pairs += 1
        assert pairs == 100


def test_2_replay_suite(criterion, keypair):
    with criterion(2, "50 replayed requests and retired-r requests: zero false accepts"):
        sessions = 50
        crypto = Crypto.seeded(2002)
        registry = Registry()
        server = AuthServer(registry, keypair, crypto)
        dev = registry.register_device(crypto)
        actions = [Eavesdrop(s, REQUEST) for s in range(sessions)]
        actions += [Replay(s, after_session=s) for s in range(sessions)]
        net = SimNetwork(server, crypto, AdversaryScript(actions, sessions))

        history = [dev]
        honest, replays = [], []
        for s in range(sessions):
            out, dev = net.run_session(dev, s)
            honest.append(out)
            history.append(dev)
            for replay in net.script.replays_after(s):
                replays.append(net.inject(replay.capture, dev)[0])
        assert all(o.succeeded for o in honest)
        assert len(replays) == sessions
        assert all(o.error == (R.REPLAY_DETECTED, "3-5") for o in replays)

        # a device state three rotations behind builds a fresh request on a retired r
        false_accepts = 0
        for old in history[:-3]:
            decision, _ = server.handle(device_build_request(old, keypair.public_key, crypto))
            assert decision.reason is R.REPLAY_DETECTED
            false_accepts += decision.identified
        false_accepts += sum(bool(o.server and o.server.identified) for o in replays)
        assert false_accepts == 0


def test_3_tamper_matrix(criterion):
    with criterion(3, "8-cell tamper matrix: documented rejection per cell, no state damage"):
        for seed in (11, 12):
            report = tamper_matrix(seed)
            print(report.render())
            assert report.passed
            cells = [desc for desc, _ in report.checks if " -> " in desc]
            assert len(cells) == len(TAMPER_EXPECTATIONS) == 8


def test_4_anonymity_probe(criterion):
    with criterion(4, "anonymity probe 5x10x20 within 5 points of chance; negative control fails (ii)"):
        report = anonymity_probe(5, 10, seed=1, repetitions=20, margin=0.05)
        for desc, ok in report.lines():
            print(f"  [{'ok' if ok else 'FAIL'}] {desc}")
        assert report.no_substrings
        assert report.fields_distinct
        assert report.linker_accuracy <= report.baseline + 0.05
        control = anonymity_probe(5, 10, seed=1, repetitions=1, rotate=False)
        assert not control.fields_distinct


def test_5_primitive_oracles(criterion):
    with criterion(5, "published PBKDF2 vectors and 1000-trial primitive properties"):
        crypto = Crypto.seeded(5005)
        assert len(PBKDF2_SHA256_VECTORS) >= 4
        for password, salt, c, dk_len, expected in PBKDF2_SHA256_VECTORS:
            assert crypto.derive_key(password, salt, c, dk_len).hex() == expected

        rng = random.Random(5005)
        pair = crypto.pke_keygen()
        max_pke = DEFAULT_SUITE.rsa_bits // 8 - 2 * DEFAULT_SUITE.digest_len - 2  # OAEP capacity
        for _ in range(TRIALS):
            a, b = rng.randbytes(32), rng.randbytes(32)
            assert xor_digest(xor_digest(a, b), b) == a

            key, msg = rng.randbytes(rng.randint(1, 64)), rng.randbytes(rng.randint(0, 512))
            assert crypto.ske_decrypt(key, crypto.ske_encrypt(key, msg)) == msg

            m = rng.randbytes(rng.randint(1, max_pke))
            c1, c2 = crypto.pke_encrypt(pair.public_key, m), crypto.pke_encrypt(pair.public_key, m)
            assert crypto.pke_decrypt(pair.private_key, c1) == m
            assert c1 != c2


def test_6_desync_recovery(criterion):
    with criterion(6, "dropped response recovered via previous slot; that era's replays rejected"):
        report = drop_recovery(seed=5)
        print(report.render())
        assert report.passed
        assert drop_recovery(seed=5).render() == report.render()


def _fuzz_frames(rng, seeds):
    for i in range(10_000):
        kind = i % 4
        if kind == 0:
            yield rng.randbytes(rng.randint(0, 600))
        elif kind == 1:  # valid header, random body
            yield b"SKP1\x01\x01" + bytes([rng.randint(0, 5)]) + rng.randbytes(rng.randint(0, 600))
        else:
            frame = bytearray(rng.choice(seeds))
            for _ in range(rng.randint(1, 4)):
                frame[rng.randrange(len(frame))] = rng.randrange(256)
            if kind == 3:
                frame = frame[: rng.randrange(len(frame) + 1)]
            yield bytes(frame)


def test_7_format_stability(criterion):
    with criterion(7, "goldens, device file and snapshot round-trip; 10000 fuzzed frames give typed errors"):
        golden = golden_run()
        for name, data in golden.items():
            assert data == (TESTDATA / name).read_bytes(), name
        frames = [golden["auth_request.bin"], golden["auth_response.bin"]]
        for f in frames:
            assert encode(decode(f, DEFAULT_SUITE), DEFAULT_SUITE) == f
        assert DeviceState.from_bytes(golden["device.skd"]).to_bytes() == golden["device.skd"]
        assert Registry.from_bytes(golden["registry.skr"]).to_bytes() == golden["registry.skr"]

        typed = decoded = 0
        for frame in _fuzz_frames(random.Random(7007), frames):
            try:
                decode(frame, DEFAULT_SUITE)
                decoded += 1
            except SkpError:
                typed += 1
        assert typed + decoded == 10_000 and typed > 0
        print(f"  fuzz: {typed} typed errors, {decoded} frames decoded")


def test_8_end_to_end_service(criterion, tmp_path, monkeypatch):
    with criterion(8, "loopback provision/serve/auth/seal/open of 1 MiB; wrong key fails with tag mismatch"):
        monkeypatch.chdir(tmp_path)

        def cli(*args):
            return CliRunner().invoke(main, list(args), catch_exceptions=False).exit_code

        assert cli("keygen", "--out", "srv") == 0
        assert cli("provision", "--registry", "reg.skr", "--device", "dev.skd") == 0
        server = Server("reg.skr", "srv")
        try:
            auth = ["auth", "--device", "dev.skd", "--connect", server.address, "--server-pub", "srv.pub"]
            assert cli(*auth, "--key-out", "k1") == 0
            payload = os.urandom(1 << 20)
            Path("in.bin").write_bytes(payload)
            assert cli("vault", "seal", "--device", "dev.skd", "--data", "in.bin", "--key-file", "k1", "--keep-key") == 0
            assert cli("vault", "open", "--device", "dev.skd", "--data", "out.bin", "--key-file", "k1", "--keep-key") == 0
            assert Path("out.bin").read_bytes() == payload

            # the data key is stable across sessions; another device's key is the wrong key
            assert cli(*auth, "--key-out", "k1-again") == 0
            assert Path("k1-again").read_bytes() == Path("k1").read_bytes()
            assert cli("provision", "--registry", "reg.skr", "--device", "other.skd") == 0
            server.stop()
            server = Server("reg.skr", "srv")  # reload the registry with the new device
            other = ["auth", "--device", "other.skd", "--connect", server.address, "--server-pub", "srv.pub"]
            assert cli(*other, "--key-out", "k2") == 0
            assert Path("k2").read_bytes() != Path("k1").read_bytes()
            assert cli("vault", "open", "--device", "dev.skd", "--data", "x.bin", "--key-file", "k2") == EXIT_TAG_MISMATCH
            assert not Path("x.bin").exists() and Path("k2").exists()

            # the stolen device file alone does not yield the data key
            dev = DeviceState.from_bytes(Path("dev.skd").read_bytes())
            assert Path("k1").read_bytes() not in Path("dev.skd").read_bytes()
            crypto = Crypto()
            for guess in (dev.id_d, dev.r_current, crypto.derive_key(dev.id_d, dev.r_current)):
                try:
                    crypto.ske_decrypt(guess, dev.vault)
                    raise AssertionError("device file contents opened the vault")
                except AuthTagMismatch:
                    pass
        finally:
            server.stop()
