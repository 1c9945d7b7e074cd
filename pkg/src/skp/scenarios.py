"""Named attack scenarios run by ``skp attack`` and the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass, field

from .crypto import DEFAULT_SUITE, CipherSuite, Crypto
from .harness import (
    REQUEST,
    RESPONSE,
    AdversaryScript,
    Drop,
    Eavesdrop,
    Replay,
    SimNetwork,
    Tamper,
    anonymity_probe,
    seeded_keypair,
)
from .protocol import AuthServer, RejectReason
from .registry import Freshness, Registry

R = RejectReason

# which check rejects a single corrupted field
TAMPER_EXPECTATIONS: dict[tuple[str, str], RejectReason] = {
    (REQUEST, "a"): R.PKE_DECRYPT_FAILED,
    (REQUEST, "h_x"): R.X_ACCURACY_MISMATCH,
    (REQUEST, "c_ct"): R.RD_ACCURACY_MISMATCH,
    (REQUEST, "h_rd"): R.RD_ACCURACY_MISMATCH,
    (RESPONSE, "b"): R.SIG_DECRYPT_FAILED,
    (RESPONSE, "h_y"): R.SERVER_PROOF_MISMATCH,
    (RESPONSE, "h_rnew"): R.RNEW_ACCURACY_MISMATCH,
    (RESPONSE, "g"): R.SIG_DECRYPT_FAILED,
}


@dataclass
class ScenarioReport:
    name: str
    checks: list = field(default_factory=list)
    details: list = field(default_factory=list)

    def check(self, description: str, ok: bool) -> bool:
        self.checks.append((description, bool(ok)))
        return ok

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(ok for _, ok in self.checks)

    def render(self) -> str:
        lines = [f"scenario {self.name}"]
        lines += [f"  {d}" for d in self.details]
        lines += [f"  [{'PASS' if ok else 'FAIL'}] {desc}" for desc, ok in self.checks]
        lines.append(f"  => {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _setup(seed: int, suite: CipherSuite, *, rotate: bool = True):
    crypto = Crypto.seeded(seed, suite)
    registry = Registry(suite)
    dev = registry.register_device(crypto)
    server = AuthServer(registry, seeded_keypair(seed, suite), crypto, rotate=rotate)
    return crypto, registry, dev, server


def replay(seed: int = 7, sessions: int = 3, suite: CipherSuite = DEFAULT_SUITE) -> ScenarioReport:
    """Capture every request, replay each after its session and again at the end."""
    actions = [Eavesdrop(s, REQUEST) for s in range(sessions)]
    actions += [Replay(s, after_session=s) for s in range(sessions)]
    actions += [Replay(s, after_session=sessions - 1) for s in range(sessions)]
    crypto, registry, dev, server = _setup(seed, suite)
    net = SimNetwork(server, crypto, AdversaryScript(actions, sessions))
    outcomes, dev = net.run(dev)

    report = ScenarioReport("replay")
    report.details += [str(o) for o in outcomes]
    honest = [o for o in outcomes if o.label.startswith("session")]
    replays = [o for o in outcomes if o.label.startswith("replay")]
    report.check(f"all {sessions} honest sessions authenticate", all(o.succeeded for o in honest))
    report.check(
        f"all {len(replays)} replays rejected with ReplayDetected",
        all(o.error == (R.REPLAY_DETECTED, "3-5") for o in replays),
    )
    report.check("zero replays accepted", not any(o.server and o.server.identified for o in replays))
    return report


def tamper_matrix(seed: int = 11, suite: CipherSuite = DEFAULT_SUITE) -> ScenarioReport:
    """Corrupt each of the 8 message fields once, one fresh deployment per cell."""
    report = ScenarioReport("tamper-matrix")

    _, baseline_registry, _, _ = _run_one(seed, suite, Drop(0, RESPONSE))
    for (message, name), expected in TAMPER_EXPECTATIONS.items():
        crypto, registry, before, dev_before, outcome, dev_after, server = _run_cell(seed, suite, message, name)
        got = outcome.error
        report.details.append(f"{message}.{name}: {got[0].label + ' at ' + got[1] if got else 'no error'}")
        report.check(f"{message}.{name} -> {expected.label}", got is not None and got[0] is expected)
        report.check(f"{message}.{name}: device state unchanged", dev_after == dev_before)
        if message == REQUEST:
            report.check(f"{message}.{name}: registry unchanged", registry.to_bytes() == before)
        else:
            # the server committed step 4 before the tamper; it must match an untampered delivery
            report.check(
                f"{message}.{name}: registry identical to the untampered run",
                registry.to_bytes() == baseline_registry.to_bytes(),
            )
        follow_up, _ = SimNetwork(server, crypto).run_session(dev_after, 1)
        report.check(f"{message}.{name}: next honest session succeeds", follow_up.succeeded)
    return report


def _run_cell(seed, suite, message, name):
    crypto, registry, dev, server = _setup(seed, suite)
    before = registry.to_bytes()
    net = SimNetwork(server, crypto, AdversaryScript([Tamper(0, message, name)], 1))
    (outcome,), dev_after = net.run(dev)
    return crypto, registry, before, dev, outcome, dev_after, server


def _run_one(seed, suite, action):
    crypto, registry, dev, server = _setup(seed, suite)
    net = SimNetwork(server, crypto, AdversaryScript([action], 1))
    (outcome,), dev_after = net.run(dev)
    return outcome, registry, dev_after, server


def drop_recovery(seed: int = 5, suite: CipherSuite = DEFAULT_SUITE) -> ScenarioReport:
    """Lose a response, retry on the previous random number, then replay that era."""
    script = AdversaryScript(
        [
            Eavesdrop(0, REQUEST),
            Drop(0, RESPONSE),
            Eavesdrop(1, REQUEST),
            Replay(0, after_session=1),
            Replay(1, after_session=1),
            Replay(0, after_session=2),
        ],
        sessions=3,
    )
    crypto, registry, dev, server = _setup(seed, suite)
    r0 = dev.r_current
    net = SimNetwork(server, crypto, script)
    outcomes, dev = net.run(dev)
    s0, s1, rep0, rep1, s2, rep0_late = outcomes

    report = ScenarioReport("drop-recovery")
    report.details += [str(o) for o in outcomes]
    report.check("first response dropped after the server identified", s0.dropped == RESPONSE and s0.server.identified)
    report.check(
        "retry on the same random number succeeds via previous-slot recovery",
        s1.succeeded and s1.server.freshness is Freshness.PREVIOUS and s1.server.recovered_r == r0,
    )
    report.check("replay of the dropped session's request rejected", rep0.error == (R.REPLAY_DETECTED, "3-5"))
    report.check("replay of the retry request rejected", rep1.error == (R.REPLAY_DETECTED, "3-5"))
    report.check("next honest session succeeds", s2.succeeded)
    report.check("dropped-era request still rejected later", rep0_late.error == (R.REPLAY_DETECTED, "3-5"))
    return report


def anonymity(
    seed: int = 1,
    devices: int = 5,
    sessions: int = 10,
    repetitions: int = 20,
    suite: CipherSuite = DEFAULT_SUITE,
) -> ScenarioReport:
    report = ScenarioReport("anonymity")
    probe = anonymity_probe(devices, sessions, suite, seed, repetitions=repetitions)
    report.details.append(f"{devices} devices x {sessions} sessions x {repetitions} repetitions, "
                          f"{probe.captures} captured requests")
    for desc, ok in probe.lines():
        report.check(desc, ok)
    control = anonymity_probe(devices, sessions, suite, seed, repetitions=1, rotate=False)
    report.check(
        "negative control (rotation disabled) is caught by the distinctness check",
        not control.fields_distinct,
    )
    return report


SCENARIOS = {
    "replay": replay,
    "tamper-matrix": tamper_matrix,
    "drop-recovery": drop_recovery,
    "anonymity": anonymity,
}
