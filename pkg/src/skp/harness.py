"""Simulated broker network with a scriptable adversary.

The broker is the transport itself: it sends Hello to the device and relays
frames unchanged unless an adversary action says otherwise.  Everything that
crosses the wire is appended to a :class:`Transcript`.  With a seeded
:class:`~skp.crypto.Crypto` the transcript is bit-identical across runs.
"""
from __future__ import annotations

import functools
import json
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Union

from .crypto import DEFAULT_SUITE, CipherSuite, Crypto, PkeKeyPair
from .errors import WireError
from .protocol import (
    AuthServer,
    DeviceDecision,
    RejectReason,
    ServerDecision,
    device_build_request,
    device_process_response,
)
from .records import DeviceState
from .registry import Registry
from .wire import AuthRequest, AuthResponse, ErrorNotice, Hello, decode, encode

BROKER_TO_DEVICE = "broker>device"
DEVICE_TO_SERVER = "device>server"
SERVER_TO_DEVICE = "server>device"
ADVERSARY_TO_SERVER = "adversary>server"
ADVERSARY_TO_DEVICE = "adversary>device"

REQUEST = "request"
RESPONSE = "response"


# -- transcript -------------------------------------------------------------

@dataclass(frozen=True)
class TranscriptRecord:
    direction: str
    frame: bytes
    counter: int
    outcome: str

    def to_json(self) -> str:
        return json.dumps(
            {"dir": self.direction, "frame": self.frame.hex(), "n": self.counter, "outcome": self.outcome},
            sort_keys=True,
        )


class Transcript:
    """Append-only log of raw frames with a logical clock."""

    def __init__(self, records: Iterable[TranscriptRecord] = ()):
        self._records = list(records)

    def add(self, direction: str, frame: bytes, outcome: str) -> TranscriptRecord:
        rec = TranscriptRecord(direction, bytes(frame), len(self._records), outcome)
        self._records.append(rec)
        return rec

    def __iter__(self):
        return iter(self._records)

    def __len__(self):
        return len(self._records)

    def __getitem__(self, i):
        return self._records[i]

    def __eq__(self, other):
        return isinstance(other, Transcript) and self._records == other._records

    def frames(self, direction: str | None = None) -> list[bytes]:
        return [r.frame for r in self._records if direction is None or r.direction == direction]

    def dumps(self) -> str:
        return "".join(r.to_json() + "\n" for r in self._records)

    @classmethod
    def loads(cls, text: str) -> "Transcript":
        records = []
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                records.append(TranscriptRecord(d["dir"], bytes.fromhex(d["frame"]), d["n"], d["outcome"]))
        return cls(records)


# -- adversary script -------------------------------------------------------

@dataclass(frozen=True)
class Eavesdrop:
    """Copy the selected frame, as sent, into the capture list."""

    session: int
    message: str


@dataclass(frozen=True)
class Replay:
    """Re-inject a captured frame once session ``after_session`` has finished."""

    capture: int
    after_session: int


@dataclass(frozen=True)
class Tamper:
    """XOR ``mutation`` into the leading octets of one message field.

    With no mutation the low bit of the field's last octet is flipped.
    """

    session: int
    message: str
    field: str
    mutation: Optional[bytes] = None


@dataclass(frozen=True)
class Drop:
    session: int
    message: str


@dataclass(frozen=True)
class PassThrough:
    pass


Action = Union[Eavesdrop, Replay, Tamper, Drop, PassThrough]

_FIELDS = {REQUEST: ("a", "h_x", "c_ct", "h_rd"), RESPONSE: ("b", "h_y", "h_rnew", "g")}


@dataclass(frozen=True)
class AdversaryScript:
    actions: tuple = ()
    sessions: int = 1

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        captures = 0
        seen = set()
        for act in self.actions:
            if isinstance(act, (Eavesdrop, Tamper, Drop)):
                if act.message not in _FIELDS:
                    raise ValueError(f"unknown message selector {act.message!r}")
                if not 0 <= act.session < self.sessions:
                    raise ValueError(f"session {act.session} outside script range")
            if isinstance(act, Eavesdrop):
                captures += 1
            elif isinstance(act, Tamper):
                if act.field not in _FIELDS[act.message]:
                    raise ValueError(f"{act.message} has no field {act.field!r}")
            if isinstance(act, (Tamper, Drop)):
                key = (act.session, act.message)
                if key in seen:
                    raise ValueError(f"more than one rewrite of {key}")
                seen.add(key)
            elif isinstance(act, Replay):
                if not 0 <= act.capture < captures:
                    raise ValueError(f"replay of capture {act.capture} before it is taken")
                if not 0 <= act.after_session < self.sessions:
                    raise ValueError(f"replay after session {act.after_session} outside script range")

    def for_message(self, session: int, message: str) -> list:
        return [
            a for a in self.actions
            if isinstance(a, (Eavesdrop, Tamper, Drop)) and a.session == session and a.message == message
        ]

    def replays_after(self, session: int) -> list[Replay]:
        return [a for a in self.actions if isinstance(a, Replay) and a.after_session == session]


def tamper_frame(frame: bytes, field_name: str, mutation: bytes | None, suite: CipherSuite) -> bytes:
    msg = decode(frame, suite)
    if not hasattr(msg, field_name):
        return frame  # e.g. an error notice where a response was expected
    value = bytearray(getattr(msg, field_name))
    if mutation is None:
        value[-1] ^= 0x01
    else:
        for i, m in enumerate(mutation[: len(value)]):
            value[i] ^= m
    return encode(replace(msg, **{field_name: bytes(value)}), suite)


# -- sessions ---------------------------------------------------------------

@dataclass
class SessionOutcome:
    label: str
    server: ServerDecision | None = None
    device: DeviceDecision | None = None
    server_error: int | None = None
    dropped: str | None = None

    @property
    def error(self) -> tuple[RejectReason, str] | None:
        """The protocol rejection that fired, with its sub-step."""
        for d in (self.server, self.device):
            if d is not None and d.reason is not None:
                return d.reason, d.step
        return None

    @property
    def succeeded(self) -> bool:
        return (
            self.server is not None and self.server.identified
            and self.device is not None and self.device.authenticated
        )

    def __str__(self):
        err = self.error
        if self.dropped:
            status = f"dropped {self.dropped}"
        elif err:
            status = f"{err[0].label} at {err[1]}"
        elif self.succeeded:
            status = "ServerAuthenticated + Identified"
        else:
            status = "incomplete"
        return f"{self.label}: {status}"


def reply_outcome(reply: bytes | None, suite: CipherSuite) -> str:
    """Transcript outcome tag for a request, derived from the reply frame."""
    if reply is None:
        return "dropped"
    try:
        msg = decode(reply, suite)
    except WireError:
        return "garbled-reply"
    if isinstance(msg, ErrorNotice):
        return f"error:{msg.text or msg.code}"
    return "answered"


def device_receive(
    dev: DeviceState, reply: bytes, crypto: Crypto
) -> tuple[DeviceDecision | None, ErrorNotice | None, DeviceState]:
    """Decode a reply and, if it is an AuthResponse, run step 5 on it."""
    try:
        msg = decode(reply, crypto.suite)
    except WireError:
        return None, ErrorNotice(WireError.code, "undecodable reply"), dev
    if isinstance(msg, ErrorNotice):
        return None, msg, dev
    if not isinstance(msg, AuthResponse):
        return None, ErrorNotice(WireError.code, "unexpected reply type"), dev
    decision, new_state = device_process_response(dev, msg, crypto)
    return decision, None, new_state


def device_exchange(
    dev: DeviceState,
    server_pub: bytes,
    crypto: Crypto,
    exchange: Callable[[bytes], bytes],
    transcript: Transcript,
) -> tuple[DeviceDecision | None, ErrorNotice | None, DeviceState]:
    """Broker side of one session over an arbitrary request/reply transport."""
    suite = crypto.suite
    transcript.add(BROKER_TO_DEVICE, encode(Hello(), suite), "hello")
    frame = encode(device_build_request(dev, server_pub, crypto), suite)
    reply = exchange(frame)
    transcript.add(DEVICE_TO_SERVER, frame, reply_outcome(reply, suite))
    decision, error, new_state = device_receive(dev, reply, crypto)
    transcript.add(SERVER_TO_DEVICE, reply, str(decision) if decision else f"error:{error.text}")
    return decision, error, new_state


class SimNetwork:
    """Deterministic in-process network joining one device and one server."""

    def __init__(self, server: AuthServer, crypto: Crypto, script: AdversaryScript | None = None):
        self.server = server
        self.crypto = crypto
        self.script = script or AdversaryScript()
        self.transcript = Transcript()
        self.captures: list[tuple[str, bytes]] = []

    @property
    def suite(self) -> CipherSuite:
        return self.crypto.suite

    def _adversary(self, session: int, message: str, frame: bytes) -> bytes | None:
        for act in self.script.for_message(session, message):
            if isinstance(act, Eavesdrop):
                self.captures.append((message, frame))
        for act in self.script.for_message(session, message):
            if isinstance(act, Drop):
                return None
            if isinstance(act, Tamper):
                frame = tamper_frame(frame, act.field, act.mutation, self.suite)
        return frame

    def run_session(self, dev: DeviceState, session: int = 0) -> tuple[SessionOutcome, DeviceState]:
        suite = self.suite
        out = SessionOutcome(label=f"session {session}")
        self.transcript.add(BROKER_TO_DEVICE, encode(Hello(), suite), "hello")

        frame = encode(device_build_request(dev, self.server.keypair.public_key, self.crypto), suite)
        frame = self._adversary(session, REQUEST, frame)
        if frame is None:
            self.transcript.add(DEVICE_TO_SERVER, b"", "dropped")
            out.dropped = REQUEST
            return out, dev
        reply = self.server.handle_frame(frame)
        out.server = self.server.last_decision
        self.transcript.add(DEVICE_TO_SERVER, frame, reply_outcome(reply, suite))

        reply = self._adversary(session, RESPONSE, reply)
        if reply is None:
            self.transcript.add(SERVER_TO_DEVICE, b"", "dropped")
            out.dropped = RESPONSE
            return out, dev
        out.device, err, dev = device_receive(dev, reply, self.crypto)
        if err is not None:
            out.server_error = err.code
        self.transcript.add(SERVER_TO_DEVICE, reply, str(out.device) if out.device else f"error:{err.text}")
        return out, dev

    def inject(self, capture: int, dev: DeviceState) -> tuple[SessionOutcome, DeviceState]:
        """Deliver a captured frame again, to whichever end it was addressed."""
        message, frame = self.captures[capture]
        out = SessionOutcome(label=f"replay of capture {capture} ({message})")
        if message == REQUEST:
            reply = self.server.handle_frame(frame)
            out.server = self.server.last_decision
            self.transcript.add(ADVERSARY_TO_SERVER, frame, reply_outcome(reply, self.suite))
        else:
            out.device, err, dev = device_receive(dev, frame, self.crypto)
            if err is not None:
                out.server_error = err.code
            self.transcript.add(ADVERSARY_TO_DEVICE, frame, str(out.device) if out.device else "error")
        return out, dev

    def run(self, dev: DeviceState) -> tuple[list[SessionOutcome], DeviceState]:
        outcomes = []
        for s in range(self.script.sessions):
            out, dev = self.run_session(dev, s)
            outcomes.append(out)
            for rep in self.script.replays_after(s):
                out, dev = self.inject(rep.capture, dev)
                outcomes.append(out)
        return outcomes, dev


def run_honest_session(
    dev: DeviceState, server: AuthServer, crypto: Crypto
) -> tuple[DeviceDecision | None, ServerDecision | None, Transcript, DeviceState]:
    net = SimNetwork(server, crypto)
    out, dev = net.run_session(dev)
    return out.device, out.server, net.transcript, dev


def run_with_adversary(
    dev: DeviceState, server: AuthServer, crypto: Crypto, script: AdversaryScript
) -> tuple[list[SessionOutcome], Transcript, DeviceState]:
    net = SimNetwork(server, crypto, script)
    outcomes, dev = net.run(dev)
    return outcomes, net.transcript, dev


# -- anonymity probe --------------------------------------------------------

@dataclass
class ProbeReport:
    devices: int
    sessions: int
    repetitions: int
    captures: int = 0
    substring_leaks: list = field(default_factory=list)
    repeated_fields: set = field(default_factory=set)
    linker_accuracies: list = field(default_factory=list)
    baseline: float = 0.0
    margin: float = 0.05

    @property
    def no_substrings(self) -> bool:
        return not self.substring_leaks

    @property
    def fields_distinct(self) -> bool:
        return not self.repeated_fields

    @property
    def linker_accuracy(self) -> float:
        return sum(self.linker_accuracies) / len(self.linker_accuracies)

    @property
    def linker_at_chance(self) -> bool:
        return self.linker_accuracy - self.baseline <= self.margin

    @property
    def passed(self) -> bool:
        return self.no_substrings and self.fields_distinct and self.linker_at_chance

    def lines(self) -> list[tuple[str, bool]]:
        return [
            ("no frame contains an ID or hash of ID", self.no_substrings),
            (
                "per-device requests distinct in every field"
                + (f" (repeated: {', '.join(sorted(self.repeated_fields))})" if self.repeated_fields else ""),
                self.fields_distinct,
            ),
            (
                f"linker accuracy {self.linker_accuracy:.3f} vs baseline {self.baseline:.3f}"
                f" (margin {self.margin:.2f})",
                self.linker_at_chance,
            ),
        ]


def link_sessions(captures: list[AuthRequest], rng: random.Random) -> list[int]:
    """Greedy field-equality linker.

    For each capture, guess a partner sharing any field value; without one,
    guess uniformly among the other captures.
    """
    by_value: dict[tuple[str, bytes], list[int]] = {}
    for i, req in enumerate(captures):
        for name in _FIELDS[REQUEST]:
            by_value.setdefault((name, getattr(req, name)), []).append(i)
    guesses = []
    for i, req in enumerate(captures):
        partner = None
        for name in _FIELDS[REQUEST]:
            others = [j for j in by_value[(name, getattr(req, name))] if j != i]
            if others:
                partner = others[0]
                break
        if partner is None:
            partner = rng.choice([j for j in range(len(captures)) if j != i])
        guesses.append(partner)
    return guesses


@functools.lru_cache(maxsize=8)
def seeded_keypair(seed: int, suite: CipherSuite = DEFAULT_SUITE) -> PkeKeyPair:
    return Crypto.seeded(seed, suite).pke_keygen()


def anonymity_probe(
    devices: int,
    sessions: int,
    suite: CipherSuite = DEFAULT_SUITE,
    seed: int = 0,
    *,
    repetitions: int = 1,
    rotate: bool = True,
    margin: float = 0.05,
    keypair: PkeKeyPair | None = None,
) -> ProbeReport:
    """Passive-capture unlinkability check over ``devices`` x ``sessions`` runs.

    ``rotate=False`` switches on the server's test-only hook that re-issues
    the same random number, which must make the probe fail.
    """
    if devices < 2 or sessions < 2:
        raise ValueError("need at least 2 devices and 2 sessions")
    keypair = keypair or seeded_keypair(seed, suite)
    total = devices * sessions
    report = ProbeReport(
        devices, sessions, repetitions, baseline=(sessions - 1) / (total - 1), margin=margin
    )
    for rep in range(repetitions):
        crypto = Crypto.seeded(seed * 1_000_003 + rep, suite)
        registry = Registry(suite)
        devs = [registry.register_device(crypto) for _ in range(devices)]
        server = AuthServer(registry, keypair, crypto, rotate=rotate)
        net = SimNetwork(server, crypto)
        owners, captures = [], []
        for s in range(sessions):
            for d in range(devices):
                out, devs[d] = net.run_session(devs[d], s)
                if not out.succeeded:
                    raise RuntimeError(f"honest session failed during probe: {out}")
                owners.append(d)
                captures.append(decode(net.transcript.frames(DEVICE_TO_SERVER)[-1], suite))
        report.captures += len(captures)

        secrets = []
        for e in registry:
            secrets += [e.sig.id_d, e.h_id]
        for rec in net.transcript:
            for secret in secrets:
                if secret in rec.frame:
                    report.substring_leaks.append((rep, rec.counter))

        for d in range(devices):
            mine = [c for c, o in zip(captures, owners) if o == d]
            for name in _FIELDS[REQUEST]:
                values = [getattr(c, name) for c in mine]
                if len(set(values)) != len(values):
                    report.repeated_fields.add(name)

        guesses = link_sessions(captures, random.Random(seed * 7919 + rep))
        hits = sum(owners[i] == owners[j] for i, j in enumerate(guesses))
        report.linker_accuracies.append(hits / total)
    return report
