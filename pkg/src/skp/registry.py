"""Authentication server store.

Signature records are indexed by the hash of the device ID.  Each entry
tracks a two-slot window of acceptable random numbers (current, previous),
a bounded ledger of retired ones, and fingerprints of requests already
accepted in the live window so byte-identical replays are refused.
"""
from __future__ import annotations

import enum
import hashlib
import os
import threading
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .crypto import DEFAULT_SUITE, CipherSuite, Crypto, get_suite
from .errors import (
    DeviceBusy,
    SkpError,
    SnapshotError,
    UniquenessExhausted,
    UnknownSuite,
)
from .records import DeviceState, SignatureRecord, atomic_write
from .wire import Reader, pack_field

SNAPSHOT_MAGIC = b"SKR1"
SNAPSHOT_VERSION = 1
DEFAULT_N_RETAIN = 1024
MAX_DRAWS = 64


class Freshness(enum.Enum):
    CURRENT = "current"
    PREVIOUS = "previous"
    STALE = "stale"


class Rotation(enum.Enum):
    FROM_CURRENT = "from_current"
    FROM_PREVIOUS = "from_previous"


@dataclass
class RegistryEntry:
    h_id: bytes
    sig: SignatureRecord
    r_current: bytes
    r_previous: bytes | None = None
    retired: deque = field(default_factory=deque)
    # request fingerprint -> the r value that request presented
    seen: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, RegistryEntry):
            return NotImplemented
        return (
            self.h_id == other.h_id
            and self.sig == other.sig
            and self.r_current == other.r_current
            and self.r_previous == other.r_previous
            and list(self.retired) == list(other.retired)
            and list(self.seen.items()) == list(other.seen.items())
        )


def check_freshness(entry: RegistryEntry, presented_r: bytes) -> Freshness:
    if presented_r == entry.r_current:
        return Freshness.CURRENT
    if entry.r_previous is not None and presented_r == entry.r_previous:
        return Freshness.PREVIOUS
    return Freshness.STALE


class Registry:
    """In-memory registry with snapshot persistence.

    All mutations hold one re-entrant lock.  ``device_session`` additionally
    guarantees at most one in-flight authentication per device.
    """

    def __init__(self, suite: CipherSuite = DEFAULT_SUITE, n_retain: int = DEFAULT_N_RETAIN):
        if n_retain < 1:
            raise ValueError("n_retain must be >= 1")
        self.suite = suite
        self.n_retain = n_retain
        self._entries: dict[bytes, RegistryEntry] = {}
        self._used_r: set[bytes] = set()
        self._lock = threading.RLock()
        self._busy: set[bytes] = set()

    def __len__(self):
        return len(self._entries)

    def __iter__(self) -> Iterator[RegistryEntry]:
        return iter(list(self._entries.values()))

    def __eq__(self, other):
        if not isinstance(other, Registry):
            return NotImplemented
        return self.suite == other.suite and self._entries == other._entries

    def _hash(self, data: bytes) -> bytes:
        return hashlib.new(self.suite.hash_name, data).digest()

    # -- provisioning ------------------------------------------------------

    def register_device(self, crypto: Crypto) -> DeviceState:
        """Create a new device; the returned state never holds the data key."""
        with self._lock:
            for _ in range(MAX_DRAWS):
                id_d = crypto.random_bytes(self.suite.id_len)
                h_id = self._hash(id_d)
                if h_id not in self._entries:
                    break
            else:
                raise UniquenessExhausted("could not draw an unused device id")
            key = crypto.random_bytes(self.suite.dk_len)
            r = self._draw_unused_r(crypto)
            self._entries[h_id] = RegistryEntry(h_id=h_id, sig=SignatureRecord(id_d, key), r_current=r)
            self._used_r.add(r)
        return DeviceState(id_d=id_d, r_current=r, suite_id=self.suite.suite_id)

    def _draw_unused_r(self, crypto: Crypto) -> bytes:
        for _ in range(MAX_DRAWS):
            r = crypto.random_number()
            if r not in self._used_r:
                return r
        raise UniquenessExhausted("could not draw an unused random number")

    def fresh_random(self, crypto: Crypto) -> bytes:
        """A random number distinct from every value the registry retains."""
        with self._lock:
            return self._draw_unused_r(crypto)

    # -- queries -----------------------------------------------------------

    def lookup(self, h_id: bytes) -> RegistryEntry | None:
        with self._lock:
            return self._entries.get(h_id)

    check_freshness = staticmethod(check_freshness)

    def is_replay(self, entry: RegistryEntry, fingerprint: bytes) -> bool:
        with self._lock:
            return fingerprint in entry.seen

    # -- mutation ----------------------------------------------------------

    def rotate(self, h_id: bytes, r_new: bytes, mode: Rotation) -> RegistryEntry:
        with self._lock:
            entry = self._entries[h_id]
            if r_new in self._used_r:
                raise ValueError("r_new is already retained by the registry")
            if mode is Rotation.FROM_CURRENT:
                if entry.r_previous is not None:
                    self._retire(entry, entry.r_previous)
                entry.r_previous = entry.r_current
            elif mode is Rotation.FROM_PREVIOUS:
                if entry.r_previous is None:
                    raise ValueError("no previous random number to rotate from")
                self._retire(entry, entry.r_current)
            else:
                raise ValueError(mode)
            entry.r_current = r_new
            self._used_r.add(r_new)
            return entry

    def _retire(self, entry: RegistryEntry, r: bytes):
        entry.retired.append(r)
        while len(entry.retired) > self.n_retain:
            self._used_r.discard(entry.retired.popleft())
        # requests that presented r are now rejected as stale anyway
        for fp in [fp for fp, presented in entry.seen.items() if presented == r]:
            del entry.seen[fp]

    def record_request(self, h_id: bytes, fingerprint: bytes, presented_r: bytes):
        with self._lock:
            seen = self._entries[h_id].seen
            seen[fingerprint] = presented_r
            while len(seen) > self.n_retain:
                del seen[next(iter(seen))]

    @contextmanager
    def device_session(self, h_id: bytes):
        with self._lock:
            if h_id in self._busy:
                raise DeviceBusy("authentication already in progress for this device")
            self._busy.add(h_id)
        try:
            yield
        finally:
            with self._lock:
                self._busy.discard(h_id)

    # -- persistence -------------------------------------------------------

    def to_bytes(self) -> bytes:
        with self._lock:
            out = [
                SNAPSHOT_MAGIC,
                bytes([SNAPSHOT_VERSION, self.suite.suite_id]),
                len(self._entries).to_bytes(4, "big"),
            ]
            for e in self._entries.values():
                out += [
                    pack_field(e.h_id),
                    pack_field(e.sig.id_d),
                    pack_field(e.sig.key),
                    pack_field(e.r_current),
                    pack_field(e.r_previous or b""),
                    len(e.retired).to_bytes(2, "big"),
                    *(pack_field(r) for r in e.retired),
                    len(e.seen).to_bytes(2, "big"),
                    *(pack_field(fp) + pack_field(r) for fp, r in e.seen.items()),
                ]
            return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes, n_retain: int = DEFAULT_N_RETAIN) -> "Registry":
        try:
            return cls._parse(data, n_retain)
        except SnapshotError:
            raise
        except (SkpError, ValueError) as exc:
            raise SnapshotError(f"corrupt registry snapshot: {exc}") from exc

    @classmethod
    def _parse(cls, data: bytes, n_retain: int) -> "Registry":
        r = Reader(data)
        if r.take(4) != SNAPSHOT_MAGIC:
            raise SnapshotError("not an SKR1 snapshot")
        version, suite_id = r.u8(), r.u8()
        if version != SNAPSHOT_VERSION:
            raise SnapshotError(f"snapshot version {version}")
        try:
            suite = get_suite(suite_id)
        except UnknownSuite as exc:
            raise SnapshotError(str(exc)) from exc
        reg = cls(suite, n_retain)
        for _ in range(r.uint(4)):
            h_id, id_d, key, r_cur, r_prev = (r.field() for _ in range(5))
            retired = deque(r.field() for _ in range(r.uint(2)))
            seen = {}
            for _ in range(r.uint(2)):
                fp = r.field()
                seen[fp] = r.field()
            entry = RegistryEntry(h_id, SignatureRecord(id_d, key), r_cur, r_prev or None, retired, seen)
            reg._check_entry(entry)
            reg._entries[h_id] = entry
            reg._used_r.update([r_cur, *retired])
            if entry.r_previous is not None:
                reg._used_r.add(entry.r_previous)
        r.finish()
        return reg

    def _check_entry(self, e: RegistryEntry):
        d = self.suite.digest_len
        if e.h_id in self._entries:
            raise SnapshotError("duplicate entry")
        if self._hash(e.sig.id_d) != e.h_id:
            raise SnapshotError("entry key does not match hash of device id")
        if len(e.r_current) != d or (e.r_previous is not None and len(e.r_previous) != d):
            raise SnapshotError("random number of wrong length")
        if e.r_current == e.r_previous or e.r_current in e.retired or e.r_previous in e.retired:
            raise SnapshotError("live random number also marked retired")

    def save(self, path: str | os.PathLike):
        atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike, n_retain: int = DEFAULT_N_RETAIN) -> "Registry":
        return cls.from_bytes(Path(path).read_bytes(), n_retain)


def save_snapshot(registry: Registry, path: str | os.PathLike):
    registry.save(path)


def load_snapshot(path: str | os.PathLike, n_retain: int = DEFAULT_N_RETAIN) -> Registry:
    return Registry.load(path, n_retain)
