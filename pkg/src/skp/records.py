"""Signature records, device state, and the device state file."""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .errors import BadMagic, SuiteMismatch, UnsupportedVersion, WireError
from .wire import Reader, pack_field

DEVICE_MAGIC = b"SKD1"
DEVICE_VERSION = 1


@dataclass(frozen=True)
class SignatureRecord:
    """The server-held pair of device ID and data key."""

    id_d: bytes
    key: bytes

    def to_bytes(self) -> bytes:
        return pack_field(self.id_d) + pack_field(self.key)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SignatureRecord":
        r = Reader(data)
        id_d, key = r.field(), r.field()
        r.finish()
        return cls(id_d, key)

    def __repr__(self):
        return f"SignatureRecord(id_d={self.id_d.hex()}, key=<redacted>)"


@dataclass(frozen=True)
class DeviceState:
    id_d: bytes
    r_current: bytes
    suite_id: int
    vault: bytes = b""

    def __repr__(self):
        return (
            f"DeviceState(suite_id={self.suite_id}, id_d=<{len(self.id_d)} bytes>, "
            f"r_current=<{len(self.r_current)} bytes>, vault=<{len(self.vault)} bytes>)"
        )

    def to_bytes(self) -> bytes:
        # the vault gets a 4-octet prefix so payloads beyond 64 KiB fit
        return (
            DEVICE_MAGIC
            + bytes([DEVICE_VERSION, self.suite_id])
            + pack_field(self.id_d)
            + pack_field(self.r_current)
            + pack_field(self.vault, width=4)
        )

    @classmethod
    def from_bytes(cls, data: bytes, suite_id: int | None = None) -> "DeviceState":
        r = Reader(data)
        if r.take(4) != DEVICE_MAGIC:
            raise BadMagic("not an SKD1 device file")
        version, sid = r.u8(), r.u8()
        if version != DEVICE_VERSION:
            raise UnsupportedVersion(f"device file version {version}")
        if suite_id is not None and sid != suite_id:
            raise SuiteMismatch(f"device file suite {sid}, expected {suite_id}")
        id_d, r_current, vault = r.field(), r.field(), r.field(width=4)
        r.finish()
        if not id_d or not r_current:
            raise WireError("device file lacks id or random number")
        return cls(id_d=id_d, r_current=r_current, suite_id=sid, vault=vault)


def atomic_write(path: str | os.PathLike, data: bytes, mode: int = 0o600):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        os.fchmod(fd, mode)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def save_device(state: DeviceState, path: str | os.PathLike):
    atomic_write(path, state.to_bytes())


def load_device(path: str | os.PathLike, suite_id: int | None = None) -> DeviceState:
    return DeviceState.from_bytes(Path(path).read_bytes(), suite_id)
