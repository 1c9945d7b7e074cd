"""Binary framing for the three protocol messages plus an error notice.

Frame layout::

    magic "SKP1" | version (1) | suite_id (1) | msg_type (1) | payload

The payload is the message's fields in declaration order, each prefixed with
a 2-octet big-endian length.  An ErrorNotice payload is a raw code octet
followed by one length-prefixed UTF-8 text field (possibly empty).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import Union

from .crypto import CipherSuite
from .errors import (
    BadDigestLength,
    BadMagic,
    EmptyField,
    FieldTooLong,
    SuiteMismatch,
    TrailingBytes,
    TruncatedFrame,
    UnknownMessageType,
    UnsupportedVersion,
)

MAGIC = b"SKP1"
VERSION = 1
HEADER_LEN = 7
MAX_FRAME = 0xFFFF

MSG_HELLO = 1
MSG_AUTH_REQUEST = 2
MSG_AUTH_RESPONSE = 3
MSG_ERROR = 4


@dataclass(frozen=True)
class Hello:
    msg_type = MSG_HELLO


@dataclass(frozen=True)
class AuthRequest:
    a: bytes
    h_x: bytes
    c_ct: bytes
    h_rd: bytes

    msg_type = MSG_AUTH_REQUEST
    digest_fields = ("h_x", "h_rd")


@dataclass(frozen=True)
class AuthResponse:
    b: bytes
    h_y: bytes
    h_rnew: bytes
    g: bytes

    msg_type = MSG_AUTH_RESPONSE
    digest_fields = ("h_y", "h_rnew")


@dataclass(frozen=True)
class ErrorNotice:
    code: int
    text: str = ""

    msg_type = MSG_ERROR


Message = Union[Hello, AuthRequest, AuthResponse, ErrorNotice]

_FIELD_MESSAGES = {MSG_AUTH_REQUEST: AuthRequest, MSG_AUTH_RESPONSE: AuthResponse}


# -- field codec, shared with the file formats ------------------------------

def pack_field(value: bytes, width: int = 2) -> bytes:
    if len(value) >= 1 << (8 * width):
        raise FieldTooLong(f"field of {len(value)} octets exceeds {width}-octet length prefix")
    return len(value).to_bytes(width, "big") + value


class Reader:
    """Cursor over a byte string; every short read raises TruncatedFrame."""

    def __init__(self, data: bytes, offset: int = 0):
        self.data = memoryview(data)
        self.pos = offset

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFrame(f"need {n} octets at offset {self.pos}, have {len(self.data) - self.pos}")
        out = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def uint(self, width: int) -> int:
        return int.from_bytes(self.take(width), "big")

    def field(self, width: int = 2) -> bytes:
        return self.take(self.uint(width))

    def finish(self):
        if self.pos != len(self.data):
            raise TrailingBytes(f"{len(self.data) - self.pos} unexpected trailing octets")


# -- frames -----------------------------------------------------------------

def encode(msg: Message, suite: CipherSuite) -> bytes:
    header = MAGIC + struct.pack(">BBB", VERSION, suite.suite_id, msg.msg_type)
    if isinstance(msg, Hello):
        payload = b""
    elif isinstance(msg, ErrorNotice):
        payload = bytes([msg.code]) + pack_field(msg.text.encode("utf-8"))
    else:
        _validate(msg, suite)
        payload = b"".join(pack_field(getattr(msg, f.name)) for f in fields(msg))
    frame = header + payload
    if len(frame) > MAX_FRAME:
        raise FieldTooLong(f"frame of {len(frame)} octets exceeds {MAX_FRAME}")
    return frame


def decode(data: bytes, suite: CipherSuite) -> Message:
    if len(data) > MAX_FRAME:
        raise FieldTooLong(f"frame of {len(data)} octets exceeds {MAX_FRAME}")
    r = Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagic("not an SKP1 frame")
    version, suite_id, msg_type = r.u8(), r.u8(), r.u8()
    if version != VERSION:
        raise UnsupportedVersion(f"frame version {version}")
    if suite_id != suite.suite_id:
        raise SuiteMismatch(f"frame suite {suite_id}, expected {suite.suite_id}")

    if msg_type == MSG_HELLO:
        msg = Hello()
    elif msg_type == MSG_ERROR:
        code = r.u8()
        try:
            text = r.field().decode("utf-8")
        except UnicodeDecodeError:
            text = ""
        msg = ErrorNotice(code, text)
    elif msg_type in _FIELD_MESSAGES:
        cls = _FIELD_MESSAGES[msg_type]
        msg = cls(*(r.field() for _ in fields(cls)))
        _validate(msg, suite)
    else:
        raise UnknownMessageType(f"message type {msg_type}")
    r.finish()
    return msg


def _validate(msg: AuthRequest | AuthResponse, suite: CipherSuite):
    for f in fields(msg):
        value = getattr(msg, f.name)
        if f.name in msg.digest_fields:
            if len(value) != suite.digest_len:
                raise BadDigestLength(f"{f.name}: {len(value)} octets, expected {suite.digest_len}")
        elif not value:
            raise EmptyField(f"{f.name} is empty")


def field_names(msg_type: type[AuthRequest] | type[AuthResponse]) -> list[str]:
    return [f.name for f in fields(msg_type)]
