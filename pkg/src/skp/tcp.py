"""Loopback/real TCP transport: one request frame and one reply per connection.

The client half-closes its write side after sending, so the server reads the
request up to EOF; the server answers and closes.
"""
from __future__ import annotations

import logging
import socket
import socketserver
import threading
from dataclasses import dataclass

from .crypto import Crypto
from .errors import TransportError
from .harness import Transcript, device_exchange
from .protocol import AuthServer, DeviceDecision
from .records import DeviceState
from .wire import MAX_FRAME, ErrorNotice

log = logging.getLogger(__name__)

IO_TIMEOUT = 10.0


def _read_to_eof(sock: socket.socket, limit: int = MAX_FRAME + 1) -> bytes:
    chunks, size = [], 0
    while size < limit:
        chunk = sock.recv(min(65536, limit - size))
        if not chunk:
            break
        chunks.append(chunk)
        size += len(chunk)
    return b"".join(chunks)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        self.request.settimeout(IO_TIMEOUT)
        try:
            frame = _read_to_eof(self.request)
            reply = self.server.auth_server.handle_frame(frame)
            self.request.sendall(reply)
            self.request.shutdown(socket.SHUT_WR)
        except OSError as exc:
            log.warning("connection from %s failed: %s", self.client_address, exc)


class TcpAuthServer(socketserver.TCPServer):
    allow_reuse_address = True

    def __init__(self, address, auth_server: AuthServer):
        self.auth_server = auth_server
        super().__init__(address, _Handler)

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="skp-server", daemon=True)
        t.start()
        return t


class ThreadingTcpAuthServer(socketserver.ThreadingMixIn, TcpAuthServer):
    daemon_threads = True


def serve_tcp(auth_server: AuthServer, bind=("127.0.0.1", 0), *, concurrent: bool = False) -> TcpAuthServer:
    """Bind (but do not start) a server; call ``serve_forever`` or ``start_background``."""
    cls = ThreadingTcpAuthServer if concurrent else TcpAuthServer
    return cls(tuple(bind), auth_server)


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host.strip("[]"), int(port)


def exchange_frame(address, frame: bytes, timeout: float = IO_TIMEOUT) -> bytes:
    try:
        with socket.create_connection(tuple(address), timeout=timeout) as sock:
            sock.sendall(frame)
            sock.shutdown(socket.SHUT_WR)
            reply = _read_to_eof(sock)
    except OSError as exc:
        raise TransportError(f"{address[0]}:{address[1]}: {exc}") from exc
    if not reply:
        raise TransportError("server closed the connection without replying")
    return reply


@dataclass
class ClientResult:
    decision: DeviceDecision | None
    error: ErrorNotice | None
    state: DeviceState
    transcript: Transcript

    @property
    def authenticated(self) -> bool:
        return self.decision is not None and self.decision.authenticated


def connect_tcp(
    dev: DeviceState,
    server_pub: bytes,
    address,
    crypto: Crypto,
    transcript: Transcript | None = None,
    timeout: float = IO_TIMEOUT,
) -> ClientResult:
    """Run one session against a TCP server; raises TransportError on I/O failure."""
    transcript = transcript if transcript is not None else Transcript()
    decision, error, state = device_exchange(
        dev, server_pub, crypto, lambda f: exchange_frame(address, f, timeout), transcript
    )
    return ClientResult(decision, error, state, transcript)
