"""Device and server state machines for the identification exchange.

Device builds a request from its ID and current random number; the server
unmasks it, identifies the device, issues a fresh random number and wraps the
signature record under a PBKDF2 key both sides derive independently; the
device checks the server's proof, unwraps the record and adopts the new
random number.  Every rejection carries exactly one :class:`RejectReason`.
"""
from __future__ import annotations

import enum
import hmac
import logging
from dataclasses import dataclass, replace

from .crypto import Crypto
from .errors import CryptoError, DeviceBusy, EmptyVault, SkpError, UnknownMessageType, WireError
from .records import DeviceState, SignatureRecord
from .registry import Freshness, Registry, Rotation, check_freshness
from .wire import AuthRequest, AuthResponse, ErrorNotice, decode, encode

log = logging.getLogger(__name__)


class RejectReason(enum.IntEnum):
    PKE_DECRYPT_FAILED = 1
    X_ACCURACY_MISMATCH = 2
    RD_ACCURACY_MISMATCH = 3
    UNKNOWN_DEVICE = 4
    REPLAY_DETECTED = 5
    RNEW_ACCURACY_MISMATCH = 6
    SERVER_PROOF_MISMATCH = 7
    SIG_DECRYPT_FAILED = 8
    SIG_ID_MISMATCH = 9

    @property
    def label(self) -> str:
        return "".join(w.capitalize() for w in self.name.split("_"))


# server-side failures that are not protocol rejections, carried in Error frames
ERROR_BUSY = 0x30
ERROR_INTERNAL = 0xFF


@dataclass(frozen=True)
class ServerDecision:
    reason: RejectReason | None = None
    step: str = ""
    h_id: bytes | None = None
    recovered_r: bytes | None = None
    freshness: Freshness | None = None
    fingerprint: bytes | None = None

    @property
    def identified(self) -> bool:
        return self.reason is None

    def __str__(self):
        return "Identified" if self.identified else f"Rejected({self.reason.label}@{self.step})"


@dataclass(frozen=True)
class DeviceDecision:
    reason: RejectReason | None = None
    step: str = ""
    k: bytes | None = None
    sig: SignatureRecord | None = None

    @property
    def authenticated(self) -> bool:
        return self.reason is None

    def __str__(self):
        return "ServerAuthenticated" if self.authenticated else f"Rejected({self.reason.label}@{self.step})"

    def __repr__(self):
        # k and sig stay out of reprs and logs
        return f"DeviceDecision({self})"


def _reject_server(reason: RejectReason, step: str) -> ServerDecision:
    return ServerDecision(reason=reason, step=step)


def _reject_device(reason: RejectReason, step: str) -> DeviceDecision:
    return DeviceDecision(reason=reason, step=step)


def _eq(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)


# -- step 2 -----------------------------------------------------------------

def mask(crypto: Crypto, id_d: bytes, r: bytes) -> bytes:
    """Hash of the device ID xor a random number (the x and y values)."""
    return crypto.xor_digest(crypto.hash(id_d), r)


def device_build_request(dev: DeviceState, server_pub: bytes, crypto: Crypto) -> AuthRequest:
    x = mask(crypto, dev.id_d, dev.r_current)
    return AuthRequest(
        a=crypto.pke_encrypt(server_pub, x),
        h_x=crypto.hash(x),
        c_ct=crypto.ske_encrypt(x, dev.r_current),
        h_rd=crypto.hash(dev.r_current),
    )


# -- step 3 -----------------------------------------------------------------

@dataclass(frozen=True)
class Unmasked:
    h_id: bytes
    r: bytes
    fingerprint: bytes


def server_unmask(req: AuthRequest, private_key: bytes, crypto: Crypto) -> Unmasked | ServerDecision:
    """Sub-steps 3-1 to 3-4; needs no registry access."""
    try:
        x = crypto.pke_decrypt(private_key, req.a)
    except CryptoError:
        return _reject_server(RejectReason.PKE_DECRYPT_FAILED, "3-1")
    try:
        r = crypto.ske_decrypt(x, req.c_ct)
    except (CryptoError, ValueError):
        r = None

    d = crypto.suite.digest_len
    if len(x) != d or not _eq(crypto.hash(x), req.h_x):
        return _reject_server(RejectReason.X_ACCURACY_MISMATCH, "3-3")
    if r is None or len(r) != d or not _eq(crypto.hash(r), req.h_rd):
        return _reject_server(RejectReason.RD_ACCURACY_MISMATCH, "3-3")
    return Unmasked(h_id=crypto.xor_digest(x, r), r=r, fingerprint=crypto.hash(req.a + req.c_ct))


def server_identify(unmasked: Unmasked, registry: Registry) -> ServerDecision:
    """Sub-step 3-5: lookup by hash of ID, then freshness and replay checks."""
    entry = registry.lookup(unmasked.h_id)
    if entry is None:
        return _reject_server(RejectReason.UNKNOWN_DEVICE, "3-5")
    freshness = check_freshness(entry, unmasked.r)
    if freshness is Freshness.STALE or registry.is_replay(entry, unmasked.fingerprint):
        return _reject_server(RejectReason.REPLAY_DETECTED, "3-5")
    return ServerDecision(
        h_id=unmasked.h_id,
        recovered_r=unmasked.r,
        freshness=freshness,
        fingerprint=unmasked.fingerprint,
    )


def server_process_request(
    req: AuthRequest, private_key: bytes, registry: Registry, crypto: Crypto
) -> ServerDecision:
    unmasked = server_unmask(req, private_key, crypto)
    if isinstance(unmasked, ServerDecision):
        return unmasked
    return server_identify(unmasked, registry)


# -- step 4 -----------------------------------------------------------------

def server_build_response(
    decision: ServerDecision, registry: Registry, crypto: Crypto, *, rotate: bool = True
) -> AuthResponse:
    """Issue r_new, wrap the signature record, and commit the rotation.

    ``rotate=False`` is a test-only hook: the current random number is
    re-issued and the registry is left untouched.
    """
    if not decision.identified:
        raise ValueError("cannot respond to a rejected request")
    entry = registry.lookup(decision.h_id)
    if entry is None:
        raise ValueError("identified device vanished from the registry")
    id_d = entry.sig.id_d

    r_new = registry.fresh_random(crypto) if rotate else entry.r_current
    response = AuthResponse(
        b=crypto.ske_encrypt(id_d, r_new),
        h_y=crypto.hash(mask(crypto, id_d, r_new)),
        h_rnew=crypto.hash(r_new),
        g=crypto.ske_encrypt(crypto.derive_key(id_d, r_new), entry.sig.to_bytes()),
    )
    if rotate:
        mode = Rotation.FROM_PREVIOUS if decision.freshness is Freshness.PREVIOUS else Rotation.FROM_CURRENT
        registry.rotate(decision.h_id, r_new, mode)
        registry.record_request(decision.h_id, decision.fingerprint, decision.recovered_r)
        log.debug("rotated device %s (%s)", decision.h_id.hex()[:12], mode.value)
    return response


# -- step 5 -----------------------------------------------------------------

def device_process_response(
    dev: DeviceState, resp: AuthResponse, crypto: Crypto
) -> tuple[DeviceDecision, DeviceState]:
    """Verify the server and unwrap the record.

    Returns the decision with the state to persist; on rejection that state
    is ``dev`` itself.
    """
    try:
        r_new = crypto.ske_decrypt(dev.id_d, resp.b)
    except CryptoError:
        return _reject_device(RejectReason.SIG_DECRYPT_FAILED, "5-1"), dev
    if not _eq(crypto.hash(r_new), resp.h_rnew):
        return _reject_device(RejectReason.RNEW_ACCURACY_MISMATCH, "5-2"), dev
    if len(r_new) != crypto.suite.digest_len or not _eq(
        crypto.hash(mask(crypto, dev.id_d, r_new)), resp.h_y
    ):
        return _reject_device(RejectReason.SERVER_PROOF_MISMATCH, "5-3"), dev
    k = crypto.derive_key(dev.id_d, r_new)
    try:
        sig = SignatureRecord.from_bytes(crypto.ske_decrypt(k, resp.g))
    except (CryptoError, WireError):
        return _reject_device(RejectReason.SIG_DECRYPT_FAILED, "5-5"), dev
    if not _eq(sig.id_d, dev.id_d):
        return _reject_device(RejectReason.SIG_ID_MISMATCH, "5-6"), dev
    return DeviceDecision(k=k, sig=sig), replace(dev, r_current=r_new)


# -- vault ------------------------------------------------------------------

def _check_key(sig_key: bytes, crypto: Crypto):
    if len(sig_key) != crypto.suite.dk_len:
        raise ValueError(f"data key must be {crypto.suite.dk_len} octets")


def vault_seal(dev: DeviceState, sig_key: bytes, plaintext: bytes, crypto: Crypto) -> DeviceState:
    _check_key(sig_key, crypto)
    return replace(dev, vault=crypto.ske_encrypt(sig_key, plaintext))


def vault_open(dev: DeviceState, sig_key: bytes, crypto: Crypto) -> bytes:
    _check_key(sig_key, crypto)
    if not dev.vault:
        raise EmptyVault("device vault is empty")
    return crypto.ske_decrypt(sig_key, dev.vault)


# -- server endpoint --------------------------------------------------------

class AuthServer:
    """Server endpoint: one request frame in, one response or error frame out.

    ``on_commit`` runs after every rotation (the CLI uses it to persist the
    registry snapshot).
    """

    def __init__(self, registry: Registry, keypair, crypto: Crypto, *, rotate: bool = True, on_commit=None):
        if registry.suite != crypto.suite:
            raise ValueError("registry and crypto use different suites")
        self.registry = registry
        self.keypair = keypair
        self.crypto = crypto
        self.rotate = rotate
        self.on_commit = on_commit
        self.last_decision: ServerDecision | None = None

    def handle(self, req: AuthRequest) -> tuple[ServerDecision, AuthResponse | ErrorNotice]:
        unmasked = server_unmask(req, self.keypair.private_key, self.crypto)
        if isinstance(unmasked, ServerDecision):
            return self._refuse(unmasked)
        with self.registry.device_session(unmasked.h_id):
            decision = server_identify(unmasked, self.registry)
            if not decision.identified:
                return self._refuse(decision)
            response = server_build_response(decision, self.registry, self.crypto, rotate=self.rotate)
            if self.rotate and self.on_commit is not None:
                self.on_commit(self.registry)
        self.last_decision = decision
        return decision, response

    def _refuse(self, decision: ServerDecision):
        self.last_decision = decision
        log.info("request rejected: %s", decision)
        return decision, ErrorNotice(int(decision.reason), decision.reason.label)

    def handle_frame(self, frame: bytes) -> bytes:
        """Decode, handle, encode; never raises on malformed input."""
        suite = self.crypto.suite
        try:
            msg = decode(frame, suite)
        except WireError as exc:
            self.last_decision = None
            return encode(ErrorNotice(exc.code, type(exc).__name__), suite)
        if not isinstance(msg, AuthRequest):
            self.last_decision = None
            return encode(ErrorNotice(UnknownMessageType.code, "expected AuthRequest"), suite)
        try:
            _, reply = self.handle(msg)
        except SkpError as exc:
            code = ERROR_BUSY if isinstance(exc, DeviceBusy) else ERROR_INTERNAL
            log.warning("server error: %s", exc)
            return encode(ErrorNotice(code, type(exc).__name__), suite)
        return encode(reply, suite)

