"""Cryptographic primitives behind one pluggable suite object.

A :class:`CipherSuite` is the static parameter set of a deployment (hash,
lengths, iteration count, scheme tags) and is identified on the wire by a
single suite-id octet.  A :class:`Crypto` binds a suite to a random source:
production uses OS entropy, tests use :class:`SeededRandom` so whole
transcripts are reproducible.  Both run the same real primitives.
"""
from __future__ import annotations

import functools
import hashlib
import os
import random
from dataclasses import dataclass
from typing import Protocol

from Crypto.Cipher import PKCS1_OAEP
from Crypto.Hash import SHA256
from Crypto.PublicKey import RSA
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import (
    AuthTagMismatch,
    EntropyError,
    MalformedCiphertext,
    PkeDecryptError,
    PlaintextTooLong,
    UnknownSuite,
)

SKE_KEY_LABEL = b"SKE-KEY-v1"
GCM_NONCE_LEN = 12
GCM_TAG_LEN = 16


@dataclass(frozen=True)
class CipherSuite:
    suite_id: int
    name: str
    hash_name: str = "sha256"
    hash_bits: int = 256
    id_len: int = 16
    dk_len: int = 32
    kdf_iterations: int = 10_000
    pke_scheme: str = "rsa2048-oaep-sha256"
    ske_scheme: str = "aes256-gcm"
    rsa_bits: int = 2048
    ske_key_len: int = 32

    def __post_init__(self):
        if not 0 <= self.suite_id <= 0xFF:
            raise ValueError("suite_id must fit in one octet")
        if self.hash_bits <= 0 or self.hash_bits % 8:
            raise ValueError("hash_bits must be a positive multiple of 8")
        if hashlib.new(self.hash_name).digest_size * 8 != self.hash_bits:
            raise ValueError(f"{self.hash_name} does not produce {self.hash_bits}-bit digests")
        if min(self.id_len, self.dk_len, self.kdf_iterations) < 1:
            raise ValueError("id_len, dk_len and kdf_iterations must be positive")

    @property
    def digest_len(self) -> int:
        return self.hash_bits // 8


DEFAULT_SUITE = CipherSuite(suite_id=1, name="sha256-rsa2048oaep-aes256gcm")
SHA512_SUITE = CipherSuite(
    suite_id=2, name="sha512-rsa2048oaep-aes256gcm", hash_name="sha512", hash_bits=512
)

SUITES: dict[int, CipherSuite] = {s.suite_id: s for s in (DEFAULT_SUITE, SHA512_SUITE)}


def get_suite(key: int | str) -> CipherSuite:
    """Look a suite up by id octet or by name."""
    if isinstance(key, str):
        if key.isdigit():
            key = int(key)
        else:
            for suite in SUITES.values():
                if suite.name == key:
                    return suite
            raise UnknownSuite(key)
    try:
        return SUITES[key]
    except KeyError:
        raise UnknownSuite(f"unknown suite id {key}") from None


# -- random sources ---------------------------------------------------------

class RandomSource(Protocol):
    def random_bytes(self, n: int) -> bytes: ...


class SystemRandom:
    def random_bytes(self, n: int) -> bytes:
        if n < 1:
            raise ValueError("n must be >= 1")
        try:
            return os.urandom(n)
        except OSError as exc:
            raise EntropyError(str(exc)) from exc


class SeededRandom:
    """Reproducible byte stream for tests. Not for production use."""

    def __init__(self, seed: int):
        self.seed = seed
        self._rng = random.Random(seed)

    def random_bytes(self, n: int) -> bytes:
        if n < 1:
            raise ValueError("n must be >= 1")
        return self._rng.randbytes(n)


# -- helpers ----------------------------------------------------------------

def xor_digest(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} != {len(b)}")
    return bytes(x ^ y for x, y in zip(a, b))


@functools.lru_cache(maxsize=64)
def _import_rsa(der: bytes) -> RSA.RsaKey:
    return RSA.import_key(der)


@dataclass(frozen=True)
class PkeKeyPair:
    public_key: bytes
    private_key: bytes

    def __repr__(self):
        return f"PkeKeyPair(public_key=<{len(self.public_key)} bytes>, private_key=<redacted>)"


class Crypto:
    """The suite's primitives, drawing randomness from ``rng``."""

    def __init__(self, suite: CipherSuite = DEFAULT_SUITE, rng: RandomSource | None = None):
        self.suite = suite
        self.rng = rng if rng is not None else SystemRandom()

    @classmethod
    def seeded(cls, seed: int, suite: CipherSuite = DEFAULT_SUITE) -> "Crypto":
        return cls(suite, SeededRandom(seed))

    xor_digest = staticmethod(xor_digest)

    def hash(self, message: bytes) -> bytes:
        return hashlib.new(self.suite.hash_name, message).digest()

    def random_bytes(self, n: int) -> bytes:
        return self.rng.random_bytes(n)

    def random_number(self) -> bytes:
        """A fresh r value, exactly one digest long."""
        return self.random_bytes(self.suite.digest_len)

    # public key ------------------------------------------------------------

    def pke_keygen(self) -> PkeKeyPair:
        key = RSA.generate(self.suite.rsa_bits, randfunc=self.random_bytes)
        return PkeKeyPair(
            public_key=key.publickey().export_key("DER"),
            private_key=key.export_key("DER"),
        )

    def pke_encrypt(self, public_key: bytes, message: bytes) -> bytes:
        cipher = PKCS1_OAEP.new(_import_rsa(public_key), hashAlgo=SHA256, randfunc=self.random_bytes)
        try:
            return cipher.encrypt(message)
        except ValueError as exc:
            raise PlaintextTooLong(str(exc)) from exc

    def pke_decrypt(self, private_key: bytes, ciphertext: bytes) -> bytes:
        key = _import_rsa(private_key)
        if len(ciphertext) != key.size_in_bytes():
            raise MalformedCiphertext(
                f"expected {key.size_in_bytes()}-byte ciphertext, got {len(ciphertext)}"
            )
        try:
            return PKCS1_OAEP.new(key, hashAlgo=SHA256).decrypt(ciphertext)
        except (ValueError, TypeError) as exc:
            raise PkeDecryptError("OAEP decryption failed") from exc

    # symmetric -------------------------------------------------------------

    def ske_key_from_material(self, material: bytes) -> bytes:
        if not material:
            raise ValueError("key material must be non-empty")
        key = self.hash(SKE_KEY_LABEL + material)
        if len(key) < self.suite.ske_key_len:
            raise ValueError("suite hash is shorter than the cipher key")
        return key[: self.suite.ske_key_len]

    def ske_encrypt(self, material: bytes, message: bytes) -> bytes:
        """AES-GCM; output is ``nonce || ciphertext || tag``."""
        nonce = self.random_bytes(GCM_NONCE_LEN)
        return nonce + AESGCM(self.ske_key_from_material(material)).encrypt(nonce, message, None)

    def ske_decrypt(self, material: bytes, ciphertext: bytes) -> bytes:
        if len(ciphertext) < GCM_NONCE_LEN + GCM_TAG_LEN:
            raise MalformedCiphertext("symmetric ciphertext shorter than nonce and tag")
        nonce, body = ciphertext[:GCM_NONCE_LEN], ciphertext[GCM_NONCE_LEN:]
        try:
            return AESGCM(self.ske_key_from_material(material)).decrypt(nonce, body, None)
        except InvalidTag:
            raise AuthTagMismatch("authentication tag mismatch") from None

    # key derivation --------------------------------------------------------

    def derive_key(
        self, password: bytes, salt: bytes, iterations: int | None = None, dk_len: int | None = None
    ) -> bytes:
        """PBKDF2 with HMAC over the suite hash."""
        iterations = self.suite.kdf_iterations if iterations is None else iterations
        dk_len = self.suite.dk_len if dk_len is None else dk_len
        if iterations < 1 or dk_len < 1:
            raise ValueError("iterations and dk_len must be >= 1")
        return hashlib.pbkdf2_hmac(self.suite.hash_name, password, salt, iterations, dk_len)
