"""Exception hierarchy shared by all skp modules."""


class SkpError(Exception):
    """Base class for every error raised by this package."""


# -- crypto -----------------------------------------------------------------

class CryptoError(SkpError):
    pass


class EntropyError(CryptoError):
    pass


class MalformedCiphertext(CryptoError):
    pass


class AuthTagMismatch(CryptoError):
    """Symmetric decryption failed: wrong key or tampered ciphertext."""


class PkeDecryptError(CryptoError):
    pass


class PlaintextTooLong(CryptoError):
    pass


class UnknownSuite(CryptoError):
    pass


# -- wire -------------------------------------------------------------------

class WireError(SkpError):
    """A frame (or file in frame style) could not be decoded."""

    code = 0x20


class BadMagic(WireError):
    code = 0x21


class UnsupportedVersion(WireError):
    code = 0x22


class SuiteMismatch(WireError):
    code = 0x23


class TruncatedFrame(WireError):
    code = 0x24


class TrailingBytes(WireError):
    code = 0x25


class BadDigestLength(WireError):
    code = 0x26


class UnknownMessageType(WireError):
    code = 0x27


class EmptyField(WireError):
    code = 0x28


class FieldTooLong(WireError):
    code = 0x29


# -- registry / device ------------------------------------------------------

class RegistryError(SkpError):
    pass


class SnapshotError(RegistryError):
    pass


class UniquenessExhausted(RegistryError):
    pass


class DeviceBusy(RegistryError):
    pass


class VaultError(SkpError):
    pass


class EmptyVault(VaultError):
    pass


class TransportError(SkpError):
    """Connection-level failure, kept apart from protocol rejections."""
