"""Mutual identification and data-key delivery for removable secure devices."""
from .crypto import DEFAULT_SUITE, SUITES, CipherSuite, Crypto, PkeKeyPair, get_suite
from .protocol import (
    AuthServer,
    DeviceDecision,
    RejectReason,
    ServerDecision,
    device_build_request,
    device_process_response,
    server_build_response,
    server_process_request,
    vault_open,
    vault_seal,
)
from .records import DeviceState, SignatureRecord, load_device, save_device
from .registry import Freshness, Registry, RegistryEntry, Rotation, check_freshness

__version__ = "0.1.0"
