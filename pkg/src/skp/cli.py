"""Operator CLI: ``skp keygen|provision|serve|auth|vault|attack``."""
from __future__ import annotations

import logging
import os
import signal
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from . import scenarios
from .crypto import DEFAULT_SUITE, CipherSuite, Crypto, PkeKeyPair, get_suite
from .errors import (
    AuthTagMismatch,
    EmptyVault,
    SkpError,
    SnapshotError,
    TransportError,
    UniquenessExhausted,
    UnknownSuite,
    WireError,
)
from .protocol import ERROR_BUSY, AuthServer, RejectReason, vault_open, vault_seal
from .records import atomic_write, load_device, save_device
from .registry import Registry
from .tcp import connect_tcp, parse_address, serve_tcp

log = logging.getLogger("skp")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONNECTION = 4
EXIT_FORMAT = 5
EXIT_SERVER_BUSY = 6
EXIT_SERVER_ERROR = 7
EXIT_UNIQUENESS = 8
EXIT_REJECT_BASE = 10
EXIT_TAG_MISMATCH = 20
EXIT_EMPTY_VAULT = 21
EXIT_ATTACK_FAILED = 30

EXIT_CODES: dict[int, str] = {
    EXIT_OK: "ok",
    EXIT_FAILURE: "unexpected failure",
    EXIT_USAGE: "usage error",
    EXIT_IO: "file read/write error",
    EXIT_CONNECTION: "connection error",
    EXIT_FORMAT: "malformed file or frame",
    EXIT_SERVER_BUSY: "server busy with this device",
    EXIT_SERVER_ERROR: "server refused the frame",
    EXIT_UNIQUENESS: "could not draw a unique identifier",
    **{EXIT_REJECT_BASE + r: r.label for r in RejectReason},
    EXIT_TAG_MISMATCH: "vault authentication tag mismatch",
    EXIT_EMPTY_VAULT: "vault is empty",
    EXIT_ATTACK_FAILED: "attack scenario expectations not met",
}


class Exit(click.ClickException):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.exit_code = code


def _fail_for(exc: BaseException) -> Exit:
    if isinstance(exc, AuthTagMismatch):
        return Exit(EXIT_TAG_MISMATCH, "vault authentication tag mismatch (wrong key or tampered vault)")
    if isinstance(exc, EmptyVault):
        return Exit(EXIT_EMPTY_VAULT, str(exc))
    if isinstance(exc, TransportError):
        return Exit(EXIT_CONNECTION, str(exc))
    if isinstance(exc, (WireError, SnapshotError, UnknownSuite)):
        return Exit(EXIT_FORMAT, f"{type(exc).__name__}: {exc}")
    if isinstance(exc, UniquenessExhausted):
        return Exit(EXIT_UNIQUENESS, str(exc))
    if isinstance(exc, OSError):
        return Exit(EXIT_IO, str(exc))
    return Exit(EXIT_FAILURE, f"{type(exc).__name__}: {exc}")


@dataclass
class CliConfig:
    suite: CipherSuite = DEFAULT_SUITE
    seed: int | None = None

    def crypto(self) -> Crypto:
        if self.seed is None:
            return Crypto(self.suite)
        return Crypto.seeded(self.seed, self.suite)


def _load_keypair(prefix: str) -> PkeKeyPair:
    return PkeKeyPair(Path(prefix + ".pub").read_bytes(), Path(prefix + ".key").read_bytes())


def _load_registry(path: str, suite: CipherSuite, create: bool = False) -> Registry:
    if create and not os.path.exists(path):
        return Registry(suite)
    registry = Registry.load(path)
    if registry.suite != suite:
        raise SnapshotError(f"registry uses suite {registry.suite.suite_id}, not {suite.suite_id}")
    return registry


@click.group()
@click.option("--suite", envvar="SKP_SUITE", default=str(DEFAULT_SUITE.suite_id), show_default=True,
              help="Cipher suite id or name.")
@click.option("--insecure-seed", type=int, default=None,
              help="Deterministic randomness for testing. Never use in production.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, suite, insecure_seed, verbose):
    """Mutual device/server identification and data-key delivery."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx.obj = CliConfig(get_suite(suite), insecure_seed)
    except UnknownSuite as exc:
        raise click.UsageError(f"unknown suite {exc}") from None
    if insecure_seed is not None:
        click.echo(f"WARNING: insecure seeded randomness (seed={insecure_seed})", err=True)


@main.command()
@click.option("--out", "prefix", required=True, help="Writes PREFIX.key (mode 0600) and PREFIX.pub.")
@click.pass_obj
def keygen(cfg: CliConfig, prefix):
    """Generate the server's public-key pair."""
    pair = cfg.crypto().pke_keygen()
    key_path, pub_path = prefix + ".key", prefix + ".pub"
    try:
        atomic_write(key_path, pair.private_key, 0o600)
        try:
            atomic_write(pub_path, pair.public_key, 0o644)
        except BaseException:
            os.unlink(key_path)
            raise
    except OSError as exc:
        raise _fail_for(exc) from exc
    click.echo(f"wrote {key_path} and {pub_path}")


@main.command()
@click.option("--registry", "registry_path", envvar="SKP_REGISTRY", required=True)
@click.option("--device", "device_path", required=True, help="Device state file to create.")
@click.pass_obj
def provision(cfg: CliConfig, registry_path, device_path):
    """Register a new device and write its state file."""
    try:
        registry = _load_registry(registry_path, cfg.suite, create=True)
        dev = registry.register_device(cfg.crypto())
        save_device(dev, device_path)
        try:
            registry.save(registry_path)
        except BaseException:
            os.unlink(device_path)
            raise
    except (SkpError, OSError) as exc:
        raise _fail_for(exc) from exc
    click.echo(f"provisioned device into {device_path} ({len(registry)} devices registered)")


@main.command()
@click.option("--registry", "registry_path", envvar="SKP_REGISTRY", required=True)
@click.option("--keys", "key_prefix", required=True, help="Key pair prefix from keygen.")
@click.option("--bind", default="127.0.0.1:7447", show_default=True)
@click.option("--concurrent", is_flag=True, help="Handle connections in parallel.")
@click.pass_obj
def serve(cfg: CliConfig, registry_path, key_prefix, bind, concurrent):
    """Run the authentication server until interrupted."""
    try:
        registry = _load_registry(registry_path, cfg.suite)
        keypair = _load_keypair(key_prefix)
        address = parse_address(bind)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    except (SkpError, OSError) as exc:
        raise _fail_for(exc) from exc

    server = AuthServer(registry, keypair, cfg.crypto(), on_commit=lambda reg: reg.save(registry_path))
    try:
        tcp = serve_tcp(server, address, concurrent=concurrent)
    except OSError as exc:
        raise Exit(EXIT_CONNECTION, f"cannot bind {bind}: {exc}") from exc

    def stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    host, port = tcp.server_address[:2]
    click.echo(f"listening on {host}:{port}")
    sys.stdout.flush()
    try:
        tcp.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        tcp.server_close()


@main.command()
@click.option("--device", "device_path", required=True)
@click.option("--connect", "address", default="127.0.0.1:7447", show_default=True)
@click.option("--server-pub", required=True, type=click.Path(dir_okay=False))
@click.option("--key-out", type=click.Path(dir_okay=False),
              help="Write the delivered data key here (mode 0600) for a following vault command.")
@click.pass_obj
def auth(cfg: CliConfig, device_path, address, server_pub, key_out):
    """Authenticate a device; exit 0 iff the server was authenticated."""
    try:
        addr = parse_address(address)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    try:
        dev = load_device(device_path, cfg.suite.suite_id)
        result = connect_tcp(dev, Path(server_pub).read_bytes(), addr, cfg.crypto())
    except (SkpError, OSError) as exc:
        raise _fail_for(exc) from exc

    if result.error is not None:
        code = result.error.code
        if code in RejectReason._value2member_map_:
            raise Exit(EXIT_REJECT_BASE + code, f"server rejected: {RejectReason(code).label}")
        if code == ERROR_BUSY:
            raise Exit(EXIT_SERVER_BUSY, "server busy with this device")
        raise Exit(EXIT_SERVER_ERROR, f"server error: {result.error.text or code}")
    decision = result.decision
    if not decision.authenticated:
        raise Exit(EXIT_REJECT_BASE + decision.reason, f"server not authenticated: {decision.reason.label}")
    try:
        if key_out:
            atomic_write(key_out, decision.sig.key, 0o600)
        save_device(result.state, device_path)
    except OSError as exc:
        if key_out and os.path.exists(key_out):
            os.unlink(key_out)
        raise _fail_for(exc) from exc
    click.echo("ServerAuthenticated")


@main.group()
def vault():
    """Seal or open the device vault with a delivered data key."""


def _vault_common(fn):
    fn = click.option("--keep-key", is_flag=True, help="Do not delete the key file afterwards.")(fn)
    fn = click.option("--key-file", required=True, type=click.Path(dir_okay=False),
                      help="Ephemeral key file written by 'auth --key-out'.")(fn)
    fn = click.option("--data", "data_path", required=True, type=click.Path(dir_okay=False))(fn)
    fn = click.option("--device", "device_path", required=True)(fn)
    return click.pass_obj(fn)


@vault.command("seal")
@_vault_common
def vault_seal_cmd(cfg: CliConfig, device_path, data_path, key_file, keep_key):
    """Encrypt DATA into the device file."""
    try:
        dev = load_device(device_path, cfg.suite.suite_id)
        key = Path(key_file).read_bytes()
        dev = vault_seal(dev, key, Path(data_path).read_bytes(), cfg.crypto())
        save_device(dev, device_path)
    except ValueError as exc:
        raise Exit(EXIT_FORMAT, str(exc)) from exc
    except (SkpError, OSError) as exc:
        raise _fail_for(exc) from exc
    if not keep_key:
        os.unlink(key_file)
    click.echo(f"sealed {len(dev.vault)} octets into {device_path}")


@vault.command("open")
@_vault_common
def vault_open_cmd(cfg: CliConfig, device_path, data_path, key_file, keep_key):
    """Decrypt the device vault into DATA."""
    try:
        dev = load_device(device_path, cfg.suite.suite_id)
        plaintext = vault_open(dev, Path(key_file).read_bytes(), cfg.crypto())
        atomic_write(data_path, plaintext)
    except ValueError as exc:
        raise Exit(EXIT_FORMAT, str(exc)) from exc
    except (SkpError, OSError) as exc:
        raise _fail_for(exc) from exc
    if not keep_key:
        os.unlink(key_file)
    click.echo(f"opened {len(plaintext)} octets into {data_path}")


@main.command()
@click.argument("scenario", type=click.Choice(sorted(scenarios.SCENARIOS)))
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--devices", type=int, default=5, show_default=True, help="anonymity only")
@click.option("--sessions", type=int, default=10, show_default=True, help="anonymity only")
@click.option("--repetitions", type=int, default=20, show_default=True, help="anonymity only")
@click.pass_obj
def attack(cfg: CliConfig, scenario, seed, devices, sessions, repetitions):
    """Run a named attack scenario in the simulated network."""
    if scenario == "anonymity":
        if devices < 2 or sessions < 2:
            raise click.UsageError("anonymity needs --devices >= 2 and --sessions >= 2")
        report = scenarios.anonymity(seed, devices, sessions, repetitions, cfg.suite)
    else:
        report = scenarios.SCENARIOS[scenario](seed=seed, suite=cfg.suite)
    click.echo(report.render())
    if not report.passed:
        sys.exit(EXIT_ATTACK_FAILED)


@main.command("exit-codes")
def exit_codes():
    """Print the exit-code table."""
    for code, meaning in sorted(EXIT_CODES.items()):
        click.echo(f"{code:3d}  {meaning}")


if __name__ == "__main__":
    main()
