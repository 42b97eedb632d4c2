"""Operator command line: run the daemon, manage keys, encrypt at the shell.

All commands are scriptable — stable exit codes, ``--json`` for machine
output — and most operate the library in-process against the local store:

    echo "hello" | textguard encrypt --to bob      # one armored token
    textguard decrypt < token.txt                  # plaintext, as bob
    textguard simulate scenarios/typing_v1.jsonl   # replay a keystroke script
    textguard bench                                # latency table

Exit codes: 0 ok, 2 usage, 3 store, 4 crypto/integrity, 5 network.
"""

from __future__ import annotations

import base64
import hashlib
import json
import signal
import sys
import tempfile
import threading
import time
from pathlib import Path

import click

from . import bench as bench_mod
from . import config as config_mod
from . import tokens
from .backends import (
    AppTranscript,
    KeyEvent,
    SimDevice,
    SimSelection,
    SimSink,
    VirtualClock,
)
from .daemon import Daemon
from .directory import HttpDirectory, InProcessDirectory
from .errors import (
    BackendUnavailable,
    BundleRejected,
    CacheCorrupt,
    ContactNotFound,
    DirectoryUnavailable,
    EmptySelection,
    HeaderParseError,
    InvalidSeed,
    KeyChanged,
    KeyErased,
    LengthMismatch,
    MacMismatch,
    MalformedTokenError,
    NothingToDecrypt,
    RegistrationRejected,
    SessionNotFound,
    SpecError,
    StoreCorrupt,
    StoreUnavailable,
    TextGuardError,
    TooManySkipped,
    Unrecoverable,
    UserNotFound,
)
from .guiproto import HeadlessGui
from .harness import Participant, build_participant
from .interceptor import Interceptor, TimingPolicy
from .keystore import Store, store_init, store_open
from .sessions import SessionManager

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_STORE = 3
EXIT_CRYPTO = 4
EXIT_NETWORK = 5

_USAGE_ERRORS = (SpecError, BackendUnavailable)
_STORE_ERRORS = (StoreUnavailable, StoreCorrupt, SessionNotFound, ContactNotFound, CacheCorrupt)
_NETWORK_ERRORS = (DirectoryUnavailable, UserNotFound)
_CRYPTO_ERRORS = (
    MacMismatch,
    MalformedTokenError,
    HeaderParseError,
    LengthMismatch,
    KeyErased,
    TooManySkipped,
    Unrecoverable,
    NothingToDecrypt,
    EmptySelection,
    BundleRejected,
    KeyChanged,
    RegistrationRejected,
    InvalidSeed,
)


def exit_code_for(exc: Exception) -> int:
    if isinstance(exc, _USAGE_ERRORS):
        return EXIT_USAGE
    if isinstance(exc, _STORE_ERRORS):
        return EXIT_STORE
    if isinstance(exc, _NETWORK_ERRORS):
        return EXIT_NETWORK
    if isinstance(exc, _CRYPTO_ERRORS):
        return EXIT_CRYPTO
    return EXIT_CRYPTO  # unclassified pipeline failure: fail closed


def fingerprint(public_key: bytes) -> str:
    """Human-comparable rendering of an identity key, for verification calls."""
    digest = hashlib.sha256(public_key).hexdigest()
    return " ".join(digest[i : i + 4] for i in range(0, len(digest), 4))


class CliState:
    """Per-invocation context shared by all commands."""

    def __init__(self, json_mode: bool, settings: dict, store_flag: str | None,
                 directory_flag: str | None) -> None:
        self.json_mode = json_mode
        self.settings = settings
        self.store_path = config_mod.resolve_store_path(store_flag, settings)
        self.directory_url = directory_flag or settings.get("directory") or ""

    def open_store(self) -> Store:
        return store_open(self.store_path)

    def timing(self) -> TimingPolicy:
        return TimingPolicy(
            min_emit_gap_us=self.settings["min_emit_gap_us"],
            flush_debounce_ms=self.settings["flush_debounce_ms"],
        )

    def open_directory(self) -> HttpDirectory | None:
        return HttpDirectory(base_url=self.directory_url) if self.directory_url else None

    def require_directory(self) -> HttpDirectory:
        directory = self.open_directory()
        if directory is None:
            raise click.UsageError("no key directory configured; pass --directory or set it in the config")
        return directory

    def emit(self, data: dict, plain: str) -> None:
        """Machine output under --json, human text otherwise."""
        if self.json_mode:
            click.echo(json.dumps(data, sort_keys=True))
        else:
            click.echo(plain)


def _local_rig(store: Store, directory, timing: TimingPolicy | None = None) -> Participant:
    """In-process interceptor over simulated IO, for one-shot operations."""
    clock = VirtualClock()
    device = SimDevice(clock)
    transcript = AppTranscript()
    sink = SimSink(clock, transcript)
    selection = SimSelection()
    gui = HeadlessGui()
    sessions = SessionManager(store, directory=directory)
    interceptor = Interceptor(
        clock=clock, device=device, sink=sink, selection=selection,
        gui=gui, sessions=sessions, timing=timing or TimingPolicy(),
    )
    return Participant(
        user_id="local", store=store, clock=clock, device=device,
        transcript=transcript, sink=sink, selection=selection, gui=gui,
        sessions=sessions, interceptor=interceptor,
    )


@click.group()
@click.option("--json", "json_mode", is_flag=True, help="machine-readable output")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="config file (default: ~/.config/textguard/config)")
@click.option("--store", "store_flag", type=click.Path(), default=None,
              help="key store directory (overrides TEXTGUARD_STORE and config)")
@click.option("--directory", "directory_flag", default=None,
              help="key directory base URL")
@click.pass_context
def cli(ctx, json_mode, config_path, store_flag, directory_flag):
    """User-controlled keyboard-input encryption."""
    settings = config_mod.load_config(config_path)
    ctx.obj = CliState(json_mode, settings, store_flag, directory_flag)


# ── daemon ───────────────────────────────────────────────────────────────────


@cli.group()
def daemon():
    """Run the interceptor as a long-lived process."""


@daemon.command("run")
@click.option("--backend", type=click.Choice(["linux", "sim"]), default="linux",
              help="real evdev/uinput IO, or simulated IO for development")
@click.option("--init", "init_store", is_flag=True, help="create the store if missing")
@click.option("--gui-port", type=int, default=None)
@click.option("--dev-api-port", type=int, default=None)
@click.option("--run-for", type=float, default=0.0,
              help="seconds to run before exiting (0 = until interrupted)")
@click.pass_obj
def daemon_run(state: CliState, backend, init_store, gui_port, dev_api_port, run_for):
    """Start the interceptor daemon with its GUI and dev API sockets."""
    # Backends first: if this host can't run the requested IO, fail before
    # taking the store lock.
    if backend == "linux":
        from .linux_backend import EvdevDevice, PrimarySelection, UinputSink, WallClock

        clock = WallClock()
        device = EvdevDevice()
        sink = UinputSink()
        selection = PrimarySelection()
    else:
        from .linux_backend import WallClock

        clock = WallClock()
        device = SimDevice(clock)
        sink = SimSink(clock, AppTranscript())
        selection = SimSelection()

    if init_store and not state.store_path.exists():
        store_init(state.store_path)
    with state.open_store() as store:
        with Daemon(
            store,
            state.open_directory(),
            clock=clock,
            device=device,
            sink=sink,
            selection=selection,
            gui_port=state.settings["gui_port"] if gui_port is None else gui_port,
            dev_api_port=state.settings["dev_api_port"] if dev_api_port is None else dev_api_port,
            token_path=state.store_path / "gui.token",
            timing=state.timing(),
        ) as running:
            info = {
                "gui_port": running.gui.port,
                "dev_api_port": running.dev_api.port if running.dev_api else None,
                "token_file": str(running.token_path),
                "backend": backend,
            }
            state.emit(info, "daemon up: gui=127.0.0.1:{gui_port} dev_api=127.0.0.1:{dev_api_port} "
                             "token={token_file}".format(**info))
            if run_for > 0:
                time.sleep(run_for)
            else:
                stop = threading.Event()
                signal.signal(signal.SIGINT, lambda *_: stop.set())
                signal.signal(signal.SIGTERM, lambda *_: stop.set())
                stop.wait()


# ── contacts ─────────────────────────────────────────────────────────────────


@cli.group()
def contact():
    """Manage pinned peer identities."""


@contact.command("add")
@click.argument("contact_id")
@click.option("--key", "key_b64", default=None,
              help="base64 identity key, for manual pinning without a directory")
@click.pass_obj
def contact_add(state: CliState, contact_id, key_b64):
    """Pin a contact's identity key, from --key or the key directory."""
    with state.open_store() as store:
        if key_b64 is not None:
            try:
                identity_pub = base64.b64decode(key_b64, validate=True)
            except Exception:
                raise click.UsageError("--key is not valid base64")
        else:
            identity_pub = state.require_directory().fetch_bundle(contact_id).identity_pub
        record = store.add_contact(contact_id, identity_pub)
        state.emit(
            {"contact": record.contact_id, "fingerprint": fingerprint(record.identity_pub),
             "verified": record.verified},
            f"{record.contact_id}: {fingerprint(record.identity_pub)}",
        )


@contact.command("list")
@click.pass_obj
def contact_list(state: CliState):
    """List pinned contacts with fingerprints."""
    with state.open_store() as store:
        records = store.list_contacts()
        data = [
            {"contact": r.contact_id, "fingerprint": fingerprint(r.identity_pub),
             "verified": r.verified}
            for r in records
        ]
        lines = [
            "{}{}: {}".format(r.contact_id, " [verified]" if r.verified else "",
                              fingerprint(r.identity_pub))
            for r in records
        ]
        state.emit({"contacts": data}, "\n".join(lines) if lines else "(no contacts)")


@contact.command("verify")
@click.argument("contact_id")
@click.option("--confirm", is_flag=True,
              help="mark verified after comparing fingerprints out of band")
@click.pass_obj
def contact_verify(state: CliState, contact_id, confirm):
    """Show a contact's fingerprint; --confirm records the verification."""
    with state.open_store() as store:
        record = store.verify_contact(contact_id) if confirm else store.get_contact(contact_id)
        state.emit(
            {"contact": record.contact_id, "fingerprint": fingerprint(record.identity_pub),
             "verified": record.verified},
            f"{record.contact_id}: {fingerprint(record.identity_pub)}"
            + (" [verified]" if record.verified else " — compare out of band, then re-run with --confirm"),
        )


# ── keys ─────────────────────────────────────────────────────────────────────


@cli.group()
def keys():
    """Publish and fetch prekey bundles."""


@keys.command("publish")
@click.option("--user", "user_id", default=None, help="our id in the directory")
@click.option("--prekeys", type=int, default=16, show_default=True)
@click.pass_obj
def keys_publish(state: CliState, user_id, prekeys):
    """Register our identity and a fresh batch of one-time prekeys."""
    user_id = user_id or state.settings.get("user") or ""
    if not user_id:
        raise click.UsageError("no user id; pass --user or set 'user' in the config")
    with state.open_store() as store:
        key_changed = state.require_directory().publish(user_id, store, one_time_count=prekeys)
        state.emit(
            {"user": user_id, "prekeys": prekeys, "key_changed": key_changed},
            f"published {prekeys} prekeys as {user_id!r}"
            + (" (identity key CHANGED)" if key_changed else ""),
        )


@keys.command("fetch")
@click.argument("user_id")
@click.pass_obj
def keys_fetch(state: CliState, user_id):
    """Fetch a user's bundle and show its identity fingerprint."""
    bundle = state.require_directory().fetch_bundle(user_id)
    data = {
        "user": user_id,
        "fingerprint": fingerprint(bundle.identity_pub),
        "identity_pub": base64.b64encode(bundle.identity_pub).decode(),
        "registration_id": bundle.registration_id,
        "one_time_prekey_id": bundle.one_time_prekey_id,
    }
    state.emit(data, f"{user_id}: {data['fingerprint']}")


# ── one-shot encryption and decryption ───────────────────────────────────────


@cli.command()
@click.option("--to", "recipient", required=True, help="contact or directory user id")
@click.option("--v2", "use_v2", is_flag=True, help="one-shot compose instead of streaming")
@click.pass_obj
def encrypt(state: CliState, recipient, use_v2):
    """Encrypt stdin to one armored token on stdout."""
    text = sys.stdin.read()
    if text.endswith("\n"):
        text = text[:-1]
    if not text:
        raise click.UsageError("empty plaintext on stdin")
    with state.open_store() as store:
        rig = _local_rig(store, state.open_directory(), state.timing())
        rig.interceptor.begin_encryption()
        rig.interceptor.set_recipient(recipient, "v2" if use_v2 else "v1")
        if rig.interceptor.last_failure is not None:
            raise rig.interceptor.last_failure
        if use_v2:
            rig.interceptor.compose_v2(text)
        else:
            rig.type_text(text)
            rig.settle()
            rig.press("e", ("ctrl", "alt"))
        scan = tokens.scan_tokens(rig.transcript.textbox)
        if len(scan.tokens) != 1:
            raise MalformedTokenError(f"expected one token, produced {len(scan.tokens)}")
        token = scan.tokens[0].text
        state.emit({"token": token, "recipient": recipient}, token)


@cli.command()
@click.option("--from", "sender_hint", default=None,
              help="sender id, for first-contact tokens from unknown keys")
@click.pass_obj
def decrypt(state: CliState, sender_hint):
    """Decrypt every armored token found on stdin."""
    selection_text = sys.stdin.read()
    with state.open_store() as store:
        rig = _local_rig(store, state.open_directory())
        outcomes = rig.interceptor.decrypt_selection(selection_text, sender_choice=sender_hint)
        shown = [o for o in outcomes if o.kind == "displayed"]
        failed = [o for o in outcomes if o.kind != "displayed"]
        if state.json_mode:
            click.echo(json.dumps({
                "messages": [
                    {"text": o.text, "sender": o.sender, "source": o.source} for o in shown
                ],
                "warnings": [{"kind": o.kind, "reason": o.reason} for o in failed],
            }, sort_keys=True))
        else:
            for outcome in shown:
                click.echo(outcome.text)
            for outcome in failed:
                click.echo(f"warning: {outcome.kind}: {outcome.reason}", err=True)
        if failed:
            raise MacMismatch(f"{len(failed)} of {len(outcomes)} tokens could not be shown")


# ── scripted simulation ──────────────────────────────────────────────────────


def _run_simulation(script_path: Path, seed: int) -> dict:
    """Replay a JSONL keystroke script against a throwaway simulated world.

    Line forms:
        {"t_us": N, "key": "h", "action": "down", "mods": [...]}   key event
        {"peer": "bob"}                      synthesize + publish a recipient
        {"recipient": "bob", "mode": "v1"}   answer the recipient picker
        {"wait_ms": N} / {"wait_us": N}      let simulated time pass

    Errors:
        SpecError: unrecognized or malformed line.
    """
    with tempfile.TemporaryDirectory() as tmp:
        directory = InProcessDirectory()
        operator = build_participant(tmp, "operator", seed=seed * 1000, directory=directory)
        peers: dict[str, Participant] = {}
        try:
            for number, raw in enumerate(script_path.read_text().splitlines(), start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SpecError(f"{script_path}:{number}: not valid JSON: {exc}")
                if "key" in data:
                    operator.device.push(KeyEvent.from_json(data))
                elif "peer" in data:
                    peer_id = data["peer"]
                    peers[peer_id] = build_participant(
                        tmp, peer_id, seed=seed * 1000 + len(peers) + 1, directory=directory
                    )
                    directory.publish(peer_id, peers[peer_id].store)
                elif "recipient" in data:
                    operator.interceptor.set_recipient(data["recipient"], data.get("mode", "v1"))
                elif "wait_ms" in data:
                    operator.wait(int(data["wait_ms"]) * 1000)
                elif "wait_us" in data:
                    operator.wait(int(data["wait_us"]))
                else:
                    raise SpecError(f"{script_path}:{number}: unrecognized line {line!r}")
            operator.settle()
            scan = tokens.scan_tokens(operator.transcript.textbox)
            return {
                "transcript": operator.transcript.textbox,
                "tokens": len(scan.tokens),
                "malformed": len(scan.malformed),
                "errors": list(operator.interceptor.errors),
                "mode": operator.interceptor.mode.name,
            }
        finally:
            operator.close()
            for peer in peers.values():
                peer.close()


@cli.command()
@click.argument("script", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--seed", type=int, default=1, show_default=True)
@click.pass_obj
def simulate(state: CliState, script, seed):
    """Replay a JSONL keystroke script and print the app transcript."""
    result = _run_simulation(script, seed)
    state.emit(result, result["transcript"])


# ── benchmarks ───────────────────────────────────────────────────────────────


@cli.command("bench")
@click.option("--iterations", type=int, default=200, show_default=True)
@click.pass_obj
def bench_cmd(state: CliState, iterations):
    """Measure hot-path latencies and print a table."""
    rows = bench_mod.run_benchmarks(iterations=iterations)
    state.emit({"rows": [r.to_dict() for r in rows]}, bench_mod.format_table(rows))


# ── entry point ──────────────────────────────────────────────────────────────


def main(argv: list[str] | None = None) -> int:
    """Run the CLI; returns the exit code instead of raising SystemExit."""
    json_mode = "--json" in (argv if argv is not None else sys.argv[1:])

    def report(code: int, name: str, message: str) -> int:
        if json_mode:
            payload = {"error": {"exit_code": code, "type": name, "message": message}}
            click.echo(json.dumps(payload, sort_keys=True), err=True)
        else:
            click.echo(f"error: {message}", err=True)
        return code

    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:  # --help and friends
        return int(exc.exit_code)
    except click.UsageError as exc:
        return report(EXIT_USAGE, type(exc).__name__, exc.format_message())
    except click.ClickException as exc:
        return report(exc.exit_code, type(exc).__name__, exc.format_message())
    except TextGuardError as exc:
        return report(exit_code_for(exc), type(exc).__name__, str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
