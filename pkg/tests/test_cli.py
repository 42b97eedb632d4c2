"""Command-line behavior: exit codes, pipe round-trips, config, simulation."""

import base64
import io
import json
import socket
import threading
import time
from pathlib import Path

import pytest
import uvicorn

from textguard import config as config_mod
from textguard.cli import EXIT_CRYPTO, EXIT_NETWORK, EXIT_STORE, EXIT_USAGE, exit_code_for, main
from textguard.directory import create_app
from textguard.errors import (
    BackendUnavailable,
    DirectoryUnavailable,
    MacMismatch,
    SpecError,
    StoreUnavailable,
    TextGuardError,
    UserNotFound,
)
from textguard.keystore import store_init

SCRIPT = Path(__file__).resolve().parent.parent / "scenarios" / "typing_v1.jsonl"


@pytest.fixture
def run_cli(monkeypatch, capsys, tmp_path):
    """Invoke main() with a clean environment, returning (code, out, err)."""
    monkeypatch.delenv("TEXTGUARD_STORE", raising=False)
    monkeypatch.delenv("TEXTGUARD_CONFIG", raising=False)
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path / "xdg"))

    def run(argv, stdin=""):
        monkeypatch.setattr("sys.stdin", io.StringIO(stdin))
        code = main(argv)
        captured = capsys.readouterr()
        return code, captured.out, captured.err

    return run


@pytest.fixture(scope="module")
def directory_url():
    """A real directory service over HTTP, shared by the module."""
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    server = uvicorn.Server(
        uvicorn.Config(create_app(), host="127.0.0.1", port=port, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 5
    while not server.started:
        assert time.monotonic() < deadline, "directory server did not start"
        time.sleep(0.01)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=2)


@pytest.fixture(scope="module")
def world(tmp_path_factory, directory_url):
    """Two initialized stores with published keys, plus the directory URL."""
    base = tmp_path_factory.mktemp("cli-world")
    alice, bob = base / "alice", base / "bob"
    store_init(alice).close()
    store_init(bob).close()
    for store, user in ((alice, "alice"), (bob, "bob")):
        code = main(["--store", str(store), "--directory", directory_url,
                     "keys", "publish", "--user", user])
        assert code == 0
    return {
        "alice": ["--store", str(alice), "--directory", directory_url],
        "bob": ["--store", str(bob), "--directory", directory_url],
        "alice_path": alice,
        "bob_path": bob,
        "url": directory_url,
    }


class TestConfigFile:
    def test_parses_ints_strings_quotes_and_comments(self):
        text = (
            "# a comment\n"
            "\n"
            'store = "/tmp/somewhere"\n'
            "user = ada  # trailing comment\n"
            "dev_api_port = 6000\n"
        )
        settings = config_mod.parse_config_text(text)
        assert settings == {"store": "/tmp/somewhere", "user": "ada", "dev_api_port": 6000}

    def test_garbage_line_is_rejected(self):
        with pytest.raises(SpecError, match="expected 'key = value'"):
            config_mod.parse_config_text("just words\n")

    def test_non_integer_port_is_rejected(self):
        with pytest.raises(SpecError, match="must be an integer"):
            config_mod.parse_config_text("gui_port = lots\n")

    def test_missing_default_file_falls_back_to_defaults(self, monkeypatch, tmp_path):
        monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path))
        monkeypatch.delenv("TEXTGUARD_CONFIG", raising=False)
        assert config_mod.load_config() == config_mod.DEFAULTS

    def test_missing_explicit_file_is_an_error(self, tmp_path):
        with pytest.raises(SpecError, match="does not exist"):
            config_mod.load_config(tmp_path / "nope")

    def test_store_precedence_flag_env_config(self, monkeypatch):
        settings = {"store": "/from/config"}
        monkeypatch.delenv(config_mod.STORE_ENV_VAR, raising=False)
        assert config_mod.resolve_store_path(None, settings) == Path("/from/config")
        monkeypatch.setenv(config_mod.STORE_ENV_VAR, "/from/env")
        assert config_mod.resolve_store_path(None, settings) == Path("/from/env")
        assert config_mod.resolve_store_path("/from/flag", settings) == Path("/from/flag")


class TestExitCodeMapping:
    @pytest.mark.parametrize(
        "exc,code",
        [
            (SpecError("x"), EXIT_USAGE),
            (BackendUnavailable("x"), EXIT_USAGE),
            (StoreUnavailable("x"), EXIT_STORE),
            (MacMismatch("x"), EXIT_CRYPTO),
            (DirectoryUnavailable("x"), EXIT_NETWORK),
            (UserNotFound("x"), EXIT_NETWORK),
            (TextGuardError("x"), EXIT_CRYPTO),
        ],
    )
    def test_mapping(self, exc, code):
        assert exit_code_for(exc) == code


class TestUsage:
    def test_help_exits_zero(self, run_cli):
        code, out, _ = run_cli(["--help"])
        assert code == 0
        assert "encrypt" in out

    def test_missing_required_option(self, run_cli):
        code, _, err = run_cli(["encrypt"], stdin="x")
        assert code == 2
        assert "--to" in err

    def test_unknown_command(self, run_cli):
        code, _, err = run_cli(["transmogrify"])
        assert code == 2

    def test_explicit_config_must_exist(self, run_cli):
        code, _, err = run_cli(["--config", "/no/such/file", "contact", "list"])
        assert code == 2
        assert "does not exist" in err

    def test_empty_plaintext_is_usage_error(self, run_cli, world):
        code, _, err = run_cli(world["alice"] + ["encrypt", "--to", "bob"], stdin="")
        assert code == 2
        assert "empty plaintext" in err

    def test_json_errors_go_to_stderr_as_json(self, run_cli, tmp_path):
        code, out, err = run_cli(["--json", "--store", str(tmp_path / "none"), "contact", "list"])
        assert code == 3
        assert out == ""
        payload = json.loads(err)
        assert payload["error"]["exit_code"] == 3
        assert payload["error"]["type"] == "StoreUnavailable"


class TestPipeRoundTrip:
    def test_encrypt_then_decrypt_v1(self, run_cli, world):
        code, token, err = run_cli(world["alice"] + ["encrypt", "--to", "bob"], stdin="hello\n")
        assert code == 0, err
        assert token.startswith("Guard-start")
        code, out, err = run_cli(world["bob"] + ["decrypt", "--from", "alice"], stdin=token)
        assert code == 0, err
        assert out == "hello\n"

    def test_encrypt_then_decrypt_v2_persists_sessions(self, run_cli, world):
        for text in ("first v2 message", "second v2 message"):
            code, token, _ = run_cli(
                world["alice"] + ["encrypt", "--to", "bob", "--v2"], stdin=text + "\n"
            )
            assert code == 0
            code, out, _ = run_cli(world["bob"] + ["decrypt"], stdin=token)
            assert code == 0
            assert out == text + "\n"

    def test_json_output_round_trip(self, run_cli, world):
        code, out, _ = run_cli(
            world["alice"] + ["--json", "encrypt", "--to", "bob"], stdin="json trip\n"
        )
        assert code == 0
        token = json.loads(out)["token"]
        code, out, _ = run_cli(world["bob"] + ["--json", "decrypt"], stdin=token)
        assert code == 0
        data = json.loads(out)
        assert data["messages"][0]["text"] == "json trip"
        assert data["warnings"] == []

    def test_tampered_token_exits_crypto_code(self, run_cli, world):
        code, token, _ = run_cli(world["alice"] + ["encrypt", "--to", "bob"], stdin="target\n")
        assert code == 0
        middle = len(token) // 2
        flipped = "A" if token[middle] != "A" else "B"
        tampered = token[:middle] + flipped + token[middle + 1 :]
        code, out, err = run_cli(world["bob"] + ["decrypt"], stdin=tampered)
        assert code == 4
        assert out == ""  # no plaintext on any failure
        assert "warning" in err

    def test_unknown_recipient_is_a_store_error(self, run_cli, world):
        code, _, err = run_cli(world["alice"] + ["encrypt", "--to", "ghost"], stdin="x\n")
        assert code == 3
        assert "ghost" in err

    def test_unreachable_directory_is_a_network_error(self, run_cli, world):
        argv = ["--store", str(world["alice_path"]), "--directory", "http://127.0.0.1:9",
                "encrypt", "--to", "nobody"]
        code, _, err = run_cli(argv, stdin="x\n")
        assert code == 5

    def test_store_env_var_is_honored(self, run_cli, world, monkeypatch):
        monkeypatch.setenv("TEXTGUARD_STORE", str(world["alice_path"]))
        code, token, _ = run_cli(
            ["--directory", world["url"], "encrypt", "--to", "bob"], stdin="via env\n"
        )
        assert code == 0
        assert token.startswith("Guard-start")

    def test_config_file_supplies_store_and_directory(self, run_cli, world, tmp_path):
        config = tmp_path / "config"
        config.write_text(
            f'store = "{world["alice_path"]}"\ndirectory = {world["url"]}\n'
        )
        code, token, err = run_cli(
            ["--config", str(config), "encrypt", "--to", "bob"], stdin="via config\n"
        )
        assert code == 0, err
        assert token.startswith("Guard-start")


class TestContacts:
    def test_add_list_verify_cycle(self, run_cli, tmp_path, world):
        store = tmp_path / "fresh"
        store_init(store).close()
        # Pin bob manually from his published identity key.
        code, out, _ = run_cli(world["bob"] + ["--json", "keys", "fetch", "alice"])
        assert code == 0
        identity_b64 = json.loads(out)["identity_pub"]
        argv = ["--store", str(store)]
        code, out, _ = run_cli(argv + ["contact", "add", "alice", "--key", identity_b64])
        assert code == 0
        code, out, _ = run_cli(argv + ["contact", "list"])
        assert code == 0
        assert out.startswith("alice:")
        code, out, _ = run_cli(argv + ["contact", "verify", "alice"])
        assert code == 0
        assert "--confirm" in out
        code, out, _ = run_cli(argv + ["contact", "verify", "alice", "--confirm"])
        assert code == 0
        assert "[verified]" in out
        code, out, _ = run_cli(argv + ["--json", "contact", "list"])
        assert json.loads(out)["contacts"][0]["verified"] is True

    def test_add_with_bad_base64_is_usage(self, run_cli, tmp_path):
        store = tmp_path / "fresh"
        store_init(store).close()
        code, _, err = run_cli(
            ["--store", str(store), "contact", "add", "x", "--key", "!!!"]
        )
        assert code == 2

    def test_verify_unknown_contact(self, run_cli, tmp_path):
        store = tmp_path / "fresh"
        store_init(store).close()
        code, _, err = run_cli(["--store", str(store), "contact", "verify", "nobody"])
        assert code == 3


class TestKeys:
    def test_publish_requires_a_user_id(self, run_cli, world):
        code, _, err = run_cli(world["alice"] + ["keys", "publish"])
        assert code == 2
        assert "user id" in err

    def test_fetch_reports_fingerprint(self, run_cli, world):
        code, out, _ = run_cli(world["alice"] + ["--json", "keys", "fetch", "bob"])
        assert code == 0
        data = json.loads(out)
        assert len(data["fingerprint"].replace(" ", "")) == 64
        assert base64.b64decode(data["identity_pub"])

    def test_fetch_unknown_user(self, run_cli, world):
        code, _, err = run_cli(world["alice"] + ["keys", "fetch", "nobody"])
        assert code == 5

    def test_republishing_under_a_new_key_is_flagged(self, run_cli, tmp_path, world):
        first, second = tmp_path / "c1", tmp_path / "c2"
        store_init(first).close()
        store_init(second).close()
        base = ["--directory", world["url"], "--json", "keys", "publish", "--user", "carol"]
        code, out, _ = run_cli(["--store", str(first)] + base)
        assert code == 0
        assert json.loads(out)["key_changed"] is False
        code, out, _ = run_cli(["--store", str(second)] + base)
        assert code == 0
        assert json.loads(out)["key_changed"] is True


class TestSimulate:
    def test_demo_script_produces_one_token_and_no_plaintext(self, run_cli):
        code, out, err = run_cli(["--json", "simulate", str(SCRIPT)])
        assert code == 0, err
        data = json.loads(out)
        assert data["tokens"] == 1
        assert data["malformed"] == 0
        assert data["errors"] == []
        assert data["mode"] == "IDLE"
        assert "hi" not in data["transcript"]

    def test_plain_output_is_the_transcript(self, run_cli):
        code, out, _ = run_cli(["simulate", str(SCRIPT)])
        assert code == 0
        assert out.strip().startswith("Guard-start")
        assert out.strip().endswith("Guard-end")

    def test_same_seed_same_transcript(self, run_cli):
        first = run_cli(["simulate", str(SCRIPT), "--seed", "9"])
        second = run_cli(["simulate", str(SCRIPT), "--seed", "9"])
        assert first == second

    def test_malformed_line_is_usage_error(self, run_cli, tmp_path):
        script = tmp_path / "bad.jsonl"
        script.write_text("{not json\n")
        code, _, err = run_cli(["simulate", str(script)])
        assert code == 2
        assert "not valid JSON" in err

    def test_unrecognized_directive_is_usage_error(self, run_cli, tmp_path):
        script = tmp_path / "bad.jsonl"
        script.write_text('{"launch": "missiles"}\n')
        code, _, err = run_cli(["simulate", str(script)])
        assert code == 2
        assert "unrecognized" in err


class TestDaemonRun:
    def test_simulated_daemon_starts_and_releases_the_store(self, run_cli, tmp_path):
        store = tmp_path / "daemon-store"
        argv = ["--store", str(store), "--json", "daemon", "run", "--backend", "sim",
                "--init", "--gui-port", "0", "--dev-api-port", "0", "--run-for", "0.2"]
        code, out, err = run_cli(argv)
        assert code == 0, err
        info = json.loads(out)
        assert info["gui_port"] > 0
        assert info["dev_api_port"] > 0
        assert not Path(info["token_file"]).exists()  # removed on shutdown
        code, _, _ = run_cli(["--store", str(store), "contact", "list"])
        assert code == 0

    def test_daemon_requires_a_store_without_init(self, run_cli, tmp_path):
        argv = ["--store", str(tmp_path / "none"), "daemon", "run", "--backend", "sim",
                "--run-for", "0.1"]
        code, _, err = run_cli(argv)
        assert code == 3


class TestBench:
    def test_bench_prints_a_table(self, run_cli):
        code, out, _ = run_cli(["bench", "--iterations", "5"])
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0].split()[0] == "operation"
        assert len(lines) == 2 + 6  # header, rule, six measurements

    def test_bench_json_rows(self, run_cli):
        code, out, _ = run_cli(["--json", "bench", "--iterations", "5"])
        assert code == 0
        rows = json.loads(out)["rows"]
        assert [r["operation"] for r in rows] == [
            "watch-mode keystroke",
            "stream encrypt per char",
            "one-shot encrypt 200 chars",
            "one-shot encrypt 1000 chars",
            "decrypt 50 chars",
            "decrypt 1000 chars",
        ]
        assert all(r["median_us"] > 0 for r in rows)
