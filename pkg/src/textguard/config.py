"""Operator configuration: a flat key=value file plus overrides.

Precedence, strongest first: command-line flag, environment variable
(``TEXTGUARD_STORE`` for the store path), config file, built-in default.
The file format is deliberately tiny — ``key = value`` lines, ``#``
comments, optional quotes around string values:

    # ~/.config/textguard/config
    store = "/home/ada/.textguard/store"
    user = ada
    directory = http://127.0.0.1:8470
    dev_api_port = 5000
"""

from __future__ import annotations

import os
from pathlib import Path

from .errors import SpecError

STORE_ENV_VAR = "TEXTGUARD_STORE"
CONFIG_ENV_VAR = "TEXTGUARD_CONFIG"

DEFAULTS = {
    "store": "~/.textguard/store",
    "user": "",
    "directory": "",  # key-directory base URL; empty means none configured
    "dev_api_port": 5000,
    "gui_port": 5001,
    "min_emit_gap_us": 1250,
    "flush_debounce_ms": 300,
}

_INT_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, int)}


def default_config_path() -> Path:
    base = os.environ.get("XDG_CONFIG_HOME", "~/.config")
    return Path(base).expanduser() / "textguard" / "config"


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse key=value lines into a settings dict.

    Errors:
        SpecError: a line is not a comment, blank, or ``key = value``,
            or an integer-valued key has a non-integer value.
    """
    settings: dict = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SpecError(f"{source}:{number}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        if key in _INT_KEYS:
            try:
                settings[key] = int(value)
            except ValueError:
                raise SpecError(f"{source}:{number}: {key} must be an integer, got {value!r}")
        else:
            settings[key] = value
    return settings


def load_config(path: str | Path | None = None) -> dict:
    """Read settings from ``path`` (or the default location) over DEFAULTS.

    A missing file is not an error unless the path was given explicitly.

    Errors:
        SpecError: explicit path does not exist, or the file is malformed.
    """
    explicit = path is not None
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or default_config_path()
    path = Path(path).expanduser()
    settings = dict(DEFAULTS)
    if path.exists():
        settings.update(parse_config_text(path.read_text(), source=str(path)))
    elif explicit:
        raise SpecError(f"config file {path} does not exist")
    return settings


def resolve_store_path(flag_value: str | None, settings: dict) -> Path:
    """Store path per the precedence rule: flag, then env var, then config."""
    if flag_value:
        return Path(flag_value).expanduser()
    env_value = os.environ.get(STORE_ENV_VAR)
    if env_value:
        return Path(env_value).expanduser()
    return Path(settings["store"]).expanduser()
