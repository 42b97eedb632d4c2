"""Frame protocol between the daemon and its GUI client.

Transport is newline-delimited JSON over a loopback socket.  Both sides
authenticate every frame with a random per-boot token read from a
permission-restricted file — the daemon and GUI run as different users,
so possession of the token file is the capability to see plaintext.

Plaintext travels exclusively on this channel: the focused application
only ever sees armored tokens.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import GuiChannelClosed

FRAME_KINDS = frozenset(
    {
        "session_start",  # daemon→GUI: a flow began (encrypt picker / decrypt prompt)
        "recipient_set",  # GUI→daemon: contact choice + v1/v2 (or decrypt sender)
        "plaintext_append",  # daemon→GUI: one mirrored character
        "plaintext_edit",  # daemon→GUI: an edit (backspace) to mirror
        "show_decrypted",  # daemon→GUI: decrypted text (or warning) to display
        "compose_submit",  # GUI→daemon: final v2 text
        "close",  # either: end of flow / cancel
        "error",  # daemon→GUI: user-visible failure
    }
)


@dataclass(frozen=True)
class GuiFrame:
    kind: str
    payload: dict = field(default_factory=dict)
    auth: str = ""


def encode_frame(frame: GuiFrame) -> bytes:
    return (
        json.dumps(
            {"kind": frame.kind, "payload": frame.payload, "auth": frame.auth},
            separators=(",", ":"),
        ).encode("utf-8")
        + b"\n"
    )


def decode_frame(line: bytes | str) -> GuiFrame:
    """Parse one frame line.

    Errors:
        ValueError: not JSON, unknown kind, or missing fields.
    """
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    data = json.loads(line)
    kind = data.get("kind")
    if kind not in FRAME_KINDS:
        raise ValueError(f"unknown frame kind {kind!r}")
    payload = data.get("payload", {})
    if not isinstance(payload, dict):
        raise ValueError("frame payload must be an object")
    return GuiFrame(kind=kind, payload=payload, auth=str(data.get("auth", "")))


def make_auth_token(rng=os.urandom) -> str:
    return rng(16).hex()


def write_token_file(path: str | Path, token: str) -> None:
    """Persist the channel token readable only by the owner."""
    target = Path(path)
    fd = os.open(target, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    try:
        os.write(fd, token.encode("ascii"))
    finally:
        os.close(fd)


def read_token_file(path: str | Path) -> str:
    return Path(path).read_text().strip()


# ── In-process GUI stand-in ─────────────────────────────────────────────────


class HeadlessGui:
    """Records daemon frames and scripts replies, standing in for a real GUI.

    The whole primary test suite runs against this: it implements the same
    one-way ``send`` surface the daemon uses for a connected GUI, collects
    every frame for assertions, and can inject scripted responses (via the
    callbacks wired by whoever owns the interceptor).

    ``fail_after(n)`` simulates the channel dying mid-flow: the n-th
    subsequent send raises GuiChannelClosed, which must fail closed.
    """

    def __init__(self) -> None:
        self.frames: list[GuiFrame] = []
        self.connected = True
        self._fail_countdown: int | None = None

    @property
    def available(self) -> bool:
        return self.connected

    def fail_after(self, sends: int) -> None:
        self._fail_countdown = sends

    def disconnect(self) -> None:
        self.connected = False

    def send(self, kind: str, payload: dict | None = None) -> None:
        if not self.connected:
            raise GuiChannelClosed("GUI is not connected")
        if self._fail_countdown is not None:
            if self._fail_countdown <= 0:
                self.connected = False
                raise GuiChannelClosed("GUI channel dropped")
            self._fail_countdown -= 1
        self.frames.append(GuiFrame(kind=kind, payload=payload or {}))

    # -- assertion helpers ----------------------------------------------------

    def kinds(self) -> list[str]:
        return [f.kind for f in self.frames]

    def last(self, kind: str) -> GuiFrame | None:
        for frame in reversed(self.frames):
            if frame.kind == kind:
                return frame
        return None

    def mirrored_text(self) -> str:
        """Fold append/edit frames into the plaintext the GUI would show."""
        chars: list[str] = []
        for frame in self.frames:
            if frame.kind == "plaintext_append":
                chars.append(frame.payload.get("char", ""))
            elif frame.kind == "plaintext_edit" and chars:
                if frame.payload.get("op") == "backspace":
                    chars.pop()
        return "".join(chars)
