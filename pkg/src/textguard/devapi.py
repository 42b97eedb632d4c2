"""Application-facing encryption trigger: line-JSON over a local socket.

A client app writes one JSON object per line and reads one JSON object
back per request:

    → {"action": "encrypt", "recipient": "bob", "mode": "v1"}
    ← {"status": "ok", "mode": "v1"}
    ← {"status": "error", "code": "busy", "message": "..."}

Error codes: ``bad_request`` (malformed line), ``contact_not_found``,
``busy`` (a flow is already active), ``gui_unavailable``,
``capture_denied``, ``directory_unavailable``, ``key_changed``,
``internal``.  A malformed line never closes the connection.

This socket can only *start* encryption — no message on it can make the
daemon emit plaintext anywhere.
"""

from __future__ import annotations

import json
import socket
import threading
from typing import Callable

from .errors import (
    CaptureDenied,
    ContactNotFound,
    DirectoryUnavailable,
    GuiChannelClosed,
    KeyChanged,
    UserNotFound,
)
from .interceptor import Mode

DEV_API_PORT = 5000
_MODES = ("v1", "v2")


def _poke_listener(host: str, port: int) -> None:
    """Wake a thread blocked in accept(); closing the listener won't."""
    try:
        with socket.create_connection((host, port), timeout=0.2):
            pass
    except OSError:
        pass


def error_response(code: str, message: str) -> dict:
    return {"status": "error", "code": code, "message": message}


def _failure_code(failure: Exception | None) -> str:
    if isinstance(failure, (ContactNotFound, UserNotFound)):
        return "contact_not_found"
    if isinstance(failure, GuiChannelClosed):
        return "gui_unavailable"
    if isinstance(failure, CaptureDenied):
        return "capture_denied"
    if isinstance(failure, DirectoryUnavailable):
        return "directory_unavailable"
    if isinstance(failure, KeyChanged):
        return "key_changed"
    return "internal"


def start_encryption(interceptor, recipient: str, mode: str) -> dict:
    """Drive the interceptor exactly as the shortcut + picker would.

    Must run wherever the interceptor's other inputs run (the daemon
    dispatches it onto its event loop).
    """
    if interceptor.mode is not Mode.IDLE:
        return error_response("busy", f"a {interceptor.mode.value} flow is active")
    interceptor.begin_encryption()
    if interceptor.mode is not Mode.SELECTING_RECIPIENT:
        failure = interceptor.last_failure
        return error_response(
            _failure_code(failure), str(failure) if failure else "could not begin encryption"
        )
    interceptor.set_recipient(recipient, mode)
    if interceptor.mode in (Mode.ENCRYPTING_V1, Mode.ENCRYPTING_V2):
        return {"status": "ok", "mode": mode}
    failure = interceptor.last_failure
    return error_response(
        _failure_code(failure), str(failure) if failure else f"could not select {recipient!r}"
    )


def handle_request_line(line: str, start_encryption: Callable[[str, str], dict]) -> dict:
    """Validate one request line and hand it to the daemon.

    ``start_encryption(recipient, mode)`` runs on the daemon's event loop
    and returns the response object.
    """
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        return error_response("bad_request", f"not valid JSON: {exc}")
    if not isinstance(request, dict):
        return error_response("bad_request", "request must be a JSON object")
    if request.get("action") != "encrypt":
        return error_response("bad_request", f"unknown action {request.get('action')!r}")
    recipient = request.get("recipient")
    if not isinstance(recipient, str) or not recipient:
        return error_response("bad_request", "missing recipient")
    mode = request.get("mode", "v1")
    if mode not in _MODES:
        return error_response("bad_request", f"mode must be one of {list(_MODES)}")
    return start_encryption(recipient, mode)


class DevApiServer:
    """Accepts local client apps; one line in, one line out, per request."""

    def __init__(self, start_encryption: Callable[[str, str], dict],
                 host: str = "127.0.0.1", port: int = DEV_API_PORT) -> None:
        self._start_encryption = start_encryption
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._threads: list[threading.Thread] = []
        self._stopping = threading.Event()
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="devapi-accept", daemon=True
        )
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return  # listener closed
            if self._stopping.is_set():
                conn.close()
                return
            thread = threading.Thread(
                target=self._serve_client, args=(conn,), name="devapi-client", daemon=True
            )
            thread.start()
            self._threads.append(thread)

    def _serve_client(self, conn: socket.socket) -> None:
        with conn, conn.makefile("r", encoding="utf-8", newline="\n") as reader:
            for line in reader:
                line = line.strip()
                if not line:
                    continue
                response = handle_request_line(line, self._start_encryption)
                try:
                    conn.sendall((json.dumps(response) + "\n").encode("utf-8"))
                except OSError:
                    return

    def close(self) -> None:
        self._stopping.set()
        _poke_listener(self.host, self.port)
        self._listener.close()
        self._accept_thread.join(timeout=1)
