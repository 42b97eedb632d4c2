"""Daemon runtime: one event loop owning the interceptor, plus its sockets.

Everything that can touch interceptor state — device events, GUI frames,
dev-API requests, timer ticks — is funneled through a single queue and
executed by one thread, so the state machine never sees interleaving.

The GUI connects to a loopback socket and must authenticate every frame
with the per-boot token the daemon wrote to a permission-restricted
file; the daemon stamps the same token on outbound frames so the GUI
can verify it is talking to the real daemon.
"""

from __future__ import annotations

import json
import queue
import socket
import threading
from concurrent.futures import Future
from pathlib import Path

from .devapi import DevApiServer, _poke_listener, start_encryption
from .errors import GuiChannelClosed
from .guiproto import GuiFrame, decode_frame, encode_frame, make_auth_token, write_token_file
from .interceptor import Interceptor
from .sessions import SessionManager


class GuiSocketChannel:
    """Daemon-side server for the authenticated GUI frame channel.

    One GUI at a time.  A client's first line must be the hello
    ``{"auth": "<token>"}``; the server answers ``{"status": "ok"}`` or
    ``{"status": "rejected"}`` and drops unauthenticated sessions.
    After the hello, inbound frames still carry the token and frames
    with a bad token are rejected (counted, never dispatched).
    """

    def __init__(self, token: str, host: str = "127.0.0.1", port: int = 0,
                 on_frame=None, on_disconnect=None) -> None:
        self.token = token
        self.on_frame = on_frame  # called from the reader thread
        self.on_disconnect = on_disconnect
        self.rejected_frames = 0
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._client: socket.socket | None = None
        self._lock = threading.Lock()
        self._stopping = threading.Event()
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="gui-accept", daemon=True
        )
        self._accept_thread.start()

    # -- the interface the interceptor sees --------------------------------

    @property
    def available(self) -> bool:
        return self._client is not None

    def send(self, kind: str, payload: dict | None = None) -> None:
        """Push one frame to the connected GUI.

        Errors:
            GuiChannelClosed: no GUI connected, or the write failed.
        """
        with self._lock:
            client = self._client
            if client is None:
                raise GuiChannelClosed("no GUI is connected")
            try:
                client.sendall(encode_frame(GuiFrame(kind, payload or {}, auth=self.token)))
            except OSError as exc:
                self._drop_client(client)
                raise GuiChannelClosed(f"GUI channel write failed: {exc}")

    # -- server plumbing -----------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            if self._stopping.is_set():
                conn.close()
                return
            threading.Thread(
                target=self._serve_client, args=(conn,), name="gui-client", daemon=True
            ).start()

    def _serve_client(self, conn: socket.socket) -> None:
        reader = conn.makefile("r", encoding="utf-8", newline="\n")
        hello = reader.readline()
        if not self._authenticate(conn, hello):
            conn.close()
            return
        with self._lock:
            if self._client is not None:
                conn.sendall(b'{"status": "busy"}\n')
                conn.close()
                return
            self._client = conn
            conn.sendall(b'{"status": "ok"}\n')
        try:
            for line in reader:
                line = line.strip()
                if not line:
                    continue
                try:
                    frame = decode_frame(line)
                except ValueError:
                    self.rejected_frames += 1
                    continue
                if frame.auth != self.token:
                    self.rejected_frames += 1
                    continue
                if self.on_frame is not None:
                    self.on_frame(frame)
        except OSError:
            pass
        finally:
            self._drop_client(conn)
            if self.on_disconnect is not None:
                self.on_disconnect()

    def _authenticate(self, conn: socket.socket, hello_line: str) -> bool:
        try:
            hello = json.loads(hello_line)
            authed = isinstance(hello, dict) and hello.get("auth") == self.token
        except (json.JSONDecodeError, UnicodeDecodeError):
            authed = False
        if not authed:
            try:
                conn.sendall(b'{"status": "rejected"}\n')
            except OSError:
                pass
        return authed

    def _drop_client(self, conn: socket.socket) -> None:
        with self._lock:
            if self._client is conn:
                self._client = None
        try:
            # shutdown (not just close) so the reader loop unblocks even
            # though makefile() holds a duplicate of the descriptor
            conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            conn.close()
        except OSError:
            pass

    def close(self) -> None:
        self._stopping.set()
        _poke_listener(self.host, self.port)  # a blocked accept() never sees close()
        self._listener.close()
        with self._lock:
            client, self._client = self._client, None
        if client is not None:
            self._drop_client(client)
        self._accept_thread.join(timeout=1)


class Daemon:
    """Owns the interceptor and serializes every input source onto it."""

    def __init__(
        self,
        store,
        directory=None,
        *,
        clock,
        device,
        sink,
        selection,
        gui_host: str = "127.0.0.1",
        gui_port: int = 0,
        dev_api_port: int | None = None,
        token_path: str | Path | None = None,
        rng=None,
        **interceptor_kwargs,
    ) -> None:
        self.store = store
        self.clock = clock
        self.device = device
        self.token = make_auth_token()
        self.token_path = Path(token_path) if token_path else None
        if self.token_path is not None:
            write_token_file(self.token_path, self.token)
        self.gui = GuiSocketChannel(
            self.token,
            host=gui_host,
            port=gui_port,
            on_frame=self._on_gui_frame,
            on_disconnect=self._on_gui_disconnect,
        )
        manager_kwargs = {"directory": directory}
        if rng is not None:
            manager_kwargs["rng"] = rng
        self.sessions = SessionManager(store, **manager_kwargs)
        self.interceptor = Interceptor(
            clock=clock,
            device=device,
            sink=sink,
            selection=selection,
            gui=self.gui,
            sessions=self.sessions,
            **interceptor_kwargs,
        )
        # device events must run on the loop, not the pushing thread
        device.handler = lambda event: self.dispatch(
            lambda: self.interceptor.handle_event(event)
        )
        self.dev_api: DevApiServer | None = None
        if dev_api_port is not None:
            self.dev_api = DevApiServer(
                self._start_encryption_blocking, port=dev_api_port
            )
        self._queue: queue.Queue = queue.Queue()
        self._stopping = threading.Event()
        self._loop_thread = threading.Thread(
            target=self._run_loop, name="daemon-loop", daemon=True
        )
        self._loop_thread.start()

    # -- event loop -----------------------------------------------------------

    def _run_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                fn, future = self._queue.get(timeout=0.05)
            except queue.Empty:
                self.interceptor.tick(self.clock.now_us)
                continue
            if future.set_running_or_notify_cancel():
                try:
                    future.set_result(fn())
                except BaseException as exc:
                    future.set_exception(exc)
            self.interceptor.tick(self.clock.now_us)

    def dispatch(self, fn, timeout: float = 5.0):
        """Run ``fn`` on the daemon loop and return its result."""
        if threading.current_thread() is self._loop_thread:
            return fn()  # already serialized
        future: Future = Future()
        self._queue.put((fn, future))
        return future.result(timeout)

    def dispatch_nowait(self, fn) -> None:
        self._queue.put((fn, Future()))

    # -- GUI frame handling ------------------------------------------------------

    def _on_gui_frame(self, frame: GuiFrame) -> None:
        if frame.kind == "recipient_set":
            contact = str(frame.payload.get("contact", ""))
            mode = str(frame.payload.get("mode", "v1"))
            self.dispatch_nowait(lambda: self.interceptor.set_recipient(contact, mode))
        elif frame.kind == "compose_submit":
            text = str(frame.payload.get("text", ""))
            self.dispatch_nowait(lambda: self.interceptor.compose_v2(text))
        elif frame.kind == "close":
            self.dispatch_nowait(self.interceptor.cancel)
        # other kinds are daemon→GUI only; arriving here they are ignored

    def _on_gui_disconnect(self) -> None:
        self.dispatch_nowait(self.interceptor.cancel)

    # -- dev API ----------------------------------------------------------------

    def _start_encryption_blocking(self, recipient: str, mode: str) -> dict:
        return self.dispatch(lambda: start_encryption(self.interceptor, recipient, mode))

    # -- lifecycle ----------------------------------------------------------------

    def stop(self) -> None:
        self._stopping.set()
        self._loop_thread.join(timeout=2)
        self.gui.close()
        if self.dev_api is not None:
            self.dev_api.close()
        if self.token_path is not None and self.token_path.exists():
            self.token_path.unlink()

    def __enter__(self) -> "Daemon":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
