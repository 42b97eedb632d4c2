"""The daemon's mode state machine: capture, encrypt, flush, decrypt.

Flow in one paragraph: the interceptor passively watches keystrokes until
the encryption shortcut grabs the keyboard exclusively; the GUI names a
recipient; from then on printable keys are encrypted position-by-position
(v1) while the plaintext is mirrored only to the GUI, and after 300 ms of
typing silence the armored token in the focused application is rewritten
in place.  The decryption shortcut reads the current selection, finds
tokens, and shows recovered plaintext only in the GUI.  Every failure
path ends with capture released and no plaintext emitted anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from . import streamcipher, tokens
from .backends import KeyEvent
from .errors import (
    CacheCorrupt,
    CaptureDenied,
    ContactNotFound,
    DirectoryUnavailable,
    GuiChannelClosed,
    HeaderParseError,
    KeyChanged,
    KeyErased,
    LengthMismatch,
    MalformedTokenError,
    NothingToDecrypt,
    TooManySkipped,
)
from .keystore import token_hash
from .ratchet import HeaderFields, MessageKeys
from .sessions import SessionManager

ENCRYPT_CHORD = "ctrl+alt+e"
DECRYPT_CHORD = "ctrl+alt+u"


class Mode(Enum):
    IDLE = "idle"
    SELECTING_RECIPIENT = "selecting_recipient"
    ENCRYPTING_V1 = "encrypting_v1"
    ENCRYPTING_V2 = "encrypting_v2"
    DECRYPTING = "decrypting"


# Capture is held exactly in these modes — decryption never grabs the keyboard.
_CAPTURE_MODES = frozenset(
    {Mode.SELECTING_RECIPIENT, Mode.ENCRYPTING_V1, Mode.ENCRYPTING_V2}
)


@dataclass(frozen=True)
class TimingPolicy:
    """The two timing constants the whole pipeline honors."""

    min_emit_gap_us: int = 1250  # 0.00125 s between synthetic keypresses
    flush_debounce_ms: int = 300  # quiet time before rewriting the token

    @property
    def flush_debounce_us(self) -> int:
        return self.flush_debounce_ms * 1000


@dataclass(frozen=True)
class WhitelistPolicy:
    """Chords forwarded raw during encryption — never fed to the cipher."""

    passthrough: frozenset = frozenset(
        {"left", "right", "up", "down", "ctrl+a", "ctrl+c", "alt+f4"}
    )

    def allows(self, chord: str) -> bool:
        return chord in self.passthrough


@dataclass(frozen=True)
class CipherSuite:
    """Injection point for every cryptographic operation the flows use.

    Exists so the simulation harness can wire in a disabled suite as its
    negative control — proving the confidentiality checks actually detect
    plaintext when the cipher is gone.
    """

    pad_init: Callable = streamcipher.pad_init
    encrypt_append: Callable = streamcipher.encrypt_append
    edit: Callable = streamcipher.edit
    one_shot_encrypt: Callable = streamcipher.one_shot_encrypt
    decrypt: Callable = streamcipher.decrypt
    seal_mac: Callable = streamcipher.seal_mac
    verify_mac: Callable = streamcipher.verify_mac


class _LeakyPad:
    """All-zero 'keystream' for the sabotaged suite: XOR becomes identity."""

    def ensure(self, length: int) -> None:
        pass

    def byte_at(self, index: int) -> int:
        return 0

    def erase(self) -> None:
        pass


def disabled_cipher_suite() -> CipherSuite:
    """A suite whose 'encryption' leaks plaintext verbatim (negative control)."""
    return CipherSuite(
        pad_init=lambda keys: _LeakyPad(),
        one_shot_encrypt=lambda keys, pt: pt,
        decrypt=lambda keys, ct: ct,
    )


@dataclass
class DecryptOutcome:
    """What happened to one scanned token candidate during decryption."""

    kind: str  # "displayed" | "integrity_warning" | "unrecoverable"
    token_text: str
    text: str | None = None
    sender: str | None = None
    source: str | None = None  # "cache" | "session"
    reason: str | None = None


@dataclass
class _ComposeSession:
    """Everything owned by one encryption flow, dropped when it ends."""

    contact_id: str
    session: object
    fields: HeaderFields
    keys: MessageKeys
    choice: str  # "v1" | "v2"
    pad: object | None = None
    buffer: streamcipher.ComposeBuffer = field(default_factory=streamcipher.ComposeBuffer)
    char_bytes: list = field(default_factory=list)  # UTF-8 width of each typed char
    emitted_chars: int = 0  # length of the token currently in the app
    flush_deadline_us: int | None = None
    dirty: bool = False  # buffer changed since the last flush


class Interceptor:
    """Single-owner state machine; all inputs arrive through one queue."""

    def __init__(
        self,
        clock,
        device,
        sink,
        selection,
        gui,
        sessions: SessionManager,
        timing: TimingPolicy = TimingPolicy(),
        whitelist: WhitelistPolicy = WhitelistPolicy(),
        suite: CipherSuite = CipherSuite(),
    ) -> None:
        self.clock = clock
        self.device = device
        self.sink = sink
        self.selection = selection
        self.gui = gui
        self.sessions = sessions
        self.timing = timing
        self.whitelist = whitelist
        self.suite = suite
        self.mode = Mode.IDLE
        self.errors: list[str] = []  # user-visible failures, newest last
        self.last_failure: Exception | None = None  # for callers mapping to codes
        self.decrypt_outcomes: list[DecryptOutcome] = []
        self._compose: _ComposeSession | None = None
        self._pending_selection: str | None = None
        device.handler = self.handle_event

    # -- invariant helpers ------------------------------------------------------

    def _fail(self, message: str) -> None:
        """Record a user-visible error and best-effort notify the GUI."""
        self.errors.append(message)
        try:
            if self.gui.available:
                self.gui.send("error", {"message": message})
        except GuiChannelClosed:
            pass

    def _enter(self, mode: Mode) -> None:
        if mode in _CAPTURE_MODES and not self.device.grabbed:
            self.device.grab()
        if mode not in _CAPTURE_MODES and self.device.grabbed:
            self.device.ungrab()
        self.mode = mode

    def _abort_to_idle(self, message: str | None = None) -> None:
        """Fail closed: discard all key material, release capture, close GUI."""
        if self._compose is not None:
            if self._compose.pad is not None:
                self._compose.pad.erase()
            self._compose.buffer.erase_plaintext()
            self._compose.keys.erase()
            self._compose = None
        self._pending_selection = None
        try:
            if self.gui.available:
                self.gui.send("close", {})
        except GuiChannelClosed:
            pass
        self._enter(Mode.IDLE)
        if message:
            self._fail(message)

    # -- event dispatch ---------------------------------------------------------

    def handle_event(self, event: KeyEvent) -> None:
        self.tick(event.timestamp_us)
        if self.mode is Mode.IDLE:
            self._watch(event)
        elif self.mode is Mode.SELECTING_RECIPIENT:
            self._on_key_selecting(event)
        elif self.mode in (Mode.ENCRYPTING_V1, Mode.ENCRYPTING_V2):
            self._on_key_encrypting(event)
        elif self.mode is Mode.DECRYPTING:
            # capture is not held here; keys pass through untouched
            self.sink.forward(event)

    def tick(self, now_us: int) -> None:
        """Fire the debounced flush if the silence window has elapsed."""
        compose = self._compose
        if (
            self.mode is Mode.ENCRYPTING_V1
            and compose is not None
            and compose.flush_deadline_us is not None
            and now_us >= compose.flush_deadline_us
        ):
            self._flush_v1()

    def next_deadline_us(self) -> int | None:
        """When the event loop must tick us even with no input."""
        if self._compose is not None:
            return self._compose.flush_deadline_us
        return None

    # -- idle --------------------------------------------------------------------

    def _watch(self, event: KeyEvent) -> None:
        if event.action == "down" and event.chord == ENCRYPT_CHORD:
            self.begin_encryption()
        elif event.action == "down" and event.chord == DECRYPT_CHORD:
            self._begin_decrypt_flow()
        else:
            self.sink.forward(event)

    def begin_encryption(self) -> None:
        """Open the recipient picker, exactly as the shortcut chord does."""
        self.last_failure = None
        if not self.gui.available:
            self.last_failure = GuiChannelClosed("GUI is not connected")
            self._fail("encryption unavailable: GUI is not connected")
            return
        try:
            self.device.grab()
        except CaptureDenied as exc:
            self.last_failure = exc
            self._fail(f"cannot start encryption: {exc}")
            return
        self._enter(Mode.SELECTING_RECIPIENT)
        try:
            self.gui.send(
                "session_start",
                {
                    "purpose": "encrypt",
                    "contacts": [r.contact_id for r in self.sessions.store.list_contacts()],
                },
            )
        except GuiChannelClosed:
            self._abort_to_idle("GUI vanished while starting encryption")

    def _begin_decrypt_flow(self) -> None:
        self._enter(Mode.DECRYPTING)
        try:
            selection = self.selection.get()
        except Exception as exc:  # EmptySelection or backend failure
            self._enter(Mode.IDLE)
            self._fail(f"nothing to decrypt: {exc}")
            return
        try:
            self.decrypt_selection(selection)
        except NothingToDecrypt:
            pass  # already reported and back in Idle

    # -- recipient selection -------------------------------------------------------

    def _on_key_selecting(self, event: KeyEvent) -> None:
        if event.action == "down" and event.chord == ENCRYPT_CHORD:
            self._abort_to_idle()  # toggle off: user changed their mind
        # everything else is swallowed while the picker is up

    def set_recipient(self, contact_id: str, choice: str = "v1") -> None:
        """GUI named the recipient; draw message keys and start encrypting.

        Errors are surfaced to the GUI and fail closed to Idle:
        ContactNotFound, DirectoryUnavailable, KeyChanged.
        """
        if self.mode is not Mode.SELECTING_RECIPIENT:
            if self.mode is Mode.DECRYPTING:
                self.set_decrypt_sender(contact_id)
                return
            self._fail(f"recipient_set arrived in mode {self.mode.value}")
            return
        if choice not in ("v1", "v2"):
            self._abort_to_idle(f"unknown encryption mode {choice!r}")
            return
        try:
            session = self.sessions.session_for_send(contact_id)
        except (ContactNotFound, DirectoryUnavailable, KeyChanged) as exc:
            self.last_failure = exc
            self._abort_to_idle(str(exc))
            return
        fields, keys = session.next_sending_keys()
        self.sessions.save(contact_id)
        self._compose = _ComposeSession(
            contact_id=contact_id,
            session=session,
            fields=fields,
            keys=keys,
            choice=choice,
            pad=self.suite.pad_init(keys) if choice == "v1" else None,
        )
        self._enter(Mode.ENCRYPTING_V1 if choice == "v1" else Mode.ENCRYPTING_V2)

    # -- encrypting ------------------------------------------------------------------

    def _on_key_encrypting(self, event: KeyEvent) -> None:
        if event.action == "down" and event.chord == ENCRYPT_CHORD:
            self.end_encryption()
            return
        if self.whitelist.allows(event.chord):
            self.sink.forward(event)  # whitelisted: never enters the cipher
            return
        if self.mode is Mode.ENCRYPTING_V1:
            self._v1_keystroke(event)
        else:
            self._v2_keystroke(event)

    def _v1_keystroke(self, event: KeyEvent) -> None:
        compose = self._compose
        if event.action != "down":
            return
        if event.chord == "backspace":
            if not compose.char_bytes:
                return
            # a backspace removes one *character*, however many bytes wide
            for _ in range(compose.char_bytes.pop()):
                self.suite.edit(
                    compose.buffer, compose.pad, len(compose.buffer.plaintext) - 1, "delete"
                )
            if not self._gui_mirror("plaintext_edit", {"op": "backspace"}):
                return
            self._schedule_flush()
            return
        char = event.char
        if char is None:
            return  # unmapped chord: swallowed, never emitted
        encoded = char.encode("utf-8")
        for byte in encoded:
            self.suite.encrypt_append(compose.buffer, compose.pad, byte)
        compose.char_bytes.append(len(encoded))
        if not self._gui_mirror("plaintext_append", {"char": char}):
            return
        self._schedule_flush()

    def _v2_keystroke(self, event: KeyEvent) -> None:
        """v2 mirrors keys to the GUI compose box; nothing is emitted yet."""
        if event.action != "down":
            return
        if event.chord == "backspace":
            self._gui_mirror("plaintext_edit", {"op": "backspace"})
            return
        char = event.char
        if char is not None:
            self._gui_mirror("plaintext_append", {"char": char})

    def _gui_mirror(self, kind: str, payload: dict) -> bool:
        """Forward plaintext to the GUI; a dead channel aborts the session."""
        try:
            self.gui.send(kind, payload)
            return True
        except GuiChannelClosed:
            self._abort_to_idle("GUI channel failed during encryption")
            return False

    def _schedule_flush(self) -> None:
        compose = self._compose
        compose.dirty = True
        compose.flush_deadline_us = self.clock.now_us + self.timing.flush_debounce_us

    def _current_token_text(self) -> str:
        """Seal the compose buffer as it stands into a full armored token."""
        compose = self._compose
        header = tokens.MetadataHeader(
            ratchet_pub=compose.fields.ratchet_pub,
            counter=compose.fields.counter,
            previous_counter=compose.fields.previous_counter,
            ciphertext_length=len(compose.buffer.ciphertext),
            handshake=compose.fields.handshake,
        )
        header_bytes = tokens.serialize_header(header)
        ciphertext = bytes(compose.buffer.ciphertext)
        mac = self.suite.seal_mac(compose.keys, header_bytes, ciphertext)
        return tokens.encode_token(header, ciphertext, mac).text

    def _flush_v1(self) -> None:
        """Rewrite the in-app token: erase by backspaces, retype in full."""
        compose = self._compose
        compose.flush_deadline_us = None
        if not compose.dirty:
            return
        token_text = self._current_token_text()
        self.sink.emit_backspaces(compose.emitted_chars)
        self.sink.emit(token_text)
        compose.emitted_chars = len(token_text)
        compose.dirty = False

    def end_encryption(self) -> None:
        """Terminate the flow: final flush, cache the mapping, erase keys."""
        compose = self._compose
        if compose is None or self.mode not in (Mode.ENCRYPTING_V1, Mode.ENCRYPTING_V2):
            return
        if self.mode is Mode.ENCRYPTING_V1 and compose.buffer.plaintext:
            self._flush_v1()  # don't leave a stale token behind
            token_text = self._current_token_text()
            self.sessions.store.cache_put(
                token_hash(token_text), bytes(compose.buffer.plaintext)
            )
        if compose.pad is not None:
            compose.pad.erase()
        compose.buffer.erase_plaintext()
        compose.keys.erase()
        self.sessions.save(compose.contact_id)
        self._compose = None
        try:
            if self.gui.available:
                self.gui.send("close", {})
        except GuiChannelClosed:
            pass
        self._enter(Mode.IDLE)

    def compose_v2(self, text: str) -> None:
        """GUI submitted the finished v2 message: one shot, one emission."""
        compose = self._compose
        if self.mode is not Mode.ENCRYPTING_V2 or compose is None:
            self._fail(f"compose_submit arrived in mode {self.mode.value}")
            return
        if text == "":
            self.end_encryption()  # clean termination, nothing emitted
            return
        plaintext = text.encode("utf-8")
        ciphertext = self.suite.one_shot_encrypt(compose.keys, plaintext)
        header = tokens.MetadataHeader(
            ratchet_pub=compose.fields.ratchet_pub,
            counter=compose.fields.counter,
            previous_counter=compose.fields.previous_counter,
            ciphertext_length=len(ciphertext),
            handshake=compose.fields.handshake,
        )
        mac = self.suite.seal_mac(compose.keys, tokens.serialize_header(header), ciphertext)
        token_text = tokens.encode_token(header, ciphertext, mac).text
        self.sink.emit(token_text)
        self.sessions.store.cache_put(token_hash(token_text), plaintext)
        self.end_encryption()

    def cancel(self) -> None:
        """GUI closed/cancelled whatever flow is up."""
        if self.mode in (Mode.ENCRYPTING_V1, Mode.ENCRYPTING_V2):
            # a cancel mid-encryption abandons the message: nothing cached
            self._abort_to_idle()
        elif self.mode is not Mode.IDLE:
            self._abort_to_idle()

    # -- decrypting ---------------------------------------------------------------

    def decrypt_selection(self, selection: str, sender_choice: str | None = None) -> list[DecryptOutcome]:
        """Scan a selection and decrypt every token candidate in it.

        Resolution order per token: plaintext cache by token hash, then a
        piggybacked handshake (first message from a new sender), then the
        named sender's session, then every stored session.  Outcomes are
        reported per candidate; plaintext goes only to the GUI.

        Errors:
            NothingToDecrypt: the selection holds no token candidate at all.
        """
        if self.mode in _CAPTURE_MODES:
            self._fail(f"cannot decrypt while {self.mode.value}")
            return []
        self._enter(Mode.DECRYPTING)
        outcomes: list[DecryptOutcome] = []
        try:
            scan = tokens.scan_tokens(selection)
            if not scan.tokens and not scan.malformed:
                raise NothingToDecrypt("selection contains no armored token")
            for candidate in scan.malformed:
                outcomes.append(
                    DecryptOutcome(
                        kind="integrity_warning",
                        token_text=candidate.text,
                        reason=f"damaged token: {candidate.reason}",
                    )
                )
            for wire_token in scan.tokens:
                outcomes.append(self._decrypt_one(wire_token.text, sender_choice))
        except NothingToDecrypt:
            self._enter(Mode.IDLE)
            self._fail("selection contains no armored token")
            raise
        finally:
            if self.mode is Mode.DECRYPTING:
                self._enter(Mode.IDLE)
            self.decrypt_outcomes.extend(outcomes)
            self._report_outcomes(outcomes)
        return outcomes

    def set_decrypt_sender(self, contact_id: str) -> None:
        """GUI answered the sender prompt for an ambiguous selection."""
        selection = self._pending_selection
        self._pending_selection = None
        if selection is not None:
            self.decrypt_selection(selection, sender_choice=contact_id)

    def _report_outcomes(self, outcomes: list[DecryptOutcome]) -> None:
        for outcome in outcomes:
            payload = {
                "kind": outcome.kind,
                "sender": outcome.sender,
                "source": outcome.source,
            }
            if outcome.kind == "displayed":
                payload["text"] = outcome.text
            else:
                payload["reason"] = outcome.reason
            try:
                if self.gui.available:
                    self.gui.send("show_decrypted", payload)
            except GuiChannelClosed:
                break

    def _decrypt_one(self, token_text: str, sender_choice: str | None) -> DecryptOutcome:
        store = self.sessions.store
        digest = token_hash(token_text)
        try:
            cached = store.cache_get(digest)
        except CacheCorrupt as exc:
            return DecryptOutcome(
                kind="integrity_warning", token_text=token_text, reason=str(exc)
            )
        if cached is not None:
            return DecryptOutcome(
                kind="displayed",
                token_text=token_text,
                text=cached.decode("utf-8", errors="replace"),
                source="cache",
            )
        try:
            header, ciphertext, mac = tokens.decode_token(token_text)
        except (HeaderParseError, LengthMismatch, MalformedTokenError) as exc:
            return DecryptOutcome(
                kind="integrity_warning", token_text=token_text, reason=str(exc)
            )
        return self._decrypt_with_sessions(token_text, header, ciphertext, mac, sender_choice)

    def _decrypt_with_sessions(
        self, token_text: str, header, ciphertext: bytes, mac: bytes, sender_choice: str | None
    ) -> DecryptOutcome:
        candidates: list[tuple[str, object]] = []
        if header.handshake is not None:
            known = self.sessions.store.find_contact_by_key(header.handshake.identity_pub)
            if known is None or not self.sessions.store.session_exists(known.contact_id):
                try:
                    candidates.append(
                        self.sessions.accept_handshake(header.handshake, sender_choice)
                    )
                except Exception as exc:
                    return DecryptOutcome(
                        kind="integrity_warning",
                        token_text=token_text,
                        reason=f"handshake rejected: {exc}",
                    )
        if sender_choice is not None:
            session = self.sessions.get(sender_choice)
            if session is not None:
                candidates.append((sender_choice, session))
        candidates.extend(
            (cid, s) for cid, s in self.sessions.all_sessions()
            if all(cid != have for have, _ in candidates)
        )
        if not candidates:
            return DecryptOutcome(
                kind="unrecoverable",
                token_text=token_text,
                reason="no session can open this token and it is not cached",
            )

        erased_somewhere = False
        for contact_id, session in candidates:
            trial = session.clone()
            try:
                keys = trial.keys_for_header(
                    header.ratchet_pub, header.counter, header.previous_counter
                )
            except KeyErased:
                erased_somewhere = True
                continue
            except TooManySkipped:
                continue
            header_bytes = tokens.serialize_header(header)
            if not self.suite.verify_mac(keys, header_bytes, ciphertext, mac):
                continue  # wrong session or tampered token; state not committed
            plaintext = self.suite.decrypt(keys, ciphertext)
            trial.confirm_decrypted(header.ratchet_pub, header.counter)
            session.adopt(trial)
            self.sessions.save(contact_id)
            self.sessions.store.cache_put(token_hash(token_text), plaintext)
            return DecryptOutcome(
                kind="displayed",
                token_text=token_text,
                text=plaintext.decode("utf-8", errors="replace"),
                sender=contact_id,
                source="session",
            )
        if erased_somewhere:
            return DecryptOutcome(
                kind="unrecoverable",
                token_text=token_text,
                reason="message keys were erased after first use and no cache entry exists",
            )
        return DecryptOutcome(
            kind="integrity_warning",
            token_text=token_text,
            reason="token failed authentication against every session",
        )
