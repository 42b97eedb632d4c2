"""Adversarial end-to-end scenarios over virtual time.

A scenario wires up participants (each with their own store, clock,
simulated device/sink/selection, and headless GUI), runs a scripted
conversation through a relay the adversary controls, and produces a
deterministic JSON report.  The relay sees everything that crosses it —
the confidentiality check then proves that this privileged position
yields no plaintext, by searching app transcripts, relay traffic, *and*
the base64-decoded interiors of every carried token for the scenario's
random markers.

Scenario document (JSON):

    {"name": "v1_basic", "seed": 11, "relay": "faithful",
     "participants": [{"id": "alice"}, {"id": "bob", "cache": false}],
     "steps": [
        {"do": "publish", "user": "bob"},
        {"do": "encrypt", "user": "alice", "to": "bob", "mode": "v1",
         "text": "{m0}", "via": "chord"},
        {"do": "send", "from": "alice", "to": "bob"},
        {"do": "decrypt", "user": "bob", "sender_choice": "alice",
         "expect_kinds": ["displayed"], "expect_texts": ["{m0}"]}]}

``{mN}`` in any text expands to the N-th seeded 32-char marker.
Relay behaviors: ``faithful`` | ``tamper`` (one bit flipped per carried
token) | ``replay`` (the first token ever carried is re-delivered on
every later send).
"""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import tokens
from .backends import (
    AppTranscript,
    KeyEvent,
    SimDevice,
    SimSelection,
    SimSink,
    VirtualClock,
)
from .devapi import handle_request_line, start_encryption
from .errors import NothingToDecrypt, SpecError
from .guiproto import HeadlessGui
from .interceptor import CipherSuite, Interceptor, disabled_cipher_suite
from .keystore import store_init
from .ratchet import DeterministicRng
from .sessions import SessionManager

MARKER_LEN = 32
_MARKER_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789"
_MARKER_REF = re.compile(r"\{m(\d+)\}")

_RELAY_BEHAVIORS = ("faithful", "tamper", "replay")


def make_marker(rng) -> str:
    """One random 32-char alphanumeric marker — long enough that a match
    in a transcript is evidence of leakage, not base64 coincidence."""
    raw = rng(MARKER_LEN)
    return "".join(_MARKER_ALPHABET[b % len(_MARKER_ALPHABET)] for b in raw)


class _NoCacheStore:
    """Store proxy for participants running with the plaintext cache off."""

    def __init__(self, store) -> None:
        self._store = store

    def __getattr__(self, name):
        return getattr(self._store, name)

    def cache_put(self, digest: bytes, plaintext: bytes) -> None:
        pass

    def cache_get(self, digest: bytes):
        return None


@dataclass
class Participant:
    """One simulated user: store, IO stack, GUI stub, interceptor."""

    user_id: str
    store: object
    clock: VirtualClock
    device: SimDevice
    transcript: AppTranscript
    sink: SimSink
    selection: SimSelection
    gui: HeadlessGui
    sessions: SessionManager
    interceptor: Interceptor
    _t: int = field(default=0)

    # -- scripted input ---------------------------------------------------------

    def at(self, t_us: int) -> "Participant":
        self._t = max(self._t, t_us)
        return self

    def press(self, code: str, mods: tuple = (), gap_us: int = 20_000) -> "Participant":
        """Push a down+up pair for one key, advancing scripted time."""
        self._t = max(self._t, self.clock.now_us)
        self.device.push(KeyEvent(self._t, code, "down", frozenset(mods)))
        self.device.push(KeyEvent(self._t + 1000, code, "up", frozenset(mods)))
        self._t += gap_us
        return self

    def type_text(self, text: str) -> "Participant":
        for char in text:
            code = {" ": "space", "\n": "enter", "\t": "tab"}.get(char, char)
            mods = ("shift",) if char.isalpha() and char.isupper() else ()
            self.press(code.lower() if char.isalpha() else code, mods)
        return self

    def wait(self, delta_us: int) -> "Participant":
        """Let simulated time pass in silence, firing any due flush."""
        target = self.clock.now_us + delta_us
        deadline = self.interceptor.next_deadline_us()
        while deadline is not None and deadline <= target:
            self.clock.advance_to(deadline)
            self.interceptor.tick(deadline)
            deadline = self.interceptor.next_deadline_us()
        self.clock.advance_to(target)
        self.interceptor.tick(target)
        self._t = max(self._t, target)
        return self

    def settle(self) -> "Participant":
        """Wait long enough for any pending flush to have fired."""
        return self.wait(400_000)

    def close(self) -> None:
        self.store.close()


def build_participant(
    base_dir,
    user_id: str,
    seed: int,
    directory=None,
    cache: bool = True,
    **interceptor_kwargs,
) -> Participant:
    rng = DeterministicRng(seed)
    store = store_init(Path(base_dir) / f"{user_id}-store", rng=rng)
    if not cache:
        store = _NoCacheStore(store)
    clock = VirtualClock()
    device = SimDevice(clock)
    transcript = AppTranscript()
    sink = SimSink(clock, transcript)
    selection = SimSelection()
    gui = HeadlessGui()
    sessions = SessionManager(store, directory=directory, rng=rng)
    interceptor = Interceptor(
        clock=clock,
        device=device,
        sink=sink,
        selection=selection,
        gui=gui,
        sessions=sessions,
        **interceptor_kwargs,
    )
    return Participant(
        user_id=user_id,
        store=store,
        clock=clock,
        device=device,
        transcript=transcript,
        sink=sink,
        selection=selection,
        gui=gui,
        sessions=sessions,
        interceptor=interceptor,
    )


# ── Relay ────────────────────────────────────────────────────────────────────


@dataclass
class RelayEntry:
    sender: str
    recipient: str
    action: str  # "faithful" | "tampered" | "replayed"
    delivered: str
    original: str


class Relay:
    """The adversary's vantage point: it carries, logs, and may mangle."""

    def __init__(self, behavior: str, rng) -> None:
        if behavior not in _RELAY_BEHAVIORS:
            raise SpecError(f"relay behavior must be one of {list(_RELAY_BEHAVIORS)}")
        self.behavior = behavior
        self.rng = rng
        self.log: list[RelayEntry] = []
        self._first_token: str | None = None
        self._carries = 0

    def carry(self, sender: str, recipient: str, token_texts: list[str]) -> str:
        """Move tokens from sender to recipient, per the configured behavior."""
        delivered_parts = []
        for text in token_texts:
            if self._first_token is None:
                self._first_token = text
            if self.behavior == "tamper":
                mangled = self._flip_one_bit(text)
                self.log.append(RelayEntry(sender, recipient, "tampered", mangled, text))
                delivered_parts.append(mangled)
            else:
                self.log.append(RelayEntry(sender, recipient, "faithful", text, text))
                delivered_parts.append(text)
        if (
            self.behavior == "replay"
            and self._carries > 0
            and self._first_token is not None
            and self._first_token not in token_texts
        ):
            self.log.append(
                RelayEntry(sender, recipient, "replayed", self._first_token, self._first_token)
            )
            delivered_parts.append(self._first_token)
        self._carries += 1
        return "\n\n".join(delivered_parts)

    def _flip_one_bit(self, token_text: str) -> str:
        """Flip one bit somewhere in the armor interior (never a delimiter)."""
        start = len(tokens.GUARD_START)
        end = len(token_text) - len(tokens.GUARD_END)
        index = start + self.rng(2)[0] % (end - start)
        bit = self.rng(1)[0] % 7  # stay inside ASCII
        flipped = chr(ord(token_text[index]) ^ (1 << bit))
        return token_text[:index] + flipped + token_text[index + 1 :]


# ── Scenario execution ───────────────────────────────────────────────────────


@dataclass
class ScenarioReport:
    name: str
    seed: int
    markers: list[str]
    participants: dict
    relay: list[dict]
    devapi_responses: list[dict]
    verdicts: dict

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "markers": self.markers,
            "participants": self.participants,
            "relay": self.relay,
            "devapi_responses": self.devapi_responses,
            "verdicts": self.verdicts,
        }

    def to_json(self) -> str:
        """Canonical byte-stable rendering for golden comparisons."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


class _ScenarioRun:
    def __init__(self, spec: dict, base_dir: Path, suite: CipherSuite | None) -> None:
        for key in ("name", "seed", "participants", "steps"):
            if key not in spec:
                raise SpecError(f"scenario is missing {key!r}")
        self.spec = spec
        self.name = spec["name"]
        self.seed = int(spec["seed"])
        self.markers: list[str] = []
        self._marker_rng = DeterministicRng(self.seed + 1_000_003)
        self.relay = Relay(spec.get("relay", "faithful"), DeterministicRng(self.seed + 7))
        self.devapi_responses: list[dict] = []
        self._sent_offsets: dict[str, int] = {}
        self._decrypt_spans: dict[int, tuple[str, int, int]] = {}  # step -> (user, lo, hi)
        self._step_number = 0

        from .directory import InProcessDirectory

        self.directory = InProcessDirectory()
        self.participants: dict[str, Participant] = {}
        for index, entry in enumerate(spec["participants"]):
            if "id" not in entry:
                raise SpecError("participant entry is missing 'id'")
            kwargs = {}
            if suite is not None:
                kwargs["suite"] = suite
            self.participants[entry["id"]] = build_participant(
                base_dir,
                entry["id"],
                seed=self.seed * 1000 + index,
                directory=self.directory,
                cache=entry.get("cache", True),
                **kwargs,
            )

    def marker(self, index: int) -> str:
        while len(self.markers) <= index:
            self.markers.append(make_marker(self._marker_rng))
        return self.markers[index]

    def expand(self, text: str) -> str:
        return _MARKER_REF.sub(lambda m: self.marker(int(m.group(1))), text)

    def user(self, user_id) -> Participant:
        try:
            return self.participants[user_id]
        except KeyError:
            raise SpecError(f"step names unknown participant {user_id!r}")

    # -- step handlers ------------------------------------------------------------

    def run_steps(self) -> None:
        for number, step in enumerate(self.spec["steps"]):
            action = step.get("do")
            handler = getattr(self, f"_step_{action}", None)
            if handler is None:
                raise SpecError(f"step {number} has unknown action {action!r}")
            self._step_number = number
            handler(step)

    def _step_publish(self, step: dict) -> None:
        user = self.user(step["user"])
        self.directory.publish(
            user.user_id, user.store, one_time_count=step.get("one_time_count", 8)
        )

    def _step_encrypt(self, step: dict) -> None:
        user = self.user(step["user"])
        recipient = step["to"]
        mode = step.get("mode", "v1")
        text = self.expand(step.get("text", ""))
        if step.get("via", "chord") == "devapi":
            request = json.dumps({"action": "encrypt", "recipient": recipient, "mode": mode})
            response = handle_request_line(
                request, lambda r, m: start_encryption(user.interceptor, r, m)
            )
            self.devapi_responses.append({"user": user.user_id, "response": response})
            if response.get("status") != "ok":
                return
        else:
            user.press("e", ("ctrl", "alt"))
            user.interceptor.set_recipient(recipient, mode)
        if mode == "v1":
            user.type_text(text)
            user.settle()
            user.press("e", ("ctrl", "alt"))
        else:
            user.interceptor.compose_v2(text)

    def _step_send(self, step: dict) -> None:
        sender = self.user(step["from"])
        recipient = self.user(step["to"])
        scan = tokens.scan_tokens(sender.transcript.textbox)
        already_sent = self._sent_offsets.get(sender.user_id, 0)
        fresh = [t.text for t in scan.tokens[already_sent:]]
        self._sent_offsets[sender.user_id] = len(scan.tokens)
        recipient.selection.stage(self.relay.carry(sender.user_id, recipient.user_id, fresh))

    def _step_decrypt(self, step: dict) -> None:
        user = self.user(step["user"])
        before = len(user.interceptor.decrypt_outcomes)
        if "sender_choice" in step:  # models answering the GUI's sender prompt
            try:
                user.interceptor.decrypt_selection(
                    user.selection.get(), sender_choice=step["sender_choice"]
                )
            except NothingToDecrypt:
                pass
        else:
            user.press("u", ("ctrl", "alt"))
        after = len(user.interceptor.decrypt_outcomes)
        self._decrypt_spans[self._step_number] = (user.user_id, before, after)

    def _step_type(self, step: dict) -> None:
        user = self.user(step["user"])
        user.type_text(self.expand(step.get("text", "")))

    # -- report -------------------------------------------------------------------

    def report(self) -> ScenarioReport:
        participants = {}
        for user_id, participant in sorted(self.participants.items()):
            participants[user_id] = {
                "app_textbox": participant.transcript.textbox,
                "errors": list(participant.interceptor.errors),
                "gui_frames": [
                    {"kind": frame.kind, "payload": frame.payload}
                    for frame in participant.gui.frames
                ],
                "decrypt_outcomes": [
                    {
                        "kind": outcome.kind,
                        "text": outcome.text,
                        "sender": outcome.sender,
                        "source": outcome.source,
                        "reason": outcome.reason,
                    }
                    for outcome in participant.interceptor.decrypt_outcomes
                ],
            }
        relay_log = [
            {
                "from": entry.sender,
                "to": entry.recipient,
                "action": entry.action,
                "delivered": entry.delivered,
                "original": entry.original,
            }
            for entry in self.relay.log
        ]
        report = ScenarioReport(
            name=self.name,
            seed=self.seed,
            markers=list(self.markers),
            participants=participants,
            relay=relay_log,
            devapi_responses=list(self.devapi_responses),
            verdicts={},
        )
        report.verdicts = self._verdicts(report)
        return report

    def _verdicts(self, report: ScenarioReport) -> dict:
        confidentiality = assert_confidentiality(report)
        verdicts = {
            "confidentiality": "pass" if confidentiality.ok else f"fail: {confidentiality.detail}",
            "expectations": self._expectation_verdict(),
            "ciphertext_only": self._ciphertext_only_verdict(),
        }
        return verdicts

    def _expectation_verdict(self) -> str:
        failures = []
        for number, step in enumerate(self.spec["steps"]):
            if step.get("do") != "decrypt":
                continue
            user_id, lo, hi = self._decrypt_spans[number]
            outcomes = self.user(user_id).interceptor.decrypt_outcomes[lo:hi]
            expected_kinds = step.get("expect_kinds")
            if expected_kinds is not None:
                got = [o.kind for o in outcomes]
                if got != expected_kinds:
                    failures.append(f"step {number}: kinds {got} != {expected_kinds}")
            expected_texts = step.get("expect_texts")
            if expected_texts is not None:
                got_texts = [o.text for o in outcomes if o.kind == "displayed"]
                want = [self.expand(t) for t in expected_texts]
                if got_texts != want:
                    failures.append(f"step {number}: texts {got_texts} != {want}")
        return "pass" if not failures else "fail: " + "; ".join(failures)

    def _ciphertext_only_verdict(self) -> str:
        """App textboxes must hold nothing but armored tokens and whitespace."""
        for user_id, participant in sorted(self.participants.items()):
            text = participant.transcript.textbox
            scan = tokens.scan_tokens(text)
            for token in scan.tokens:
                text = text.replace(token.text, "", 1)
            if text.strip():
                return f"fail: {user_id} app holds non-token text"
        return "pass"


@dataclass
class ConfidentialityVerdict:
    ok: bool
    detail: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def _decoded_token_interiors(text: str) -> list[bytes]:
    """Base64-decode every delimited span an adversary could lift from text.

    Deliberately looser than the product's token scanner: a blob that fails
    header validation is still decodable by an eavesdropper, so it is still
    a surface the markers must not appear on.
    """
    interiors = []
    pos = 0
    while True:
        start = text.find(tokens.GUARD_START, pos)
        if start < 0:
            break
        end = text.find(tokens.GUARD_END, start + len(tokens.GUARD_START))
        if end < 0:
            break
        interior = text[start + len(tokens.GUARD_START) : end]
        pos = end + len(tokens.GUARD_END)
        try:
            interiors.append(base64.b64decode(interior, validate=True))
        except Exception:
            continue
    return interiors


def assert_confidentiality(report: ScenarioReport | dict) -> ConfidentialityVerdict:
    """Search everything the adversary sees for the scenario's markers.

    Covered surfaces: every app transcript, every relay delivery, and the
    base64-decoded interior of every token on those surfaces (an armored
    leak is still a leak).  GUI frames are excluded by design — plaintext
    is supposed to appear there and nowhere else.
    """
    data = report.to_dict() if isinstance(report, ScenarioReport) else report
    surfaces: list[tuple[str, str]] = []
    for user_id, entry in sorted(data.get("participants", {}).items()):
        surfaces.append((f"app[{user_id}]", entry.get("app_textbox", "")))
    for index, entry in enumerate(data.get("relay", [])):
        surfaces.append((f"relay[{index}]", entry.get("delivered", "")))

    for marker in data.get("markers", []):
        marker_bytes = marker.encode("utf-8")
        for location, text in surfaces:
            offset = text.find(marker)
            if offset != -1:
                return ConfidentialityVerdict(
                    False, f"marker found in {location} at offset {offset}"
                )
            for number, interior in enumerate(_decoded_token_interiors(text)):
                offset = interior.find(marker_bytes)
                if offset != -1:
                    return ConfidentialityVerdict(
                        False,
                        f"marker found inside decoded token {number} of {location} "
                        f"at offset {offset}",
                    )
    return ConfidentialityVerdict(True)


def load_scenario(source: str | Path | dict) -> dict:
    """Accept a scenario as a dict, a JSON string, or a file path.

    Errors:
        SpecError: unreadable or structurally invalid document.
    """
    if isinstance(source, dict):
        return source
    path = Path(source)
    if path.exists():
        raw = path.read_text()
    else:
        raw = str(source)
    try:
        spec = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SpecError(f"scenario is not valid JSON: {exc}")
    if not isinstance(spec, dict):
        raise SpecError("scenario document must be a JSON object")
    return spec


def run_scenario(
    source: str | Path | dict,
    base_dir: str | Path,
    suite: CipherSuite | None = None,
) -> ScenarioReport:
    """Execute one scenario document and return its report.

    ``suite`` injects a replacement cipher suite into every participant —
    pass ``disabled_cipher_suite()`` to produce the negative control that
    proves the confidentiality check can actually see leaks.

    Errors:
        SpecError: malformed scenario document.
    """
    spec = load_scenario(source)
    run = _ScenarioRun(spec, Path(base_dir), suite)
    try:
        run.run_steps()
        return run.report()
    finally:
        for participant in run.participants.values():
            participant.close()


__all__ = [
    "ConfidentialityVerdict",
    "Participant",
    "Relay",
    "RelayEntry",
    "ScenarioReport",
    "assert_confidentiality",
    "build_participant",
    "disabled_cipher_suite",
    "load_scenario",
    "make_marker",
    "run_scenario",
]
