"""Simulated IO boundary: input device, synthetic-output sink, selection.

Everything here runs against a virtual microsecond clock — no sleeping —
so pacing contracts are asserted on timestamps and whole conversations
replay deterministically.  The real Linux implementations live in
``linux_backend`` behind a feature gate and share these interfaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .errors import CaptureDenied, ClockError, EmptySelection

# Minimum spacing between synthetic output events: 0.00125 s.
MIN_EMIT_GAP_US = 1250

# Key codes for printable single characters are the characters themselves;
# named codes cover the rest.
_NAMED_CHARS = {"space": " ", "enter": "\n", "tab": "\t"}

_MOD_ORDER = ("ctrl", "alt", "shift", "meta")


@dataclass(frozen=True)
class KeyEvent:
    """One hardware-level key transition as the interceptor sees it."""

    timestamp_us: int
    code: str
    action: str  # "down" | "up"
    mods: frozenset = frozenset()

    @property
    def char(self) -> str | None:
        """The printable character this event types, if any (down only)."""
        if self.action != "down" or self.mods & {"ctrl", "alt", "meta"}:
            return None
        if self.code in _NAMED_CHARS:
            return _NAMED_CHARS[self.code]
        if len(self.code) == 1:
            return self.code.upper() if "shift" in self.mods else self.code
        return None

    @property
    def chord(self) -> str:
        """Canonical chord string, e.g. "ctrl+alt+e" or "backspace"."""
        mods = [m for m in _MOD_ORDER if m in self.mods]
        return "+".join(mods + [self.code.lower()])

    def to_json(self) -> dict:
        data = {"t_us": self.timestamp_us, "key": self.code, "action": self.action}
        if self.mods:
            data["mods"] = sorted(self.mods)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "KeyEvent":
        return cls(
            timestamp_us=int(data["t_us"]),
            code=str(data["key"]),
            action=str(data["action"]),
            mods=frozenset(data.get("mods", ())),
        )


def load_script(path: str | Path) -> list[KeyEvent]:
    """Read a JSON Lines key-event script, skipping blank lines."""
    events = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            events.append(KeyEvent.from_json(json.loads(line)))
    return events


def dump_script(events: Iterable[KeyEvent], path: str | Path) -> None:
    Path(path).write_text(
        "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in events)
    )


# ── Virtual time ────────────────────────────────────────────────────────────


class VirtualClock:
    """Microsecond counter that only moves when events move it."""

    def __init__(self, start_us: int = 0) -> None:
        self._now_us = start_us

    @property
    def now_us(self) -> int:
        return self._now_us

    def advance_to(self, t_us: int) -> None:
        if t_us < self._now_us:
            raise ClockError(f"cannot move clock back from {self._now_us} to {t_us}")
        self._now_us = t_us

    def advance(self, delta_us: int) -> None:
        self.advance_to(self._now_us + delta_us)


# ── Application transcript ──────────────────────────────────────────────────


@dataclass
class AppTranscript:
    """What the focused application received, with its rendered textbox.

    The ``textbox`` property folds the event log: characters append,
    backspaces delete the last character, chords render nothing.
    """

    event_log: list = field(default_factory=list)

    def record_char(self, t_us: int, char: str) -> None:
        self.event_log.append({"t_us": t_us, "kind": "char", "value": char})

    def record_backspace(self, t_us: int) -> None:
        self.event_log.append({"t_us": t_us, "kind": "backspace", "value": ""})

    def record_chord(self, t_us: int, chord: str) -> None:
        self.event_log.append({"t_us": t_us, "kind": "chord", "value": chord})

    @property
    def textbox(self) -> str:
        rendered: list[str] = []
        for entry in self.event_log:
            if entry["kind"] == "char":
                rendered.append(entry["value"])
            elif entry["kind"] == "backspace" and rendered:
                rendered.pop()
        return "".join(rendered)

    def to_json(self) -> dict:
        return {"textbox": self.textbox, "event_log": self.event_log}


# ── Input device ────────────────────────────────────────────────────────────


class SimDevice:
    """Scripted input source owning the virtual clock.

    Pushed events advance the clock and go to the registered handler
    (the interceptor).  ``grab`` models exclusive capture: while grabbed,
    the device stops forwarding to the fallback handler — in the real
    backend this is the kernel-level device grab.
    """

    def __init__(self, clock: VirtualClock, grab_allowed: bool = True) -> None:
        self.clock = clock
        self.grab_allowed = grab_allowed
        self.grabbed = False
        self.handler: Callable[[KeyEvent], None] | None = None

    def grab(self) -> None:
        if not self.grab_allowed:
            raise CaptureDenied("exclusive capture refused for this device")
        self.grabbed = True

    def ungrab(self) -> None:
        self.grabbed = False

    def push(self, event: KeyEvent) -> None:
        """Deliver one scripted event; the clock never moves backwards.

        Errors:
            ClockError: event timestamp precedes the current clock.
        """
        if event.timestamp_us < self.clock.now_us:
            raise ClockError(
                f"event at {event.timestamp_us} µs precedes clock {self.clock.now_us} µs"
            )
        self.clock.advance_to(event.timestamp_us)
        if self.handler is not None:
            self.handler(event)

    def play(self, events: Iterable[KeyEvent]) -> None:
        for event in events:
            self.push(event)


def sim_push(device: SimDevice, event: KeyEvent) -> None:
    device.push(event)


# ── Output sink ─────────────────────────────────────────────────────────────


class SimSink:
    """Paced synthetic keyboard: chars become events ≥ MIN_EMIT_GAP_US apart.

    The first emission after an idle stretch fires at the current clock
    time; each subsequent one is scheduled at least one pacing gap later.
    Timestamps may run ahead of the clock — they model when the synthetic
    events would reach the application.
    """

    def __init__(self, clock: VirtualClock, transcript: AppTranscript,
                 min_gap_us: int = MIN_EMIT_GAP_US) -> None:
        self.clock = clock
        self.transcript = transcript
        self.min_gap_us = min_gap_us
        self._last_emit_us: int | None = None
        self.emitted: list[tuple[int, str]] = []  # (timestamp, char|"\b")

    def _next_slot(self) -> int:
        if self._last_emit_us is None:
            return self.clock.now_us
        return max(self.clock.now_us, self._last_emit_us + self.min_gap_us)

    def emit(self, chars: str) -> None:
        """Type ``chars`` synthetically; "\\b" means a backspace keypress."""
        for char in chars:
            t = self._next_slot()
            self._last_emit_us = t
            self.emitted.append((t, char))
            if char == "\b":
                self.transcript.record_backspace(t)
            else:
                self.transcript.record_char(t, char)

    def emit_backspaces(self, count: int) -> None:
        self.emit("\b" * count)

    def forward(self, event: KeyEvent) -> None:
        """Pass a real input event through untouched (no pacing applies)."""
        char = event.char
        if event.action == "down" and event.chord == "backspace":
            self.transcript.record_backspace(event.timestamp_us)
        elif char is not None:
            self.transcript.record_char(event.timestamp_us, char)
        elif event.action == "down":
            self.transcript.record_chord(event.timestamp_us, event.chord)


def sink_emit(sink: SimSink, chars: str) -> None:
    sink.emit(chars)


# ── Selection provider ──────────────────────────────────────────────────────


class SimSelection:
    """Stageable stand-in for the window system's primary selection."""

    def __init__(self) -> None:
        self._staged: str | None = None

    def stage(self, text: str) -> None:
        self._staged = text

    def clear(self) -> None:
        self._staged = None

    def get(self) -> str:
        if self._staged is None:
            raise EmptySelection("nothing is selected")
        return self._staged


def selection_get(provider) -> str:
    return provider.get()
