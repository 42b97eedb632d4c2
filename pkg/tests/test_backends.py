"""Simulated IO tests: clock, device scripting, sink pacing, selection."""

import json

import pytest

from textguard.backends import (
    MIN_EMIT_GAP_US,
    AppTranscript,
    KeyEvent,
    SimDevice,
    SimSelection,
    SimSink,
    VirtualClock,
    dump_script,
    load_script,
)
from textguard.errors import CaptureDenied, ClockError, EmptySelection


def key(t_us: int, code: str, action: str = "down", mods=()) -> KeyEvent:
    return KeyEvent(timestamp_us=t_us, code=code, action=action, mods=frozenset(mods))


class TestVirtualClock:
    def test_starts_at_zero_and_advances(self) -> None:
        clock = VirtualClock()
        assert clock.now_us == 0
        clock.advance_to(500)
        clock.advance(250)
        assert clock.now_us == 750

    def test_regression_refused(self) -> None:
        clock = VirtualClock(1000)
        with pytest.raises(ClockError):
            clock.advance_to(999)


class TestKeyEvent:
    def test_char_mapping(self) -> None:
        """Plain keys type characters; modified and up events type nothing."""
        assert key(0, "a").char == "a"
        assert key(0, "a", mods=("shift",)).char == "A"
        assert key(0, "space").char == " "
        assert key(0, "enter").char == "\n"
        assert key(0, "a", action="up").char is None
        assert key(0, "e", mods=("ctrl", "alt")).char is None
        assert key(0, "left").char is None

    def test_chord_canonical_order(self) -> None:
        assert key(0, "e", mods=("alt", "ctrl")).chord == "ctrl+alt+e"
        assert key(0, "U", mods=("ctrl", "alt")).chord == "ctrl+alt+u"
        assert key(0, "backspace").chord == "backspace"

    def test_json_round_trip(self) -> None:
        event = key(42, "e", mods=("ctrl", "alt"))
        assert KeyEvent.from_json(event.to_json()) == event

    def test_script_file_round_trip(self, tmp_path) -> None:
        """JSON Lines scripts load back identically, one event per line."""
        events = [key(0, "h"), key(1000, "h", "up"), key(2000, "i", mods=("shift",))]
        path = tmp_path / "script.jsonl"
        dump_script(events, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 3
        assert json.loads(lines[0]) == {"action": "down", "key": "h", "t_us": 0}
        assert load_script(path) == events


class TestSimDevice:
    def test_push_advances_clock_and_delivers(self) -> None:
        clock = VirtualClock()
        device = SimDevice(clock)
        seen = []
        device.handler = seen.append
        device.push(key(100, "a"))
        assert clock.now_us == 100
        assert seen == [key(100, "a")]

    def test_timestamp_regression_raises(self) -> None:
        device = SimDevice(VirtualClock(500))
        with pytest.raises(ClockError):
            device.push(key(499, "a"))

    def test_grab_denied_when_disallowed(self) -> None:
        device = SimDevice(VirtualClock(), grab_allowed=False)
        with pytest.raises(CaptureDenied):
            device.grab()
        assert not device.grabbed

    def test_grab_and_ungrab(self) -> None:
        device = SimDevice(VirtualClock())
        device.grab()
        assert device.grabbed
        device.ungrab()
        assert not device.grabbed

    def test_replay_is_deterministic(self) -> None:
        """The same script yields identical delivered sequences."""
        script = [key(t, c) for t, c in ((0, "a"), (1000, "b"), (5000, "c"))]
        runs = []
        for _ in range(2):
            device = SimDevice(VirtualClock())
            seen = []
            device.handler = seen.append
            device.play(script)
            runs.append(seen)
        assert runs[0] == runs[1]


class TestSimSink:
    def test_pacing_three_chars(self) -> None:
        """Three chars at clock t land at t, t+1250, t+2500 microseconds."""
        clock = VirtualClock(10_000)
        sink = SimSink(clock, AppTranscript())
        sink.emit("abc")
        assert [t for t, _ in sink.emitted] == [10_000, 11_250, 12_500]

    def test_pacing_resumes_from_clock(self) -> None:
        """After a long idle stretch the next emission fires immediately."""
        clock = VirtualClock()
        sink = SimSink(clock, AppTranscript())
        sink.emit("a")
        clock.advance_to(1_000_000)
        sink.emit("b")
        assert sink.emitted[1][0] == 1_000_000

    def test_backspaces_then_text(self) -> None:
        """Emitted backspaces erase transcript characters like real ones."""
        transcript = AppTranscript()
        sink = SimSink(VirtualClock(), transcript)
        sink.emit("xy")
        sink.emit_backspaces(2)
        sink.emit("ab")
        assert transcript.textbox == "ab"

    def test_long_emission_preserves_order_and_spacing(self) -> None:
        """A 4000-char emission stays ordered with the pacing gap throughout."""
        transcript = AppTranscript()
        sink = SimSink(VirtualClock(), transcript)
        text = ("Guard" * 1000)[:4000]
        sink.emit(text)
        times = [t for t, _ in sink.emitted]
        assert all(b - a >= MIN_EMIT_GAP_US for a, b in zip(times, times[1:]))
        assert transcript.textbox == text

    def test_forward_passes_events_unpaced(self) -> None:
        """Pass-through of real events records at their own timestamps."""
        transcript = AppTranscript()
        sink = SimSink(VirtualClock(), transcript)
        sink.forward(key(7, "a"))
        sink.forward(key(8, "a", "up"))
        sink.forward(key(9, "backspace"))
        sink.forward(key(10, "c", mods=("ctrl",)))
        assert transcript.textbox == ""
        assert transcript.event_log[-1] == {"t_us": 10, "kind": "chord", "value": "ctrl+c"}


class TestAppTranscript:
    def test_textbox_is_fold_of_log(self) -> None:
        transcript = AppTranscript()
        transcript.record_char(0, "h")
        transcript.record_char(1, "i")
        transcript.record_backspace(2)
        transcript.record_char(3, "o")
        transcript.record_chord(4, "ctrl+a")
        assert transcript.textbox == "ho"

    def test_backspace_on_empty_is_noop(self) -> None:
        transcript = AppTranscript()
        transcript.record_backspace(0)
        assert transcript.textbox == ""

    def test_json_dump_shape(self) -> None:
        transcript = AppTranscript()
        transcript.record_char(5, "x")
        data = transcript.to_json()
        assert data["textbox"] == "x"
        assert data["event_log"] == [{"t_us": 5, "kind": "char", "value": "x"}]


class TestSimSelection:
    def test_staged_text_returned_verbatim(self) -> None:
        provider = SimSelection()
        provider.stage("Guard-startAAAGuard-end and more")
        assert provider.get() == "Guard-startAAAGuard-end and more"

    def test_empty_selection_raises(self) -> None:
        provider = SimSelection()
        with pytest.raises(EmptySelection):
            provider.get()
        provider.stage("x")
        provider.clear()
        with pytest.raises(EmptySelection):
            provider.get()
