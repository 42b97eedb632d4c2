"""Real Linux IO backend: evdev capture, uinput emission, PRIMARY selection.

Feature-gated and excluded from the test suite; constructing any class
here on a machine without the needed device nodes (or permissions) raises
BackendUnavailable.  The simulated backend in ``backends`` is the
reference implementation of the shared interface — this module exists so
the daemon can run against real hardware with `--backend linux`.

Requires root or an input-group user: the capture device is grabbed
exclusively (EVIOCGRAB) so keystrokes never reach the focused window, and
synthetic output goes through a virtual uinput keyboard.
"""

from __future__ import annotations

import fcntl
import os
import shutil
import struct
import subprocess
import time

from .backends import KeyEvent
from .errors import BackendUnavailable, CaptureDenied, EmptySelection

# struct input_event on 64-bit Linux: two longs (timeval) + type + code + value
_EVENT_FMT = "llHHi"
_EVENT_SIZE = struct.calcsize(_EVENT_FMT)

_EV_KEY = 0x01
_EV_SYN = 0x00

_EVIOCGRAB = 0x40044590

# Minimal keycode coverage: letters, digits, and the keys the interceptor
# actually distinguishes.  Full layout handling (xkbcommon) is out of scope.
_KEYCODES = {
    "a": 30, "b": 48, "c": 46, "d": 32, "e": 18, "f": 33, "g": 34, "h": 35,
    "i": 23, "j": 36, "k": 37, "l": 38, "m": 50, "n": 49, "o": 24, "p": 25,
    "q": 16, "r": 19, "s": 31, "t": 20, "u": 22, "v": 47, "w": 17, "x": 45,
    "y": 21, "z": 44,
    "1": 2, "2": 3, "3": 4, "4": 5, "5": 6, "6": 7, "7": 8, "8": 9, "9": 10, "0": 11,
    "space": 57, "enter": 28, "backspace": 14, "tab": 15, "esc": 1,
    "ctrl": 29, "alt": 56, "shift": 42, "meta": 125,
    "left": 105, "right": 106, "up": 103, "down": 108, "f4": 62,
}
_NAMES = {code: name for name, code in _KEYCODES.items()}


class WallClock:
    """Monotonic microsecond clock with the virtual clock's interface."""

    @property
    def now_us(self) -> int:
        return time.monotonic_ns() // 1000

    def advance_to(self, t_us: int) -> None:  # real time advances itself
        pass


class EvdevDevice:
    """Exclusive-capture keyboard source reading raw input events."""

    def __init__(self, device_path: str = "/dev/input/event0") -> None:
        if not os.path.exists(device_path):
            raise BackendUnavailable(f"no input device at {device_path}")
        try:
            self._fd = os.open(device_path, os.O_RDONLY)
        except OSError as exc:
            raise BackendUnavailable(f"cannot open {device_path}: {exc}") from exc
        self.grabbed = False
        self.handler = None
        self._mods: set[str] = set()

    def grab(self) -> None:
        try:
            fcntl.ioctl(self._fd, _EVIOCGRAB, 1)
        except OSError as exc:
            raise CaptureDenied(f"exclusive grab refused: {exc}") from exc
        self.grabbed = True

    def ungrab(self) -> None:
        if self.grabbed:
            fcntl.ioctl(self._fd, _EVIOCGRAB, 0)
            self.grabbed = False

    def read_forever(self) -> None:
        """Blocking read loop; translates raw events and invokes the handler."""
        while True:
            raw = os.read(self._fd, _EVENT_SIZE)
            if len(raw) < _EVENT_SIZE:
                return
            sec, usec, etype, code, value = struct.unpack(_EVENT_FMT, raw)
            if etype != _EV_KEY or value == 2:  # ignore autorepeat
                continue
            name = _NAMES.get(code)
            if name is None:
                continue
            action = "down" if value else "up"
            if name in ("ctrl", "alt", "shift", "meta"):
                (self._mods.add if value else self._mods.discard)(name)
                continue
            event = KeyEvent(
                timestamp_us=sec * 1_000_000 + usec,
                code=name,
                action=action,
                mods=frozenset(self._mods),
            )
            if self.handler is not None:
                self.handler(event)

    def close(self) -> None:
        self.ungrab()
        os.close(self._fd)


class UinputSink:
    """Synthetic keyboard via /dev/uinput, paced in real time."""

    _UI_SET_EVBIT = 0x40045564
    _UI_SET_KEYBIT = 0x40045565
    _UI_DEV_CREATE = 0x5501
    _UI_DEV_DESTROY = 0x5502

    def __init__(self, min_gap_us: int = 1250) -> None:
        if not os.path.exists("/dev/uinput"):
            raise BackendUnavailable("no /dev/uinput on this machine")
        try:
            self._fd = os.open("/dev/uinput", os.O_WRONLY | os.O_NONBLOCK)
        except OSError as exc:
            raise BackendUnavailable(f"cannot open /dev/uinput: {exc}") from exc
        self.min_gap_us = min_gap_us
        self._last_emit_us = 0
        fcntl.ioctl(self._fd, self._UI_SET_EVBIT, _EV_KEY)
        for code in _KEYCODES.values():
            fcntl.ioctl(self._fd, self._UI_SET_KEYBIT, code)
        # struct uinput_user_dev: name[80] + id + abs arrays (zeroed)
        setup = struct.pack("80sHHHHi", b"textguard virtual keyboard", 0x03, 0x1, 0x1, 1, 0)
        os.write(self._fd, setup + bytes(4 * 64 * 4))
        fcntl.ioctl(self._fd, self._UI_DEV_CREATE)

    def _write_event(self, etype: int, code: int, value: int) -> None:
        now = time.time()
        sec, usec = int(now), int((now % 1) * 1_000_000)
        os.write(self._fd, struct.pack(_EVENT_FMT, sec, usec, etype, code, value))

    def _pace(self) -> None:
        now_us = time.monotonic_ns() // 1000
        wait = self._last_emit_us + self.min_gap_us - now_us
        if wait > 0:
            time.sleep(wait / 1_000_000)
        self._last_emit_us = time.monotonic_ns() // 1000

    def emit(self, chars: str) -> None:
        for char in chars:
            name = {"\b": "backspace", "\n": "enter", " ": "space", "\t": "tab"}.get(
                char, char.lower()
            )
            code = _KEYCODES.get(name)
            if code is None:
                continue
            self._pace()
            shifted = char.isalpha() and char.isupper()
            if shifted:
                self._write_event(_EV_KEY, _KEYCODES["shift"], 1)
            self._write_event(_EV_KEY, code, 1)
            self._write_event(_EV_KEY, code, 0)
            if shifted:
                self._write_event(_EV_KEY, _KEYCODES["shift"], 0)
            self._write_event(_EV_SYN, 0, 0)

    def emit_backspaces(self, count: int) -> None:
        self.emit("\b" * count)

    def close(self) -> None:
        fcntl.ioctl(self._fd, self._UI_DEV_DESTROY)
        os.close(self._fd)


class PrimarySelection:
    """Reads the X11 PRIMARY selection through xclip."""

    def __init__(self) -> None:
        if shutil.which("xclip") is None:
            raise BackendUnavailable("xclip not installed")

    def get(self) -> str:
        result = subprocess.run(
            ["xclip", "-o", "-selection", "primary"],
            capture_output=True, text=True, timeout=5,
        )
        if result.returncode != 0 or not result.stdout:
            raise EmptySelection("PRIMARY selection is empty")
        return result.stdout
