"""Latency measurements for the pipeline's hot paths.

Four measurement families, chosen to answer "what does interception cost
the typist": per-keystroke watch-mode forwarding, per-character stream
encryption while capture is active, one-shot encryption of whole texts,
and decryption of received tokens.  All numbers are machine-dependent —
they are reported for inspection, never asserted.

Runs entirely on the simulated backends over virtual time, so the figures
measure compute cost (key schedule, XOR, MAC, armor), not sleeps.
"""

from __future__ import annotations

import statistics
import tempfile
import time
from dataclasses import dataclass

from .backends import KeyEvent
from .directory import InProcessDirectory
from .harness import build_participant


@dataclass
class BenchRow:
    operation: str
    samples: int
    median_us: float
    p95_us: float

    def to_dict(self) -> dict:
        return {
            "operation": self.operation,
            "samples": self.samples,
            "median_us": round(self.median_us, 1),
            "p95_us": round(self.p95_us, 1),
        }


def _row(operation: str, samples_ns: list[int]) -> BenchRow:
    ordered = sorted(samples_ns)
    p95 = ordered[min(len(ordered) - 1, int(len(ordered) * 0.95))]
    return BenchRow(
        operation=operation,
        samples=len(ordered),
        median_us=statistics.median(ordered) / 1000,
        p95_us=p95 / 1000,
    )


def _timed_keystrokes(participant, count: int, gap_us: int = 20_000) -> list[int]:
    """Push `count` letter keystrokes, timing the down-event delivery."""
    samples = []
    device, clock = participant.device, participant.clock
    t = clock.now_us + gap_us
    for i in range(count):
        code = "abcdefghij"[i % 10]
        down = KeyEvent(t, code, "down")
        up = KeyEvent(t + 1000, code, "up")
        t0 = time.perf_counter_ns()
        device.push(down)
        samples.append(time.perf_counter_ns() - t0)
        device.push(up)
        t += gap_us
    return samples


def run_benchmarks(iterations: int = 200) -> list[BenchRow]:
    """Measure all hot paths against a fresh two-user simulated world."""
    rows = []
    one_shot_count = max(10, iterations // 10)
    with tempfile.TemporaryDirectory() as tmp:
        directory = InProcessDirectory()
        alice = build_participant(tmp, "alice", seed=501, directory=directory)
        bob = build_participant(tmp, "bob", seed=502, directory=directory)
        directory.publish("bob", bob.store)
        try:
            # 1. Watch mode: the tax every keystroke pays while idle.
            rows.append(_row("watch-mode keystroke", _timed_keystrokes(alice, iterations)))

            # 2. Stream encryption: per-character cost with capture active.
            alice.press("e", ("ctrl", "alt"))
            alice.interceptor.set_recipient("bob", "v1")
            samples = _timed_keystrokes(alice, iterations)
            alice.settle()
            alice.press("e", ("ctrl", "alt"))
            rows.append(_row("stream encrypt per char", samples))

            # 3. One-shot encryption of whole texts.
            for size in (200, 1000):
                samples = []
                text = "m" * size
                for _ in range(one_shot_count):
                    alice.press("e", ("ctrl", "alt"))
                    alice.interceptor.set_recipient("bob", "v2")
                    t0 = time.perf_counter_ns()
                    alice.interceptor.compose_v2(text)
                    samples.append(time.perf_counter_ns() - t0)
                rows.append(_row(f"one-shot encrypt {size} chars", samples))

            # 4. Decryption, fresh token each round so the cache never hits.
            for size in (50, 1000):
                samples = []
                for _ in range(one_shot_count):
                    before = len(alice.transcript.textbox)
                    alice.press("e", ("ctrl", "alt"))
                    alice.interceptor.set_recipient("bob", "v2")
                    alice.interceptor.compose_v2("d" * size)
                    token = alice.transcript.textbox[before:].strip()
                    t0 = time.perf_counter_ns()
                    outcomes = bob.interceptor.decrypt_selection(token)
                    samples.append(time.perf_counter_ns() - t0)
                    assert outcomes and outcomes[0].kind == "displayed"
                rows.append(_row(f"decrypt {size} chars", samples))
        finally:
            alice.close()
            bob.close()
    return rows


def format_table(rows: list[BenchRow]) -> str:
    """Fixed-width table, one row per measurement."""
    headers = ("operation", "samples", "median µs", "p95 µs")
    cells = [
        (r.operation, str(r.samples), f"{r.median_us:.1f}", f"{r.p95_us:.1f}")
        for r in rows
    ]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(headers)]
    def line(values):
        left = values[0].ljust(widths[0])
        rest = "  ".join(v.rjust(w) for v, w in zip(values[1:], widths[1:]))
        return f"{left}  {rest}"
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([line(headers), rule] + [line(c) for c in cells])
