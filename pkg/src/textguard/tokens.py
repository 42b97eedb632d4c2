"""Armored wire format: metadata header, MAC framing, and token scanning.

A token is the only thing that ever leaves the machine:

    Guard-start <base64(header || ciphertext || mac)> Guard-end

with no whitespace around the base64 body.  The header is a fixed-order
tagged encoding; varint fields keep short messages at exactly 50 bytes of
binary framing (42-byte header + 8-byte MAC) while counters and lengths
can still grow without a format change.
"""

from __future__ import annotations

import base64
import binascii
import math
import re
from dataclasses import dataclass, field

from .errors import HeaderParseError, LengthMismatch, MalformedTokenError
from .ratchet import HandshakeHeader
from .wire import read_exact, read_uvarint, uvarint_len, write_uvarint

GUARD_START = "Guard-start"
GUARD_END = "Guard-end"

MAC_LEN = 8

# Header version byte: high nibble = message format version, low nibble =
# highest version this writer can read.  Both are 3 for the current format.
MESSAGE_VERSION = 0x33

_TAG_VERSION = 0x01
_TAG_RATCHET_PUB = 0x02
_TAG_COUNTER = 0x03
_TAG_PREVIOUS = 0x04
_TAG_LENGTH = 0x05
_TAG_HANDSHAKE = 0x06

_RATCHET_PUB_LEN = 32
_WHITESPACE = re.compile(r"\s+")


# ── Header ──────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class MetadataHeader:
    """Everything the recipient needs to locate this message's keys."""

    ratchet_pub: bytes
    counter: int
    previous_counter: int
    ciphertext_length: int
    version: int = MESSAGE_VERSION
    handshake: HandshakeHeader | None = None


def serialize_header(header: MetadataHeader) -> bytes:
    """Encode a header as fixed-order (tag, value) fields."""
    if len(header.ratchet_pub) != _RATCHET_PUB_LEN:
        raise LengthMismatch(
            f"ratchet key must be {_RATCHET_PUB_LEN} bytes, got {len(header.ratchet_pub)}"
        )
    out = bytearray()
    out += bytes((_TAG_VERSION, header.version))
    out += bytes((_TAG_RATCHET_PUB, _RATCHET_PUB_LEN)) + header.ratchet_pub
    out += bytes((_TAG_COUNTER,)) + write_uvarint(header.counter)
    out += bytes((_TAG_PREVIOUS,)) + write_uvarint(header.previous_counter)
    out += bytes((_TAG_LENGTH,)) + write_uvarint(header.ciphertext_length)
    if header.handshake is not None:
        blob = header.handshake.encode()
        out += bytes((_TAG_HANDSHAKE,)) + write_uvarint(len(blob)) + blob
    return bytes(out)


def _read_header(data: bytes, offset: int = 0) -> tuple[MetadataHeader, int]:
    """Parse a header prefix; returns (header, offset past the header)."""
    try:
        tag, off = read_exact(data, offset, 1)
        if tag[0] != _TAG_VERSION:
            raise ValueError(f"expected version tag, got 0x{tag[0]:02x}")
        version_b, off = read_exact(data, off, 1)
        version = version_b[0]
        if version >> 4 != MESSAGE_VERSION >> 4:
            raise ValueError(f"unsupported message version 0x{version:02x}")

        tag, off = read_exact(data, off, 1)
        if tag[0] != _TAG_RATCHET_PUB:
            raise ValueError(f"expected ratchet-key tag, got 0x{tag[0]:02x}")
        length_b, off = read_exact(data, off, 1)
        if length_b[0] != _RATCHET_PUB_LEN:
            raise ValueError(f"bad ratchet key length {length_b[0]}")
        ratchet_pub, off = read_exact(data, off, _RATCHET_PUB_LEN)

        tag, off = read_exact(data, off, 1)
        if tag[0] != _TAG_COUNTER:
            raise ValueError(f"expected counter tag, got 0x{tag[0]:02x}")
        counter, off = read_uvarint(data, off)

        tag, off = read_exact(data, off, 1)
        if tag[0] != _TAG_PREVIOUS:
            raise ValueError(f"expected previous-counter tag, got 0x{tag[0]:02x}")
        previous, off = read_uvarint(data, off)

        tag, off = read_exact(data, off, 1)
        if tag[0] != _TAG_LENGTH:
            raise ValueError(f"expected length tag, got 0x{tag[0]:02x}")
        ciphertext_length, off = read_uvarint(data, off)

        handshake = None
        if off < len(data) and data[off] == _TAG_HANDSHAKE:
            off += 1
            blob_len, off = read_uvarint(data, off)
            blob, off = read_exact(data, off, blob_len)
            handshake = HandshakeHeader.decode(blob)
    except ValueError as exc:
        raise HeaderParseError(str(exc)) from exc
    return (
        MetadataHeader(
            ratchet_pub=ratchet_pub,
            counter=counter,
            previous_counter=previous,
            ciphertext_length=ciphertext_length,
            version=version,
            handshake=handshake,
        ),
        off,
    )


def parse_header(data: bytes) -> MetadataHeader:
    """Decode a standalone header; trailing bytes are a parse error."""
    header, off = _read_header(data)
    if off != len(data):
        raise HeaderParseError(f"{len(data) - off} trailing bytes after header")
    return header


# ── Tokens ──────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class WireToken:
    """One armored message as it appears inside application text."""

    text: str

    @property
    def body(self) -> str:
        return self.text[len(GUARD_START) : -len(GUARD_END)]


def encode_token(header: MetadataHeader, ciphertext: bytes, mac: bytes) -> WireToken:
    """Armor header, ciphertext, and MAC into delimited base64 text.

    Errors:
        LengthMismatch: the header's recorded length disagrees with the
            ciphertext, or the MAC is not exactly 8 bytes.
    """
    if header.ciphertext_length != len(ciphertext):
        raise LengthMismatch(
            f"header says {header.ciphertext_length} ciphertext bytes, got {len(ciphertext)}"
        )
    if len(mac) != MAC_LEN:
        raise LengthMismatch(f"MAC must be {MAC_LEN} bytes, got {len(mac)}")
    body = base64.b64encode(serialize_header(header) + ciphertext + mac).decode("ascii")
    return WireToken(text=GUARD_START + body + GUARD_END)


def decode_token(token: WireToken | str) -> tuple[MetadataHeader, bytes, bytes]:
    """Strip armor and split a token into (header, ciphertext, mac).

    Errors:
        MalformedTokenError: missing delimiters or broken base64.
        HeaderParseError / LengthMismatch: framing inconsistencies inside.
    """
    text = token.text if isinstance(token, WireToken) else token
    text = text.strip()
    if not text.startswith(GUARD_START) or not text.endswith(GUARD_END):
        raise MalformedTokenError("token is not wrapped in Guard-start/Guard-end")
    body = text[len(GUARD_START) : -len(GUARD_END)]
    # Tolerate armored bodies re-wrapped by the displaying application.
    body = _WHITESPACE.sub("", body)
    try:
        raw = base64.b64decode(body.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise MalformedTokenError(f"token body is not valid base64: {exc}") from exc
    header, off = _read_header(raw)
    rest = raw[off:]
    if len(rest) < MAC_LEN:
        raise LengthMismatch(f"token too short for a {MAC_LEN}-byte MAC")
    ciphertext, mac = rest[:-MAC_LEN], rest[-MAC_LEN:]
    if len(ciphertext) != header.ciphertext_length:
        raise LengthMismatch(
            f"header says {header.ciphertext_length} ciphertext bytes, "
            f"token carries {len(ciphertext)}"
        )
    return header, ciphertext, mac


# ── Scanning ────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class MalformedCandidate:
    """A delimiter-bracketed span that failed validation, with the reason."""

    offset: int
    text: str
    reason: str


@dataclass
class ScanResult:
    """Valid tokens found in a selection, plus per-candidate failures."""

    tokens: list[WireToken] = field(default_factory=list)
    malformed: list[MalformedCandidate] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.tokens)


def scan_tokens(selection: str) -> ScanResult:
    """Find every delimited token in free-form selected text, in order.

    Candidates that fail base64 or framing checks are reported in
    ``malformed`` rather than raised, so one damaged token does not hide
    the intact ones around it.
    """
    result = ScanResult()
    pos = 0
    while True:
        start = selection.find(GUARD_START, pos)
        if start < 0:
            break
        end = selection.find(GUARD_END, start + len(GUARD_START))
        if end < 0:
            result.malformed.append(
                MalformedCandidate(
                    offset=start,
                    text=selection[start : start + 32],
                    reason="Guard-start without a closing Guard-end",
                )
            )
            break
        text = selection[start : end + len(GUARD_END)]
        try:
            decode_token(text)
        except (MalformedTokenError, HeaderParseError, LengthMismatch) as exc:
            result.malformed.append(
                MalformedCandidate(offset=start, text=text, reason=str(exc))
            )
        else:
            result.tokens.append(WireToken(text=text))
        pos = end + len(GUARD_END)
    return result


# ── Size accounting ─────────────────────────────────────────────────────────


def header_length(ciphertext_length: int, counter: int, previous_counter: int | None = None) -> int:
    """Binary header size for the given field magnitudes (no handshake)."""
    if previous_counter is None:
        previous_counter = counter
    return (
        2  # version tag + byte
        + 2 + _RATCHET_PUB_LEN  # ratchet key tag + length + key
        + 1 + uvarint_len(counter)
        + 1 + uvarint_len(previous_counter)
        + 1 + uvarint_len(ciphertext_length)
    )


def token_length(ciphertext_length: int, counter: int = 0) -> int:
    """Total on-screen characters for a token with the given ciphertext size."""
    binary = header_length(ciphertext_length, counter) + ciphertext_length + MAC_LEN
    return len(GUARD_START) + 4 * math.ceil(binary / 3) + len(GUARD_END)


def overhead_bytes(plaintext_length: int, counter: int = 0) -> int:
    """Characters of overhead a token adds on top of its plaintext length."""
    return token_length(plaintext_length, counter) - plaintext_length
