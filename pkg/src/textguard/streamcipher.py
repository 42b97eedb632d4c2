"""Position-indexed stream encryption for live compose sessions.

A compose session binds keystream byte i to plaintext position i, so the
ciphertext invariant is simply ciphertext[i] = plaintext[i] XOR pad[i] at
every instant.  Edits re-encrypt only the suffix from the edit point; the
pad itself never changes, which is what makes incremental re-emission of
an armored token cheap.  The keystream comes from AES-128 in output
feedback mode, pulled block-by-block by encrypting zero blocks, and grows
by one block whenever fewer than two unbound bytes remain.
"""

from __future__ import annotations

import hmac as hmac_mod
import hashlib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

try:  # cryptography ≥ 49 keeps OFB under the decrepit namespace
    from cryptography.hazmat.decrepit.ciphers.modes import OFB
except ImportError:  # pragma: no cover
    from cryptography.hazmat.primitives.ciphers.modes import OFB

from .errors import BadIndex

if TYPE_CHECKING:  # pragma: no cover
    from .ratchet import MessageKeys

BLOCK_LEN = 16
MAC_LEN = 8

# The pad grows when fewer than this many unbound keystream bytes remain.
_EXTEND_THRESHOLD = 2


# ── Keystream pad ───────────────────────────────────────────────────────────


class KeystreamPad:
    """An append-only keystream buffer with erase-on-close semantics."""

    def __init__(self, cipher_key: bytes, iv: bytes) -> None:
        self._encryptor = Cipher(
            algorithms.AES(bytes(cipher_key)), OFB(bytes(iv))
        ).encryptor()
        self._pad = bytearray()
        self._closed = False
        self.extend()

    def __len__(self) -> int:
        return len(self._pad)

    def extend(self) -> None:
        """Append one more 128-bit block of keystream."""
        if self._closed:
            raise BadIndex("pad has been erased")
        self._pad += self._encryptor.update(b"\x00" * BLOCK_LEN)

    def ensure(self, length: int) -> None:
        """Grow until at least ``length + _EXTEND_THRESHOLD`` bytes exist."""
        while len(self._pad) - length < _EXTEND_THRESHOLD:
            self.extend()

    def byte_at(self, index: int) -> int:
        if index < 0 or index >= len(self._pad):
            raise BadIndex(f"pad index {index} outside [0, {len(self._pad)})")
        return self._pad[index]

    def slice(self, start: int, end: int) -> bytes:
        if start < 0 or end > len(self._pad) or start > end:
            raise BadIndex(f"pad slice [{start}:{end}] outside [0, {len(self._pad)}]")
        return bytes(self._pad[start:end])

    def erase(self) -> None:
        """Zero the buffered keystream; the pad is unusable afterwards."""
        for i in range(len(self._pad)):
            self._pad[i] = 0
        self._pad = bytearray()
        self._closed = True


def pad_init(keys: "MessageKeys") -> KeystreamPad:
    """Start a pad from a message's cipher key and IV (one block ready)."""
    return KeystreamPad(bytes(keys.cipher_key), bytes(keys.iv))


def pad_extend(pad: KeystreamPad) -> KeystreamPad:
    pad.extend()
    return pad


# ── Compose buffer ──────────────────────────────────────────────────────────


@dataclass
class ComposeBuffer:
    """Plaintext and ciphertext of an in-progress message, kept in lockstep."""

    plaintext: bytearray = field(default_factory=bytearray)
    ciphertext: bytearray = field(default_factory=bytearray)

    def __len__(self) -> int:
        return len(self.plaintext)

    def erase_plaintext(self) -> None:
        for i in range(len(self.plaintext)):
            self.plaintext[i] = 0
        self.plaintext = bytearray()


def encrypt_append(buf: ComposeBuffer, pad: KeystreamPad, byte: int) -> None:
    """Append one plaintext byte, binding it to the next keystream position."""
    index = len(buf.plaintext)
    pad.ensure(index + 1)
    buf.plaintext.append(byte)
    buf.ciphertext.append(byte ^ pad.byte_at(index))


def edit(buf: ComposeBuffer, pad: KeystreamPad, index: int, op: str, byte: int | None = None) -> None:
    """Apply an in-place edit and re-encrypt the suffix from ``index``.

    ``op`` is "replace", "insert", or "delete".  Inserting or deleting
    shifts every later byte to a new position, so each shifted byte is
    re-XORed against the keystream byte for its new position.

    Errors:
        BadIndex: ``index`` is outside the buffer (for replace/delete) or
            past the end (for insert).
    """
    n = len(buf.plaintext)
    if op == "replace":
        if not 0 <= index < n:
            raise BadIndex(f"replace at {index} outside [0, {n})")
        buf.plaintext[index] = byte
    elif op == "insert":
        if not 0 <= index <= n:
            raise BadIndex(f"insert at {index} outside [0, {n}]")
        buf.plaintext.insert(index, byte)
    elif op == "delete":
        if not 0 <= index < n:
            raise BadIndex(f"delete at {index} outside [0, {n})")
        del buf.plaintext[index]
    else:
        raise BadIndex(f"unknown edit op {op!r}")
    pad.ensure(len(buf.plaintext))
    del buf.ciphertext[index:]
    for i in range(index, len(buf.plaintext)):
        buf.ciphertext.append(buf.plaintext[i] ^ pad.byte_at(i))


# ── Whole-message operations ────────────────────────────────────────────────


def one_shot_encrypt(keys: "MessageKeys", plaintext: bytes) -> bytes:
    """Encrypt a complete message in one pass (the non-interactive path)."""
    encryptor = Cipher(
        algorithms.AES(bytes(keys.cipher_key)), OFB(bytes(keys.iv))
    ).encryptor()
    return encryptor.update(plaintext) + encryptor.finalize()


def decrypt(keys: "MessageKeys", ciphertext: bytes) -> bytes:
    decryptor = Cipher(
        algorithms.AES(bytes(keys.cipher_key)), OFB(bytes(keys.iv))
    ).decryptor()
    return decryptor.update(ciphertext) + decryptor.finalize()


def seal_mac(keys: "MessageKeys", header_bytes: bytes, ciphertext: bytes) -> bytes:
    """Authenticate header plus ciphertext; returns the truncated tag."""
    digest = hmac_mod.new(bytes(keys.mac_key), header_bytes + ciphertext, hashlib.sha256)
    return digest.digest()[:MAC_LEN]


def verify_mac(keys: "MessageKeys", header_bytes: bytes, ciphertext: bytes, mac: bytes) -> bool:
    """Constant-time check of a sealed tag; never raises on mismatch."""
    expected = seal_mac(keys, header_bytes, ciphertext)
    return hmac_mod.compare_digest(expected, mac)
