"""Low-level byte encoding helpers shared by the wire format and keystore."""

from __future__ import annotations


def write_uvarint(value: int) -> bytes:
    """LEB128-encode an unsigned integer (7 bits per byte, little-endian)."""
    if value < 0:
        raise ValueError("uvarint cannot encode negative values")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def read_uvarint(data: bytes, offset: int = 0) -> tuple[int, int]:
    """Decode a LEB128 integer at ``offset``. Returns (value, next_offset)."""
    value = 0
    shift = 0
    pos = offset
    while True:
        if pos >= len(data):
            raise ValueError("truncated uvarint")
        if shift > 63:
            raise ValueError("uvarint too large")
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7


def uvarint_len(value: int) -> int:
    """Number of bytes write_uvarint produces for ``value``."""
    if value < 0:
        raise ValueError("uvarint cannot encode negative values")
    n = 1
    while value >= 0x80:
        value >>= 7
        n += 1
    return n


def read_exact(data: bytes, offset: int, length: int) -> tuple[bytes, int]:
    """Slice ``length`` bytes at ``offset`` or raise ValueError on truncation."""
    end = offset + length
    if end > len(data):
        raise ValueError(f"expected {length} bytes at offset {offset}, have {len(data) - offset}")
    return data[offset:end], end
