"""Varint and byte-slicing helper tests."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from textguard.wire import read_exact, read_uvarint, uvarint_len, write_uvarint


class TestUvarint:
    def test_single_byte_values(self) -> None:
        """Values below 128 encode as themselves in one byte."""
        for value in (0, 1, 64, 127):
            assert write_uvarint(value) == bytes([value])

    def test_first_growth_step(self) -> None:
        """128 is the first value needing a second byte."""
        assert len(write_uvarint(127)) == 1
        assert write_uvarint(128) == b"\x80\x01"
        assert len(write_uvarint(128)) == 2

    def test_negative_rejected(self) -> None:
        with pytest.raises(ValueError):
            write_uvarint(-1)
        with pytest.raises(ValueError):
            uvarint_len(-1)

    def test_truncated_read(self) -> None:
        """A continuation bit with no following byte is an error."""
        with pytest.raises(ValueError):
            read_uvarint(b"\x80")
        with pytest.raises(ValueError):
            read_uvarint(b"")

    @given(st.integers(min_value=0, max_value=2**63 - 1))
    def test_round_trip(self, value: int) -> None:
        encoded = write_uvarint(value)
        assert len(encoded) == uvarint_len(value)
        decoded, offset = read_uvarint(encoded)
        assert decoded == value
        assert offset == len(encoded)

    @given(st.integers(min_value=0, max_value=2**32), st.binary(max_size=8))
    def test_round_trip_with_trailer(self, value: int, trailer: bytes) -> None:
        """Decoding stops at the value boundary regardless of what follows."""
        encoded = write_uvarint(value)
        decoded, offset = read_uvarint(encoded + trailer)
        assert decoded == value
        assert offset == len(encoded)


class TestReadExact:
    def test_exact_slice(self) -> None:
        data, off = read_exact(b"abcdef", 2, 3)
        assert data == b"cde"
        assert off == 5

    def test_truncation_raises(self) -> None:
        with pytest.raises(ValueError):
            read_exact(b"abc", 1, 5)
