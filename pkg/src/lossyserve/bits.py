"""Bit-level writing of JPEG entropy-coded data with byte stuffing."""

from __future__ import annotations


def unstuff(data: bytes) -> bytes:
    return bytes(data).replace(b"\xff\x00", b"\xff")


def stuff(data: bytes) -> bytes:
    return bytes(data).replace(b"\xff", b"\xff\x00")


class BitWriter:
    """MSB-first bit sink that inserts a 0x00 after every emitted 0xFF."""

    def __init__(self):
        self.out = bytearray()
        self._acc = 0
        self._nacc = 0
        self.bits_written = 0

    @property
    def aligned(self) -> bool:
        return self._nacc == 0

    def write(self, value: int, nbits: int) -> None:
        if nbits <= 0:
            return
        self.bits_written += nbits
        acc = (self._acc << nbits) | (value & ((1 << nbits) - 1))
        total = self._nacc + nbits
        nfull = total >> 3
        rem = total & 7
        if nfull:
            chunk = (acc >> rem).to_bytes(nfull, "big")
            self.out += chunk.replace(b"\xff", b"\xff\x00")
        self._acc = acc & ((1 << rem) - 1)
        self._nacc = rem

    def write_unstuffed(self, data: bytes, nbits: int | None = None) -> None:
        """Append the first ``nbits`` bits of already-unstuffed ``data``."""
        if nbits is None:
            nbits = len(data) * 8
        if nbits <= 0:
            return
        nbytes = (nbits + 7) >> 3
        value = int.from_bytes(data[:nbytes], "big") >> (nbytes * 8 - nbits)
        self.write(value, nbits)

    def write_raw(self, stuffed: bytes) -> None:
        """Byte-aligned fast path for data that is already stuffed."""
        if self._nacc:
            raise ValueError("write_raw requires a byte-aligned writer")
        self.out += stuffed
        self.bits_written += len(unstuff(stuffed)) * 8

    def pad_ones(self) -> None:
        if self._nacc:
            fill = 8 - self._nacc
            self.write((1 << fill) - 1, fill)
            self.bits_written -= fill

    def write_marker(self, code: int) -> None:
        if self._nacc:
            raise ValueError("markers must be byte aligned")
        self.out += bytes((0xFF, code))

    def getvalue(self) -> bytes:
        return bytes(self.out)


def bridge_bits(prefix: bytes, prefix_bits: int, suffix: bytes,
                suffix_bits: int | None = None) -> tuple[bytes, int]:
    """Splice two stuffed entropy-coded bit streams.

    The first ``prefix_bits`` (unstuffed) bits of ``prefix`` are kept and the
    suffix is shifted to follow them immediately, so it moves by
    ``(8 - prefix_bits % 8) % 8`` bit positions.  Stuffing is recomputed on
    the result and a trailing partial byte is 1-filled.  Returns the stuffed
    bytes and the number of meaningful bits.
    """
    p = unstuff(prefix)
    s = unstuff(suffix)
    if suffix_bits is None:
        suffix_bits = len(s) * 8
    if prefix_bits > len(p) * 8 or suffix_bits > len(s) * 8:
        raise ValueError("bit count exceeds supplied data")
    w = BitWriter()
    w.write_unstuffed(p, prefix_bits)
    w.write_unstuffed(s, suffix_bits)
    w.pad_ones()
    return w.getvalue(), prefix_bits + suffix_bits
