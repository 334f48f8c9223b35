from hypothesis import given, settings, strategies as st

from lossyserve.bits import BitWriter, bridge_bits, stuff, unstuff


def naive_splice(prefix: bytes, pbits: int, suffix: bytes, sbits: int) -> bytes:
    """Bit-string concatenation, 1-fill, then JPEG stuffing."""
    bits = "".join(f"{b:08b}" for b in prefix)[:pbits] + "".join(f"{b:08b}" for b in suffix)[:sbits]
    bits += "1" * (-len(bits) % 8)
    raw = bytes(int(bits[i:i + 8], 2) for i in range(0, len(bits), 8))
    return raw.replace(b"\xff", b"\xff\x00")


def test_aligned_prefix_is_plain_concatenation():
    out, n = bridge_bits(b"\x12\x34", 16, b"\xab\xcd")
    assert out == b"\x12\x34\xab\xcd" and n == 32


def test_three_bit_prefix_hand_computed():
    # prefix bits 101, suffix 0xF00F -> 101 11110000 00001111 + 11111 fill
    out, n = bridge_bits(b"\xa0", 3, b"\xf0\x0f")
    assert n == 19
    assert out == bytes([0b10111110, 0b00000001, 0b11111111, 0x00])


def test_ff_gets_stuffed():
    out, _ = bridge_bits(b"\xf0", 4, b"\xff", 4)
    assert out == b"\xff\x00"


def test_stuff_roundtrip():
    data = bytes(range(250, 256)) * 3
    assert unstuff(stuff(data)) == data
    assert b"\xff" not in stuff(data).replace(b"\xff\x00", b"")


@settings(max_examples=400)
@given(st.binary(max_size=12), st.integers(0, 96), st.binary(max_size=12), st.integers(0, 96))
def test_bridge_matches_naive_bitstring(p, pb, s, sb):
    pb = min(pb, len(p) * 8)
    sb = min(sb, len(s) * 8)
    out, n = bridge_bits(stuff(p), pb, stuff(s), sb)
    assert n == pb + sb
    assert out == naive_splice(p, pb, s, sb)


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(0, 2**32 - 1), st.integers(0, 32)), max_size=40))
def test_bitwriter_matches_naive(chunks):
    w = BitWriter()
    bits = ""
    for value, n in chunks:
        w.write(value, n)
        if n:
            bits += format(value & ((1 << n) - 1), f"0{n}b")
    w.pad_ones()
    assert w.bits_written == len(bits)
    bits += "1" * (-len(bits) % 8)
    raw = bytes(int(bits[i:i + 8], 2) for i in range(0, len(bits), 8))
    assert w.getvalue() == stuff(raw)
