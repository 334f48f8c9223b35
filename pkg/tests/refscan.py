"""A deliberately naive, independent MCU counter for tests.

It shares no code with ``lossyserve.jpeg``: Huffman codes are kept as
'0'/'1' strings in a dict and the entropy data is expanded to a bit string.
libjpeg cannot tell when a scan carries a few *extra* bits worth of MCUs
(its bit buffer swallows them), so tests use this to pin the exact count.
"""

import math


def _segments(data):
    pos = 2
    out = []
    while True:
        while data[pos] == 0xFF and data[pos + 1] == 0xFF:
            pos += 1
        marker = data[pos + 1]
        length = data[pos + 2] * 256 + data[pos + 3]
        out.append((marker, data[pos + 4:pos + 2 + length]))
        pos += 2 + length
        if marker == 0xDA:
            return out, pos


def _codes(counts, symbols):
    table = {}
    code = 0
    k = 0
    for length in range(1, 17):
        for _ in range(counts[length - 1]):
            table[format(code, f"0{length}b")] = symbols[k]
            code += 1
            k += 1
        code <<= 1
    return table


def _intervals(data, pos):
    """Split entropy data into (bitstring, rst_number) chunks up to the first non-RST marker."""
    chunks = []
    cur = bytearray()
    while True:
        b = data[pos]
        if b != 0xFF:
            cur.append(b)
            pos += 1
            continue
        nxt = data[pos + 1]
        if nxt == 0x00:
            cur.append(0xFF)
            pos += 2
        elif 0xD0 <= nxt <= 0xD7:
            chunks.append((cur, nxt - 0xD0))
            cur = bytearray()
            pos += 2
        elif nxt == 0xFF:
            pos += 1
        else:
            chunks.append((cur, None))
            return chunks, nxt


class Mismatch(Exception):
    pass


def check_scan(data):
    """Return the MCU count of a baseline JPEG, raising Mismatch on any irregularity."""
    segs, pos = _segments(bytes(data))
    dc, ac, comps, ri = {}, {}, {}, 0
    width = height = 0
    for marker, body in segs:
        if marker == 0xC0:
            height = body[1] * 256 + body[2]
            width = body[3] * 256 + body[4]
            for i in range(body[5]):
                c = body[6 + 3 * i:9 + 3 * i]
                comps[c[0]] = (c[1] >> 4, c[1] & 15)
        elif marker == 0xC4:
            p = 0
            while p < len(body):
                counts = body[p + 1:p + 17]
                syms = body[p + 17:p + 17 + sum(counts)]
                (dc if body[p] >> 4 == 0 else ac)[body[p] & 15] = _codes(counts, syms)
                p += 17 + sum(counts)
        elif marker == 0xDD:
            ri = body[0] * 256 + body[1]
        elif marker == 0xDA:
            scan = [(body[1 + 2 * i], body[2 + 2 * i] >> 4, body[2 + 2 * i] & 15) for i in range(body[0])]
    hmax = max(h for h, v in comps.values())
    vmax = max(v for h, v in comps.values())
    if len(scan) == 1:
        h, v = comps[scan[0][0]]
        total = math.ceil(math.ceil(width * h / hmax) / 8) * math.ceil(math.ceil(height * v / vmax) / 8)
        units = [(dc[scan[0][1]], ac[scan[0][2]])]
    else:
        total = math.ceil(width / (8 * hmax)) * math.ceil(height / (8 * vmax))
        units = []
        for cid, td, ta in scan:
            h, v = comps[cid]
            units += [(dc[td], ac[ta])] * (h * v)
    chunks, end_marker = _intervals(bytes(data), pos)
    if end_marker != 0xD9:
        raise Mismatch(f"scan ended by marker 0x{end_marker:02X}")
    sizes = [total] if ri == 0 else [min(ri, total - i * ri) for i in range(math.ceil(total / ri))]
    if len(sizes) != len(chunks):
        raise Mismatch(f"{len(chunks)} intervals, expected {len(sizes)}")
    for i, ((chunk, rst), size) in enumerate(zip(chunks, sizes)):
        if rst is not None and rst != i % 8:
            raise Mismatch(f"RST{rst} where RST{i % 8} expected")
        bits = "".join(format(b, "08b") for b in chunk)
        p = 0
        for m in range(size):
            for dct, act in units:
                p, sym = _symbol(bits, p, dct)
                p += sym
                k = 1
                while k < 64:
                    p, rs = _symbol(bits, p, act)
                    r, s = rs >> 4, rs & 15
                    if s == 0:
                        if r != 15:
                            break
                        k += 16
                        continue
                    p += s
                    k += r + 1
            if p > len(bits):
                raise Mismatch(f"interval {i} runs out of data in MCU {m}")
        rest = bits[p:]
        if len(rest) > 7 or rest.count("0"):
            raise Mismatch(f"interval {i} has {len(rest)} trailing bits {rest[:24]!r}")
    return total


def _symbol(bits, p, table):
    for length in range(1, 17):
        code = bits[p:p + length]
        if len(code) < length:
            raise Mismatch("data exhausted inside a Huffman code")
        if code in table:
            return p + length, table[code]
    raise Mismatch(f"invalid Huffman code at bit {p}")
