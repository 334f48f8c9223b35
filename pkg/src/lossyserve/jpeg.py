"""Baseline JPEG parsing and MCU boundary discovery.

Only the entropy-coded structure is decoded: Huffman symbols are walked to
find where every MCU starts and ends, but coefficients are never
dequantized or transformed.  Bit offsets reported by this module are *raw*
scan offsets, ``byte * 8 + bit`` measured from the first byte after the SOS
segment, where ``byte`` indexes the stuffed byte stream.  An offset never
points at a stuffed ``0x00``.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import CorruptScan, MalformedMarker, MissingTable, NotBaseline, TruncatedFile

SOI = 0xD8
EOI = 0xD9
SOS = 0xDA
DHT = 0xC4
DQT = 0xDB
DRI = 0xDD
SOF0 = 0xC0
DAC = 0xCC
RST0 = 0xD0

_FAST_BITS = 9

_MARKER_NAMES = {
    0xC0: "SOF0", 0xC1: "SOF1", 0xC2: "SOF2", 0xC3: "SOF3", 0xC5: "SOF5",
    0xC6: "SOF6", 0xC7: "SOF7", 0xC9: "SOF9", 0xCA: "SOF10", 0xCB: "SOF11",
    0xCD: "SOF13", 0xCE: "SOF14", 0xCF: "SOF15", 0xC4: "DHT", 0xCC: "DAC",
    0xD8: "SOI", 0xD9: "EOI", 0xDA: "SOS", 0xDB: "DQT", 0xDC: "DNL",
    0xDD: "DRI", 0xFE: "COM",
}


def marker_name(code: int) -> str:
    if code in _MARKER_NAMES:
        return _MARKER_NAMES[code]
    if 0xD0 <= code <= 0xD7:
        return f"RST{code - 0xD0}"
    if 0xE0 <= code <= 0xEF:
        return f"APP{code - 0xE0}"
    return f"0xFF{code:02X}"


class HuffmanTable:
    """Canonical Huffman table in decode-ready form.

    ``fast`` maps the top 9 bits of a 16-bit peek to ``(advance, symbol)``
    where ``advance`` already includes the magnitude bits that follow the
    code (for DC the symbol is the category, for AC the low nibble).  Longer
    codes go through the ``maxcode`` path of the standard decoder.
    """

    def __init__(self, table_class: int, table_id: int, counts, symbols):
        self.table_class = table_class
        self.table_id = table_id
        self.counts = list(counts)
        self.symbols = list(symbols)
        if len(self.counts) != 16 or sum(self.counts) != len(self.symbols):
            raise ValueError("bad Huffman table shape")
        self.maxcode = [-1] * 18
        self.valptr = [0] * 17
        self.mincode = [0] * 17
        self.encode_map: dict[int, tuple[int, int]] = {}
        self.fast: list[tuple[int, int] | None] = [None] * (1 << _FAST_BITS)
        code = 0
        k = 0
        for length in range(1, 17):
            n = self.counts[length - 1]
            if n:
                self.valptr[length] = k
                self.mincode[length] = code
                for _ in range(n):
                    sym = self.symbols[k]
                    self.encode_map.setdefault(sym, (code, length))
                    if length <= _FAST_BITS:
                        shift = _FAST_BITS - length
                        adv = length + (sym & 0x0F)
                        for low in range(1 << shift):
                            self.fast[(code << shift) | low] = (adv, sym)
                    code += 1
                    k += 1
                self.maxcode[length] = code - 1
            code <<= 1
            if code > (1 << length) * 2:
                raise ValueError("Huffman code space overflow")
        self.maxcode[17] = 0x7FFFFFFF

    def slow(self, peek16: int):
        """Decode a code longer than the fast window; None if invalid."""
        for length in range(_FAST_BITS + 1, 17):
            code = peek16 >> (16 - length)
            if self.counts[length - 1] and code <= self.maxcode[length] and code >= self.mincode[length]:
                sym = self.symbols[self.valptr[length] + code - self.mincode[length]]
                return length + (sym & 0x0F), sym
        return None

    def code_for(self, symbol: int) -> tuple[int, int] | None:
        return self.encode_map.get(symbol)


@dataclass(frozen=True)
class Component:
    id: int
    h_sampling: int
    v_sampling: int
    quant_table_id: int


@dataclass
class JpegHeader:
    """Everything a decoder needs before the first entropy-coded byte."""

    width: int
    height: int
    components: list[Component]
    scan_components: list[tuple[Component, int, int]]
    dc_tables: dict[int, HuffmanTable]
    ac_tables: dict[int, HuffmanTable]
    restart_interval: int
    header_end: int
    mcus_per_row: int = 0
    mcu_rows: int = 0
    mcu_blocks: list[tuple[HuffmanTable, HuffmanTable]] = field(default_factory=list)

    @property
    def mcu_count(self) -> int:
        return self.mcus_per_row * self.mcu_rows

    @property
    def huffman_tables(self) -> dict[str, dict[int, HuffmanTable]]:
        return {"dc": self.dc_tables, "ac": self.ac_tables}


@dataclass
class JpegImage:
    raw_bytes: bytes
    header: JpegHeader
    header_span: tuple[int, int]
    scan_span: tuple[int, int]
    restart_offsets: list[int]

    @property
    def width(self) -> int:
        return self.header.width

    @property
    def height(self) -> int:
        return self.header.height

    @property
    def components(self) -> list[tuple[int, int, int, int]]:
        return [(c.id, c.h_sampling, c.v_sampling, c.quant_table_id) for c in self.header.components]

    @property
    def huffman_tables(self):
        return self.header.huffman_tables

    @property
    def restart_interval(self) -> int:
        return self.header.restart_interval

    @property
    def mcu_count_expected(self) -> int:
        return self.header.mcu_count

    @property
    def scan_bytes(self) -> bytes:
        lo, hi = self.scan_span
        return self.raw_bytes[lo:hi]

    @property
    def trailer(self) -> bytes:
        return self.raw_bytes[self.scan_span[1]:]


@dataclass
class McuMap:
    boundaries: list[int]
    ends: list[int]
    end_bit: int
    byte_aligned: list[bool]
    restart_after: list[bool]

    def __len__(self) -> int:
        return len(self.boundaries)


class McuBlock(NamedTuple):
    start_mcu: int
    end_mcu: int
    byte_range: tuple[int, int]

    @property
    def n_mcus(self) -> int:
        return self.end_mcu - self.start_mcu + 1

    @property
    def size(self) -> int:
        return self.byte_range[1] - self.byte_range[0]


@dataclass
class McuBlockPlan:
    blocks: list[McuBlock]
    recoverable: bool


def _u16(data: bytes, pos: int) -> int:
    return (data[pos] << 8) | data[pos + 1]


def parse_jpeg_header(data: bytes) -> JpegHeader:
    """Parse SOI through the SOS segment.  ``data`` may stop right after SOS."""
    n = len(data)
    if n < 2 or data[0] != 0xFF or data[1] != SOI:
        raise MalformedMarker("SOI", 0, "input does not start with SOI")
    pos = 2
    frame = None
    dc_tables: dict[int, HuffmanTable] = {}
    ac_tables: dict[int, HuffmanTable] = {}
    restart_interval = 0
    while True:
        if pos >= n:
            raise TruncatedFile("SOS", pos, "end of data before start of scan")
        if data[pos] != 0xFF:
            raise MalformedMarker(f"0x{data[pos]:02X}", pos, "expected a marker")
        marker_pos = pos
        while pos < n and data[pos] == 0xFF:
            pos += 1
        if pos >= n:
            raise TruncatedFile("marker", marker_pos)
        code = data[pos]
        pos += 1
        name = marker_name(code)
        if code in (SOI, EOI) or 0xD0 <= code <= 0xD7 or code == 0x01:
            raise MalformedMarker(name, marker_pos, "unexpected standalone marker in header")
        if pos + 2 > n:
            raise TruncatedFile(name, marker_pos, "segment length missing")
        length = _u16(data, pos)
        if length < 2:
            raise MalformedMarker(name, marker_pos, f"bad segment length {length}")
        if pos + length > n:
            raise TruncatedFile(name, marker_pos, "segment runs past end of data")
        seg = data[pos + 2:pos + length]
        pos += length

        if code == SOF0:
            if frame is not None:
                raise MalformedMarker(name, marker_pos, "duplicate frame header")
            frame = _parse_sof(seg, marker_pos)
        elif code == DAC:
            raise NotBaseline(name, marker_pos, "arithmetic coding")
        elif 0xC1 <= code <= 0xCF and code not in (DHT, 0xC8):
            raise NotBaseline(name, marker_pos, "only baseline sequential DCT is supported")
        elif code == DHT:
            _parse_dht(seg, marker_pos, dc_tables, ac_tables)
        elif code == DQT:
            _check_dqt(seg, marker_pos)
        elif code == DRI:
            if len(seg) != 2:
                raise MalformedMarker(name, marker_pos, "DRI payload must be 2 bytes")
            restart_interval = _u16(seg, 0)
        elif code == 0xDC:
            raise MalformedMarker(name, marker_pos, "DNL before scan")
        elif code == SOS:
            if frame is None:
                raise MalformedMarker(name, marker_pos, "scan before frame header")
            return _build_header(frame, seg, marker_pos, pos, dc_tables, ac_tables, restart_interval)
        # APPn, COM and anything else: skipped


def _parse_sof(seg: bytes, off: int):
    if len(seg) < 6:
        raise MalformedMarker("SOF0", off, "short frame header")
    precision = seg[0]
    height = _u16(seg, 1)
    width = _u16(seg, 3)
    nf = seg[5]
    if precision != 8:
        raise NotBaseline("SOF0", off, f"{precision}-bit samples")
    if nf < 1 or len(seg) != 6 + 3 * nf:
        raise MalformedMarker("SOF0", off, "component list length mismatch")
    if width == 0 or height == 0:
        raise MalformedMarker("SOF0", off, "zero dimension (DNL not supported)")
    comps = []
    for i in range(nf):
        cid, hv, tq = seg[6 + 3 * i:9 + 3 * i]
        h, v = hv >> 4, hv & 0x0F
        if not (1 <= h <= 4 and 1 <= v <= 4):
            raise MalformedMarker("SOF0", off, f"bad sampling factors for component {cid}")
        comps.append(Component(cid, h, v, tq))
    return width, height, comps


def _parse_dht(seg: bytes, off: int, dc_tables, ac_tables):
    p = 0
    while p < len(seg):
        if p + 17 > len(seg):
            raise MalformedMarker("DHT", off, "short table")
        tc, th = seg[p] >> 4, seg[p] & 0x0F
        counts = seg[p + 1:p + 17]
        total = sum(counts)
        if tc > 1 or th > 3 or p + 17 + total > len(seg):
            raise MalformedMarker("DHT", off, "bad table class/id or length")
        symbols = seg[p + 17:p + 17 + total]
        try:
            table = HuffmanTable(tc, th, counts, symbols)
        except ValueError as exc:
            raise MalformedMarker("DHT", off, str(exc)) from None
        (dc_tables if tc == 0 else ac_tables)[th] = table
        p += 17 + total


def _check_dqt(seg: bytes, off: int):
    p = 0
    while p < len(seg):
        pq = seg[p] >> 4
        size = 64 * (2 if pq else 1)
        if p + 1 + size > len(seg):
            raise MalformedMarker("DQT", off, "short quantization table")
        p += 1 + size


def _build_header(frame, seg, off, header_end, dc_tables, ac_tables, restart_interval) -> JpegHeader:
    width, height, comps = frame
    if len(seg) < 1:
        raise MalformedMarker("SOS", off, "empty scan header")
    ns = seg[0]
    if ns < 1 or len(seg) != 4 + 2 * ns:
        raise MalformedMarker("SOS", off, "scan header length mismatch")
    by_id = {c.id: c for c in comps}
    scan_comps = []
    for i in range(ns):
        cid, tdta = seg[1 + 2 * i], seg[2 + 2 * i]
        if cid not in by_id:
            raise MalformedMarker("SOS", off, f"unknown component {cid}")
        td, ta = tdta >> 4, tdta & 0x0F
        if td not in dc_tables or ta not in ac_tables:
            raise MalformedMarker("SOS", off, f"component {cid} references an undefined Huffman table")
        scan_comps.append((by_id[cid], td, ta))
    ss, se, ahal = seg[1 + 2 * ns], seg[2 + 2 * ns], seg[3 + 2 * ns]
    if ss != 0 or se != 63 or ahal != 0:
        raise NotBaseline("SOS", off, "spectral selection/approximation is not sequential")
    if ns != len(comps):
        raise NotBaseline("SOS", off, "non-interleaved multi-scan image")

    hmax = max(c.h_sampling for c in comps)
    vmax = max(c.v_sampling for c in comps)
    if ns == 1:
        c = scan_comps[0][0]
        comp_w = math.ceil(width * c.h_sampling / hmax)
        comp_h = math.ceil(height * c.v_sampling / vmax)
        per_row, rows = math.ceil(comp_w / 8), math.ceil(comp_h / 8)
        blocks = [(dc_tables[scan_comps[0][1]], ac_tables[scan_comps[0][2]])]
    else:
        per_row = math.ceil(width / (8 * hmax))
        rows = math.ceil(height / (8 * vmax))
        blocks = []
        for c, td, ta in scan_comps:
            blocks.extend([(dc_tables[td], ac_tables[ta])] * (c.h_sampling * c.v_sampling))
        if len(blocks) > 10:
            raise MalformedMarker("SOS", off, "more than 10 blocks per MCU")
    return JpegHeader(width, height, comps, scan_comps, dc_tables, ac_tables,
                      restart_interval, header_end, per_row, rows, blocks)


def find_scan_end(data: bytes, start: int) -> tuple[int, list[int]]:
    """Return (offset of the marker ending the scan, absolute RST offsets)."""
    rst = []
    p = start
    n = len(data)
    while True:
        i = data.find(b"\xff", p)
        if i < 0 or i + 1 >= n:
            raise TruncatedFile("EOI", n, "entropy-coded data is not terminated by a marker")
        j = i + 1
        while j < n and data[j] == 0xFF:
            j += 1
        if j >= n:
            raise TruncatedFile("EOI", n, "entropy-coded data is not terminated by a marker")
        nxt = data[j]
        if nxt == 0x00 and j == i + 1:
            p = j + 1
        elif 0xD0 <= nxt <= 0xD7 and j == i + 1:
            rst.append(i)
            p = j + 1
        else:
            return i, rst


def parse_jpeg(data: bytes) -> JpegImage:
    """Parse a complete baseline JPEG file."""
    data = bytes(data)
    header = parse_jpeg_header(data)
    scan_start = header.header_end
    scan_end, rst = find_scan_end(data, scan_start)
    return JpegImage(
        raw_bytes=data,
        header=header,
        header_span=(0, scan_start),
        scan_span=(scan_start, scan_end),
        restart_offsets=[r - scan_start for r in rst],
    )


class Segment:
    """Unstuffed view of one restart interval of entropy-coded data."""

    __slots__ = ("raw_start", "data", "ff_positions", "nbits")

    def __init__(self, raw: bytes, raw_start: int = 0):
        self.raw_start = raw_start
        self.data = raw.replace(b"\xff\x00", b"\xff")
        ff = []
        i = self.data.find(b"\xff")
        while i >= 0:
            ff.append(i)
            i = self.data.find(b"\xff", i + 1)
        self.ff_positions = ff
        self.nbits = len(self.data) * 8

    def raw_byte(self, u: int) -> int:
        return self.raw_start + u + bisect_left(self.ff_positions, u)

    def raw_bit(self, ubit: int) -> int:
        return self.raw_byte(ubit >> 3) * 8 + (ubit & 7)


def walk_mcus(data: bytes, nbits: int, bit: int, count: int, blocks, first_mcu: int = 0,
              stop_short: bool = False) -> list[int]:
    """Walk ``count`` MCUs of unstuffed ``data`` from ``bit``; return end bits.

    With ``stop_short`` an MCU running past ``nbits`` ends the walk quietly
    (used to salvage the complete prefix of a truncated block); otherwise it
    raises :class:`CorruptScan`.
    """
    buf = data + b"\xff\xff\xff\xff"
    ends = []
    for m in range(count):
        start = bit
        for dc, ac in blocks:
            byte = bit >> 3
            peek = (((buf[byte] << 16) | (buf[byte + 1] << 8) | buf[byte + 2]) >> (8 - (bit & 7))) & 0xFFFF
            ent = dc.fast[peek >> 7] or dc.slow(peek)
            if ent is None or ent[1] > 11:
                if stop_short and bit >= nbits - 16:
                    return ends
                raise CorruptScan(bit, first_mcu + m, "invalid DC code")
            bit += ent[0]
            k = 1
            fast = ac.fast
            while k < 64:
                byte = bit >> 3
                peek = (((buf[byte] << 16) | (buf[byte + 1] << 8) | buf[byte + 2]) >> (8 - (bit & 7))) & 0xFFFF
                ent = fast[peek >> 7] or ac.slow(peek)
                if ent is None:
                    if stop_short and bit >= nbits - 16:
                        return ends
                    raise CorruptScan(bit, first_mcu + m, "invalid AC code")
                bit += ent[0]
                rs = ent[1]
                if rs & 0x0F:
                    k += (rs >> 4) + 1
                elif rs == 0xF0:
                    k += 16
                else:
                    break
            if bit > nbits:
                break
        if bit > nbits:
            if stop_short:
                return ends
            raise CorruptScan(start, first_mcu + m, "scan ends inside MCU")
        ends.append(bit)
    return ends


def split_intervals(scan: bytes, restart_offsets: list[int]) -> list[Segment]:
    segs = []
    lo = 0
    for r in restart_offsets:
        segs.append(Segment(scan[lo:r], lo))
        lo = r + 2
    segs.append(Segment(scan[lo:], lo))
    return segs


def scan_mcu_boundaries(img: JpegImage) -> McuMap:
    """Locate every MCU's bit extent in the scan of ``img``."""
    header = img.header
    total = header.mcu_count
    scan = img.scan_bytes
    ri = header.restart_interval
    segs = split_intervals(scan, img.restart_offsets)
    if ri == 0:
        if len(segs) != 1:
            raise CorruptScan(img.restart_offsets[0] * 8, 0, "restart marker without DRI")
        counts = [total]
    else:
        n_int = math.ceil(total / ri)
        if len(segs) != n_int:
            at = min(len(segs), n_int) * ri
            raise CorruptScan(segs[min(len(segs), n_int) - 1].raw_start * 8, min(at, total - 1),
                              f"expected {n_int - 1} restart markers, found {len(segs) - 1}")
        for i, off in enumerate(img.restart_offsets):
            if scan[off + 1] != RST0 + (i & 7):
                raise CorruptScan(off * 8, (i + 1) * ri, "restart marker out of sequence")
        counts = [min(ri, total - i * ri) for i in range(n_int)]

    boundaries: list[int] = []
    ends: list[int] = []
    aligned: list[bool] = []
    restart_after: list[bool] = []
    first = 0
    for idx, (seg, cnt) in enumerate(zip(segs, counts)):
        try:
            uends = walk_mcus(seg.data, seg.nbits, 0, cnt, header.mcu_blocks, first)
        except CorruptScan as exc:
            raise CorruptScan(seg.raw_bit(min(exc.bit_offset, seg.nbits)), exc.mcu_index,
                              str(exc).split(" at scan")[0]) from None
        prev = 0
        for e in uends:
            boundaries.append(seg.raw_bit(prev))
            ends.append(seg.raw_bit(e))
            aligned.append(e % 8 == 0)
            restart_after.append(False)
            prev = e
        if idx < len(segs) - 1:
            restart_after[-1] = True
        first += cnt
    return McuMap(boundaries, ends, ends[-1] if ends else 0, aligned, restart_after)


def plan_mcu_blocks(img: JpegImage, mcu_map: McuMap, max_scan: int = 64,
                    target_block_bytes: int = 1024) -> McuBlockPlan:
    """Group MCUs into byte-aligned blocks of at least ``target_block_bytes``.

    With restart markers present only restart-interval ends are eligible
    block ends, so a dropped block never disturbs the interval count.
    """
    n = len(mcu_map)
    scan_len = img.scan_span[1] - img.scan_span[0]
    whole = McuBlockPlan([McuBlock(0, n - 1, (0, scan_len))], False)
    if n == 0 or not recovery_supported(img.header):
        return whole
    use_rst = img.restart_interval > 0
    eligible = mcu_map.restart_after if use_rst else mcu_map.byte_aligned
    bounds = mcu_map.boundaries

    def end_byte(e: int) -> int:
        return scan_len if e == n - 1 else bounds[e + 1] // 8

    blocks = []
    start = 0
    while start < n:
        lo = bounds[start] // 8
        e = start
        while e < n - 1 and end_byte(e) - lo < target_block_bytes:
            e += 1
        if e == n - 1:
            blocks.append(McuBlock(start, e, (lo, scan_len)))
            break
        limit = min(n - 1, e + max_scan)
        while e < limit and not eligible[e]:
            e += 1
        if e == n - 1:
            blocks.append(McuBlock(start, e, (lo, scan_len)))
            break
        if not eligible[e]:
            return whole
        blocks.append(McuBlock(start, e, (lo, end_byte(e))))
        start = e + 1
    if len(blocks) < 2:
        return whole
    return McuBlockPlan(blocks, True)


def recovery_supported(header: JpegHeader) -> bool:
    try:
        make_recovery_mcu(header)
    except MissingTable:
        return False
    return True


def make_recovery_mcu(header: JpegHeader, sign: int = 1) -> tuple[int, int]:
    """Bits of a minimal MCU: DC difference 0 then end-of-block, per block.

    Tables built by an optimizing encoder may lack the category-0 DC symbol;
    the smallest available category is used instead with a difference of
    ``sign * 2**(s-1)``, so callers alternating ``sign`` keep the DC level
    from drifting.
    """
    value = 0
    nbits = 0
    for dc, ac in header.mcu_blocks:
        dc_code = dc.code_for(0)
        if dc_code is not None:
            value = (value << dc_code[1]) | dc_code[0]
            nbits += dc_code[1]
        else:
            cats = sorted(s for s in dc.encode_map if 1 <= s <= 11)
            if not cats:
                raise MissingTable(f"DC table {dc.table_id} has no usable category")
            s = cats[0]
            code, length = dc.code_for(s)
            mag = (1 << (s - 1)) if sign > 0 else (1 << (s - 1)) - 1
            value = (((value << length) | code) << s) | mag
            nbits += length + s
        eob = ac.code_for(0x00)
        if eob is None:
            raise MissingTable(f"AC table {ac.table_id} has no end-of-block code")
        value = (value << eob[1]) | eob[0]
        nbits += eob[1]
    return value, nbits
