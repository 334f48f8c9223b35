"""Receiver-side reassembly and repair of lossy JPEG datagram streams.

Lost MCU blocks are dropped whole and the surviving blocks are joined
directly.  Because every non-final block ends on a byte-aligned MCU (or
right after a restart marker) that join is plain byte concatenation.  The
decoder still expects the full MCU count, so one minimal "recovery" MCU per
lost MCU is bit-packed after the last surviving MCU, followed by 1-fill pad
bits and EOI.

Two optional behaviours sit behind flags:

* ``mode="bit"`` salvages the complete MCUs from the leading partitions of
  a partially received block; they end mid-byte, so later data is
  bit-shifted into place (see :func:`lossyserve.bits.bridge_bits`).
* ``placement="inplace"`` puts recovery MCUs where the lost ones were
  instead of at the tail, which is worse for the DC prediction chain but
  useful for comparison.
"""

from __future__ import annotations

import enum
import math
import re
import time
from dataclasses import dataclass, field

from .bits import BitWriter, unstuff
from .errors import InvariantViolation, JpegError, StaleRequest
from .jpeg import EOI, RST0, JpegHeader, Segment, make_recovery_mcu, parse_jpeg_header, walk_mcus
from .protocol import MsgType, PacketHeader, RequestDatagramSet, decode_packet, encode_packet

DEFAULT_TIMEOUT_MS = 20.0

_RST_RE = re.compile(rb"\xff[\xd0-\xd7]")


class Outcome(str, enum.Enum):
    INTACT = "Intact"
    RECOVERED = "Recovered"
    HEADER_LOST = "HeaderLost"
    UNRECOVERABLE = "Unrecoverable"


@dataclass
class RecoveredJpeg:
    bytes: bytes
    lost_mcu_total: int
    loss_fraction: float
    outcome: Outcome
    expected_mcus: int = 0
    salvaged_mcus: int = 0

    def report(self) -> dict:
        return {
            "lost_mcu_total": self.lost_mcu_total,
            "loss_fraction": self.loss_fraction,
            "outcome": self.outcome.value,
            "expected_mcus": self.expected_mcus,
            "salvaged_mcus": self.salvaged_mcus,
        }


@dataclass
class BlockBuffer:
    start_mcu: int
    end_mcu: int
    partition_num: int
    parts: dict[int, bytes] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return len(self.parts) == self.partition_num

    def data(self) -> bytes:
        return b"".join(self.parts[i] for i in range(self.partition_num))

    def leading_data(self) -> bytes:
        out = []
        i = 0
        while i in self.parts:
            out.append(self.parts[i])
            i += 1
        return b"".join(out)


@dataclass
class ReassemblyState:
    """Per-request receive buffer.  Block 0 holds the JPEG header."""

    request_id: int
    timeout_ms: float = DEFAULT_TIMEOUT_MS
    blocks: dict[int, BlockBuffer] = field(default_factory=dict)
    lost_mcu_total: int = 0
    saw_last: bool = False
    last_block: int | None = None
    recoverable: bool | None = None
    deadline: float | None = None
    finalized: bool = False

    @property
    def header_bytes(self) -> bytes | None:
        hdr = self.blocks.get(0)
        if hdr is None or not hdr.complete:
            return None
        return hdr.data()

    def ingest(self, header: PacketHeader, payload: bytes, now: float | None = None) -> None:
        if self.finalized:
            raise StaleRequest(f"request {self.request_id} already finalized")
        if header.request_id != self.request_id:
            raise InvariantViolation("packet request_id matches the reassembly state")
        header.check()
        if header.msg_type != MsgType.DATA:
            raise InvariantViolation("only DATA packets are reassembled")
        if len(payload) != header.payload_len:
            raise InvariantViolation("payload_len matches payload")
        if self.deadline is None:
            t = time.monotonic() if now is None else now
            self.deadline = t + self.timeout_ms / 1000.0
        buf = self.blocks.get(header.block_num)
        if buf is None:
            buf = BlockBuffer(header.start_mcu, header.end_mcu, header.partition_num)
            self.blocks[header.block_num] = buf
        elif (buf.start_mcu, buf.end_mcu, buf.partition_num) != (
                header.start_mcu, header.end_mcu, header.partition_num):
            raise InvariantViolation("packets of one block share start_mcu/end_mcu/partition_num")
        buf.parts.setdefault(header.partition_idx, bytes(payload))
        if header.is_last:
            self.saw_last = True
            self.last_block = header.block_num
        if self.recoverable is None:
            self.recoverable = header.recoverable

    def ready(self, now: float | None = None) -> bool:
        if self.saw_last:
            return True
        if self.deadline is None:
            return False
        return (time.monotonic() if now is None else now) >= self.deadline

    def finalize(self, mode: str = "block", placement: str = "tail") -> RecoveredJpeg:
        return finalize(self, mode=mode, placement=placement)


def ingest(state: ReassemblyState, header: PacketHeader, payload: bytes, now: float | None = None) -> None:
    state.ingest(header, payload, now)


def ingest_datagram(state: ReassemblyState, datagram: bytes, now: float | None = None) -> None:
    h, payload = decode_packet(datagram)
    state.ingest(h, payload, now)


@dataclass
class _Piece:
    start_mcu: int
    n_mcus: int
    data: bytes = b""
    recovery: bool = False
    final: bool = False
    cut_bits: int | None = None


def finalize(state: ReassemblyState, mode: str = "block", placement: str = "tail") -> RecoveredJpeg:
    """Turn whatever arrived into a decodable JPEG (or an outcome code)."""
    if mode not in ("block", "bit"):
        raise ValueError("mode is 'block' or 'bit'")
    if placement not in ("tail", "inplace"):
        raise ValueError("placement is 'tail' or 'inplace'")
    state.finalized = True
    header_bytes = state.header_bytes
    if header_bytes is None:
        return RecoveredJpeg(b"", 0, 1.0, Outcome.HEADER_LOST)
    try:
        header = parse_jpeg_header(header_bytes)
    except JpegError:
        return RecoveredJpeg(b"", 0, 1.0, Outcome.HEADER_LOST)
    expected = header.mcu_count

    data_blocks = {b: buf for b, buf in state.blocks.items() if b != 0}
    complete = sorted((buf for buf in data_blocks.values() if buf.complete), key=lambda b: b.start_mcu)

    if _is_intact(state, data_blocks, expected):
        ordered = [data_blocks[b].data() for b in sorted(data_blocks)]
        state.lost_mcu_total = 0
        return RecoveredJpeg(header_bytes + b"".join(ordered), 0, 0.0, Outcome.INTACT, expected)

    if not state.recoverable:
        state.lost_mcu_total = expected
        return RecoveredJpeg(b"", expected, 1.0, Outcome.UNRECOVERABLE, expected)

    ri = header.restart_interval
    pieces: list[_Piece] = []
    for buf in complete:
        pieces.append(_Piece(buf.start_mcu, buf.end_mcu - buf.start_mcu + 1, buf.data(),
                             final=buf.end_mcu == expected - 1))
    salvaged = 0
    if mode == "bit" and ri == 0:
        for buf in data_blocks.values():
            if buf.complete or 0 not in buf.parts:
                continue
            piece = _salvage(header, buf)
            if piece is not None:
                pieces.append(piece)
                salvaged += piece.n_mcus
    pieces.sort(key=lambda p: p.start_mcu)

    laid_out: list[_Piece] = []
    cursor = 0
    lost = 0
    for p in pieces:
        if p.start_mcu < cursor or p.start_mcu + p.n_mcus > expected:
            continue
        if p.start_mcu > cursor:
            gap = p.start_mcu - cursor
            lost += gap
            if placement == "inplace":
                laid_out.append(_Piece(cursor, gap, recovery=True))
        laid_out.append(p)
        cursor = p.start_mcu + p.n_mcus
    if cursor < expected:
        gap = expected - cursor
        lost += gap
        if placement == "inplace":
            laid_out.append(_Piece(cursor, gap, recovery=True))
    if placement == "tail" and lost:
        laid_out.append(_Piece(cursor, lost, recovery=True))

    scan = _ScanWriter(header)
    for p in laid_out:
        if p.recovery:
            scan.recovery(p.n_mcus)
        else:
            scan.data(p)
    state.lost_mcu_total = lost
    body = scan.finish()
    return RecoveredJpeg(header_bytes + body, lost, lost / expected, Outcome.RECOVERED,
                         expected, salvaged)


def _is_intact(state: ReassemblyState, data_blocks: dict[int, BlockBuffer], expected: int) -> bool:
    if not state.saw_last or state.last_block is None:
        return False
    if set(data_blocks) != set(range(1, state.last_block + 1)):
        return False
    cursor = 0
    for b in range(1, state.last_block + 1):
        buf = data_blocks[b]
        if not buf.complete or buf.start_mcu != cursor:
            return False
        cursor = buf.end_mcu + 1
    return cursor == expected


def _salvage(header: JpegHeader, buf: BlockBuffer) -> _Piece | None:
    raw = buf.leading_data()
    # a trailing 0xFF may be missing its stuffed 0x00 (it went with the next partition)
    seg_data = unstuff(raw)
    want = buf.end_mcu - buf.start_mcu + 1
    ends = walk_mcus(seg_data, len(seg_data) * 8, 0, want, header.mcu_blocks, buf.start_mcu,
                     stop_short=True)
    if not ends:
        return None
    return _Piece(buf.start_mcu, len(ends), raw, cut_bits=ends[-1])


class _ScanWriter:
    """Re-emits entropy-coded data with restart markers renumbered."""

    def __init__(self, header: JpegHeader):
        self.header = header
        self.ri = header.restart_interval
        self.w = BitWriter()
        self.count = 0
        self.next_rst = 0
        self.sign = 1
        self._mcu_bits = {s: make_recovery_mcu(header, s) for s in (1, -1)}

    def _restart(self) -> None:
        self.w.pad_ones()
        self.w.write_marker(RST0 + self.next_rst)
        self.next_rst = (self.next_rst + 1) & 7
        self.count = 0

    def _renumber(self, stuffed: bytes) -> bytes:
        def sub(_m):
            code = RST0 + self.next_rst
            self.next_rst = (self.next_rst + 1) & 7
            return bytes((0xFF, code))
        return _RST_RE.sub(sub, stuffed)

    def recovery(self, n: int) -> None:
        for _ in range(n):
            if self.ri and self.count == self.ri:
                self._restart()
            value, nbits = self._mcu_bits[self.sign]
            self.sign = -self.sign
            self.w.write(value, nbits)
            self.count += 1

    def data(self, p: _Piece) -> None:
        if self.ri:
            self._data_restart(p)
            return
        if p.cut_bits is not None:
            self.w.write_unstuffed(unstuff(p.data), p.cut_bits)
        elif p.final:
            seg = Segment(_entropy_part(p.data))
            ends = walk_mcus(seg.data, seg.nbits, 0, p.n_mcus, self.header.mcu_blocks, p.start_mcu)
            self.w.write_unstuffed(seg.data, ends[-1])
        elif self.w.aligned:
            self.w.write_raw(p.data)
        else:
            self.w.write_unstuffed(unstuff(p.data))
        self.count += p.n_mcus

    def _data_restart(self, p: _Piece) -> None:
        # pieces start on an interval boundary when restart markers are in use
        if self.count or not self.w.aligned:
            self._restart()
        data = _entropy_part(p.data) if p.final else p.data
        rst = [m.start() for m in _RST_RE.finditer(data)]
        if not p.final:
            self.w.write_raw(self._renumber(data))
            self.count = 0 if rst and rst[-1] == len(data) - 2 else p.n_mcus % self.ri
            return
        head_end = rst[-1] + 2 if rst else 0
        if head_end:
            self.w.write_raw(self._renumber(data[:head_end]))
        tail_mcus = p.n_mcus - self.ri * len(rst)
        seg = Segment(data[head_end:])
        ends = walk_mcus(seg.data, seg.nbits, 0, tail_mcus, self.header.mcu_blocks,
                         p.start_mcu + self.ri * len(rst))
        self.w.write_unstuffed(seg.data, ends[-1])
        self.count = tail_mcus

    def finish(self) -> bytes:
        self.w.pad_ones()
        self.w.write_marker(EOI)
        return self.w.getvalue()


def _entropy_part(data: bytes) -> bytes:
    """Strip the EOI marker and anything after it from a final block."""
    p = 0
    n = len(data)
    while True:
        i = data.find(b"\xff", p)
        if i < 0 or i + 1 >= n:
            return data
        nxt = data[i + 1]
        if nxt == 0x00 or 0xD0 <= nxt <= 0xD7:
            p = i + 2
        else:
            return data[:i]


def recover_datagrams(datagrams, request_id: int | None = None, mode: str = "block",
                      placement: str = "tail") -> RecoveredJpeg:
    """Feed encoded datagrams (any order, any subset) through a fresh state."""
    state = None
    for dg in datagrams:
        h, payload = decode_packet(dg)
        if state is None:
            state = ReassemblyState(h.request_id if request_id is None else request_id)
        state.ingest(h, payload)
    if state is None:
        return RecoveredJpeg(b"", 0, 1.0, Outcome.HEADER_LOST)
    return finalize(state, mode=mode, placement=placement)


def drop_first_packets(dset: RequestDatagramSet, n: int) -> list[bytes]:
    """Encoded datagrams with the first ``n`` MCU-data packets removed."""
    out = []
    dropped = 0
    for h, payload in dset.packets:
        if not h.is_jpeg_header and dropped < n:
            dropped += 1
            continue
        out.append(encode_packet(h, payload))
    return out


def compare_placements(images, n_drop: int, *, target_block_bytes: int = 1024,
                       mtu_payload: int = 1200, decoder=None, classify=None, labels=None) -> dict:
    """Drop the first ``n_drop`` data packets of every image and repair it twice.

    ``images`` yields ``(name, jpeg_bytes)``.  ``decoder(bytes) -> bool`` marks
    outputs a stock decoder accepts; ``classify(bytes) -> list[int]`` plus a
    ``labels`` mapping produce top-N accuracy for the tail and in-place
    variants.
    """
    from .jpeg import parse_jpeg, plan_mcu_blocks, scan_mcu_boundaries
    from .protocol import build_packets

    rows = []
    hits = {"tail": 0, "inplace": 0}
    scored = 0
    for rid, (name, data) in enumerate(images):
        img = parse_jpeg(data)
        plan = plan_mcu_blocks(img, scan_mcu_boundaries(img), target_block_bytes=target_block_bytes)
        dgs = drop_first_packets(build_packets(img, plan, rid, mtu_payload), n_drop)
        row = {"image": name, "blocks": len(plan.blocks), "recoverable": plan.recoverable}
        for placement in ("tail", "inplace"):
            rec = recover_datagrams(dgs, placement=placement)
            row[f"{placement}_outcome"] = rec.outcome.value
            row[f"{placement}_loss_fraction"] = rec.loss_fraction
            if decoder is not None and rec.bytes:
                row[f"{placement}_decodable"] = bool(decoder(rec.bytes))
            if classify is not None and labels is not None and rec.bytes:
                ok = labels[name] in classify(rec.bytes)
                row[f"{placement}_correct"] = ok
                hits[placement] += ok
        if classify is not None and labels is not None:
            scored += 1
        rows.append(row)
    summary = {"images": len(rows), "n_drop": n_drop}
    if scored:
        summary["tail_accuracy"] = hits["tail"] / scored
        summary["inplace_accuracy"] = hits["inplace"] / scored
        summary["tail_minus_inplace"] = summary["tail_accuracy"] - summary["inplace_accuracy"]
    if decoder is not None:
        for placement in ("tail", "inplace"):
            key = f"{placement}_decodable"
            vals = [r[key] for r in rows if key in r]
            summary[f"{placement}_decodable_fraction"] = sum(vals) / len(vals) if vals else math.nan
    return {"summary": summary, "rows": rows}
