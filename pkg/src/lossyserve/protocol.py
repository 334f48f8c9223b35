"""Wire format for image datagrams, results and cancels.

Every packet starts with a fixed 26-byte big-endian header::

    0-1   magic 0xD1AE
    2     version (1)
    3     msg_type (0 DATA, 1 RESULT, 2 CANCEL)
    4     flags: bit0 is_jpeg_header, bit1 is_last,
                 bit2 has_next_partition, bit3 recoverable
    5-8   request_id
    9-12  start_mcu
    13-16 end_mcu
    17-20 block_num
    21    partition_num
    22    partition_idx
    23    reserved (0)
    24-25 payload_len
    26..  payload

Block 0 carries the JPEG header (SOI through SOS); MCU blocks are numbered
from 1, so payloads concatenated in (block_num, partition_idx) order
reproduce the original file.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

from .errors import BadMagic, HeaderTooLarge, InvariantViolation, PayloadOverflow, UnsupportedVersion
from .jpeg import JpegImage, McuBlockPlan

MAGIC = 0xD1AE
VERSION = 1
HEADER_SIZE = 26
NO_MCU = 0xFFFFFFFF
DEFAULT_MTU_PAYLOAD = 1200

_FMT = struct.Struct(">HBBBIIIIBBBH")


class MsgType(enum.IntEnum):
    DATA = 0
    RESULT = 1
    CANCEL = 2


class Flags(enum.IntFlag):
    NONE = 0
    IS_JPEG_HEADER = 1
    IS_LAST = 2
    HAS_NEXT_PARTITION = 4
    RECOVERABLE = 8


@dataclass(frozen=True)
class PacketHeader:
    request_id: int
    msg_type: MsgType = MsgType.DATA
    flags: Flags = Flags.NONE
    start_mcu: int = 0
    end_mcu: int = 0
    block_num: int = 0
    partition_num: int = 1
    partition_idx: int = 0
    payload_len: int = 0
    magic: int = MAGIC
    version: int = VERSION

    @property
    def is_jpeg_header(self) -> bool:
        return bool(self.flags & Flags.IS_JPEG_HEADER)

    @property
    def is_last(self) -> bool:
        return bool(self.flags & Flags.IS_LAST)

    @property
    def has_next_partition(self) -> bool:
        return bool(self.flags & Flags.HAS_NEXT_PARTITION)

    @property
    def recoverable(self) -> bool:
        return bool(self.flags & Flags.RECOVERABLE)

    def check(self) -> None:
        """Raise InvariantViolation naming the first broken invariant."""
        if self.partition_num < 1:
            raise InvariantViolation("partition_num >= 1")
        if not self.partition_idx < self.partition_num:
            raise InvariantViolation("partition_idx < partition_num")
        if int(self.flags) & ~0x0F:
            raise InvariantViolation("flag bits 4-7 are zero")
        if self.is_jpeg_header:
            if self.msg_type != MsgType.DATA:
                raise InvariantViolation("is_jpeg_header only on DATA packets")
            if self.block_num != 0 or self.start_mcu != NO_MCU or self.end_mcu != NO_MCU:
                raise InvariantViolation("is_jpeg_header => block_num = 0 and MCU sentinels")
        elif self.msg_type == MsgType.DATA:
            if self.block_num == 0:
                raise InvariantViolation("block 0 is reserved for the JPEG header")
            if self.start_mcu > self.end_mcu:
                raise InvariantViolation("start_mcu <= end_mcu")
        if self.msg_type == MsgType.CANCEL and self.payload_len != 0:
            raise InvariantViolation("CANCEL carries no payload")
        for name, limit in (("request_id", 0xFFFFFFFF), ("start_mcu", 0xFFFFFFFF),
                            ("end_mcu", 0xFFFFFFFF), ("block_num", 0xFFFFFFFF),
                            ("partition_num", 0xFF), ("partition_idx", 0xFF),
                            ("payload_len", 0xFFFF)):
            value = getattr(self, name)
            if not 0 <= value <= limit:
                raise InvariantViolation(f"{name} fits its field width")


def encode_header(h: PacketHeader) -> bytes:
    if h.magic != MAGIC:
        raise BadMagic(f"magic 0x{h.magic:04X}")
    if h.version != VERSION:
        raise UnsupportedVersion(f"version {h.version}")
    h.check()
    return _FMT.pack(h.magic, h.version, int(h.msg_type), int(h.flags), h.request_id,
                     h.start_mcu, h.end_mcu, h.block_num, h.partition_num,
                     h.partition_idx, 0, h.payload_len)


def decode_header(buf: bytes) -> PacketHeader:
    if len(buf) < HEADER_SIZE:
        raise InvariantViolation(f"header needs {HEADER_SIZE} bytes, got {len(buf)}")
    (magic, version, msg_type, flags, rid, start, end, block, pnum, pidx,
     reserved, plen) = _FMT.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"magic 0x{magic:04X}")
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    if reserved != 0:
        raise InvariantViolation("reserved byte is zero")
    try:
        mt = MsgType(msg_type)
    except ValueError:
        raise InvariantViolation(f"msg_type {msg_type} is DATA, RESULT or CANCEL") from None
    h = PacketHeader(rid, mt, Flags(flags), start, end, block, pnum, pidx, plen)
    h.check()
    return h


def encode_packet(h: PacketHeader, payload: bytes = b"") -> bytes:
    if len(payload) != h.payload_len:
        raise InvariantViolation("payload_len matches payload")
    return encode_header(h) + bytes(payload)


def decode_packet(buf: bytes) -> tuple[PacketHeader, bytes]:
    h = decode_header(buf)
    payload = bytes(buf[HEADER_SIZE:HEADER_SIZE + h.payload_len])
    if len(payload) != h.payload_len:
        raise InvariantViolation("datagram shorter than payload_len")
    return h, payload


@dataclass
class RequestDatagramSet:
    request_id: int
    packets: list[tuple[PacketHeader, bytes]] = field(default_factory=list)

    def datagrams(self) -> list[bytes]:
        return [encode_packet(h, p) for h, p in self.packets]

    def reassemble(self) -> bytes:
        ordered = sorted(self.packets, key=lambda hp: (hp[0].block_num, hp[0].partition_idx))
        return b"".join(p for _, p in ordered)


def _split(data: bytes, mtu_payload: int) -> list[bytes]:
    n = max(1, math.ceil(len(data) / mtu_payload))
    return [data[i * mtu_payload:(i + 1) * mtu_payload] for i in range(n)]


def build_packets(img: JpegImage, plan: McuBlockPlan, request_id: int,
                  mtu_payload: int = DEFAULT_MTU_PAYLOAD) -> RequestDatagramSet:
    """Pack the JPEG header and each MCU block into as few datagrams as possible."""
    if mtu_payload < 64:
        raise PayloadOverflow("mtu_payload must be at least 64 bytes")
    if mtu_payload > 0xFFFF:
        raise PayloadOverflow("mtu_payload exceeds the 16-bit payload_len field")
    rec = Flags.RECOVERABLE if plan.recoverable else Flags.NONE
    out = RequestDatagramSet(request_id)

    header_parts = _split(img.raw_bytes[img.header_span[0]:img.header_span[1]], mtu_payload)
    if len(header_parts) > 255:
        raise HeaderTooLarge(f"JPEG header needs {len(header_parts)} partitions (max 255)")
    for i, part in enumerate(header_parts):
        flags = Flags.IS_JPEG_HEADER | rec
        if i < len(header_parts) - 1:
            flags |= Flags.HAS_NEXT_PARTITION
        out.packets.append((PacketHeader(request_id, MsgType.DATA, flags, NO_MCU, NO_MCU, 0,
                                         len(header_parts), i, len(part)), part))

    scan = img.scan_bytes
    for bno, block in enumerate(plan.blocks, start=1):
        lo, hi = block.byte_range
        data = scan[lo:hi]
        last_block = bno == len(plan.blocks)
        if last_block:
            data += img.trailer
        parts = _split(data, mtu_payload)
        if len(parts) > 255:
            raise PayloadOverflow(f"block {bno} needs {len(parts)} partitions (max 255)")
        for i, part in enumerate(parts):
            flags = rec
            if i < len(parts) - 1:
                flags |= Flags.HAS_NEXT_PARTITION
            elif last_block:
                flags |= Flags.IS_LAST
            out.packets.append((PacketHeader(request_id, MsgType.DATA, flags, block.start_mcu,
                                             block.end_mcu, bno, len(parts), i, len(part)), part))
    return out


def make_cancel(request_id: int) -> bytes:
    return encode_packet(PacketHeader(request_id, MsgType.CANCEL))


def make_result(request_id: int, answer, confidence: float) -> bytes:
    """RESULT payload: u8 label count, u32 labels, f64 confidence."""
    labels = [int(x) for x in answer]
    if len(labels) > 255:
        raise PayloadOverflow("at most 255 labels per result")
    if not 0.0 <= confidence <= 1.0:
        raise InvariantViolation("confidence lies in [0, 1]")
    payload = struct.pack(f">B{len(labels)}Id", len(labels), *labels, float(confidence))
    return encode_packet(PacketHeader(request_id, MsgType.RESULT, payload_len=len(payload)), payload)


def parse_result(payload: bytes) -> tuple[list[int], float]:
    if not payload:
        raise InvariantViolation("RESULT payload is empty")
    n = payload[0]
    if len(payload) != 1 + 4 * n + 8:
        raise InvariantViolation("RESULT payload length matches label count")
    *labels, conf = struct.unpack(f">B{n}Id", payload)[1:]
    return list(labels), conf
