"""Exception hierarchy shared by all modules.

Every error raised on bad *input* derives from :class:`LossyServeError`; the
CLI maps those to exit code 1.  Anything else escaping is treated as an
internal failure.
"""


class LossyServeError(Exception):
    """Base class for input-caused failures."""


class JpegError(LossyServeError):
    def __init__(self, marker, offset, detail=""):
        self.marker = marker
        self.offset = offset
        self.detail = detail
        msg = f"{marker} at byte {offset}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NotBaseline(JpegError):
    """Progressive, arithmetic-coded, lossless or multi-scan image."""


class TruncatedFile(JpegError):
    pass


class MalformedMarker(JpegError):
    pass


class CorruptScan(LossyServeError):
    def __init__(self, bit_offset, mcu_index, detail="invalid Huffman code"):
        self.bit_offset = bit_offset
        self.mcu_index = mcu_index
        super().__init__(f"{detail} at scan bit {bit_offset}, MCU {mcu_index}")


class MissingTable(LossyServeError):
    pass


class PacketError(LossyServeError):
    pass


class BadMagic(PacketError):
    pass


class UnsupportedVersion(PacketError):
    pass


class InvariantViolation(PacketError):
    pass


class HeaderTooLarge(PacketError):
    pass


class PayloadOverflow(PacketError):
    pass


class StaleRequest(LossyServeError):
    pass


class EmptyTrace(LossyServeError):
    pass


class UnsatisfiableRequirement(LossyServeError):
    pass


class TraceError(LossyServeError):
    pass


class IdMismatch(TraceError):
    pass


class ShortVector(TraceError):
    pass


class TraceMiss(LossyServeError):
    pass


class ConfigInvalid(LossyServeError):
    pass
