"""Master-follower wire protocol: fixed 31-byte checksummed datagrams.

Field layout (little endian): magic u16, version u8, msg_type u8,
seq u32, timestamp_us u64, translation_um i32, rotation_mdeg i32,
knob_mdeg i32, flags u8, crc16 u16 over the preceding 29 bytes.
Commands carry absolute setpoints so a lost datagram is healed by the
next one.
"""

import math
import struct
from dataclasses import dataclass, replace

from .errors import CorruptionError, FramingError, ProtocolError

MAGIC = 0xCA7E
VERSION = 1

MSG_COMMAND = 0
MSG_STATUS = 1
MSG_PING = 2
MSG_PONG = 3
_MSG_TYPES = (MSG_COMMAND, MSG_STATUS, MSG_PING, MSG_PONG)

FLAG_PEDAL = 0x01
FLAG_GRIPPER_A = 0x02
FLAG_GRIPPER_B = 0x04
FLAG_CLAMPED = 0x08

_HEADER = struct.Struct("<HBBIQiiiB")
_CRC = struct.Struct("<H")
FRAME_SIZE = _HEADER.size + _CRC.size  # 31 bytes

_I32_MIN, _I32_MAX = -(2 ** 31), 2 ** 31 - 1


def _crc16_table() -> tuple:
    # CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection.
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021 if crc & 0x8000 else crc << 1) & 0xFFFF
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _crc16_table()


def crc16(data: bytes) -> int:
    crc = 0xFFFF
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ byte]
    return crc


def quantize(value: float, scale: float) -> int:
    """Fixed-point conversion, half-up rounding."""
    q = math.floor(value * scale + 0.5)
    if not _I32_MIN <= q <= _I32_MAX:
        raise ProtocolError(f"value {value} overflows the wire field")
    return q


@dataclass(frozen=True)
class WireMessage:
    """One datagram's payload in engineering units."""

    msg_type: int
    seq: int
    timestamp_us: int = 0
    translation_um: int = 0
    rotation_mdeg: int = 0
    knob_mdeg: int = 0
    flags: int = 0

    def __post_init__(self):
        if self.msg_type not in _MSG_TYPES:
            raise ProtocolError(f"unknown msg_type {self.msg_type}")
        if not 0 <= self.seq <= 0xFFFFFFFF:
            raise ProtocolError(f"seq {self.seq} outside u32 range")
        if not 0 <= self.timestamp_us <= 0xFFFFFFFFFFFFFFFF:
            raise ProtocolError("timestamp outside u64 range")
        if not 0 <= self.flags <= 0xFF:
            raise ProtocolError(f"flags {self.flags} outside u8 range")
        for name in ("translation_um", "rotation_mdeg", "knob_mdeg"):
            v = getattr(self, name)
            if not _I32_MIN <= v <= _I32_MAX:
                raise ProtocolError(f"{name} {v} outside i32 range")

    @property
    def translation_mm(self) -> float:
        return self.translation_um / 1000.0

    @property
    def rotation_deg(self) -> float:
        return self.rotation_mdeg / 1000.0

    @property
    def knob_deg(self) -> float:
        return self.knob_mdeg / 1000.0

    def with_flags(self, flags: int) -> "WireMessage":
        return replace(self, flags=flags)


def command(
    seq: int,
    translation_mm: float,
    rotation_deg: float,
    knob_deg: float,
    flags: int = 0,
    timestamp_us: int = 0,
) -> WireMessage:
    return WireMessage(
        MSG_COMMAND, seq, timestamp_us,
        quantize(translation_mm, 1000.0),
        quantize(rotation_deg, 1000.0),
        quantize(knob_deg, 1000.0),
        flags,
    )


def status(
    seq: int,
    translation_mm: float,
    rotation_deg: float,
    knob_deg: float,
    flags: int = 0,
    timestamp_us: int = 0,
) -> WireMessage:
    return WireMessage(
        MSG_STATUS, seq, timestamp_us,
        quantize(translation_mm, 1000.0),
        quantize(rotation_deg, 1000.0),
        quantize(knob_deg, 1000.0),
        flags,
    )


def ping(seq: int, timestamp_us: int = 0) -> WireMessage:
    return WireMessage(MSG_PING, seq, timestamp_us)


def pong_for(ping_msg: WireMessage) -> WireMessage:
    """Echo reply carrying the ping's seq and timestamp."""
    if ping_msg.msg_type != MSG_PING:
        raise ProtocolError("pong_for expects a ping")
    return replace(ping_msg, msg_type=MSG_PONG)


def encode(msg: WireMessage) -> bytes:
    body = _HEADER.pack(
        MAGIC, VERSION, msg.msg_type, msg.seq, msg.timestamp_us,
        msg.translation_um, msg.rotation_mdeg, msg.knob_mdeg, msg.flags,
    )
    return body + _CRC.pack(crc16(body))


def decode(data: bytes) -> WireMessage:
    if len(data) != FRAME_SIZE:
        raise FramingError(
            f"expected {FRAME_SIZE} bytes, got {len(data)}"
        )
    body, crc_bytes = data[:_HEADER.size], data[_HEADER.size:]
    (received,) = _CRC.unpack(crc_bytes)
    if crc16(body) != received:
        raise CorruptionError("crc16 mismatch")
    magic, version, msg_type, seq, ts, t_um, r_mdeg, k_mdeg, flags = (
        _HEADER.unpack(body)
    )
    if magic != MAGIC:
        raise ProtocolError(f"bad magic 0x{magic:04X}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    return WireMessage(msg_type, seq, ts, t_um, r_mdeg, k_mdeg, flags)
