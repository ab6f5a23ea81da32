"""Field-bus frame codecs and the tappable virtual bus.

Implements byte-exact encode/decode for the four transports the range
simulates, with typed decode errors (never exceptions from malformed bytes
other than DecodeError subclasses):

Modbus RTU   | addr(1) func(1) data(0..252) crc16(2, little-endian)
             | CRC-16/MODBUS: init 0xFFFF, reflected poly 0xA001, no final xor
Modbus TCP   | MBAP header: txid(2 BE) proto(2 BE, =0) length(2 BE) unit(1),
             | then func(1) data; length counts unit+func+data
BACnet/IP    | WriteProperty (confirmed service 15) on an AnalogValue
             | present-value (property 85) carrying one IEEE-754 single:
             |   81 0a LL LL | 01 04 | 00 05 II 0f |
             |   0c TTTTTTTT | 19 55 | 3e 44 FFFFFFFF 3f
             | (BVLC original-unicast, NPDU v1 expecting-reply, context tags)
DALI         | forward frame: address(1) data(1); even address = direct arc
             | power (DAPC), 0xFE = broadcast DAPC, level 0..254, 255 = MASK

All decoders are total over arbitrary byte strings up to 64 KiB.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from typing import Callable, Union

from .errors import CeaRangeError, ConfigError

MAX_FRAME_BYTES = 64 * 1024

BACNET_OBJECT_ANALOG_VALUE = 2
BACNET_PROPERTY_PRESENT_VALUE = 85
BACNET_SERVICE_WRITE_PROPERTY = 15
BACNET_MAX_INSTANCE = (1 << 22) - 1

DALI_BROADCAST_DAPC = 0xFE
DALI_LEVEL_MAX = 254
DALI_MASK = 255


class DecodeError(CeaRangeError):
    """Base for all decode failures; carries the offending field name."""

    kind = "decode-error"

    def __init__(self, field: str, message: str = ""):
        super().__init__(message or f"{self.kind}: {field}")
        self.field = field


class TruncatedFrame(DecodeError):
    kind = "truncated"


class BadLength(DecodeError):
    kind = "bad-length"


class BadCrc(DecodeError):
    kind = "bad-crc"


class UnsupportedService(DecodeError):
    kind = "unsupported-service"


class InvalidField(DecodeError):
    kind = "invalid-field"


def _check_size(data: bytes) -> None:
    if len(data) > MAX_FRAME_BYTES:
        raise BadLength("frame", f"frame exceeds {MAX_FRAME_BYTES} bytes")


# --------------------------------------------------------------------------
# CRC-16/MODBUS
# --------------------------------------------------------------------------


def crc16_modbus(data: bytes) -> int:
    """CRC-16/MODBUS: init 0xFFFF, reflected polynomial 0xA001.

    Empty input returns the initial value 0xFFFF.
    """
    crc = 0xFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ 0xA001
            else:
                crc >>= 1
    return crc


# --------------------------------------------------------------------------
# Modbus RTU
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModbusRtuFrame:
    address: int
    function: int
    data: bytes

    def __post_init__(self) -> None:
        if not (0 <= self.address <= 0xFF):
            raise ConfigError("RTU address must fit one byte")
        if not (0 <= self.function <= 0xFF):
            raise ConfigError("RTU function must fit one byte")
        if len(self.data) > 252:
            raise ConfigError("RTU data must be at most 252 bytes")


def encode_modbus_rtu(frame: ModbusRtuFrame) -> bytes:
    body = bytes([frame.address, frame.function]) + frame.data
    return body + struct.pack("<H", crc16_modbus(body))


def decode_modbus_rtu(raw: bytes) -> ModbusRtuFrame:
    _check_size(raw)
    if len(raw) < 4:
        raise TruncatedFrame("frame", f"RTU frame needs >= 4 bytes, got {len(raw)}")
    if len(raw) > 256:
        raise BadLength("frame", "RTU frame longer than 256 bytes")
    body, crc_bytes = raw[:-2], raw[-2:]
    (crc_wire,) = struct.unpack("<H", crc_bytes)
    crc_calc = crc16_modbus(body)
    if crc_wire != crc_calc:
        raise BadCrc("crc", f"crc {crc_wire:#06x} != computed {crc_calc:#06x}")
    return ModbusRtuFrame(address=body[0], function=body[1], data=body[2:])


# --------------------------------------------------------------------------
# Modbus TCP
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModbusTcpFrame:
    transaction_id: int
    unit_id: int
    function: int
    data: bytes

    def __post_init__(self) -> None:
        if not (0 <= self.transaction_id <= 0xFFFF):
            raise ConfigError("transaction id must fit two bytes")
        if not (0 <= self.unit_id <= 0xFF):
            raise ConfigError("unit id must fit one byte")
        if not (0 <= self.function <= 0xFF):
            raise ConfigError("function must fit one byte")
        if len(self.data) > 65531:
            raise ConfigError("TCP data too long for the MBAP length field")


def encode_modbus_tcp(frame: ModbusTcpFrame) -> bytes:
    length = 2 + len(frame.data)  # unit id + function + data
    header = struct.pack(">HHHB", frame.transaction_id, 0, length, frame.unit_id)
    return header + bytes([frame.function]) + frame.data


def decode_modbus_tcp(raw: bytes) -> ModbusTcpFrame:
    _check_size(raw)
    if len(raw) < 8:
        raise TruncatedFrame("mbap", f"MBAP + function needs >= 8 bytes, got {len(raw)}")
    txid, proto, length, unit = struct.unpack(">HHHB", raw[:7])
    if proto != 0:
        raise InvalidField("protocol-id", f"protocol id must be 0, got {proto}")
    if length < 2:
        raise BadLength("length", f"MBAP length {length} cannot cover unit id + function")
    if len(raw) != 6 + length:
        raise BadLength(
            "length", f"MBAP length {length} implies {6 + length} bytes, frame has {len(raw)}"
        )
    return ModbusTcpFrame(transaction_id=txid, unit_id=unit, function=raw[7], data=raw[8:])


# --------------------------------------------------------------------------
# BACnet/IP WriteProperty subset
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BacnetWritePropertyFrame:
    invoke_id: int
    object_type: int
    instance: int
    property_id: int
    value: float

    def __post_init__(self) -> None:
        if not (0 <= self.invoke_id <= 0xFF):
            raise ConfigError("invoke id must fit one byte")
        if self.object_type != BACNET_OBJECT_ANALOG_VALUE:
            raise ConfigError("only AnalogValue objects are supported")
        if not (0 <= self.instance <= BACNET_MAX_INSTANCE):
            raise ConfigError("instance must fit 22 bits")
        if self.property_id != BACNET_PROPERTY_PRESENT_VALUE:
            raise ConfigError("only present-value writes are supported")


_BVLC_TYPE = 0x81
_BVLC_ORIGINAL_UNICAST = 0x0A
_NPDU_VERSION = 0x01
_NPDU_EXPECTING_REPLY = 0x04
_APDU_CONFIRMED_REQUEST = 0x00
_APDU_MAX_SIZE_CODE = 0x05
_TAG_OBJECT_ID = 0x0C  # context 0, length 4
_TAG_PROPERTY_ID = 0x19  # context 1, length 1
_TAG_OPENING_3 = 0x3E
_TAG_CLOSING_3 = 0x3F
_TAG_REAL = 0x44  # application tag 4, length 4


def encode_bacnet_write(frame: BacnetWritePropertyFrame) -> bytes:
    object_word = (frame.object_type << 22) | frame.instance
    service = (
        bytes([_TAG_OBJECT_ID])
        + struct.pack(">I", object_word)
        + bytes([_TAG_PROPERTY_ID, frame.property_id])
        + bytes([_TAG_OPENING_3, _TAG_REAL])
        + struct.pack(">f", frame.value)
        + bytes([_TAG_CLOSING_3])
    )
    apdu = (
        bytes(
            [
                _APDU_CONFIRMED_REQUEST,
                _APDU_MAX_SIZE_CODE,
                frame.invoke_id,
                BACNET_SERVICE_WRITE_PROPERTY,
            ]
        )
        + service
    )
    npdu = bytes([_NPDU_VERSION, _NPDU_EXPECTING_REPLY])
    total = 4 + len(npdu) + len(apdu)
    bvlc = bytes([_BVLC_TYPE, _BVLC_ORIGINAL_UNICAST]) + struct.pack(">H", total)
    return bvlc + npdu + apdu


def decode_bacnet_write(raw: bytes) -> BacnetWritePropertyFrame:
    _check_size(raw)
    if len(raw) < 4:
        raise TruncatedFrame("bvlc", "frame shorter than a BVLC header")
    if raw[0] != _BVLC_TYPE:
        raise InvalidField("bvlc-type", f"BVLC type must be 0x81, got {raw[0]:#04x}")
    if raw[1] != _BVLC_ORIGINAL_UNICAST:
        raise UnsupportedService(
            "bvlc-function", f"only original-unicast (0x0a) supported, got {raw[1]:#04x}"
        )
    (declared,) = struct.unpack(">H", raw[2:4])
    if declared != len(raw):
        raise BadLength("bvlc-length", f"BVLC length {declared} != frame length {len(raw)}")
    if len(raw) < 6:
        raise TruncatedFrame("npdu", "frame ends inside the NPDU")
    if raw[4] != _NPDU_VERSION:
        raise InvalidField("npdu-version", f"NPDU version must be 0x01, got {raw[4]:#04x}")
    if raw[5] != _NPDU_EXPECTING_REPLY:
        raise InvalidField("npdu-control", f"unsupported NPDU control {raw[5]:#04x}")
    apdu = raw[6:]
    if len(apdu) < 4:
        raise TruncatedFrame("apdu", "frame ends inside the APDU header")
    if apdu[0] != _APDU_CONFIRMED_REQUEST:
        raise UnsupportedService("apdu-type", f"only confirmed requests supported, got {apdu[0]:#04x}")
    if apdu[1] != _APDU_MAX_SIZE_CODE:
        raise InvalidField("apdu-max-size", f"unexpected max-size byte {apdu[1]:#04x}")
    invoke_id = apdu[2]
    if apdu[3] != BACNET_SERVICE_WRITE_PROPERTY:
        raise UnsupportedService("service-choice", f"service {apdu[3]} is not WriteProperty (15)")
    service = apdu[4:]
    if len(service) != 14:
        raise BadLength("service", f"WriteProperty body must be 14 bytes, got {len(service)}")
    if service[0] != _TAG_OBJECT_ID:
        raise InvalidField("object-tag", f"expected context tag 0x0c, got {service[0]:#04x}")
    (object_word,) = struct.unpack(">I", service[1:5])
    object_type = object_word >> 22
    instance = object_word & BACNET_MAX_INSTANCE
    if object_type != BACNET_OBJECT_ANALOG_VALUE:
        raise UnsupportedService("object-type", f"object type {object_type} is not AnalogValue (2)")
    if service[5] != _TAG_PROPERTY_ID:
        raise InvalidField("property-tag", f"expected context tag 0x19, got {service[5]:#04x}")
    property_id = service[6]
    if property_id != BACNET_PROPERTY_PRESENT_VALUE:
        raise UnsupportedService("property-id", f"property {property_id} is not present-value (85)")
    if service[7] != _TAG_OPENING_3 or service[8] != _TAG_REAL or service[13] != _TAG_CLOSING_3:
        raise InvalidField("value-tags", "property value must be a context-3 wrapped Real")
    (value,) = struct.unpack(">f", service[9:13])
    return BacnetWritePropertyFrame(
        invoke_id=invoke_id,
        object_type=object_type,
        instance=instance,
        property_id=property_id,
        value=value,
    )


# --------------------------------------------------------------------------
# DALI forward frames
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DaliForwardFrame:
    address_byte: int
    data_byte: int

    def __post_init__(self) -> None:
        if not (0 <= self.address_byte <= 0xFF):
            raise ConfigError("DALI address byte must fit one byte")
        if not (0 <= self.data_byte <= 0xFF):
            raise ConfigError("DALI data byte must fit one byte")

    @property
    def is_dapc(self) -> bool:
        """Even address byte selects a direct-arc-power command."""
        return self.address_byte % 2 == 0

    @property
    def level(self) -> int:
        return self.data_byte

    @classmethod
    def broadcast_dapc(cls, level: int) -> "DaliForwardFrame":
        if not (0 <= level <= DALI_LEVEL_MAX):
            raise ConfigError(f"DAPC level must be in [0, {DALI_LEVEL_MAX}]")
        return cls(DALI_BROADCAST_DAPC, level)


def encode_dali(frame: DaliForwardFrame) -> bytes:
    return bytes([frame.address_byte, frame.data_byte])


def decode_dali(raw: bytes) -> DaliForwardFrame:
    _check_size(raw)
    if len(raw) < 2:
        raise TruncatedFrame("frame", f"DALI forward frame needs 2 bytes, got {len(raw)}")
    if len(raw) > 2:
        raise BadLength("frame", f"DALI forward frame must be exactly 2 bytes, got {len(raw)}")
    return DaliForwardFrame(address_byte=raw[0], data_byte=raw[1])


Frame = Union[ModbusRtuFrame, ModbusTcpFrame, BacnetWritePropertyFrame, DaliForwardFrame]

_CODECS: dict[str, tuple[Callable[..., bytes], Callable[[bytes], Frame]]] = {
    "modbus-rtu": (encode_modbus_rtu, decode_modbus_rtu),
    "modbus-tcp": (encode_modbus_tcp, decode_modbus_tcp),
    "bacnet": (encode_bacnet_write, decode_bacnet_write),
    "dali": (encode_dali, decode_dali),
}


def protocol_names() -> tuple[str, ...]:
    return tuple(_CODECS)


def encode_frame(protocol: str, frame: Frame) -> bytes:
    if protocol not in _CODECS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    return _CODECS[protocol][0](frame)


def decode_frame(protocol: str, raw: bytes) -> Frame:
    if protocol not in _CODECS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    return _CODECS[protocol][1](raw)


# --------------------------------------------------------------------------
# Virtual bus with ordered taps
# --------------------------------------------------------------------------


@dataclass
class BusTap:
    """An attacker (or instrumentation) hook on one bus channel.

    Transforms: "pass", "drop", "replace" (fixed value/frame; a numeric
    replacement may ramp like a bias), "bias" (analog offset, optionally
    ramping linearly from the window start).
    Active only inside [start_s, end_s); every delivery the tap changes is
    event-logged by the bus with the tap id.
    """

    tap_id: str
    channel: str
    transform: str = "pass"
    start_s: float = 0.0
    end_s: float = float("inf")
    offset: float = 0.0
    ramp_per_s: float = 0.0
    replacement: object = None
    step_s: float = 0.0  # quantize ramp growth to multiples of this period
    _match: Callable[[object], bool] | None = dc_field(default=None, repr=False)

    VALID_TRANSFORMS = ("pass", "drop", "replace", "bias")

    def __post_init__(self) -> None:
        if self.transform not in self.VALID_TRANSFORMS:
            raise ConfigError(f"unknown tap transform {self.transform!r}")
        if self.end_s < self.start_s:
            raise ConfigError("tap window end must be >= start")

    def active(self, t: float) -> bool:
        return self.start_s <= t < self.end_s

    def bias_at(self, t: float) -> float:
        elapsed = t - self.start_s
        if self.step_s > 0:
            elapsed = (elapsed // self.step_s) * self.step_s
        return self.offset + self.ramp_per_s * elapsed

    def apply(self, value: object, t: float) -> tuple[object | None, bool]:
        """Returns (delivered value or None when dropped, changed?)."""
        if not self.active(t):
            return value, False
        if self._match is not None and not self._match(value):
            return value, False
        if self.transform == "pass":
            return value, False
        if self.transform == "drop":
            return None, True
        if self.transform == "replace":
            if self.ramp_per_s != 0.0 and isinstance(self.replacement, (int, float)):
                return float(self.replacement) + self.bias_at(t) - self.offset, True
            return self.replacement, True
        bias = self.bias_at(t)
        if bias == 0.0:
            return value, False
        return float(value) + bias, True


class VirtualBus:
    """Ordered tap pipeline over named channels (analog points and fieldbuses)."""

    def __init__(self, log=None):
        self._taps: list[BusTap] = []
        self.log = log

    def add_tap(self, tap: BusTap) -> None:
        self._taps.append(tap)

    def taps_for(self, channel: str) -> list[BusTap]:
        return [tap for tap in self._taps if tap.channel == channel]

    def transmit(self, channel: str, value: object, t: float) -> object | None:
        """Pass a value through the channel's taps in registration order.

        Returns None when a tap drops the delivery.  Transformations are
        event-logged with the tap id when a log is attached.
        """
        current: object | None = value
        for tap in self._taps:
            if tap.channel != channel or current is None:
                continue
            current, changed = tap.apply(current, t)
            if changed and self.log is not None:
                payload = {
                    "tap_id": tap.tap_id,
                    "channel": channel,
                    "transform": tap.transform,
                }
                if tap.transform == "bias":
                    payload["bias"] = round(tap.bias_at(t), 9)
                self.log.append(t, "bus", "tap-transform", payload)
        return current
