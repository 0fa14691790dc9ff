"""Canonical field encoding and the bit-exact message codec.

Layout of every message: a 1-byte variant tag, then the fields in protocol
order.  Digests are 32 raw bytes, timestamps 4 bytes big-endian, and
variable-length fields (SerReq, identity strings) a 4-byte big-endian length
followed by the raw bytes.  SerReq is always the last payload field.

``accounted_bits`` counts protocol fields only: tag, length prefixes and
SerReq are transport framing and excluded.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import ClassVar

from .crypto import DIGEST_BITS, DIGEST_SIZE, TIMESTAMP_BITS, Digest, Timestamp
from .errors import MalformedMessage

_U32 = struct.Struct(">I")


# --- canonical hash-input fields ------------------------------------------

def ts(t: Timestamp) -> bytes:
    return _U32.pack(t)


def var(data: bytes | str) -> bytes:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return _U32.pack(len(data)) + data


def digest(d: Digest) -> bytes:
    if len(d) != DIGEST_SIZE:
        raise ValueError(f"digest field must be {DIGEST_SIZE} bytes, got {len(d)}")
    return d


# --- messages -------------------------------------------------------------

# field kinds: "d" digest, "t" timestamp, "v" variable-length bytes, "s" text
_KIND_BITS = {"d": DIGEST_BITS, "t": TIMESTAMP_BITS}


class Message:
    TAG: ClassVar[int]
    NAME: ClassVar[str]
    LAYOUT: ClassVar[tuple[str, ...]]
    # variable fields left out of the size accounting
    UNACCOUNTED: ClassVar[frozenset[str]] = frozenset()

    def values(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass(frozen=True)
class Msg1(Message):
    """Device -> ES: {SerReq, pid, M1, alpha, T_i}."""
    TAG = 0x01
    NAME = "Msg1"
    LAYOUT = ("d", "d", "d", "t", "v")
    UNACCOUNTED = frozenset({"ser_req"})
    pid: Digest
    m1: Digest
    alpha: Digest
    t: Timestamp
    ser_req: bytes = b""


@dataclass(frozen=True)
class Msg2(Message):
    """ES -> device, Case 1: {M2, beta, T_j}."""
    TAG = 0x02
    NAME = "Msg2"
    LAYOUT = ("d", "d", "t")
    m2: Digest
    beta: Digest
    t: Timestamp


@dataclass(frozen=True)
class Msg3(Message):
    """ES -> CS, Case 2: {SerReq, pid_jk, M3, theta, T_k}."""
    TAG = 0x03
    NAME = "Msg3"
    LAYOUT = ("d", "d", "d", "t", "v")
    UNACCOUNTED = frozenset({"ser_req"})
    pid: Digest
    m3: Digest
    theta: Digest
    t: Timestamp
    ser_req: bytes = b""


@dataclass(frozen=True)
class Msg4(Message):
    """CS -> ES: {M4, nu, T_l}."""
    TAG = 0x04
    NAME = "Msg4"
    LAYOUT = ("d", "d", "t")
    m4: Digest
    nu: Digest
    t: Timestamp


@dataclass(frozen=True)
class Msg5(Message):
    """ES -> device, Case 2: {M5, epsilon, T_m}."""
    TAG = 0x05
    NAME = "Msg5"
    LAYOUT = ("d", "d", "t")
    m5: Digest
    epsilon: Digest
    t: Timestamp


@dataclass(frozen=True)
class CsRegistration(Message):
    TAG = 0x10
    NAME = "CsRegistration"
    LAYOUT = ("s",)
    cid: str


@dataclass(frozen=True)
class EsRegistration(Message):
    """Target CS list is newline-joined into one variable field."""
    TAG = 0x11
    NAME = "EsRegistration"
    LAYOUT = ("s", "s")
    eid: str
    target_cs: str = ""


@dataclass(frozen=True)
class DeviceRegistration(Message):
    TAG = 0x12
    NAME = "DeviceRegistration"
    LAYOUT = ("s", "s", "d")
    uid: str
    device_id: str
    epw: Digest


MESSAGE_TYPES: dict[int, type[Message]] = {
    cls.TAG: cls
    for cls in (Msg1, Msg2, Msg3, Msg4, Msg5, CsRegistration, EsRegistration, DeviceRegistration)
}
AKA_TYPES = (Msg1, Msg2, Msg3, Msg4, Msg5)


def encode(msg: Message) -> bytes:
    out = [bytes([msg.TAG])]
    for kind, value in zip(msg.LAYOUT, msg.values()):
        if kind == "d":
            out.append(digest(value))
        elif kind == "t":
            out.append(ts(value))
        else:
            out.append(var(value))
    return b"".join(out)


def decode(data: bytes) -> Message:
    if not data:
        raise MalformedMessage("empty message")
    cls = MESSAGE_TYPES.get(data[0])
    if cls is None:
        raise MalformedMessage(f"unknown variant tag 0x{data[0]:02x}")
    pos = 1
    values = []
    for kind in cls.LAYOUT:
        if kind == "d":
            end = pos + DIGEST_SIZE
            if end > len(data):
                raise MalformedMessage(f"{cls.NAME}: truncated digest at offset {pos}")
            values.append(bytes(data[pos:end]))
        elif kind == "t":
            end = pos + 4
            if end > len(data):
                raise MalformedMessage(f"{cls.NAME}: truncated timestamp at offset {pos}")
            values.append(_U32.unpack_from(data, pos)[0])
        else:
            if pos + 4 > len(data):
                raise MalformedMessage(f"{cls.NAME}: truncated length prefix at offset {pos}")
            n = _U32.unpack_from(data, pos)[0]
            end = pos + 4 + n
            if end > len(data):
                raise MalformedMessage(f"{cls.NAME}: field length {n} overruns message")
            raw = bytes(data[pos + 4:end])
            if kind == "s":
                try:
                    values.append(raw.decode("utf-8"))
                except UnicodeDecodeError as e:
                    raise MalformedMessage(f"{cls.NAME}: identity is not utf-8") from e
            else:
                values.append(raw)
        pos = end
    if pos != len(data):
        raise MalformedMessage(f"{cls.NAME}: {len(data) - pos} trailing bytes")
    return cls(*values)


def accounted_bits(msg: Message) -> int:
    total = 0
    for f, kind in zip(fields(msg), msg.LAYOUT):
        if f.name in msg.UNACCOUNTED:
            continue
        if kind in _KIND_BITS:
            total += _KIND_BITS[kind]
        else:
            total += 8 * len(var(getattr(msg, f.name))) - 32
    return total


def field_spans(msg: Message) -> list[tuple[str, int, int]]:
    """(name, start, end) byte span of each field in ``encode(msg)``, tag first."""
    spans = [("tag", 0, 1)]
    pos = 1
    for f, kind in zip(fields(msg), msg.LAYOUT):
        if kind == "d":
            n = DIGEST_SIZE
        elif kind == "t":
            n = 4
        else:
            n = len(var(getattr(msg, f.name)))
        spans.append((f.name, pos, pos + n))
        pos += n
    return spans
