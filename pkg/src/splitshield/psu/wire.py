"""Frame codec shared by every inter-party message.

Frame: 4-byte big-endian payload length, 1-byte tag, payload.
Element payloads: 2-byte big-endian count, then fixed-width big-endian elements.
Matrix payloads: 4-byte big-endian rows and cols, then little-endian float64, row-major.
"""
from __future__ import annotations

import enum
import struct

import numpy as np

from ..errors import ProtocolError

HEADER = struct.Struct(">IB")
MAX_ELEMENTS = 0xFFFF


class Tag(enum.IntEnum):
    ROUND_1A = 0x01  # I_a^{s1}, active -> passive
    ROUND_1B = 0x02  # I_a^{s1 t1}, passive -> active
    ROUND_1C = 0x03  # I_p^{t1}, passive -> active
    ROUND_1D = 0x04  # I_p^{s1 t1}, active -> passive
    ROUND_2A = 0x05  # union^{s1 s2 s3 t1}, active -> passive
    ROUND_2B = 0x06  # union^{s1 s2 s3 t1 t2 t3}, passive -> active
    HASH_REQ_A = 0x07  # x^{s2} for the active party's ids
    HASH_RESP_A = 0x08
    HASH_REQ_P = 0x09  # x^{t2} for the passive party's ids
    HASH_RESP_P = 0x0A
    DONE = 0x0B
    EMBEDDINGS = 0x10
    GRADIENTS = 0x11


def frame(tag: int, payload: bytes) -> bytes:
    return HEADER.pack(len(payload), int(tag)) + payload


def unframe(data: bytes) -> tuple[Tag, bytes]:
    if len(data) < HEADER.size:
        raise ProtocolError("truncated frame header")
    n, tag = HEADER.unpack_from(data)
    payload = data[HEADER.size:]
    if len(payload) != n:
        raise ProtocolError(f"frame length {n} but {len(payload)} payload bytes")
    try:
        return Tag(tag), payload
    except ValueError:
        raise ProtocolError(f"unknown tag {tag:#x}") from None


def encode_elements(elements, width: int) -> bytes:
    if len(elements) > MAX_ELEMENTS:
        raise ValueError("too many elements for one message")
    return struct.pack(">H", len(elements)) + b"".join(int(x).to_bytes(width, "big") for x in elements)


def decode_elements(payload: bytes, width: int) -> list:
    if len(payload) < 2:
        raise ProtocolError("truncated element payload")
    (count,) = struct.unpack_from(">H", payload)
    body = payload[2:]
    if len(body) != count * width:
        raise ProtocolError(f"expected {count} elements of {width} bytes, got {len(body)} bytes")
    return [int.from_bytes(body[i * width:(i + 1) * width], "big") for i in range(count)]


def encode_matrix(M) -> bytes:
    M = np.ascontiguousarray(M, dtype="<f8")
    if M.ndim != 2:
        raise ValueError("matrix payload must be 2-D")
    return struct.pack(">II", *M.shape) + M.tobytes()


def decode_matrix(payload: bytes) -> np.ndarray:
    if len(payload) < 8:
        raise ProtocolError("truncated matrix payload")
    rows, cols = struct.unpack_from(">II", payload)
    body = payload[8:]
    if len(body) != rows * cols * 8:
        raise ProtocolError("matrix payload size mismatch")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(float)
