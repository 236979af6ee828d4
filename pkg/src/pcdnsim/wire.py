"""Datagram framing for the optional loopback harness.

The simulator passes typed messages in memory; these fixed little-endian
frames exist for running the transport over real sockets.

REQUEST frame: u8 type(1) | u64 session_id | u64 request_id | u32 path_id
               | u16 count | count * u64 packet_seq
DATA frame:    u8 type(2) | u64 session_id | u64 packet_seq
               | u32 payload_len | payload bytes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

REQUEST_TYPE = 1
DATA_TYPE = 2

_REQ_HEAD = struct.Struct("<BQQIH")
_DATA_HEAD = struct.Struct("<BQQI")


@dataclass(frozen=True)
class RequestFrame:
    session_id: int
    request_id: int
    path_id: int
    packet_seqs: tuple[int, ...]


@dataclass(frozen=True)
class DataFrame:
    session_id: int
    packet_seq: int
    payload: bytes


def encode_request(frame: RequestFrame) -> bytes:
    head = _REQ_HEAD.pack(REQUEST_TYPE, frame.session_id, frame.request_id,
                          frame.path_id, len(frame.packet_seqs))
    return head + struct.pack(f"<{len(frame.packet_seqs)}Q", *frame.packet_seqs)


def encode_data(frame: DataFrame) -> bytes:
    head = _DATA_HEAD.pack(DATA_TYPE, frame.session_id, frame.packet_seq, len(frame.payload))
    return head + frame.payload


def decode(buf: bytes):
    """Decode one frame; raises ValueError on malformed input."""
    if not buf:
        raise ValueError("empty frame")
    kind = buf[0]
    if kind == REQUEST_TYPE:
        if len(buf) < _REQ_HEAD.size:
            raise ValueError("short REQUEST frame")
        _, session_id, request_id, path_id, count = _REQ_HEAD.unpack_from(buf)
        need = _REQ_HEAD.size + 8 * count
        if len(buf) != need:
            raise ValueError(f"REQUEST frame length {len(buf)} != {need}")
        seqs = struct.unpack_from(f"<{count}Q", buf, _REQ_HEAD.size)
        return RequestFrame(session_id, request_id, path_id, seqs)
    if kind == DATA_TYPE:
        if len(buf) < _DATA_HEAD.size:
            raise ValueError("short DATA frame")
        _, session_id, packet_seq, length = _DATA_HEAD.unpack_from(buf)
        payload = buf[_DATA_HEAD.size:]
        if len(payload) != length:
            raise ValueError(f"DATA payload length {len(payload)} != {length}")
        return DataFrame(session_id, packet_seq, payload)
    raise ValueError(f"unknown frame type {kind}")
