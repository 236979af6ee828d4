"""Content domain model: videos, fixed-duration segments, fixed-size chunks,
MTU-sized packets, and the arithmetic that maps between them.

Video payload bytes are synthetic: a deterministic stream derived from the
video id, so any byte range can be materialized (and re-materialized) on
demand without storing it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from pcdnsim._kernels import digest64, gen_bytes

DEFAULT_SEGMENT_LEN_S = 10.0
DEFAULT_CHUNK_SIZE = 2 * 1024 * 1024
DEFAULT_PACKET_SIZE = 1200


class Network(Enum):
    CDN = "cdn"
    PCDN = "pcdn"


@dataclass(frozen=True)
class VideoCatalogEntry:
    video_id: str
    duration_s: float
    bitrate_bps: int
    size: int  # bytes, duration * bitrate / 8

    def __post_init__(self):
        if self.duration_s < 0:
            raise ValueError("duration_s must be >= 0")
        if self.bitrate_bps <= 0:
            raise ValueError("bitrate_bps must be > 0")

    @classmethod
    def create(cls, video_id: str, duration_s: float, bitrate_bps: int) -> "VideoCatalogEntry":
        size = int(round(duration_s * bitrate_bps / 8.0))
        return cls(video_id, duration_s, bitrate_bps, size)

    @property
    def content_seed(self) -> int:
        return digest64(self.video_id.encode())


@dataclass
class Segment:
    video_id: str
    index: int
    play_duration_s: float
    byte_range: tuple[int, int]  # [start, end)
    network_mark: Optional[Network] = None  # assigned when the download starts

    @property
    def nbytes(self) -> int:
        return self.byte_range[1] - self.byte_range[0]


@dataclass(frozen=True)
class Chunk:
    video_id: str
    seq: int
    size: int
    checksum: Optional[int] = None


@dataclass(frozen=True)
class Packet:
    video_id: str
    packet_seq: int
    payload_size: int
    payload: Optional[bytes] = None


def segment_video(
    entry: VideoCatalogEntry,
    segment_len_s: float = DEFAULT_SEGMENT_LEN_S,
    packet_size: int = DEFAULT_PACKET_SIZE,
) -> list[Segment]:
    """Tile the video into equal play-duration segments (last one shorter).

    Byte boundaries are rounded to packet-size multiples so a segment's byte
    range maps onto whole packets.
    """
    if segment_len_s <= 0:
        raise ValueError("segment_len_s must be > 0")
    if entry.duration_s == 0:
        return []
    count = math.ceil(entry.duration_s / segment_len_s)
    bounds = [0]
    for i in range(1, count):
        raw = entry.size * (i * segment_len_s) / entry.duration_s
        b = int(round(raw / packet_size)) * packet_size
        bounds.append(min(max(b, bounds[-1]), entry.size))
    bounds.append(entry.size)
    segments = []
    for i in range(count):
        dur = segment_len_s if i < count - 1 else entry.duration_s - segment_len_s * (count - 1)
        segments.append(Segment(entry.video_id, i, dur, (bounds[i], bounds[i + 1])))
    return segments


def chunk_video(entry: VideoCatalogEntry, chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[Chunk]:
    """Tile the video bytes into fixed-size chunks; the last carries the remainder."""
    if chunk_size <= 0:
        raise ValueError("chunk_size must be > 0")
    chunks = []
    for seq in range(math.ceil(entry.size / chunk_size)):
        size = min(chunk_size, entry.size - seq * chunk_size)
        chunks.append(Chunk(entry.video_id, seq, size))
    return chunks


def compute_checksum(payload) -> int:
    return digest64(payload)


def video_bytes(entry: VideoCatalogEntry, offset: int, length: int) -> bytes:
    """Materialize the synthetic payload for [offset, offset+length)."""
    if offset < 0 or offset + length > entry.size:
        raise ValueError("byte range outside video")
    return gen_bytes(entry.content_seed, offset, length)


def chunk_payload(entry: VideoCatalogEntry, chunk_seq: int, chunk_size: int = DEFAULT_CHUNK_SIZE) -> bytes:
    start = chunk_seq * chunk_size
    return video_bytes(entry, start, min(chunk_size, entry.size - start))


def chunk_checksums(entry: VideoCatalogEntry, chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[Chunk]:
    return [
        Chunk(entry.video_id, c.seq, c.size, compute_checksum(chunk_payload(entry, c.seq, chunk_size)))
        for c in chunk_video(entry, chunk_size)
    ]


# --- packet arithmetic -----------------------------------------------------

def packet_count(size: int, packet_size: int = DEFAULT_PACKET_SIZE) -> int:
    return math.ceil(size / packet_size)


def packet_byte_range(size: int, seq: int, packet_size: int = DEFAULT_PACKET_SIZE) -> tuple[int, int]:
    if seq < 0 or seq >= packet_count(size, packet_size):
        raise ValueError("packet_seq out of range")
    start = seq * packet_size
    return start, min(start + packet_size, size)


def packet_to_chunk(seq: int, packet_size: int = DEFAULT_PACKET_SIZE, chunk_size: int = DEFAULT_CHUNK_SIZE) -> tuple[int, int]:
    """Map a packet to the (chunk, offset-within-chunk) of its first byte."""
    start = seq * packet_size
    return start // chunk_size, start % chunk_size

def seq_range_for_byte_range(byte_range: tuple[int, int], packet_size: int = DEFAULT_PACKET_SIZE) -> tuple[int, int]:
    """Packet seq interval [lo, hi) covering a packet-aligned byte range."""
    start, end = byte_range
    if start % packet_size:
        raise ValueError("byte range start not packet aligned")
    return start // packet_size, math.ceil(end / packet_size)


# --- catalog file ----------------------------------------------------------

def load_catalog(path) -> list[VideoCatalogEntry]:
    """Catalog file: JSON array of {video_id, duration_s, bitrate_bps}."""
    with open(path) as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise ValueError("catalog file must hold a JSON array")
    out = []
    for i, rec in enumerate(records):
        try:
            out.append(VideoCatalogEntry.create(str(rec["video_id"]), float(rec["duration_s"]), int(rec["bitrate_bps"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"catalog record {i}: {exc}") from exc
    return out


def dump_catalog(entries, path) -> None:
    records = [
        {"video_id": e.video_id, "duration_s": e.duration_s, "bitrate_bps": e.bitrate_bps}
        for e in entries
    ]
    with open(path, "w") as fh:
        json.dump(records, fh, indent=2)
