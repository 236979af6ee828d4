import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcdnsim import model
from pcdnsim.model import VideoCatalogEntry, chunk_video, compute_checksum, segment_video

MB = 1024 * 1024


def make_entry(duration_s, bitrate_bps=4_000_000, video_id="v0"):
    return VideoCatalogEntry.create(video_id, duration_s, bitrate_bps)


class TestSegmentVideo:
    def test_25s_video_10s_segments(self):
        segs = segment_video(make_entry(25.0), 10.0)
        assert [s.play_duration_s for s in segs] == [10.0, 10.0, 5.0]

    def test_zero_duration_empty(self):
        assert segment_video(make_entry(0.0), 10.0) == []

    def test_30s_three_equal(self):
        segs = segment_video(make_entry(30.0), 10.0)
        assert len(segs) == 3
        assert all(s.play_duration_s == 10.0 for s in segs)

    def test_byte_ranges_tile_and_align(self):
        entry = make_entry(25.0)
        segs = segment_video(entry, 10.0, packet_size=1200)
        assert segs[0].byte_range[0] == 0
        assert segs[-1].byte_range[1] == entry.size
        for a, b in zip(segs, segs[1:]):
            assert a.byte_range[1] == b.byte_range[0]
            assert a.byte_range[0] % 1200 == 0


class TestChunkVideo:
    def test_5mb_video(self):
        entry = VideoCatalogEntry("v", 10.0, 4_194_304, 5 * MB)
        sizes = [c.size for c in chunk_video(entry, 2 * MB)]
        assert sizes == [2 * MB, 2 * MB, 1 * MB]

    def test_exact_one_chunk(self):
        entry = VideoCatalogEntry("v", 4.0, 4_194_304, 2 * MB)
        assert len(chunk_video(entry, 2 * MB)) == 1

    def test_10s_at_4mbps(self):
        # oracle: bytes = bitrate * duration / 8
        expected_bytes = 4_000_000 * 10 // 8
        entry = make_entry(10.0, 4_000_000)
        assert entry.size == expected_bytes
        assert len(chunk_video(entry)) == math.ceil(expected_bytes / (2 * MB)) == 3


class TestChecksum:
    def test_deterministic(self):
        payload = model.gen_bytes(7, 0, 333)
        assert compute_checksum(payload) == compute_checksum(bytes(payload))

    def test_every_single_bit_flip_changes_digest(self):
        payload = bytearray(model.gen_bytes(99, 0, 64))
        base = compute_checksum(bytes(payload))
        for bit in range(64 * 8):
            flipped = bytearray(payload)
            flipped[bit // 8] ^= 1 << (bit % 8)
            assert compute_checksum(bytes(flipped)) != base, f"bit {bit}"

    def test_empty_payload_fixed_point(self):
        assert compute_checksum(b"") == compute_checksum(b"")
        assert compute_checksum(b"") != compute_checksum(b"\x00")


@settings(max_examples=60, deadline=None)
@given(
    duration=st.floats(min_value=0.5, max_value=600.0, allow_nan=False),
    bitrate=st.integers(min_value=100_000, max_value=10_000_000),
    seg_len=st.sampled_from([5.0, 10.0, 15.0]),
)
def test_tiling_invariants(duration, bitrate, seg_len):
    entry = VideoCatalogEntry.create("v", duration, bitrate)
    segs = segment_video(entry, seg_len)
    assert sum(s.play_duration_s for s in segs) == pytest.approx(entry.duration_s)
    assert sum(s.nbytes for s in segs) == entry.size
    chunks = chunk_video(entry)
    assert sum(c.size for c in chunks) == entry.size
    if chunks:
        assert all(c.size == model.DEFAULT_CHUNK_SIZE for c in chunks[:-1])


@settings(max_examples=40, deadline=None)
@given(size=st.integers(min_value=1, max_value=10_000_000))
def test_packet_mapping_bijection(size):
    ps = model.DEFAULT_PACKET_SIZE
    n = model.packet_count(size, ps)
    seen = set()
    for seq in sorted({0, n // 2, n - 1}):
        lo, hi = model.packet_byte_range(size, seq, ps)
        assert 0 <= lo < hi <= size
        key = model.packet_to_chunk(seq, ps)
        assert key not in seen
        seen.add(key)
    # full tiling
    total = sum(
        model.packet_byte_range(size, s, ps)[1] - model.packet_byte_range(size, s, ps)[0]
        for s in range(n)
    ) if n < 3000 else size
    assert total == size


def test_catalog_roundtrip(tmp_path):
    entries = [make_entry(25.0, video_id="a"), make_entry(60.0, 1_000_000, video_id="b")]
    p = tmp_path / "catalog.json"
    model.dump_catalog(entries, p)
    loaded = model.load_catalog(p)
    assert loaded == entries


def test_catalog_rejects_bad_record(tmp_path):
    p = tmp_path / "catalog.json"
    p.write_text('[{"video_id": "a", "duration_s": 10}]')
    with pytest.raises(ValueError, match="record 0"):
        model.load_catalog(p)


def test_video_bytes_slices_consistent():
    entry = make_entry(5.0, 1_000_000)
    whole = model.video_bytes(entry, 0, entry.size)
    assert model.video_bytes(entry, 1000, 500) == whole[1000:1500]
    assert model.chunk_payload(entry, 0) == whole[: min(entry.size, model.DEFAULT_CHUNK_SIZE)]
