import pytest

from pcdnsim import model
from pcdnsim.peer import ChunkStore, CrashPoint, PeerServer, recover
from pcdnsim.transport import DataRequest, ReadStatus, serve_request

S = 1_000_000
CHUNK = 12_000  # small chunks keep test videos multi-chunk but cheap
PACKET = 1200


def make_catalog(*specs):
    # specs: (video_id, nbytes)
    catalog = {}
    for vid, nbytes in specs:
        catalog[vid] = model.VideoCatalogEntry(vid, nbytes / 125_000, 1_000_000, nbytes)
    return catalog


def make_peer(capacity, *video_specs, **kw):
    catalog = make_catalog(*video_specs)
    return PeerServer("p0", "north", "v1", "cone", capacity, 10_000_000,
                      catalog, chunk_size=CHUNK, **kw)


def ingest_all(peer, video_id, now=0):
    op = peer.begin_ingest(video_id, "cdn", now)
    assert op is not None, f"ingest refused for {video_id}"
    while not op.done:
        peer.ingest_step()
    return op


class TestChunkStore:
    def test_capacity_enforced(self):
        store = ChunkStore(10_000)
        store.put("a", 0, 8_000, 1)
        with pytest.raises(ValueError):
            store.put("b", 0, 8_000, 2)

    def test_snapshot_roundtrip(self):
        store = ChunkStore(50_000)
        store.put("a", 0, 12_000, 111)
        store.put("a", 1, 4_000, 222)
        clone = ChunkStore.from_snapshot(store.to_snapshot())
        assert clone.to_snapshot() == store.to_snapshot()
        assert clone.used == store.used


class TestChooseVictims:
    def test_free_space_no_victims(self):
        peer = make_peer(100_000, ("a", 30_000))
        ingest_all(peer, "a")
        assert peer.choose_victims(40_000, now=0) == []

    def test_class_order_transit_freq_tier(self):
        peer = make_peer(62_000, ("idle", 30_000), ("busy", 30_000), ("new", 30_000))
        ingest_all(peer, "idle")
        ingest_all(peer, "busy")
        now = 10 * S
        peer.session_opened("busy", now)      # in transit + popular
        peer.note_served("busy", 1000, now)   # cached tier
        victims = peer.choose_victims(30_000, now)
        assert victims == ["idle"]

    def test_size_similarity_prefers_closest(self):
        peer = make_peer(400_000, ("small", 90_000), ("big", 300_000), ("inc", 100_000))
        ingest_all(peer, "small")
        ingest_all(peer, "big")
        victims = peer.choose_victims(100_000, now=0, exclude=("inc",))
        assert victims[0] == "small"          # 90k is closest to 100k
        assert sum(peer.store.video_bytes_used(v) for v in victims) >= 100_000 - peer.store.free_space()

    def test_reject_when_only_transit_content_left(self):
        peer = make_peer(31_000, ("only", 30_000))
        ingest_all(peer, "only")
        peer.session_opened("only", 0)
        assert peer.choose_victims(30_000, now=0) is None

    def test_oversized_video_rejected(self):
        peer = make_peer(20_000, ("a", 10_000))
        assert peer.choose_victims(50_000, now=0) is None


class TestIngest:
    def test_clean_ingest_stores_all_chunks(self):
        peer = make_peer(100_000, ("a", 30_000))
        ingest_all(peer, "a")
        assert peer.holds_video("a")
        entry = peer.catalog["a"]
        want = model.chunk_video(entry, CHUNK)
        assert peer.store.video_chunks("a") == [c.seq for c in want]
        assert peer.journal_text is None

    def test_ingest_checksums_verify(self):
        peer = make_peer(100_000, ("a", 30_000))
        ingest_all(peer, "a")
        entry = peer.catalog["a"]
        for c in model.chunk_video(entry, CHUNK):
            rec = peer.store.chunks[("a", c.seq)]
            assert rec.checksum == model.compute_checksum(model.chunk_payload(entry, c.seq, CHUNK))

    def test_refused_while_another_in_progress(self):
        peer = make_peer(100_000, ("a", 30_000), ("b", 30_000))
        op = peer.begin_ingest("a", "cdn", 0)
        assert op is not None
        assert peer.begin_ingest("b", "cdn", 0) is None

    def test_abort_rolls_back(self):
        peer = make_peer(62_000, ("old", 30_000), ("new", 60_000))
        ingest_all(peer, "old")
        pre = peer.store.to_snapshot()
        op = peer.begin_ingest("new", "cdn", now=10 * S)
        assert op is not None
        for _ in range(3):
            peer.ingest_step()
        assert peer.abort_ingest() == "rolled_back"
        assert peer.store.to_snapshot() == pre


class TestCrashSweep:
    def build(self):
        peer = make_peer(62_000, ("old1", 30_000), ("old2", 30_000), ("new", 55_000))
        ingest_all(peer, "old1")
        ingest_all(peer, "old2")
        return peer

    def expected_states(self):
        peer = self.build()
        pre = peer.store.to_snapshot()
        ingest_all(peer, "new", now=10 * S)
        post = peer.store.to_snapshot()
        return pre, post

    def test_every_crash_point_restores_pre_or_post(self):
        pre, post = self.expected_states()
        probe = self.build()
        nsteps = len(probe.begin_ingest("new", "cdn", 10 * S).steps)
        for crash_at in range(nsteps):
            for journal_only in (True, False):
                peer = self.build()
                op = peer.begin_ingest("new", "cdn", 10 * S)
                crashed = False
                for i in range(crash_at + 1):
                    try:
                        peer.ingest_step(crash_after_journal=(journal_only and i == crash_at))
                    except CrashPoint:
                        crashed = True
                        break
                if journal_only:
                    assert crashed
                outcome = peer.restart()
                got = peer.store.to_snapshot()
                assert got in (pre, post), (
                    f"crash_at={crash_at} journal_only={journal_only} outcome={outcome}")
                # a commit-phase crash must land on post, earlier ones on pre
                if got == post:
                    assert crash_at == nsteps - 1

    def test_recover_without_journal_is_clean(self):
        peer = self.build()
        assert recover(peer.store, None) == "clean"


def request_for(seqs):
    return DataRequest(1, 0, tuple(seqs), 0)


class TestServing:
    def test_serve_roundtrip_bytes(self):
        peer = make_peer(100_000, ("a", 30_000))
        ingest_all(peer, "a")
        view = peer.view(lambda: 5 * S)
        res = serve_request(view, "a", request_for([0, 1, 2]), PACKET)
        assert len(res.packets) == 3
        entry = peer.catalog["a"]
        assert res.packets[1].payload == model.video_bytes(entry, PACKET, PACKET)

    def test_never_stored_video_all_reject(self):
        peer = make_peer(100_000, ("a", 30_000), ("ghost", 10_000))
        ingest_all(peer, "a")
        view = peer.view(lambda: 0)
        res = serve_request(view, "ghost", request_for([0, 1]), PACKET)
        assert res.rejected == [0, 1]

    def test_corrupted_chunk_flagged(self):
        peer = make_peer(100_000, ("a", 30_000))
        ingest_all(peer, "a")
        peer.store.chunks[("a", 0)].corrupt = True
        view = peer.view(lambda: 0)
        res = serve_request(view, "a", request_for([0]), PACKET)
        assert res.rejected == [0] and res.corrupt == [0]
        assert ("a", 0) in view.corrupt_flagged
        # later chunks are fine
        seq_in_chunk1 = CHUNK // PACKET
        res2 = serve_request(view, "a", request_for([seq_in_chunk1]), PACKET)
        assert len(res2.packets) == 1

    def test_transit_flag_lifecycle(self):
        peer = make_peer(100_000, ("a", 30_000))
        ingest_all(peer, "a")
        peer.session_opened("a", 10 * S)
        assert peer.in_transit("a", 11 * S)
        peer.session_closed("a", 12 * S)
        assert peer.in_transit("a", 13 * S)          # grace period
        assert not peer.in_transit("a", 20 * S)      # grace expired

    def test_served_packet_reverifies_against_digest(self):
        peer = make_peer(100_000, ("a", 30_000))
        ingest_all(peer, "a")
        view = peer.view(lambda: 0)
        res = serve_request(view, "a", request_for(range(10)), PACKET)
        entry = peer.catalog["a"]
        for pkt in res.packets:
            lo, hi = model.packet_byte_range(entry.size, pkt.packet_seq, PACKET)
            assert pkt.payload == model.video_bytes(entry, lo, hi - lo)


class TestHeartbeat:
    def test_contents(self):
        peer = make_peer(100_000, ("a", 30_000))
        ingest_all(peer, "a")
        msg = peer.emit_heartbeat(30 * S)
        assert msg.peer_id == "p0"
        assert msg.disk_utilization == peer.store.used / 100_000
        assert 0.0 <= msg.cpu_utilization <= 1.0

    def test_region_change_carried_next_beat(self):
        peer = make_peer(100_000, ("a", 10_000))
        peer.region = "south"
        assert peer.emit_heartbeat(60 * S).region == "south"
