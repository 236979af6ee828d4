import pytest

from pcdnsim import model, transport
from pcdnsim.scheduler import SchedulerPolicy
from pcdnsim.simnet.harness import GeneratorView, PathSpec, RejectingView, SessionHarness
from pcdnsim.transport import (
    DataRequest,
    DefaultCC,
    ReadStatus,
    SessionRefused,
    TransportConfig,
    open_session,
    serve_request,
)

POLICY = SchedulerPolicy.parse("minrtt")
CFG = TransportConfig(packet_size=1200)


def make_session(npackets=10, npaths=2, policy=POLICY, config=CFG, **kw):
    size = npackets * config.packet_size
    paths = [(i, f"peer{i}", 40_000) for i in range(npaths)]
    return open_session("v", (0, size), size, paths, policy, now=0, config=config,
                        strict=True, **kw)


def payload_for(seq, config=CFG):
    return b"x" * config.packet_size


class TestOpenSession:
    def test_initial_state(self):
        s = make_session(10, 2)
        assert s.queue.remaining() == list(range(10))
        assert all(not p.inflight for p in s.paths.values())

    def test_empty_range_refused(self):
        with pytest.raises(SessionRefused):
            open_session("v", (0, 0), 0, [(0, "p", 1000)], POLICY, 0)

    def test_no_paths_refused(self):
        with pytest.raises(SessionRefused):
            open_session("v", (0, 1200), 1200, [], POLICY, 0)

    def test_large_range_queue_length(self):
        s = make_session(5000, 2)
        assert len(s.queue) == 5000


class TestPump:
    def test_budget_moves_seqs_to_path_queue(self):
        s = make_session(10, 1, config=TransportConfig(cc_initial_budget=8, bundle_size=8))
        reqs = s.pump(0, now=0)
        assert len(reqs) == 1
        taken = set(reqs[0].packet_seqs)
        assert len(taken) == 8
        assert taken == set(s.paths[0].inflight)
        assert all(seq not in s.queue for seq in taken)
        assert len(s.queue) == 2

    def test_empty_queue_no_requests(self):
        s = make_session(4, 1, config=TransportConfig(cc_initial_budget=8))
        s.pump(0, 0)
        assert s.pump(0, 0) == []  # nothing unsent, nothing timed out

    def test_single_path_all_in_order(self):
        s = make_session(6, 1, config=TransportConfig(cc_initial_budget=16))
        reqs = s.pump(0, 0)
        seqs = [q for r in reqs for q in r.packet_seqs]
        assert seqs == list(range(6))

    def test_zero_budget_empty(self):
        s = make_session(10, 1)
        s.paths[0].cc.budget = 0
        assert s.pump(0, 0) == []


class TestOnPacket:
    def test_reorder_release(self):
        s = make_session(10, 1, config=TransportConfig(cc_initial_budget=16))
        s.pump(0, 0)
        # deliver 0..4 then 6,7, then 5: watermark jumps to 7
        for seq in range(5):
            s.on_packet(0, seq, payload_for(seq), now=10)
        assert s.watermark == 4
        s.on_packet(0, 6, payload_for(6), 11)
        s.on_packet(0, 7, payload_for(7), 11)
        assert s.watermark == 4
        released = s.on_packet(0, 5, payload_for(5), 12)
        assert [seq for seq, _ in released] == [5, 6, 7]
        assert s.watermark == 7

    def test_duplicate_counts_redundant(self):
        s = make_session(4, 1, config=TransportConfig(cc_initial_budget=16))
        s.pump(0, 0)
        s.on_packet(0, 0, payload_for(0), 5)
        before = s.watermark
        s.on_packet(0, 0, payload_for(0), 6)
        assert s.redundant_received == 1
        assert s.watermark == before

    def test_out_of_range_is_protocol_violation(self):
        s = make_session(4, 1)
        s.on_packet(0, 999, b"zz", 5)
        assert s.protocol_violations == 1

    def test_tail_duplicate_first_arrival_wins(self):
        policy = SchedulerPolicy.parse("bytescheduler")
        cfg = TransportConfig(cc_initial_budget=16)
        s = make_session(4, 2, policy=policy, config=cfg)
        s.pump(0, 0)          # path 0 takes everything
        s.pump(1, 0)          # queue empty -> tail redundancy duplicates onto path 1
        assert s.extra_copies  # duplicates registered
        dup = max(s.extra_copies)
        for seq in range(4):
            s.on_packet(0, seq, payload_for(seq), 10)
        assert s.done
        s.on_packet(1, dup, payload_for(dup), 12)
        assert s.redundant_received == 1
        assert s.packets_received - 4 == s.redundant_received


class TestPollTimers:
    def test_timeout_reinserts_to_front(self):
        cfg = TransportConfig(cc_initial_budget=4, rto_min_us=200_000)
        s = make_session(10, 1, config=cfg)
        s.pump(0, 0)
        assert s.poll_timers(100_000) == []  # before deadline
        expired = s.poll_timers(1_000_000)
        assert sorted(expired) == [0, 1, 2, 3]
        assert s.queue.remaining()[:4] == [0, 1, 2, 3]  # front region

    def test_cc_loss_applied_once_per_poll(self):
        cfg = TransportConfig(cc_initial_budget=8, rto_min_us=100_000)
        s = make_session(10, 1, config=cfg)
        s.pump(0, 0)
        s.poll_timers(10_000_000)
        assert s.paths[0].cc.budget == 4

    def test_lost_seqs_pumpable_by_other_path(self):
        cfg = TransportConfig(cc_initial_budget=4, rto_min_us=100_000)
        s = make_session(8, 2, config=cfg)
        s.pump(0, 0)
        s.poll_timers(10_000_000)
        reqs = s.pump(1, 10_000_000)
        got = [q for r in reqs for q in r.packet_seqs]
        assert set(got) & {0, 1, 2, 3}  # retransmitted via the other path


class TestSpuriousArrival:
    def test_late_arrival_of_requeued_seq(self):
        cfg = TransportConfig(cc_initial_budget=4, rto_min_us=100_000)
        s = make_session(8, 2, config=cfg)
        s.pump(0, 0)
        s.poll_timers(10_000_000)           # 0..3 back in overall queue
        assert 0 in s.queue
        s.on_packet(0, 0, payload_for(0), 10_000_001)   # arrives anyway
        assert s.watermark == 0
        assert 0 not in s.queue

    def test_late_arrival_after_repump_tracks_duplicate(self):
        cfg = TransportConfig(cc_initial_budget=4, rto_min_us=100_000)
        s = make_session(8, 2, config=cfg)
        s.pump(0, 0)
        s.poll_timers(10_000_000)
        s.pump(1, 10_000_000)               # path 1 re-pumps the lost seqs
        assert 0 in s.paths[1].inflight
        s.on_packet(0, 0, payload_for(0), 10_000_002)   # original arrives late
        assert s.watermark == 0
        assert s.extra_copies.get(0) == 1
        s.on_packet(1, 0, payload_for(0), 10_000_005)
        assert s.redundant_received == 1
        assert 0 not in s.extra_copies


class TestDefaultCC:
    def test_loss_halves(self):
        cc = DefaultCC(10)
        assert cc.on_loss() == 5

    def test_floor_one(self):
        cc = DefaultCC(1)
        assert cc.on_loss() == 1

    def test_ten_ack_windows_from_four(self):
        cc = DefaultCC(4)
        windows = 0
        while windows < 10:
            for _ in range(cc.budget):
                cc.on_ack()
            windows += 1
        assert cc.budget == 14


class TestServeRequest:
    def make_request(self, seqs):
        return DataRequest(1, 0, tuple(seqs), 0)

    def test_all_cached(self):
        entry = model.VideoCatalogEntry.create("v", 10.0, 1_000_000)
        view = GeneratorView(entry)
        res = serve_request(view, "v", self.make_request(range(4)), 1200)
        assert len(res.packets) == 4 and not res.rejected
        assert res.packets[0].payload == model.video_bytes(entry, 0, 1200)

    def test_eviction_rejects(self):
        entry = model.VideoCatalogEntry.create("v", 10.0, 1_000_000)
        view = RejectingView(GeneratorView(entry))
        view.available = False
        res = serve_request(view, "v", self.make_request([0, 1]), 1200)
        assert res.rejected == [0, 1] and not res.packets

    def test_corruption_flagged(self):
        class CorruptView:
            def read_packet(self, video_id, seq, ps):
                return ReadStatus.CORRUPT, None

        res = serve_request(CorruptView(), "v", self.make_request([3]), 1200)
        assert res.rejected == [3] and res.corrupt == [3]


class TestHarnessEndToEnd:
    def run_one(self, loss, npaths, seed, npackets=400):
        entry = model.VideoCatalogEntry.create(f"v{seed}", 4.0, npackets * 1200 * 2)
        byte_range = (0, npackets * 1200)
        paths = [PathSpec(i, rtt_us=20_000 + 30_000 * i, rate_bps=8_000_000 / (i + 1), loss=loss)
                 for i in range(npaths)]
        h = SessionHarness(entry, byte_range, SchedulerPolicy.parse("bytescheduler"),
                           paths, seed=seed, strict=True, audit_interval=97)
        res = h.run()
        assert res.completed, f"loss={loss} paths={npaths}"
        assert res.data == model.video_bytes(entry, 0, npackets * 1200)
        assert res.delivery_order == sorted(res.delivery_order)
        assert res.packets_received - res.needed == h.session.redundant_received
        return res

    @pytest.mark.parametrize("loss", [0.0, 0.05, 0.20])
    def test_lossy_completion(self, loss):
        self.run_one(loss, npaths=2, seed=int(loss * 100) + 7)

    def test_single_path(self):
        self.run_one(0.1, npaths=1, seed=3)

    def test_mid_transfer_eviction_falls_to_other_path(self):
        entry = model.VideoCatalogEntry.create("ev", 4.0, 2_000_000)
        nbytes = 300 * 1200
        inner = GeneratorView(entry)
        flaky = RejectingView(inner)
        paths = [PathSpec(0, 30_000, 6_000_000), PathSpec(1, 60_000, 6_000_000)]
        h = SessionHarness(entry, (0, nbytes), SchedulerPolicy.parse("bytescheduler"),
                           paths, seed=11, store_views={0: flaky}, strict=True,
                           audit_interval=53)
        h.loop.at(40_000, lambda: setattr(flaky, "available", False))
        res = h.run()
        assert res.completed
        assert not h.session.paths[0].alive
        assert res.data == model.video_bytes(entry, 0, nbytes)
