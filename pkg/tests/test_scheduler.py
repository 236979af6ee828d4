from pcdnsim import model, scheduler, transport
from pcdnsim.scheduler import PathForecast, PolicyKind, SchedulerPolicy, update_forecast
from pcdnsim.simnet.harness import PathSpec, SessionHarness
from pcdnsim.transport import TransportConfig, open_session

S = 1_000_000


def make_session(npackets, npaths, policy, rtts=None, config=None):
    config = config or TransportConfig()
    size = npackets * config.packet_size
    rtts = rtts or [40_000] * npaths
    paths = [(i, f"peer{i}", rtts[i]) for i in range(npaths)]
    return open_session("v", (0, size), size, paths, policy, 0, config=config)


class TestPolicyParsing:
    def test_names(self):
        assert SchedulerPolicy.parse("bytescheduler").redundancy_enabled
        assert not SchedulerPolicy.parse("bytescheduler-nr").redundancy_enabled
        assert SchedulerPolicy.parse("minrtt").kind is PolicyKind.MINRTT
        assert SchedulerPolicy.parse("roundrobin").kind is PolicyKind.ROUND_ROBIN

    def test_unknown_rejected(self):
        try:
            SchedulerPolicy.parse("fifo")
            assert False
        except ValueError:
            pass


class TestAssign:
    def test_single_path_all_policies_front(self):
        for name in ("bytescheduler", "minrtt", "roundrobin"):
            s = make_session(20, 1, SchedulerPolicy.parse(name))
            got = scheduler.assign(s.policy, s, s.paths[0], 8, 0)
            assert got == list(range(8)), name

    def test_round_robin_rotates(self):
        policy = SchedulerPolicy.parse("roundrobin")
        s = make_session(20, 2, policy)
        first = scheduler.pump_order(policy, s)
        second = scheduler.pump_order(policy, s)
        assert first != second and set(first) == set(second) == {0, 1}

    def test_minrtt_prefers_low_rtt(self):
        policy = SchedulerPolicy.parse("minrtt")
        s = make_session(20, 2, policy, rtts=[200_000, 20_000])
        assert scheduler.pump_order(policy, s)[0] == 1

    def test_slow_path_skips_ahead(self):
        policy = SchedulerPolicy.parse("bytescheduler")
        s = make_session(5000, 2, policy, rtts=[20_000, 200_000])
        for pid in (0, 1):
            s.paths[pid].forecast.rate_pps = 500.0
        fast = scheduler.assign(policy, s, s.paths[0], 8, 0)
        slow = scheduler.assign(policy, s, s.paths[1], 8, 0)
        assert fast[0] == 0
        assert slow[0] > 20  # offset roughly rate x rtt difference

    def test_budget_larger_than_queue_returns_whole_queue(self):
        s = make_session(5, 1, SchedulerPolicy.parse("minrtt"))
        got = scheduler.assign(s.policy, s, s.paths[0], 99, 0)
        assert got == list(range(5))

    def test_identical_paths_match_round_robin_per_round(self):
        # one full pump round assigns the same seq set RR would, interleaved
        policy = SchedulerPolicy.parse("bytescheduler")
        cfg = TransportConfig(cc_initial_budget=8)
        s = make_session(64, 2, policy, rtts=[40_000, 40_000], config=cfg)
        for pid in (0, 1):
            s.paths[pid].forecast.rate_pps = 400.0
        reqs = s.pump_all(0)
        got = sorted(q for r in reqs for q in r.packet_seqs)
        assert got == list(range(16))
        per_path = [len(s.paths[p].inflight) for p in (0, 1)]
        assert per_path == [8, 8]


class TestTailRedundancy:
    def test_disabled_returns_empty(self):
        policy = SchedulerPolicy.parse("bytescheduler-nr")
        s = make_session(4, 2, policy, config=TransportConfig(cc_initial_budget=16))
        s.pump(0, 0)
        assert scheduler.tail_redundancy(policy, s, s.paths[1], 8) == []

    def test_long_queue_returns_empty(self):
        policy = SchedulerPolicy.parse("bytescheduler")
        s = make_session(100, 2, policy, config=TransportConfig(cc_initial_budget=8))
        s.pump(0, 0)
        assert scheduler.tail_redundancy(policy, s, s.paths[1], 4) == []

    def test_tail_duplicated_onto_other_path(self):
        policy = SchedulerPolicy.parse("bytescheduler")
        s = make_session(6, 2, policy, config=TransportConfig(cc_initial_budget=16))
        s.pump(0, 0)
        dups = scheduler.tail_redundancy(policy, s, s.paths[1], 4)
        assert dups == [2, 3, 4, 5]  # the last undelivered seqs

    def test_cap_respected(self):
        policy = SchedulerPolicy.parse("bytescheduler")
        cfg = TransportConfig(cc_initial_budget=64, redundancy_cap=4)
        s = make_session(32, 2, policy, config=cfg)
        s.pump(0, 0)
        dups = scheduler.tail_redundancy(policy, s, s.paths[1], 32)
        assert len(dups) == 4

    def test_race_beats_no_redundancy(self):
        entry = model.VideoCatalogEntry.create("race", 2.0, 1_000_000)
        nbytes = 64 * 1200
        paths = [PathSpec(0, 30_000, 8_000_000), PathSpec(1, 500_000, 8_000_000)]
        times = {}
        for name in ("bytescheduler", "bytescheduler-nr"):
            h = SessionHarness(entry, (0, nbytes), SchedulerPolicy.parse(name),
                               [PathSpec(p.path_id, p.rtt_us, p.rate_bps) for p in paths],
                               seed=5, config=TransportConfig(cc_initial_budget=16))
            r = h.run()
            assert r.completed
            times[name] = r.completion_us
        assert times["bytescheduler"] < times["bytescheduler-nr"]


class TestForecast:
    def test_convergence_constant_rate(self):
        f = PathForecast(0)
        for _ in range(20):
            update_forecast(f, 10, 100_000)  # 10 packets / 0.1 s = 100 pps
        assert abs(f.rate_pps - 100.0) <= 1.0

    def test_silent_path_unchanged(self):
        f = PathForecast(0, rate_pps=42.0)
        update_forecast(f, 0, 100_000)
        assert f.rate_pps == 42.0

    def test_step_response(self):
        f = PathForecast(0)
        for _ in range(20):
            update_forecast(f, 10, 100_000)
        for _ in range(10):
            update_forecast(f, 5, 100_000)  # step down to 50 pps
        assert abs(f.rate_pps - 50.0) / 50.0 <= 0.10


class TestArrivalOrder:
    def test_inversions_below_five_percent(self):
        # two paths, equal rates, very different RTTs: delivered seq stream
        # should stay nearly in order under the rate-matching policy
        entry = model.VideoCatalogEntry.create("ord", 4.0, 2_000_000)
        npackets = 800
        paths = [PathSpec(0, 20_000, 6_000_000), PathSpec(1, 200_000, 6_000_000)]
        h = SessionHarness(entry, (0, npackets * 1200), SchedulerPolicy.parse("bytescheduler"),
                           paths, seed=9, config=TransportConfig(reorder_window=512))
        r = h.run()
        assert r.completed
        arrivals = []
        for path in h.session.paths.values():
            arrivals.extend((t, seq) for seq, t, _ in path.received_log)
        arrivals.sort()
        seqs = [seq for _, seq in arrivals]
        inversions = sum(1 for a, b in zip(seqs, seqs[1:]) if b < a)
        assert inversions / len(seqs) < 0.05


class TestExactlyOnce:
    def test_no_seq_assigned_twice_without_timeout(self):
        policy = SchedulerPolicy.parse("bytescheduler-nr")
        s = make_session(200, 3, policy, rtts=[20_000, 60_000, 120_000])
        seen = set()
        for _ in range(10):
            for pid in scheduler.pump_order(policy, s):
                for req in s.pump(pid, 0):
                    for q in req.packet_seqs:
                        assert q not in seen
                        seen.add(q)
