import itertools
from fractions import Fraction

import numpy as np
import pytest

from pcdnsim import tracker as tr
from pcdnsim.tracker import (
    AllocationInputs,
    BusinessSpec,
    DomainSpec,
    HeartbeatMessage,
    ResourceInstance,
    Tracker,
    TrackerConfig,
    decompose_requirements,
    greedy_allocate,
    vendor_decomposition,
)

S = 1_000_000
F = Fraction


def simple_inputs(cap=100, need_a=60, need_b=90):
    return AllocationInputs(
        regions={"r1": F(cap)},
        vendor_capacity={("r1", "v1"): F(cap)},
        domains={"d1": DomainSpec("d1", 1, F(50))},
        businesses={
            "A": BusinessSpec("A", "d1", F(1), {"r1": F(need_a)}),
            "B": BusinessSpec("B", "d1", F(1), {"r1": F(need_b)}),
        },
    )


class TestDecomposition:
    def test_worked_example(self):
        totals = decompose_requirements(simple_inputs())
        assert totals[("r1", "A")] == F(40)
        assert totals[("r1", "B")] == F(60)

    def test_single_business_gets_region_capacity(self):
        inputs = AllocationInputs(
            regions={"r1": F(100)},
            vendor_capacity={("r1", "v1"): F(100)},
            domains={"d1": DomainSpec("d1", 1, F(10))},
            businesses={"A": BusinessSpec("A", "d1", F(1), {"r1": F(30)})},
        )
        assert decompose_requirements(inputs)[("r1", "A")] == F(100)

    def test_zero_demand_region_all_zero(self):
        inputs = simple_inputs(need_a=0, need_b=0)
        totals = decompose_requirements(inputs)
        assert all(v == 0 for v in totals.values())

    def test_vendor_share_example(self):
        # vendor holds 30 of 100 regional capacity, business total 40 -> 12
        inputs = AllocationInputs(
            regions={"r1": F(100)},
            vendor_capacity={("r1", "v1"): F(30), ("r1", "v2"): F(70)},
            domains={"d1": DomainSpec("d1", 1, F(50))},
            businesses={
                "A": BusinessSpec("A", "d1", F(1), {"r1": F(60)}),
                "B": BusinessSpec("B", "d1", F(1), {"r1": F(90)}),
            },
        )
        totals = decompose_requirements(inputs)
        dec = vendor_decomposition(inputs, totals)
        assert dec.per_business[("r1", "v1", "A")] == F(12)

    def test_expected_bandwidth_example(self):
        # Expbw_d=50 with domain share 12 of vendor provision 120 -> 5
        inputs = AllocationInputs(
            regions={"r1": F(30), "r2": F(90)},
            vendor_capacity={("r1", "v1"): F(30), ("r2", "v1"): F(90)},
            domains={"d1": DomainSpec("d1", 1, F(50))},
            businesses={"A": BusinessSpec("A", "d1", F(1), {"r1": F(10)})},
        )
        totals = decompose_requirements(inputs)
        dec = vendor_decomposition(inputs, totals)
        assert dec.per_domain[("r1", "v1", "d1")] == F(30)  # sole business in r1
        # scale: Expbw = 50 * 30 / 120
        assert dec.expected[("r1", "v1", "d1")] == F(50) * F(30) / F(120)

    def test_one_vendor_owns_region(self):
        inputs = simple_inputs()
        totals = decompose_requirements(inputs)
        dec = vendor_decomposition(inputs, totals)
        assert dec.per_business[("r1", "v1", "A")] == totals[("r1", "A")]

    def test_random_inputs_match_exact_reevaluation(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            regions = {f"r{i}": F(int(rng.integers(0, 1000))) for i in range(rng.integers(1, 4))}
            vendors = [f"v{i}" for i in range(rng.integers(1, 4))]
            vendor_capacity = {}
            for r, cap in regions.items():
                splits = sorted(rng.integers(0, int(cap) + 1, size=len(vendors) - 1).tolist())
                shares = np.diff([0] + splits + [int(cap)])
                for v, share in zip(vendors, shares):
                    vendor_capacity[(r, v)] = F(int(share))
            domains = {f"d{i}": DomainSpec(f"d{i}", i, F(int(rng.integers(1, 500))))
                       for i in range(rng.integers(1, 3))}
            businesses = {}
            for i in range(rng.integers(1, 5)):
                businesses[f"s{i}"] = BusinessSpec(
                    f"s{i}", f"d{int(rng.integers(0, len(domains)))}",
                    F(int(rng.integers(10, 20)), 10),
                    {r: F(int(rng.integers(0, 800))) for r in regions})
            inputs = AllocationInputs(regions, vendor_capacity, domains, businesses)
            totals = decompose_requirements(inputs)
            # independent re-evaluation, straight from the formulas
            for r, cap_r in regions.items():
                need_r = sum(b.fluctuation * b.peak_bps.get(r, F(0)) for b in businesses.values())
                for s, b in businesses.items():
                    need_rs = b.fluctuation * b.peak_bps.get(r, F(0))
                    expect = need_rs / need_r * cap_r if need_r else F(0)
                    assert totals[(r, s)] == expect
            dec = vendor_decomposition(inputs, totals)
            for (r, v), cap_rv in vendor_capacity.items():
                for s in businesses:
                    expect = cap_rv / regions[r] * totals[(r, s)] if regions[r] else F(0)
                    assert dec.per_business[(r, v, s)] == expect


class TestGreedyAllocate:
    def test_strict_priority_contention(self):
        domains = [DomainSpec("hi", 2, F(10)), DomainSpec("lo", 1, F(10))]
        inst = [ResourceInstance("r1", "v1", F(10))]
        targets = {("r1", "v1", "hi"): F(10), ("r1", "v1", "lo"): F(10)}
        plan = greedy_allocate(inst, domains, targets)
        assert plan.allocations[("r1", "v1", "hi")] == F(10)
        assert ("r1", "v1", "lo") not in plan.allocations
        assert plan.shortfalls[("r1", "v1", "lo")] == F(10)

    def test_disjoint_targets_both_met(self):
        domains = [DomainSpec("hi", 2, F(10)), DomainSpec("lo", 1, F(10))]
        inst = [ResourceInstance("r1", "v1", F(10)), ResourceInstance("r2", "v1", F(10))]
        targets = {("r1", "v1", "hi"): F(10), ("r2", "v1", "lo"): F(10)}
        plan = greedy_allocate(inst, domains, targets)
        assert plan.allocations[("r1", "v1", "hi")] == F(10)
        assert plan.allocations[("r2", "v1", "lo")] == F(10)
        assert not plan.shortfalls

    def test_leftover_flows_to_next_tier(self):
        domains = [DomainSpec("hi", 2, F(0)), DomainSpec("lo", 1, F(0))]
        inst = [ResourceInstance("r1", "v1", F(10))]
        targets = {("r1", "v1", "hi"): F(4), ("r1", "v1", "lo"): F(6)}
        plan = greedy_allocate(inst, domains, targets)
        assert plan.allocations[("r1", "v1", "hi")] == F(4)
        assert plan.allocations[("r1", "v1", "lo")] == F(6)
        assert plan.leftover == F(0)

    def test_matches_order_exhaustive_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n_inst = int(rng.integers(1, 6))
            n_dom = int(rng.integers(1, 4))
            regions = ["r1", "r2"]
            vendors = ["v1", "v2"]
            instances = [
                ResourceInstance(regions[int(rng.integers(0, 2))],
                                 vendors[int(rng.integers(0, 2))],
                                 F(int(rng.integers(1, 20))))
                for _ in range(n_inst)
            ]
            domains = [DomainSpec(f"d{i}", i, F(0)) for i in range(n_dom)]
            targets = {}
            for r in regions:
                for v in vendors:
                    for d in domains:
                        if rng.random() < 0.7:
                            targets[(r, v, d.name)] = F(int(rng.integers(0, 25)))
            plan = greedy_allocate(instances, domains, targets)
            per_domain = {d.name: plan.domain_total(d.name) for d in domains}
            # oracle: consume instances in every possible order; totals must agree
            for order in itertools.permutations(range(n_inst)):
                want = dict(targets)
                remaining = [F(i.capacity) for i in instances]
                got = {d.name: F(0) for d in domains}
                for dom in sorted(domains, key=lambda d: -d.priority):
                    for idx in order:
                        key = (instances[idx].region, instances[idx].vendor, dom.name)
                        need = want.get(key, F(0))
                        give = min(remaining[idx], need)
                        remaining[idx] -= give
                        want[key] = need - give
                        got[dom.name] += give
                assert got == per_domain


def make_tracker(**kw):
    cfg = TrackerConfig(distribution_bandwidth_bps={"north": 100e6}, **kw)
    t = Tracker(cfg)
    return t


class TestLocate:
    def setup_peers(self, t, n=3, region="north", now=0):
        for i in range(n):
            t.register_peer(f"p{i}", region, "v1", "cone", now)
            t.on_store_confirm(f"p{i}", "vid", now)

    def test_all_returned_sorted_by_score(self):
        t = make_tracker()
        self.setup_peers(t)
        t.peers["p1"].bandwidth_utilization = 0.5
        got = t.locate("vid", "north", "cone", now=0)
        assert [d.peer_id for d in got] == ["p0", "p2", "p1"]

    def test_return_count_cap(self):
        t = make_tracker()
        self.setup_peers(t, n=20)
        got = t.locate("vid", "north", "cone", now=0)
        assert len(got) == 5

    def test_idle_peer_ranks_higher(self):
        t = make_tracker()
        self.setup_peers(t, n=2)
        t.peers["p0"].bandwidth_utilization = 0.95
        t.peers["p1"].bandwidth_utilization = 0.10
        got = t.locate("vid", "north", "cone", now=0)
        assert got[0].peer_id == "p1"

    def test_unknown_video_empty(self):
        t = make_tracker()
        assert t.locate("nope", "north", "cone", 0) == []
        assert t.total_locates == 1

    def test_dead_peer_never_returned(self):
        t = make_tracker()
        self.setup_peers(t, n=2)
        t.peers["p0"].last_heartbeat = 0
        got = t.locate("vid", "north", "cone", now=91 * S)
        assert all(d.peer_id != "p0" for d in got)


class TestCycle:
    def test_eligibility_threshold_and_increase(self):
        t = make_tracker()
        t.register_peer("p0", "north", "v1", "cone", 290 * S)
        t.register_peer("p1", "north", "v1", "cone", 290 * S)
        t.register_video("hot", 10_000_000)
        t.on_store_confirm("p0", "hot", 290 * S)
        t.prev_counts = {"hot": 120}
        t.counts = {"hot": 150}
        decisions = t.end_cycle(now=300 * S)
        assert decisions and decisions[0].video_id == "hot"
        assert decisions[0].target_peer == "p1"  # p0 already holds it

    def test_no_increase_not_eligible(self):
        t = make_tracker()
        t.register_peer("p0", "north", "v1", "cone", 0)
        t.register_video("was-hot", 10_000_000)
        t.prev_counts = {"was-hot": 200}
        t.counts = {"was-hot": 150}
        assert t.end_cycle(now=300 * S) == []

    def test_peak_hours_suppress_ordinary(self):
        cfg = TrackerConfig(distribution_bandwidth_bps={"north": 100e6},
                            peak_windows_us=((0, 1000 * S),))
        t = Tracker(cfg)
        t.register_peer("p0", "north", "v1", "cone", 290 * S)
        t.register_video("v", 10_000_000)
        t.counts = {"v": 150}
        assert t.end_cycle(now=300 * S) == []
        # super-popular breaks through
        t.peers["p0"].last_heartbeat = 590 * S
        t.counts = {"v": 1500}
        t.prev_counts = {}
        assert t.end_cycle(now=600 * S) != []

    def test_counter_hygiene(self):
        t = make_tracker()
        for i in range(25):
            t.locate(f"v{i % 4}", "north", "cone", now=i)
        t.end_cycle(300 * S)
        for i in range(13):
            t.locate("v0", "north", "cone", now=301 * S)
        t.end_cycle(600 * S)
        t.locate("v1", "north", "cone", now=601 * S)
        t.verify_counters()


class TestHeartbeat:
    def test_no_pending_empty_commands(self):
        t = make_tracker()
        t.register_peer("p0", "north", "v1", "cone", 0)
        reply = t.on_heartbeat(HeartbeatMessage("p0", "north", "v1", "cone", 0.1, 0.2, 0.3), 30 * S)
        assert reply.cache_commands == []
        assert t.peers["p0"].disk_utilization == 0.1

    def test_offpeak_source_is_inregion_holder(self):
        t = make_tracker()
        t.register_peer("p0", "north", "v1", "cone", 290 * S)
        t.register_peer("p1", "north", "v1", "cone", 290 * S)
        t.register_video("x", 5_000_000)
        t.on_store_confirm("p0", "x", 290 * S)
        t.prev_counts = {}
        t.counts = {"x": 150}
        t.end_cycle(300 * S)
        reply = t.on_heartbeat(HeartbeatMessage("p1", "north", "v1", "cone", 0, 0, 0), 310 * S)
        assert reply.cache_commands and reply.cache_commands[0].source == "p0"

    def test_peak_source_is_cdn(self):
        cfg = TrackerConfig(distribution_bandwidth_bps={"north": 1e9},
                            peak_windows_us=((290 * S, 4000 * S),))
        t = Tracker(cfg)
        t.register_peer("p0", "north", "v1", "cone", 290 * S)
        t.register_peer("p1", "north", "v1", "cone", 290 * S)
        t.register_video("x", 5_000_000)
        t.on_store_confirm("p0", "x", 290 * S)
        t.counts = {"x": 1500}
        t.end_cycle(300 * S)
        reply = t.on_heartbeat(HeartbeatMessage("p1", "north", "v1", "cone", 0, 0, 0), 310 * S)
        assert reply.cache_commands and reply.cache_commands[0].source == "cdn"

    def test_unknown_peer_raises(self):
        t = make_tracker()
        with pytest.raises(KeyError):
            t.on_heartbeat(HeartbeatMessage("ghost", "north", "v1", "cone", 0, 0, 0), 0)

    def test_silent_peer_evicted_with_index(self):
        t = make_tracker()
        t.register_peer("p0", "north", "v1", "cone", 0)
        t.on_store_confirm("p0", "vid", 0)
        evicted = t.sweep(now=200 * S)
        assert evicted == ["p0"]
        assert "vid" not in t.index
        t.verify_index()


class TestStoreConfirm:
    def test_confirm_then_locate_lists_peer(self):
        t = make_tracker()
        t.register_peer("p0", "north", "v1", "cone", 0)
        t.on_store_confirm("p0", "vid", 0)
        assert [d.peer_id for d in t.locate("vid", "north", "cone", 1)] == ["p0"]

    def test_duplicate_confirm_idempotent(self):
        t = make_tracker()
        t.register_peer("p0", "north", "v1", "cone", 0)
        t.on_store_confirm("p0", "vid", 0)
        t.on_store_confirm("p0", "vid", 1)
        assert t.index["vid"] == {"p0"}
        t.verify_index()

    def test_unsolicited_confirm_logged_but_indexed(self):
        t = make_tracker()
        t.register_peer("p0", "north", "v1", "cone", 0)
        t.on_store_confirm("p0", "vid", 0, solicited=False)
        assert t.anomalies
        assert "vid" in t.index


class TestInputsValidation:
    def test_capacity_mismatch_names_region(self):
        inputs = AllocationInputs(
            regions={"north": F(100)},
            vendor_capacity={("north", "v1"): F(60)},
            domains={"d": DomainSpec("d", 1, F(1))},
            businesses={"b": BusinessSpec("b", "d", F(1), {"north": F(10)})},
        )
        errors = inputs.validate()
        assert any("north" in e for e in errors)

    def test_empty_vendor_list(self):
        inputs = AllocationInputs(
            regions={}, vendor_capacity={},
            domains={"d": DomainSpec("d", 1, F(1))},
            businesses={},
        )
        assert any("vendor" in e for e in inputs.validate())

    def test_loader_roundtrip(self):
        doc = {
            "regions": [{"name": "r1", "capacity_bps": 100}],
            "vendors": [{"name": "v1", "capacity_bps": {"r1": 100}}],
            "domains": [{"name": "d1", "priority": 1, "expected_bandwidth_bps": 40}],
            "businesses": [{"name": "A", "domain": "d1", "fluctuation": 1.2,
                            "peak_bps": {"r1": 60}}],
        }
        inputs = tr.load_allocation_inputs(doc)
        assert inputs.validate() == []
        assert inputs.businesses["A"].fluctuation == F("1.2")
