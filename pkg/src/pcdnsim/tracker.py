"""Centralized control plane: bandwidth decomposition and greedy allocation,
popularity-cycle content distribution, the video->peer index with scored peer
selection, and peer liveness management.

Allocation arithmetic uses exact rationals so decompositions match an
independent re-evaluation of the formulas to full precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

US_PER_S = 1_000_000


# --- bandwidth resource planning -------------------------------------------

@dataclass(frozen=True)
class BusinessSpec:
    name: str
    domain: str
    fluctuation: Fraction           # demand safety coefficient
    peak_bps: dict[str, Fraction]   # region -> historical peak


@dataclass(frozen=True)
class DomainSpec:
    name: str
    priority: int                   # higher served first
    expected_bandwidth_bps: Fraction


@dataclass(frozen=True)
class AllocationInputs:
    regions: dict[str, Fraction]                       # region -> calibrated capacity
    vendor_capacity: dict[tuple[str, str], Fraction]   # (region, vendor) -> capacity
    domains: dict[str, DomainSpec]
    businesses: dict[str, BusinessSpec]

    @property
    def vendors(self) -> list[str]:
        return sorted({v for (_, v) in self.vendor_capacity})

    def vendor_total(self, vendor: str) -> Fraction:
        return sum((c for (r, v), c in self.vendor_capacity.items() if v == vendor),
                   Fraction(0))

    def validate(self) -> list[str]:
        errors = []
        if not self.vendors:
            errors.append("vendors: empty vendor list")
        for region, cap in self.regions.items():
            vendor_sum = sum((c for (r, _), c in self.vendor_capacity.items() if r == region),
                             Fraction(0))
            if vendor_sum != cap:
                errors.append(
                    f"regions.{region}: vendor capacities sum to {float(vendor_sum)}"
                    f" but region capacity is {float(cap)}")
        for name, b in self.businesses.items():
            if b.domain not in self.domains:
                errors.append(f"businesses.{name}: unknown domain {b.domain!r}")
            for region in b.peak_bps:
                if region not in self.regions:
                    errors.append(f"businesses.{name}: unknown region {region!r}")
        return errors


def business_need(inputs: AllocationInputs, region: str, business: str) -> Fraction:
    b = inputs.businesses[business]
    return b.fluctuation * b.peak_bps.get(region, Fraction(0))


def decompose_requirements(inputs: AllocationInputs) -> dict[tuple[str, str], Fraction]:
    """Per (region, business) capacity share, proportional to estimated need."""
    out: dict[tuple[str, str], Fraction] = {}
    for region, cap_r in inputs.regions.items():
        need_r = sum((business_need(inputs, region, s) for s in inputs.businesses),
                     Fraction(0))
        for s in inputs.businesses:
            if need_r == 0:
                out[(region, s)] = Fraction(0)
            else:
                out[(region, s)] = business_need(inputs, region, s) / need_r * cap_r
    return out


@dataclass
class VendorDecomposition:
    per_business: dict[tuple[str, str, str], Fraction]   # (r, v, s)
    per_domain: dict[tuple[str, str, str], Fraction]     # (r, v, d)
    expected: dict[tuple[str, str, str], Fraction]       # (r, v, d) targets


def vendor_decomposition(inputs: AllocationInputs,
                         totals: dict[tuple[str, str], Fraction]) -> VendorDecomposition:
    per_business: dict[tuple[str, str, str], Fraction] = {}
    per_domain: dict[tuple[str, str, str], Fraction] = {}
    for (region, vendor), cap_rv in inputs.vendor_capacity.items():
        cap_r = inputs.regions[region]
        for s, b in inputs.businesses.items():
            share = cap_rv / cap_r * totals[(region, s)] if cap_r else Fraction(0)
            per_business[(region, vendor, s)] = share
            key = (region, vendor, b.domain)
            per_domain[key] = per_domain.get(key, Fraction(0)) + share
    expected: dict[tuple[str, str, str], Fraction] = {}
    vendor_totals = {v: inputs.vendor_total(v) for v in inputs.vendors}
    for (region, vendor, domain), provide_rvd in per_domain.items():
        total_v = vendor_totals[vendor]
        exp_d = inputs.domains[domain].expected_bandwidth_bps
        expected[(region, vendor, domain)] = (
            exp_d * provide_rvd / total_v if total_v else Fraction(0))
    return VendorDecomposition(per_business, per_domain, expected)


@dataclass(frozen=True)
class ResourceInstance:
    region: str
    vendor: str
    capacity: Fraction


@dataclass
class AllocationPlan:
    allocations: dict[tuple[str, str, str], Fraction] = field(default_factory=dict)
    shortfalls: dict[tuple[str, str, str], Fraction] = field(default_factory=dict)
    leftover: Fraction = Fraction(0)

    def domain_total(self, domain: str) -> Fraction:
        return sum((a for (_, _, d), a in self.allocations.items() if d == domain),
                   Fraction(0))


def greedy_allocate(instances: list[ResourceInstance],
                    domains: list[DomainSpec],
                    targets: dict[tuple[str, str, str], Fraction]) -> AllocationPlan:
    """Match resource instances to domain targets, highest priority first.

    Within a domain, instances are consumed largest-remaining first; capacity
    left after a domain's targets are met flows to the next priority tier.
    Unmeetable targets are reported as shortfalls, not errors.
    """
    remaining = [Fraction(c.capacity) for c in instances]
    plan = AllocationPlan()
    want = dict(targets)
    for dom in sorted(domains, key=lambda d: (-d.priority, d.name)):
        order = sorted(range(len(instances)),
                       key=lambda i: (-remaining[i], instances[i].region,
                                      instances[i].vendor, i))
        for i in order:
            if remaining[i] == 0:
                continue
            inst = instances[i]
            key = (inst.region, inst.vendor, dom.name)
            need = want.get(key, Fraction(0))
            if need <= 0:
                continue
            give = min(remaining[i], need)
            remaining[i] -= give
            want[key] = need - give
            plan.allocations[key] = plan.allocations.get(key, Fraction(0)) + give
        for (r, v, d), left in want.items():
            if d == dom.name and left > 0:
                plan.shortfalls[(r, v, d)] = left
    plan.leftover = sum(remaining, Fraction(0))
    return plan


def default_instances(inputs: AllocationInputs) -> list[ResourceInstance]:
    return [ResourceInstance(r, v, c)
            for (r, v), c in sorted(inputs.vendor_capacity.items())]


# --- tracker engine ---------------------------------------------------------

@dataclass
class PeerRecord:
    peer_id: str
    region: str
    vendor: str
    nat_class: str
    last_heartbeat: int = 0
    bandwidth_utilization: float = 0.0
    disk_utilization: float = 0.0
    cpu_utilization: float = 0.0
    online: bool = True


@dataclass(frozen=True)
class PeerDescriptor:
    """What locate() hands back to a client for connection setup."""
    peer_id: str
    region: str
    nat_class: str


@dataclass
class DistributionDecision:
    video_id: str
    target_peer: str
    source: str  # "cdn" or a peer_id


@dataclass
class HeartbeatMessage:
    peer_id: str
    region: str
    vendor: str
    nat_class: str
    disk_utilization: float
    bandwidth_utilization: float
    cpu_utilization: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "HeartbeatMessage":
        return cls(**d)


@dataclass
class HeartbeatReply:
    cache_commands: list[DistributionDecision] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"cache_commands": [c.__dict__ for c in self.cache_commands]}


@dataclass(frozen=True)
class TrackerConfig:
    candidate_count: int = 20           # n peers scored per locate
    return_count: int = 5               # m peers returned
    weight_bandwidth: float = 0.4
    weight_distance: float = 0.3
    weight_cpu: float = 0.2
    weight_nat: float = 0.1
    liveness_window_us: int = 90 * US_PER_S   # 3 missed heartbeats
    cycle_len_us: int = 300 * US_PER_S
    view_threshold: int = 100
    super_popular_multiplier: int = 10
    peak_windows_us: tuple[tuple[int, int], ...] = ()
    distribution_bandwidth_bps: dict[str, float] = None  # region -> bps
    max_target_disk_utilization: float = 0.95

    def __post_init__(self):
        if self.distribution_bandwidth_bps is None:
            object.__setattr__(self, "distribution_bandwidth_bps", {})


class Tracker:
    def __init__(self, config: TrackerConfig, nat_compatible=None):
        self.config = config
        self.peers: dict[str, PeerRecord] = {}
        self.index: dict[str, set[str]] = {}          # video -> peers
        self.stored_by: dict[str, set[str]] = {}      # peer -> videos
        self.video_sizes: dict[str, int] = {}
        self.counts: dict[str, int] = {}
        self.prev_counts: dict[str, int] = {}
        self.cycle_count_history: list[int] = []
        self.total_locates = 0
        self.pending: dict[str, list[DistributionDecision]] = {}
        self.anomalies: list[str] = []
        self.locate_misses = 0
        self._nat_compatible = nat_compatible or (lambda a, b: True)

    # --- registration ----------------------------------------------------

    def register_peer(self, peer_id: str, region: str, vendor: str, nat_class: str,
                      now: int) -> None:
        self.peers[peer_id] = PeerRecord(peer_id, region, vendor, nat_class,
                                         last_heartbeat=now)
        self.pending.setdefault(peer_id, [])

    def register_video(self, video_id: str, size: int) -> None:
        self.video_sizes[video_id] = size

    # --- liveness ----------------------------------------------------------

    def peer_alive(self, record: PeerRecord, now: int) -> bool:
        return record.online and now - record.last_heartbeat <= self.config.liveness_window_us

    def sweep(self, now: int) -> list[str]:
        """Evict peers that missed their heartbeats; drops their index entries."""
        evicted = [pid for pid, rec in self.peers.items() if not self.peer_alive(rec, now)]
        for pid in evicted:
            self._drop_peer(pid)
        return evicted

    def _drop_peer(self, peer_id: str) -> None:
        for video in self.stored_by.pop(peer_id, set()):
            holders = self.index.get(video)
            if holders:
                holders.discard(peer_id)
                if not holders:
                    del self.index[video]
        self.peers.pop(peer_id, None)
        self.pending.pop(peer_id, None)

    # --- locate -------------------------------------------------------------

    def locate(self, video_id: str, client_region: str, client_nat: str,
               now: int) -> list[PeerDescriptor]:
        """Count the view, then return the best-scored peers holding the video."""
        self.total_locates += 1
        self.counts[video_id] = self.counts.get(video_id, 0) + 1
        holders = self.index.get(video_id)
        if not holders:
            self.locate_misses += 1
            return []
        alive = [self.peers[p] for p in sorted(holders)
                 if p in self.peers and self.peer_alive(self.peers[p], now)]
        candidates = alive[: self.config.candidate_count]
        if not candidates:
            self.locate_misses += 1
            return []
        scored = sorted(
            ((self.score_peer(rec, client_region, client_nat), rec.peer_id) for rec in candidates),
            key=lambda t: (-t[0], t[1]))
        top = scored[: self.config.return_count]
        return [PeerDescriptor(pid, self.peers[pid].region, self.peers[pid].nat_class)
                for _, pid in top]

    def score_peer(self, rec: PeerRecord, client_region: str, client_nat: str) -> float:
        c = self.config
        return (c.weight_bandwidth * (1.0 - rec.bandwidth_utilization)
                + c.weight_distance * (1.0 if rec.region == client_region else 0.0)
                + c.weight_cpu * (1.0 - rec.cpu_utilization)
                + c.weight_nat * (1.0 if self._nat_compatible(client_nat, rec.nat_class) else 0.0))

    # --- popularity cycle ----------------------------------------------------

    def is_peak(self, now: int) -> bool:
        return any(a <= now < b for a, b in self.config.peak_windows_us)

    def end_cycle(self, now: int) -> list[DistributionDecision]:
        """Close the counting cycle and queue extra copies for videos that are
        both over the view threshold and hotter than last cycle."""
        cfg = self.config
        eligible = {
            v: c for v, c in self.counts.items()
            if c >= cfg.view_threshold and c > self.prev_counts.get(v, 0)
        }
        peak = self.is_peak(now)
        if peak:
            super_thresh = cfg.view_threshold * cfg.super_popular_multiplier
            eligible = {v: c for v, c in eligible.items() if c >= super_thresh}
        decisions: list[DistributionDecision] = []
        if eligible:
            by_region = self._group_active_peers(now)
            for region in sorted(by_region):
                decisions.extend(self._plan_region(region, by_region[region], eligible, now))
        self.cycle_count_history.append(sum(self.counts.values()))
        self.prev_counts = self.counts
        self.counts = {}
        return decisions

    def _group_active_peers(self, now: int) -> dict[str, list[PeerRecord]]:
        out: dict[str, list[PeerRecord]] = {}
        for pid in sorted(self.peers):
            rec = self.peers[pid]
            if self.peer_alive(rec, now):
                out.setdefault(rec.region, []).append(rec)
        return out

    def _plan_region(self, region: str, peers: list[PeerRecord],
                     eligible: dict[str, int], now: int) -> list[DistributionDecision]:
        cfg = self.config
        dist_bw = cfg.distribution_bandwidth_bps.get(region, 0.0)
        if dist_bw <= 0:
            return []
        cycle_s = cfg.cycle_len_us / US_PER_S
        total_count = sum(eligible.values())
        decisions = []
        for video in sorted(eligible, key=lambda v: (-eligible[v], v)):
            size = self.video_sizes.get(video)
            if not size:
                continue
            per_copy_bps = size * 8 / cycle_s
            share_bps = dist_bw * eligible[video] / total_count
            copies = max(1, int(share_bps / per_copy_bps))
            targets = [p for p in peers
                       if video not in self.stored_by.get(p.peer_id, set())
                       and p.disk_utilization < cfg.max_target_disk_utilization]
            targets.sort(key=lambda p: (p.disk_utilization, p.peer_id))
            for rec in targets[:copies]:
                source = self._choose_source(video, region, rec.peer_id, now)
                d = DistributionDecision(video, rec.peer_id, source)
                self.pending.setdefault(rec.peer_id, []).append(d)
                decisions.append(d)
        return decisions

    def _choose_source(self, video_id: str, region: str, target_peer: str, now: int) -> str:
        """Cost first off-peak (in-region peer copy), speed first at peak (CDN)."""
        if self.is_peak(now):
            return "cdn"
        for pid in sorted(self.index.get(video_id, ())):
            rec = self.peers.get(pid)
            if rec and pid != target_peer and rec.region == region and self.peer_alive(rec, now):
                return pid
        return "cdn"

    # --- heartbeat / confirmations -------------------------------------------

    def on_heartbeat(self, msg: HeartbeatMessage, now: int) -> HeartbeatReply:
        rec = self.peers.get(msg.peer_id)
        if rec is None:
            raise KeyError(f"unregistered peer {msg.peer_id!r}")
        rec.region = msg.region
        rec.vendor = msg.vendor
        rec.nat_class = msg.nat_class
        rec.disk_utilization = msg.disk_utilization
        rec.bandwidth_utilization = msg.bandwidth_utilization
        rec.cpu_utilization = msg.cpu_utilization
        rec.last_heartbeat = now
        commands = self.pending.get(msg.peer_id, [])
        self.pending[msg.peer_id] = []
        for c in commands:
            c.source = self._choose_source(c.video_id, rec.region, msg.peer_id, now)
        return HeartbeatReply(cache_commands=commands)

    def on_store_confirm(self, peer_id: str, video_id: str, now: int,
                         solicited: Optional[bool] = None) -> None:
        if solicited is False:
            self.anomalies.append(f"unsolicited store confirm {peer_id}/{video_id}")
        self.index.setdefault(video_id, set()).add(peer_id)
        self.stored_by.setdefault(peer_id, set()).add(video_id)

    def on_store_drop(self, peer_id: str, video_id: str) -> None:
        holders = self.index.get(video_id)
        if holders:
            holders.discard(peer_id)
            if not holders:
                del self.index[video_id]
        videos = self.stored_by.get(peer_id)
        if videos:
            videos.discard(video_id)

    # --- invariant helpers ----------------------------------------------------

    def verify_index(self) -> None:
        forward = {(v, p) for v, peers in self.index.items() for p in peers}
        reverse = {(v, p) for p, videos in self.stored_by.items() for v in videos}
        assert forward == reverse, "index maps disagree"

    def verify_counters(self) -> None:
        total = sum(self.cycle_count_history) + sum(self.counts.values())
        assert total == self.total_locates, (
            f"cycle counters {total} != locates {self.total_locates}")


# --- allocation input file ----------------------------------------------------

def load_allocation_inputs(doc: dict) -> AllocationInputs:
    """Build AllocationInputs from a parsed JSON document.

    Layout: {"regions": [{name, capacity_bps}], "vendors": [{name,
    capacity_bps: {region: bps}}], "domains": [{name, priority,
    expected_bandwidth_bps}], "businesses": [{name, domain, fluctuation,
    peak_bps: {region: bps}}]}.
    """
    def frac(x) -> Fraction:
        return Fraction(x) if not isinstance(x, float) else Fraction(str(x))

    try:
        regions = {r["name"]: frac(r["capacity_bps"]) for r in doc["regions"]}
        vendor_capacity = {
            (region, v["name"]): frac(bps)
            for v in doc.get("vendors", [])
            for region, bps in v["capacity_bps"].items()
        }
        domains = {
            d["name"]: DomainSpec(d["name"], int(d["priority"]),
                                  frac(d["expected_bandwidth_bps"]))
            for d in doc["domains"]
        }
        businesses = {
            b["name"]: BusinessSpec(
                b["name"], b["domain"], frac(b.get("fluctuation", "1.2")),
                {region: frac(bps) for region, bps in b["peak_bps"].items()})
            for b in doc["businesses"]
        }
    except (KeyError, TypeError) as exc:
        raise ValueError(f"allocation inputs: missing or malformed field ({exc})") from exc
    return AllocationInputs(regions, vendor_capacity, domains, businesses)
