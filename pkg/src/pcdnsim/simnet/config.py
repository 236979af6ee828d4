"""Scenario configuration: parsing and validation with field-path errors.

Unknown keys are rejected so typos fail loudly; every error names the exact
config path that caused it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

from pcdnsim.client import ClientThresholds
from pcdnsim.scheduler import POLICY_NAMES
from pcdnsim.transport import TransportConfig

US_PER_S = 1_000_000


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


class _Checker:
    def __init__(self):
        self.errors: list[str] = []

    def fail(self, path: str, msg: str) -> None:
        self.errors.append(f"{path}: {msg}")

    def section(self, doc: dict, path: str, allowed: set[str]) -> None:
        for key in doc:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else key, "unknown key")

    def num(self, doc: dict, path: str, key: str, default=None, lo=None, hi=None):
        if key not in doc:
            return default
        v = doc[key]
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            self.fail(f"{path}.{key}", f"expected a number, got {type(v).__name__}")
            return default
        if lo is not None and v < lo:
            self.fail(f"{path}.{key}", f"must be >= {lo}")
        if hi is not None and v > hi:
            self.fail(f"{path}.{key}", f"must be <= {hi}")
        return v


@dataclass(frozen=True)
class CatalogConfig:
    mode: str = "synthetic"          # synthetic | file | inline
    count: int = 100
    duration_s: tuple[float, float] = (20.0, 60.0)
    bitrate_bps: int = 1_000_000
    path: Optional[str] = None
    videos: tuple = ()


@dataclass(frozen=True)
class PeersConfig:
    count: int = 20
    capacity_bytes: int = 64_000_000
    upload_bps: float = 12_000_000
    region_weights: dict[str, float] = field(default_factory=lambda: {"north": 1.0})
    nat_classes: dict[str, float] = field(default_factory=lambda: {"cone": 0.8, "open": 0.1, "symmetric": 0.1})
    heartbeat_period_s: float = 30.0


@dataclass(frozen=True)
class LinksConfig:
    wlan_bps: float = 80_000_000
    half_duplex: bool = True
    per_frame_overhead_us: int = 120
    same_region_rtt_ms: tuple[float, float] = (20.0, 60.0)
    cross_region_rtt_ms: tuple[float, float] = (60.0, 160.0)
    loss: tuple[float, float] = (0.0, 0.01)


@dataclass(frozen=True)
class NatConfig:
    punch_delay_ms: float = 90.0
    punch_jitter_ms: float = 30.0
    failure_probability: float = 0.05


@dataclass(frozen=True)
class CdnConfig:
    connect_delay_ms: float = 100.0
    rate_bps: float = 20_000_000
    outages_s: tuple[tuple[float, float], ...] = ()
    unit_cost: float = 1.0


@dataclass(frozen=True)
class WorkloadConfig:
    clients: int = 20
    arrival_rate_per_s: float = 2.0
    zipf_exponent: float = 1.0
    continue_probability: float = 0.85
    videos_per_client: int = 3
    think_time_s: float = 1.0
    region_weights: dict[str, float] = field(default_factory=lambda: {"north": 1.0})
    nat_classes: dict[str, float] = field(default_factory=lambda: {"cone": 0.8, "open": 0.2})
    pcdn_enabled: bool = True
    duration_s: float = 600.0
    segment_len_s: float = 10.0


@dataclass(frozen=True)
class CycleConfig:
    length_s: float = 300.0
    view_threshold: int = 100
    super_popular_multiplier: int = 10
    peak_windows_s: tuple[tuple[float, float], ...] = ()
    distribution_bandwidth_bps: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class TrackerSection:
    candidate_count: int = 20
    return_count: int = 5
    liveness_window_s: float = 90.0
    rtt_ms: float = 40.0


@dataclass(frozen=True)
class DistributionConfig:
    mode: str = "popularity"         # popularity | static_random | none
    initial_mode: str = "none"       # none | uniform_random | zipf_proportional
    initial_fill: float = 0.8        # fill peers to this fraction of capacity


@dataclass(frozen=True)
class FaultsConfig:
    kill_peers_at_s: Optional[float] = None
    kill_mode: str = "reject"        # reject | silent


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 1
    catalog: CatalogConfig = CatalogConfig()
    regions: tuple[str, ...] = ("north",)
    peers: PeersConfig = PeersConfig()
    links: LinksConfig = LinksConfig()
    nat: NatConfig = NatConfig()
    cdn: CdnConfig = CdnConfig()
    peer_unit_cost: float = 0.25
    workload: WorkloadConfig = WorkloadConfig()
    thresholds: ClientThresholds = ClientThresholds()
    transport: TransportConfig = TransportConfig(reorder_window=96)
    scheduler: str = "bytescheduler"
    cycle: CycleConfig = CycleConfig()
    tracker: TrackerSection = TrackerSection()
    distribution: DistributionConfig = DistributionConfig()
    faults: FaultsConfig = FaultsConfig()


_TOP_KEYS = {"seed", "catalog", "regions", "vendors", "peers", "links", "nat", "cdn",
             "peer_unit_cost", "workload", "thresholds", "transport", "scheduler",
             "cycle", "tracker", "distribution", "faults"}


def _pair(c: _Checker, doc, path, key, default):
    v = doc.get(key, default)
    if v is default:
        return tuple(default)
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        c.fail(f"{path}.{key}", "expected [lo, hi]")
        return tuple(default)
    return (float(v[0]), float(v[1]))


def _weights(c: _Checker, doc, path, key, default):
    v = doc.get(key)
    if v is None:
        return dict(default)
    if not isinstance(v, dict) or not v:
        c.fail(f"{path}.{key}", "expected a non-empty mapping")
        return dict(default)
    out = {}
    for name, w in v.items():
        if not isinstance(w, (int, float)) or w < 0:
            c.fail(f"{path}.{key}.{name}", "weight must be a non-negative number")
        else:
            out[str(name)] = float(w)
    return out


def parse_scenario(doc: dict) -> ScenarioConfig:
    """Validate and build a ScenarioConfig; raises ConfigError listing every
    problem with its field path."""
    c = _Checker()
    if not isinstance(doc, dict):
        raise ConfigError(["top-level: expected a JSON object"])
    c.section(doc, "", _TOP_KEYS)

    seed = int(c.num(doc, "", "seed", 1))

    cat_doc = doc.get("catalog", {})
    c.section(cat_doc, "catalog", {"mode", "count", "duration_s", "bitrate_bps", "path", "videos"})
    mode = cat_doc.get("mode", "synthetic")
    if mode not in ("synthetic", "file", "inline"):
        c.fail("catalog.mode", f"unknown mode {mode!r}")
    catalog = CatalogConfig(
        mode=mode,
        count=int(c.num(cat_doc, "catalog", "count", 100, lo=0)),
        duration_s=_pair(c, cat_doc, "catalog", "duration_s", (20.0, 60.0)),
        bitrate_bps=int(c.num(cat_doc, "catalog", "bitrate_bps", 1_000_000, lo=1)),
        path=cat_doc.get("path"),
        videos=tuple(tuple(v) for v in cat_doc.get("videos", ())),
    )

    regions_doc = doc.get("regions", [{"name": "north"}])
    region_names = []
    for i, r in enumerate(regions_doc):
        name = r.get("name") if isinstance(r, dict) else r
        if not isinstance(name, str):
            c.fail(f"regions[{i}].name", "expected a string")
        else:
            region_names.append(name)

    p_doc = doc.get("peers", {})
    c.section(p_doc, "peers", {"count", "capacity_bytes", "upload_bps", "region_weights",
                               "nat_classes", "heartbeat_period_s"})
    peers = PeersConfig(
        count=int(c.num(p_doc, "peers", "count", 20, lo=0)),
        capacity_bytes=int(c.num(p_doc, "peers", "capacity_bytes", 64_000_000, lo=1)),
        upload_bps=float(c.num(p_doc, "peers", "upload_bps", 12_000_000, lo=1)),
        region_weights=_weights(c, p_doc, "peers", "region_weights",
                                {r: 1.0 for r in (region_names or ["north"])}),
        nat_classes=_weights(c, p_doc, "peers", "nat_classes",
                             {"cone": 0.8, "open": 0.1, "symmetric": 0.1}),
        heartbeat_period_s=float(c.num(p_doc, "peers", "heartbeat_period_s", 30.0, lo=1.0)),
    )

    l_doc = doc.get("links", {})
    c.section(l_doc, "links", {"wlan_bps", "half_duplex", "per_frame_overhead_us",
                               "same_region_rtt_ms", "cross_region_rtt_ms", "loss"})
    links = LinksConfig(
        wlan_bps=float(c.num(l_doc, "links", "wlan_bps", 80_000_000, lo=1)),
        half_duplex=bool(l_doc.get("half_duplex", True)),
        per_frame_overhead_us=int(c.num(l_doc, "links", "per_frame_overhead_us", 120, lo=0)),
        same_region_rtt_ms=_pair(c, l_doc, "links", "same_region_rtt_ms", (20.0, 60.0)),
        cross_region_rtt_ms=_pair(c, l_doc, "links", "cross_region_rtt_ms", (60.0, 160.0)),
        loss=_pair(c, l_doc, "links", "loss", (0.0, 0.01)),
    )

    n_doc = doc.get("nat", {})
    c.section(n_doc, "nat", {"punch_delay_ms", "punch_jitter_ms", "failure_probability"})
    nat = NatConfig(
        punch_delay_ms=float(c.num(n_doc, "nat", "punch_delay_ms", 90.0, lo=0)),
        punch_jitter_ms=float(c.num(n_doc, "nat", "punch_jitter_ms", 30.0, lo=0)),
        failure_probability=float(c.num(n_doc, "nat", "failure_probability", 0.05, lo=0, hi=1)),
    )

    cdn_doc = doc.get("cdn", {})
    c.section(cdn_doc, "cdn", {"connect_delay_ms", "rate_bps", "outages_s", "unit_cost"})
    cdn = CdnConfig(
        connect_delay_ms=float(c.num(cdn_doc, "cdn", "connect_delay_ms", 100.0, lo=0)),
        rate_bps=float(c.num(cdn_doc, "cdn", "rate_bps", 20_000_000, lo=1)),
        outages_s=tuple((float(a), float(b)) for a, b in cdn_doc.get("outages_s", ())),
        unit_cost=float(c.num(cdn_doc, "cdn", "unit_cost", 1.0, lo=0)),
    )

    w_doc = doc.get("workload", {})
    c.section(w_doc, "workload", {"clients", "arrival_rate_per_s", "zipf_exponent",
                                  "continue_probability", "videos_per_client", "think_time_s",
                                  "region_weights", "nat_classes", "pcdn_enabled",
                                  "duration_s", "segment_len_s"})
    workload = WorkloadConfig(
        clients=int(c.num(w_doc, "workload", "clients", 20, lo=0)),
        arrival_rate_per_s=float(c.num(w_doc, "workload", "arrival_rate_per_s", 2.0, lo=0.001)),
        zipf_exponent=float(c.num(w_doc, "workload", "zipf_exponent", 1.0, lo=0)),
        continue_probability=float(c.num(w_doc, "workload", "continue_probability", 0.85, lo=0, hi=1)),
        videos_per_client=int(c.num(w_doc, "workload", "videos_per_client", 3, lo=1)),
        think_time_s=float(c.num(w_doc, "workload", "think_time_s", 1.0, lo=0)),
        region_weights=_weights(c, w_doc, "workload", "region_weights",
                                {r: 1.0 for r in (region_names or ["north"])}),
        nat_classes=_weights(c, w_doc, "workload", "nat_classes", {"cone": 0.8, "open": 0.2}),
        pcdn_enabled=bool(w_doc.get("pcdn_enabled", True)),
        duration_s=float(c.num(w_doc, "workload", "duration_s", 600.0, lo=1)),
        segment_len_s=float(c.num(w_doc, "workload", "segment_len_s", 10.0, lo=0.5)),
    )

    th_doc = doc.get("thresholds", {})
    th_fields = set(ClientThresholds.__dataclass_fields__)
    c.section(th_doc, "thresholds", th_fields)
    thresholds = ClientThresholds(**{k: th_doc[k] for k in th_doc if k in th_fields})

    t_doc = doc.get("transport", {})
    tr_fields = set(TransportConfig.__dataclass_fields__)
    c.section(t_doc, "transport", tr_fields)
    transport = TransportConfig(**{**{"reorder_window": 96},
                                   **{k: t_doc[k] for k in t_doc if k in tr_fields}})

    scheduler = doc.get("scheduler", "bytescheduler")
    if scheduler not in POLICY_NAMES:
        c.fail("scheduler", f"must be one of {', '.join(POLICY_NAMES)}")

    cy_doc = doc.get("cycle", {})
    c.section(cy_doc, "cycle", {"length_s", "view_threshold", "super_popular_multiplier",
                                "peak_windows_s", "distribution_bandwidth_bps"})
    cycle = CycleConfig(
        length_s=float(c.num(cy_doc, "cycle", "length_s", 300.0, lo=1)),
        view_threshold=int(c.num(cy_doc, "cycle", "view_threshold", 100, lo=1)),
        super_popular_multiplier=int(c.num(cy_doc, "cycle", "super_popular_multiplier", 10, lo=1)),
        peak_windows_s=tuple((float(a), float(b)) for a, b in cy_doc.get("peak_windows_s", ())),
        distribution_bandwidth_bps={str(k): float(v) for k, v in
                                    cy_doc.get("distribution_bandwidth_bps", {}).items()},
    )

    trk_doc = doc.get("tracker", {})
    c.section(trk_doc, "tracker", {"candidate_count", "return_count", "liveness_window_s", "rtt_ms"})
    tracker = TrackerSection(
        candidate_count=int(c.num(trk_doc, "tracker", "candidate_count", 20, lo=1)),
        return_count=int(c.num(trk_doc, "tracker", "return_count", 5, lo=1)),
        liveness_window_s=float(c.num(trk_doc, "tracker", "liveness_window_s", 90.0, lo=1)),
        rtt_ms=float(c.num(trk_doc, "tracker", "rtt_ms", 40.0, lo=0)),
    )

    d_doc = doc.get("distribution", {})
    c.section(d_doc, "distribution", {"mode", "initial_mode", "initial_fill"})
    dist_mode = d_doc.get("mode", "popularity")
    if dist_mode not in ("popularity", "static_random", "none"):
        c.fail("distribution.mode", f"unknown mode {dist_mode!r}")
    init_mode = d_doc.get("initial_mode", "none")
    if init_mode not in ("none", "uniform_random", "zipf_proportional"):
        c.fail("distribution.initial_mode", f"unknown mode {init_mode!r}")
    distribution = DistributionConfig(
        mode=dist_mode, initial_mode=init_mode,
        initial_fill=float(c.num(d_doc, "distribution", "initial_fill", 0.8, lo=0, hi=1)),
    )

    f_doc = doc.get("faults", {})
    c.section(f_doc, "faults", {"kill_peers_at_s", "kill_mode"})
    kill_at = f_doc.get("kill_peers_at_s")
    faults = FaultsConfig(
        kill_peers_at_s=float(kill_at) if kill_at is not None else None,
        kill_mode=f_doc.get("kill_mode", "reject"),
    )
    if faults.kill_mode not in ("reject", "silent"):
        c.fail("faults.kill_mode", f"unknown mode {faults.kill_mode!r}")

    if c.errors:
        raise ConfigError(c.errors)
    return ScenarioConfig(
        seed=seed, catalog=catalog, regions=tuple(region_names or ["north"]),
        peers=peers, links=links, nat=nat, cdn=cdn,
        peer_unit_cost=float(c.num(doc, "", "peer_unit_cost", 0.25, lo=0)),
        workload=workload, thresholds=thresholds, transport=transport,
        scheduler=scheduler, cycle=cycle, tracker=tracker,
        distribution=distribution, faults=faults,
    )


def load_scenario(path) -> tuple[ScenarioConfig, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    return parse_scenario(doc), doc


def scenario_with(config: ScenarioConfig, **overrides: Any) -> ScenarioConfig:
    from dataclasses import replace

    return replace(config, **overrides)
