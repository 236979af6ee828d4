"""Full-system scenario: tracker, peer servers, clients, the ideal CDN, and
the network models, all driven by one event loop.

run() executes a ScenarioConfig to completion and returns metrics plus the
per-client event log. Same config and seed, same bytes out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from pcdnsim import model, transport
from pcdnsim.client import ConnectionCache, PeerConnection, VideoPlayback, filter_peers
from pcdnsim.model import Network
from pcdnsim.peer import PeerServer
from pcdnsim.scheduler import SchedulerPolicy
from pcdnsim.simnet import workload as wl
from pcdnsim.simnet.config import ScenarioConfig
from pcdnsim.simnet.events import EventLoop
from pcdnsim.simnet.metrics import MetricsReport, VideoRecord, compute_metrics
from pcdnsim.simnet.netmodels import CdnModel, LinkModel, NatModel, WlanMedium
from pcdnsim.simnet.rng import StreamSet
from pcdnsim.tracker import Tracker, TrackerConfig

US_PER_S = 1_000_000
REQUEST_HEADER = 23
DATA_HEADER = 21
EVICT_STEP_US = 1_000


@dataclass
class PairLink:
    """Client<->peer (or peer<->peer) network parameters, drawn once."""

    one_way_us: int
    loss: float

    @property
    def rtt_us(self) -> int:
        return self.one_way_us * 2


@dataclass
class PeerNode:
    server: PeerServer
    uplink: LinkModel
    pending_ingests: list = field(default_factory=list)
    silent: bool = False


class CdnDownload:
    network = Network.CDN

    def __init__(self, fetch, total: int):
        self.fetch = fetch
        self.total = total
        self._frozen_at: Optional[int] = None

    def delivered_bytes(self, now: int) -> int:
        t = now if self._frozen_at is None else min(now, self._frozen_at)
        return self.fetch.bytes_at(t)

    def total_bytes(self) -> int:
        return self.total

    def failed(self) -> bool:
        return False

    def done(self, now: int) -> bool:
        return self.delivered_bytes(now) >= self.total

    def cancel(self) -> None:
        self._frozen_at = -1  # frozen; bytes already counted via freeze helper

    def freeze(self, now: int) -> None:
        self._frozen_at = now


class PcdnDownload:
    """One segment over the multipath transport against live peer servers."""

    network = Network.PCDN

    def __init__(self, scenario: "Scenario", client: "SimClient",
                 entry: model.VideoCatalogEntry, segment, conns: list[PeerConnection]):
        self.scenario = scenario
        self.client = client
        self.entry = entry
        self.segment = segment
        self.loop = scenario.loop
        byte_range = segment.byte_range
        paths = []
        self.path_peers: dict[int, PeerNode] = {}
        for i, conn in enumerate(conns):
            node = scenario.peers[conn.peer_id]
            paths.append((i, conn.peer_id, conn.rtt_us))
            self.path_peers[i] = node
        self.session = transport.open_session(
            entry.video_id, byte_range, entry.size, paths,
            scenario.policy, self.loop.now, config=scenario.config.transport)
        self.opened_at = self.loop.now
        self.completed_at: Optional[int] = None
        self._closed = False
        self._wake = None
        for node in self._distinct_nodes():
            node.server.session_opened(entry.video_id, self.loop.now)
        self.cached_tier = any(node.server.tier_cached(entry.video_id, self.loop.now)
                               for node in self._distinct_nodes())
        self._send_requests(self.session.pump_all(self.loop.now))
        self._arm_timer()

    def _distinct_nodes(self):
        seen = {}
        for node in self.path_peers.values():
            seen[node.server.peer_id] = node
        return [seen[k] for k in sorted(seen)]

    # --- SegmentDownload protocol -----------------------------------------

    def delivered_bytes(self, now: int) -> int:
        return self.session.delivered_bytes

    def total_bytes(self) -> int:
        return self.segment.nbytes

    def failed(self) -> bool:
        return self.session.failed

    def done(self, now: int) -> bool:
        return self.session.done

    def cancel(self) -> None:
        self._close()

    # --- wiring --------------------------------------------------------------

    def _close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._wake is not None:
            self._wake.cancel()
        self.session.cancel()
        for node in self._distinct_nodes():
            node.server.session_closed(self.entry.video_id, self.loop.now)

    def _send_requests(self, requests) -> None:
        for req in requests:
            node = self.path_peers[req.path_id]
            pair = self.scenario.pair_link(self.client.client_id, node.server.peer_id)
            rng = self.client.net_rng
            size = REQUEST_HEADER + 8 * len(req.packet_seqs)
            cleared = self.client.wlan.occupy(self.loop.now, size, upstream=True)
            if pair.loss and rng.random() < pair.loss:
                continue
            self.loop.at(cleared + pair.one_way_us, lambda r=req, n=node: self._at_peer(r, n))

    def _at_peer(self, req, node: PeerNode) -> None:
        if self._closed:
            return
        if node.silent:
            return  # killed peer: requests vanish, timers recover
        view = node.server.view(lambda: self.loop.now)
        result = transport.serve_request(view, self.entry.video_id, req,
                                         self.scenario.config.transport.packet_size)
        pair = self.scenario.pair_link(self.client.client_id, node.server.peer_id)
        rng = self.client.net_rng
        now = self.loop.now
        for pkt in result.packets:
            leave = node.uplink.depart(now, pkt.payload_size + DATA_HEADER)
            if pair.loss and rng.random() < pair.loss:
                continue
            self.loop.at(leave + pair.one_way_us,
                         lambda p=pkt, pid=req.path_id: self._at_radio(pid, p))
        if result.rejected:
            leave = node.uplink.depart(now, REQUEST_HEADER)
            self.loop.at(leave + pair.one_way_us,
                         lambda pid=req.path_id, seqs=tuple(result.rejected): self._on_reject(pid, seqs))

    def _at_radio(self, path_id: int, pkt) -> None:
        if self._closed:
            return
        done = self.client.wlan.occupy(self.loop.now, pkt.payload_size + DATA_HEADER)
        self.loop.at(done, lambda: self._deliver(path_id, pkt))

    def _deliver(self, path_id: int, pkt) -> None:
        if self._closed:
            return
        released = self.session.on_packet(path_id, pkt.packet_seq, pkt.payload, self.loop.now)
        if self.session.done:
            self.completed_at = self.loop.now
            self._close()
            return
        if released:
            self._send_requests(self.session.pump_all(self.loop.now))
        else:
            self._send_requests(self.session.pump(path_id, self.loop.now))
        self._arm_timer()

    def _on_reject(self, path_id: int, seqs) -> None:
        if self._closed:
            return
        self.session.on_reject(path_id, seqs, self.loop.now)
        if not self.session.failed:
            self._send_requests(self.session.pump_all(self.loop.now))
        self._arm_timer()

    def _on_timer(self) -> None:
        self._wake = None
        if self._closed:
            return
        expired = self.session.poll_timers(self.loop.now)
        if expired:
            self._send_requests(self.session.pump_all(self.loop.now))
        self._arm_timer()

    def _arm_timer(self) -> None:
        if self._closed:
            return
        deadline = self.session.next_deadline()
        if deadline is None:
            return
        if self._wake is not None and not self._wake.cancelled:
            if self._wake.fire_time <= deadline:
                return
            self._wake.cancel()
        self._wake = self.loop.at(deadline, self._on_timer)


class SimClient:
    def __init__(self, scenario: "Scenario", client_id: str, region: str, nat_class: str):
        self.scenario = scenario
        self.client_id = client_id
        self.region = region
        self.nat_class = nat_class
        cfg = scenario.config
        self.wlan = WlanMedium(cfg.links.wlan_bps, cfg.links.per_frame_overhead_us,
                               cfg.links.half_duplex)
        self.cache = ConnectionCache(cfg.thresholds.connection_retention_s)
        self.workload_rng = scenario.streams.get(f"client.{client_id}.workload")
        self.nat_rng = scenario.streams.get(f"client.{client_id}.nat")
        self.net_rng = scenario.streams.get(f"client.{client_id}.net")
        self.videos_watched = 0
        self.active: Optional[VideoPlayback] = None
        self.active_conns: list[PeerConnection] = []
        self.pcdn_setup_latency_us: Optional[int] = None
        self.video_meta: dict = {}
        self.done = False

    # --- video lifecycle -----------------------------------------------------

    def start(self) -> None:
        self._next_video()

    def _next_video(self) -> None:
        sc = self.scenario
        if self.videos_watched >= sc.config.workload.videos_per_client or \
                sc.loop.now >= sc.workload_end_us:
            self.done = True
            sc.client_finished()
            return
        idx = int(self.workload_rng.choice(len(sc.catalog), p=sc.zipf))
        entry = sc.catalog[idx]
        self.videos_watched += 1
        self.video_meta = {
            "video_id": entry.video_id, "started_at": sc.loop.now,
            "tried_pcdn": False, "cdn_segments": [], "pcdn_segments": [],
            "pcdn_downloads": [], "cdn_downloads": [],
        }
        self.active_conns = []
        pb = VideoPlayback(
            entry, sc.loop.now, sc.config.thresholds,
            start_download=self._start_download,
            continue_draw=lambda: bool(self.workload_rng.random()
                                       < sc.config.workload.continue_probability),
            log=lambda e: sc.log_event({"client": self.client_id,
                                        "video": entry.video_id, **e}),
            pcdn_enabled=sc.config.workload.pcdn_enabled,
            segment_len_s=sc.config.workload.segment_len_s,
            packet_size=sc.config.transport.packet_size)
        self.active = pb
        sc.log_event({"client": self.client_id, "video": entry.video_id,
                      "t": sc.loop.now, "event": "video_start"})
        if sc.config.workload.pcdn_enabled:
            self._begin_pcdn_setup(entry)
        sc.loop.after(sc.config.thresholds.tick_us, self._tick)

    def _tick(self) -> None:
        pb = self.active
        if pb is None:
            return
        pb.tick(self.scenario.loop.now)
        if pb.finished:
            self._finalize_video(pb)
            return
        self.scenario.loop.after(self.scenario.config.thresholds.tick_us, self._tick)

    def _finalize_video(self, pb: VideoPlayback) -> None:
        sc = self.scenario
        now = sc.loop.now
        self.scenario.finish_video(self, pb, self.video_meta)
        self.active = None
        think = int(sc.config.workload.think_time_s * US_PER_S)
        sc.loop.after(max(think, 1), self._next_video)

    # --- connection setup ------------------------------------------------------

    def _begin_pcdn_setup(self, entry: model.VideoCatalogEntry) -> None:
        sc = self.scenario
        pb = self.active
        t0 = sc.loop.now

        def on_located():
            if self.active is not pb or pb.finished:
                return
            descriptors = sc.tracker.locate(entry.video_id, self.region,
                                            self.nat_class, sc.loop.now)
            sc.locate_calls += 1
            if not descriptors:
                pb.pcdn.error = True
                self.video_meta["tried_pcdn"] = True
                return
            self.video_meta["tried_pcdn"] = True
            pending = {"count": len(descriptors), "probes": []}
            for desc in descriptors:
                self._connect_peer(desc, pending, pb, t0)

        sc.loop.after(sc.tracker_rtt_us, on_located)

    def _connect_peer(self, desc, pending: dict, pb: VideoPlayback, t0: int) -> None:
        sc = self.scenario
        now = sc.loop.now
        retained = self.cache.usable(desc.peer_id, now)
        if retained is not None:
            retained.last_used_at = now
            pending["probes"].append(retained)
            self._maybe_finish_setup(pending, pb, t0)
            return
        delay, ok = sc.nat.punch(self.nat_rng, self.nat_class, desc.nat_class)

        def punched():
            pair = sc.pair_link(self.client_id, desc.peer_id)
            probe = PeerConnection(desc.peer_id, sc.loop.now, sc.loop.now,
                                   pair.rtt_us, pair.loss, nat_ok=ok)
            pending["probes"].append(probe)
            self._maybe_finish_setup(pending, pb, t0)

        sc.loop.after(delay, punched)

    def _maybe_finish_setup(self, pending: dict, pb: VideoPlayback, t0: int) -> None:
        if len(pending["probes"]) < pending["count"]:
            return
        if self.active is not pb or pb.finished:
            return
        sc = self.scenario
        th = sc.config.thresholds
        kept = filter_peers(pending["probes"], th.rtt_max_us, th.loss_max)
        now = sc.loop.now
        for conn in kept:
            self.cache.store(conn)
        self.active_conns = kept
        if kept:
            pb.pcdn.connected = True
            pb.pcdn.connected_at = now
            pb.pcdn.setup_latency_us = now - t0
            self.pcdn_setup_latency_us = now - t0
            sc.pcdn_setup_samples.append(now - t0)
        else:
            pb.pcdn.error = True
        sc.log_event({"client": self.client_id, "t": now, "event": "pcdn_setup",
                      "peers": [c.peer_id for c in kept],
                      "latency_us": now - t0})

    # --- downloads ----------------------------------------------------------------

    def _start_download(self, segment, network: Network):
        sc = self.scenario
        entry = self.active.entry
        if network is Network.CDN:
            fetch = sc.cdn.fetch(sc.loop.now, segment.nbytes)
            dl = CdnDownload(fetch, segment.nbytes)
            self.video_meta["cdn_downloads"].append(
                (segment.index, sc.loop.now, fetch.completion_us(), segment.nbytes, dl))
            return dl
        conns = [c for c in self.active_conns
                 if sc.peers[c.peer_id].server.holds_video(entry.video_id)]
        if not conns:
            return None
        for c in conns:
            self.cache.touch(c.peer_id, sc.loop.now)
        try:
            dl = PcdnDownload(sc, self, entry, segment, conns)
        except transport.SessionRefused:
            return None
        self.video_meta["pcdn_downloads"].append((segment.index, dl))
        return dl


class Scenario:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.loop = EventLoop()
        self.streams = StreamSet(config.seed)
        self.policy = SchedulerPolicy.parse(config.scheduler)
        self.catalog = wl.build_catalog(config.catalog, self.streams.get("catalog"))
        self.catalog_by_id = {e.video_id: e for e in self.catalog}
        self.zipf = wl.zipf_weights(len(self.catalog), config.workload.zipf_exponent)
        self.nat = NatModel(
            punch_delay_mean_us=int(config.nat.punch_delay_ms * 1000),
            punch_delay_jitter_us=int(config.nat.punch_jitter_ms * 1000),
            punch_failure_probability=config.nat.failure_probability)
        self.cdn = CdnModel(
            connect_delay_us=int(config.cdn.connect_delay_ms * 1000),
            rate_bps=config.cdn.rate_bps,
            outages=tuple((int(a * US_PER_S), int(b * US_PER_S))
                          for a, b in config.cdn.outages_s))
        self.tracker = Tracker(TrackerConfig(
            candidate_count=config.tracker.candidate_count,
            return_count=config.tracker.return_count,
            liveness_window_us=int(config.tracker.liveness_window_s * US_PER_S),
            cycle_len_us=int(config.cycle.length_s * US_PER_S),
            view_threshold=config.cycle.view_threshold,
            super_popular_multiplier=config.cycle.super_popular_multiplier,
            peak_windows_us=tuple((int(a * US_PER_S), int(b * US_PER_S))
                                  for a, b in config.cycle.peak_windows_s),
            distribution_bandwidth_bps=dict(config.cycle.distribution_bandwidth_bps) or
            {r: config.peers.upload_bps * 2 for r in config.regions},
        ), nat_compatible=self.nat.compatible)
        for entry in self.catalog:
            self.tracker.register_video(entry.video_id, entry.size)
        self.tracker_rtt_us = int(config.tracker.rtt_ms * 1000)
        self.workload_end_us = int(config.workload.duration_s * US_PER_S)
        self.peers: dict[str, PeerNode] = {}
        self._pair_links: dict[tuple[str, str], PairLink] = {}
        self.events: list[dict] = []
        self.records: list[VideoRecord] = []
        self.pcdn_setup_samples: list[int] = []
        self.locate_calls = 0
        self.clients: list[SimClient] = []
        self._active_clients = 0
        self._build_peers()
        self._initial_placement()
        self._schedule_cycles()
        self._schedule_faults()

    # --- build ------------------------------------------------------------------

    def _build_peers(self) -> None:
        cfg = self.config
        rng = self.streams.get("peers")
        for i in range(cfg.peers.count):
            peer_id = f"p{i:03d}"
            region = wl.pick_weighted(rng, list(cfg.peers.region_weights), cfg.peers.region_weights)
            nat_class = wl.pick_weighted(rng, list(cfg.peers.nat_classes), cfg.peers.nat_classes)
            server = PeerServer(peer_id, region, f"vendor{i % 3}", nat_class,
                                cfg.peers.capacity_bytes, cfg.peers.upload_bps,
                                self.catalog_by_id)
            node = PeerNode(server, LinkModel(0, cfg.peers.upload_bps, 0.0))
            self.peers[peer_id] = node
            self.tracker.register_peer(peer_id, region, server.vendor, nat_class, self.loop.now)
            period = int(cfg.peers.heartbeat_period_s * US_PER_S)
            stagger = (i * period) // max(1, cfg.peers.count)
            self.loop.at(stagger, lambda n=node: self._heartbeat(n))

    def _initial_placement(self) -> None:
        mode = self.config.distribution.initial_mode
        if self.config.distribution.mode == "static_random":
            mode = "uniform_random"
        if mode == "none" or not self.catalog:
            return
        rng = self.streams.get("placement")
        weights = self.zipf if mode == "zipf_proportional" else None
        for peer_id in sorted(self.peers):
            node = self.peers[peer_id]
            target = int(node.server.store.capacity * self.config.distribution.initial_fill)
            guard = 0
            while node.server.store.used < target and guard < len(self.catalog) * 4:
                guard += 1
                idx = int(rng.choice(len(self.catalog), p=weights))
                entry = self.catalog[idx]
                if node.server.holds_video(entry.video_id):
                    continue
                if entry.size > node.server.store.capacity - node.server.store.used:
                    continue
                self._place_instant(node, entry)

    def _place_instant(self, node: PeerNode, entry: model.VideoCatalogEntry) -> None:
        for chunk in self.chunk_digests(entry.video_id):
            node.server.store.put(entry.video_id, chunk.seq, chunk.size, chunk.checksum)
        self.tracker.on_store_confirm(node.server.peer_id, entry.video_id, self.loop.now)

    _digest_cache: dict

    def chunk_digests(self, video_id: str):
        cache = getattr(self, "_digest_memo", None)
        if cache is None:
            cache = self._digest_memo = {}
        got = cache.get(video_id)
        if got is None:
            got = cache[video_id] = model.chunk_checksums(self.catalog_by_id[video_id])
        return got

    def _schedule_cycles(self) -> None:
        if self.config.distribution.mode != "popularity":
            return
        period = int(self.config.cycle.length_s * US_PER_S)

        def fire(k=1):
            decisions = self.tracker.end_cycle(self.loop.now)
            self.log_event({"t": self.loop.now, "event": "cycle_end",
                            "decisions": len(decisions)})
            if not self.finished():
                self.loop.after(period, lambda: fire(k + 1))

        self.loop.at(period, fire)

    def _schedule_faults(self) -> None:
        f = self.config.faults
        if f.kill_peers_at_s is None:
            return

        def kill():
            for peer_id in sorted(self.peers):
                node = self.peers[peer_id]
                if f.kill_mode == "silent":
                    node.silent = True
                node.server.online = False
            self.log_event({"t": self.loop.now, "event": "peers_killed",
                            "mode": f.kill_mode})

        self.loop.at(int(f.kill_peers_at_s * US_PER_S), kill)

    # --- shared helpers ------------------------------------------------------------

    def pair_link(self, a: str, b: str) -> PairLink:
        key = (a, b)
        got = self._pair_links.get(key)
        if got is not None:
            return got
        rng = self.streams.get(f"pair.{a}.{b}")
        links = self.config.links
        region_a = self._region_of(a)
        region_b = self._region_of(b)
        lo, hi = links.same_region_rtt_ms if region_a == region_b else links.cross_region_rtt_ms
        rtt_us = int(rng.uniform(lo, hi) * 1000)
        loss = float(rng.uniform(links.loss[0], links.loss[1]))
        link = PairLink(one_way_us=rtt_us // 2, loss=loss)
        self._pair_links[key] = link
        return link

    def _region_of(self, entity_id: str) -> str:
        node = self.peers.get(entity_id)
        if node is not None:
            return node.server.region
        for c in self.clients:
            if c.client_id == entity_id:
                return c.region
        return self.config.regions[0]

    def log_event(self, event: dict) -> None:
        self.events.append(event)

    def finished(self) -> bool:
        return self.clients != [] and self._active_clients == 0

    def client_finished(self) -> None:
        self._active_clients -= 1

    # --- heartbeats and distribution ----------------------------------------------

    def _heartbeat(self, node: PeerNode) -> None:
        server = node.server
        if node.silent or not server.online and self.config.faults.kill_mode == "silent":
            return  # dead peers stop beating; tracker evicts them
        now = self.loop.now
        msg = server.emit_heartbeat(now)
        reply = self.tracker.on_heartbeat(msg, now)
        # the beat also syncs the tracker's view of this peer's resident set
        indexed = set(self.tracker.stored_by.get(server.peer_id, set()))
        resident = set(server.resident_videos())
        for gone in sorted(indexed - resident):
            if self._ingesting(node, gone):
                continue
            self.tracker.on_store_drop(server.peer_id, gone)
        for cmd in reply.cache_commands:
            node.pending_ingests.append(cmd)
        self._pump_ingest(node)
        self.tracker.sweep(now)
        if not self.finished():
            self.loop.after(int(self.config.peers.heartbeat_period_s * US_PER_S),
                            lambda: self._heartbeat(node))

    def _ingesting(self, node: PeerNode, video_id: str) -> bool:
        op = node.server.ingest_op
        return op is not None and op.video_id == video_id

    def _pump_ingest(self, node: PeerNode) -> None:
        server = node.server
        if server.ingest_op is not None or not node.pending_ingests or not server.online:
            return
        cmd = node.pending_ingests.pop(0)
        if server.holds_video(cmd.video_id):
            return self._pump_ingest(node)
        op = server.begin_ingest(cmd.video_id, cmd.source, self.loop.now)
        if op is None:
            # no capacity without breaking protections: defer to a later cycle
            self.log_event({"t": self.loop.now, "event": "ingest_refused",
                            "peer": server.peer_id, "video": cmd.video_id})
            return self._pump_ingest(node)
        self._ingest_step(node)

    def _ingest_step(self, node: PeerNode) -> None:
        server = node.server
        op = server.ingest_op
        if op is None or not server.online:
            return
        if op.done:
            server.ingest_op = None
            return
        step = op.steps[op.cursor]
        if step[0] == "evict":
            server.ingest_step()
            self.loop.after(EVICT_STEP_US, lambda: self._ingest_step(node))
            return
        if step[0] == "commit":
            server.ingest_step()
            self.loop.after(self.tracker_rtt_us, lambda: self._confirm_store(node, op.video_id))
            self._pump_ingest(node)
            return
        # write step: fetch the chunk from the source first
        _, seq, size = step
        if op.source == "cdn":
            delay = self.cdn.connect_delay_us // 4 + \
                int(math.ceil(size * 8 * US_PER_S / self.cdn.rate_bps))
            self.loop.after(delay, lambda: self._ingest_write(node))
            return
        source = self.peers.get(op.source)
        if source is None or not source.server.holds_video(op.video_id) or \
                source.silent or not source.server.online:
            # source lost mid-transfer: roll back and retry from the CDN
            server.abort_ingest()
            self.log_event({"t": self.loop.now, "event": "ingest_source_lost",
                            "peer": server.peer_id, "video": op.video_id})
            retry = server.begin_ingest(op.video_id, "cdn", self.loop.now)
            if retry is not None:
                self._ingest_step(node)
            return
        pair = self.pair_link(server.peer_id, op.source)
        leave = source.uplink.depart(self.loop.now, size)
        self.loop.at(leave + pair.one_way_us, lambda: self._ingest_write(node))

    def _ingest_write(self, node: PeerNode) -> None:
        if node.server.ingest_op is None or not node.server.online:
            return
        node.server.ingest_step()
        self._ingest_step(node)

    def _confirm_store(self, node: PeerNode, video_id: str) -> None:
        self.tracker.on_store_confirm(node.server.peer_id, video_id, self.loop.now)
        self.log_event({"t": self.loop.now, "event": "store_confirm",
                        "peer": node.server.peer_id, "video": video_id})

    # --- video completion accounting -----------------------------------------------

    def finish_video(self, client: SimClient, pb: VideoPlayback, meta: dict) -> None:
        now = self.loop.now
        cdn_bytes = 0
        cdn_tp = []
        for seg_idx, t0, t_done, nbytes, dl in meta["cdn_downloads"]:
            dl.freeze(now)
            got = dl.delivered_bytes(now)
            cdn_bytes += got
            if got >= nbytes and t_done > t0:
                cdn_tp.append(nbytes * 8 * US_PER_S / (t_done - t0))
        pcdn_bytes = 0
        dup_bytes = 0
        residue = 0
        received_bytes = 0
        needed = 0
        received = 0
        pcdn_tp = []
        cached_hits = 0
        disk_hits = 0
        seg_time_us = 0
        seg_timed = 0
        for seg_idx, dl in meta["pcdn_downloads"]:
            dl.cancel()
            s = dl.session
            pcdn_bytes += s.delivered_bytes
            dup_bytes += s.duplicate_bytes
            residue += sum(len(p) for p in s.reorder.values())
            received_bytes += s.received_bytes
            needed += s.seq_hi - s.seq_lo
            received += s.packets_received
            if dl.completed_at is not None and dl.completed_at > dl.opened_at:
                pcdn_tp.append(dl.total_bytes() * 8 * US_PER_S /
                               (dl.completed_at - dl.opened_at))
                seg_time_us += dl.completed_at - dl.opened_at
                seg_timed += 1
            if dl.cached_tier:
                cached_hits += 1
            else:
                disk_hits += 1
        failed = not pb.finished
        record = VideoRecord(
            client_id=client.client_id,
            video_id=pb.entry.video_id,
            started_at=meta["started_at"],
            startup_us=pb.startup_latency_us,
            completed=pb.finished and not pb.abandoned,
            abandoned=pb.abandoned,
            failed=failed,
            played_s=pb.playback.play_position_s,
            rebuffer_events=pb.playback.rebuffer_events,
            rebuffer_time_s=pb.playback.rebuffer_time_s,
            entered_pcdn=pb.entered_pcdn,
            jumped=pb.jumped,
            pcdn_unavailable=meta["tried_pcdn"] and not pb.entered_pcdn,
            waste_bytes=pb.waste_bytes,
            cdn_bytes=cdn_bytes,
            pcdn_bytes=pcdn_bytes,
            duplicate_bytes=dup_bytes,
            residue_bytes=residue,
            pcdn_received_bytes=received_bytes,
            packets_needed=needed,
            packets_received=received,
            segments_total=len(pb.segments),
            segments_cdn=sum(1 for d in pb.downloads if d is not None and d.network is Network.CDN),
            segments_pcdn=len(meta["pcdn_downloads"]),
            segments_pcdn_cached=cached_hits,
            segments_pcdn_disk=disk_hits,
            cdn_throughput_bps=sum(cdn_tp) / len(cdn_tp) if cdn_tp else 0.0,
            pcdn_throughput_bps=sum(pcdn_tp) / len(pcdn_tp) if pcdn_tp else 0.0,
            pcdn_segment_time_us=seg_time_us,
            pcdn_segments_timed=seg_timed,
        )
        self.records.append(record)

    # --- run -------------------------------------------------------------------------

    def run(self) -> "RunResult":
        cfg = self.config
        arrivals = wl.arrival_times(cfg.workload, self.streams.get("arrivals"))
        crng = self.streams.get("clients")
        for i, t in enumerate(arrivals):
            client_id = f"c{i:03d}"
            region = wl.pick_weighted(crng, list(cfg.workload.region_weights),
                                      cfg.workload.region_weights)
            nat_class = wl.pick_weighted(crng, list(cfg.workload.nat_classes),
                                         cfg.workload.nat_classes)
            client = SimClient(self, client_id, region, nat_class)
            self.clients.append(client)
            self._active_clients += 1
            self.loop.at(t, client.start)
        hard_cap = self.workload_end_us * 3 + 600 * US_PER_S
        while not self.finished() and self.loop.now < hard_cap and self.loop.pending() > 0:
            self.loop.run(until=min(self.loop.now + US_PER_S, hard_cap))
        for client in self.clients:
            if client.active is not None:
                pb = client.active
                self.finish_video(client, pb, client.video_meta)
        metrics = compute_metrics(self.records, seed=cfg.seed, scheduler=cfg.scheduler,
                                  cdn_unit_cost=cfg.cdn.unit_cost,
                                  peer_unit_cost=cfg.peer_unit_cost)
        return RunResult(metrics, self.events, self.records, self)


@dataclass
class RunResult:
    metrics: MetricsReport
    events: list[dict]
    records: list[VideoRecord]
    scenario: Scenario


def run(config: ScenarioConfig) -> RunResult:
    return Scenario(config).run()
