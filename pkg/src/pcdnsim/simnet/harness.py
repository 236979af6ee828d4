"""Standalone driver for one transfer session over simulated paths.

Used by the transport/scheduler test suites and by the scheduler-comparison
CLI: it wires a TransferSession to per-path links, a shared WLAN medium, and
a store view, then runs the event loop until the task completes or dies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from pcdnsim import model, transport
from pcdnsim.scheduler import SchedulerPolicy
from pcdnsim.simnet.events import EventLoop
from pcdnsim.simnet.netmodels import LinkModel, WlanMedium
from pcdnsim.simnet.rng import StreamSet
from pcdnsim.transport import DataRequest, ReadStatus, TransportConfig

REQUEST_HEADER = 23   # framing bytes per request, plus 8 per seq
DATA_HEADER = 21


@dataclass
class PathSpec:
    path_id: int
    rtt_us: int               # round-trip propagation (both hops)
    rate_bps: float           # peer uplink
    loss: float = 0.0
    peer_id: str = ""

    def __post_init__(self):
        if not self.peer_id:
            self.peer_id = f"peer{self.path_id}"


class GeneratorView:
    """Store view that always serves the video's synthetic content."""

    def __init__(self, entry: model.VideoCatalogEntry):
        self.entry = entry

    def read_packet(self, video_id, packet_seq, packet_size):
        lo, hi = model.packet_byte_range(self.entry.size, packet_seq, packet_size)
        return ReadStatus.OK, model.video_bytes(self.entry, lo, hi - lo)


class RejectingView:
    """Wraps a view, rejecting once switched off (eviction mid-transfer)."""

    def __init__(self, inner):
        self.inner = inner
        self.available = True

    def read_packet(self, video_id, packet_seq, packet_size):
        if not self.available:
            return ReadStatus.ABSENT, None
        return self.inner.read_packet(video_id, packet_seq, packet_size)


@dataclass
class HarnessResult:
    completed: bool
    completion_us: int
    packets_received: int
    redundant: int
    needed: int
    delivery_order: list[int] = field(default_factory=list)
    data: bytes = b""

    @property
    def redundancy_rate(self) -> float:
        return self.redundant / self.needed if self.needed else 0.0


class SessionHarness:
    def __init__(self, entry: model.VideoCatalogEntry, byte_range, policy: SchedulerPolicy,
                 paths: list[PathSpec], seed: int = 1,
                 config: TransportConfig = transport.DEFAULT_CONFIG,
                 wlan: Optional[WlanMedium] = None, store_views=None,
                 strict: bool = False, audit_interval: int = 0):
        self.entry = entry
        self.loop = EventLoop()
        self.streams = StreamSet(seed)
        self.wlan = wlan if wlan is not None else WlanMedium()
        self.links: dict[int, LinkModel] = {}
        self.rngs = {}
        self.views = {}
        default_view = GeneratorView(entry)
        for spec in paths:
            self.links[spec.path_id] = LinkModel(spec.rtt_us // 2, spec.rate_bps, spec.loss)
            self.rngs[spec.path_id] = self.streams.get(f"path{spec.path_id}")
            self.views[spec.path_id] = (store_views or {}).get(spec.path_id, default_view)
        self.session = transport.open_session(
            entry.video_id, byte_range, entry.size,
            [(s.path_id, s.peer_id, s.rtt_us) for s in paths],
            policy, self.loop.now, config=config, sink=self._sink,
            strict=strict, audit_interval=audit_interval)
        self.assembled = bytearray()
        self.delivery_order: list[int] = []
        self._wake = None
        self.completed_at: Optional[int] = None

    # --- sinks and event handlers -----------------------------------------

    def _sink(self, seq: int, payload: bytes) -> None:
        self.delivery_order.append(seq)
        self.assembled.extend(payload)

    def _send_requests(self, requests: list[DataRequest]) -> None:
        for req in requests:
            link = self.links[req.path_id]
            rng = self.rngs[req.path_id]
            size = REQUEST_HEADER + 8 * len(req.packet_seqs)
            cleared = self.wlan.occupy(self.loop.now, size, upstream=True)
            if link.lost(rng):
                continue
            self.loop.at(link.arrival(cleared, rng), lambda r=req: self._at_server(r))

    def _at_server(self, req: DataRequest) -> None:
        view = self.views[req.path_id]
        result = transport.serve_request(view, self.session.video_id, req,
                                         self.session.config.packet_size)
        link = self.links[req.path_id]
        rng = self.rngs[req.path_id]
        now = self.loop.now
        for pkt in result.packets:
            leave = link.depart(now, pkt.payload_size + DATA_HEADER)
            if link.lost(rng):
                continue
            radio = link.arrival(leave, rng)
            self.loop.at(radio, lambda p=pkt, pid=req.path_id: self._at_radio(pid, p))
        if result.rejected:
            leave = link.depart(now, REQUEST_HEADER)
            self.loop.at(link.arrival(leave, rng),
                         lambda pid=req.path_id, seqs=tuple(result.rejected): self._on_reject(pid, seqs))

    def _at_radio(self, path_id: int, pkt) -> None:
        done = self.wlan.occupy(self.loop.now, pkt.payload_size + DATA_HEADER)
        self.loop.at(done, lambda: self._deliver(path_id, pkt))

    def _deliver(self, path_id: int, pkt) -> None:
        released = self.session.on_packet(path_id, pkt.packet_seq, pkt.payload, self.loop.now)
        if self.session.done and self.completed_at is None:
            self.completed_at = self.loop.now
            return
        if released:
            # watermark moved: the reorder window may have unblocked any path
            self._send_requests(self.session.pump_all(self.loop.now))
        else:
            self._send_requests(self.session.pump(path_id, self.loop.now))
        self._arm_timer()

    def _on_reject(self, path_id: int, seqs) -> None:
        self.session.on_reject(path_id, seqs, self.loop.now)
        self._send_requests(self.session.pump_all(self.loop.now))
        self._arm_timer()

    def _on_timer(self) -> None:
        self._wake = None
        expired = self.session.poll_timers(self.loop.now)
        if expired:
            self._send_requests(self.session.pump_all(self.loop.now))
        self._arm_timer()

    def _arm_timer(self) -> None:
        deadline = self.session.next_deadline()
        if deadline is None:
            return
        if self._wake is not None and not self._wake.cancelled:
            if self._wake.fire_time <= deadline:
                return
            self._wake.cancel()
        self._wake = self.loop.at(deadline, self._on_timer)

    # --- run ---------------------------------------------------------------

    def run(self, until: Optional[int] = None, max_events: int = 20_000_000) -> HarnessResult:
        self._send_requests(self.session.pump_all(self.loop.now))
        self._arm_timer()
        while (self.completed_at is None and not self.session.failed
               and self.loop.pending() > 0):
            step_until = self.loop.now + 1_000_000
            if until is not None:
                step_until = min(step_until, until)
            self.loop.run(until=step_until, max_events=max_events)
            if until is not None and self.loop.now >= until:
                break
        s = self.session
        if s.strict:
            s.audit()
        needed = s.seq_hi - s.seq_lo
        return HarnessResult(
            completed=s.done,
            completion_us=self.completed_at if self.completed_at is not None else self.loop.now,
            packets_received=s.packets_received,
            redundant=s.redundant_received,
            needed=needed,
            delivery_order=self.delivery_order,
            data=bytes(self.assembled),
        )
