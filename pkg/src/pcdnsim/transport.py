"""Pull-based reliable multipath transport.

A client-side TransferSession owns one download task (a packet-aligned byte
range of one video) and any number of paths to peer servers. It keeps the
four reliability queues: the overall request queue of yet-to-be-sent seqs,
per-path request queues of in-flight seqs with retransmission deadlines,
per-path received logs, and the overall received set with a reorder buffer
that releases the in-order prefix to the sink.

Sessions are pure state machines: all I/O is injected as (event, timestamp)
calls and all effects are returned as values. The server side is a single
stateless function over a read view of a peer's chunk store.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Protocol

from pcdnsim import scheduler as _scheduler
from pcdnsim.model import Packet, seq_range_for_byte_range


@dataclass(frozen=True)
class TransportConfig:
    packet_size: int = 1200
    bundle_size: int = 16          # seqs per bundled request
    reorder_window: int = 256      # max packets held above the watermark
    rto_min_us: int = 100_000
    rtt_alpha: float = 0.125
    rtt_beta: float = 0.25
    cc_initial_budget: int = 8
    redundancy_cap: int = 32       # max duplicated tail seqs per pump
    slack_us: int = 33_000
    forecast_alpha: float = 0.25
    forecast_window_us: int = 100_000
    # in-flight never exceeds pacing_headroom x the path's delay-bandwidth
    # product; keeps self-queueing from eating the reorder window
    pacing_headroom: float = 2.0


DEFAULT_CONFIG = TransportConfig()


class SessionRefused(Exception):
    """Session cannot be opened (empty range or no usable path)."""


@dataclass(frozen=True)
class DataRequest:
    request_id: int
    path_id: int
    packet_seqs: tuple[int, ...]
    issued_at: int

    def __post_init__(self):
        if not self.packet_seqs:
            raise ValueError("empty bundle")
        if len(set(self.packet_seqs)) != len(self.packet_seqs):
            raise ValueError("duplicate seqs in bundle")


class ReadStatus(Enum):
    OK = "ok"
    ABSENT = "absent"
    CORRUPT = "corrupt"


class StoreReadView(Protocol):
    def read_packet(self, video_id: str, packet_seq: int, packet_size: int) -> tuple[ReadStatus, Optional[bytes]]: ...


@dataclass
class ServeResult:
    packets: list[Packet] = field(default_factory=list)
    rejected: list[int] = field(default_factory=list)
    corrupt: list[int] = field(default_factory=list)


def serve_request(view: StoreReadView, video_id: str, request: DataRequest,
                  packet_size: int) -> ServeResult:
    """Serve a bundled request from a peer's store.

    Seqs whose chunk is absent are rejected; a checksum mismatch on read is
    treated as absent and additionally flagged corrupt so the peer re-fetches.
    """
    result = ServeResult()
    for seq in request.packet_seqs:
        status, payload = view.read_packet(video_id, seq, packet_size)
        if status is ReadStatus.OK:
            result.packets.append(Packet(video_id, seq, len(payload), payload))
        else:
            result.rejected.append(seq)
            if status is ReadStatus.CORRUPT:
                result.corrupt.append(seq)
    return result


class DefaultCC:
    """AIMD budget of in-flight requests: +1 per window of acks, x0.5 on loss."""

    def __init__(self, initial: int = 8):
        self.budget = initial
        self._credit = 0

    def on_ack(self) -> int:
        self._credit += 1
        if self._credit >= self.budget:
            self.budget += 1
            self._credit = 0
        return self.budget

    def on_loss(self) -> int:
        self.budget = max(1, self.budget // 2)
        self._credit = 0
        return self.budget


class RequestQueue:
    """Overall request queue with positional (queue-direct) access.

    Backed by an indexable ring plus a hole set, so position p resolves to a
    raw slot in O(1) with short probes past holes; a small front list holds
    timed-out seqs that must be re-sent first. Compacts when holes dominate.
    """

    def __init__(self, seqs):
        self._ring: list[Optional[int]] = list(seqs)
        self._head = 0
        self._holes = 0
        self._front: list[int] = []
        self._pos: dict[int, int] = {s: i for i, s in enumerate(self._ring)}  # -1 => front

    def __len__(self) -> int:
        return len(self._pos)

    def __contains__(self, seq: int) -> bool:
        return seq in self._pos

    def remaining(self) -> list[int]:
        return self._front + [s for s in self._ring[self._head:] if s is not None]

    def reinsert(self, seqs) -> None:
        for s in seqs:
            if s in self._pos:
                raise ValueError(f"seq {s} already queued")
            self._front.append(s)
            self._pos[s] = -1

    def discard(self, seq: int) -> bool:
        idx = self._pos.pop(seq, None)
        if idx is None:
            return False
        if idx == -1:
            self._front.remove(seq)
        else:
            self._ring[idx] = None
            self._holes += 1
            self._maybe_compact()
        return True

    def take_positions(self, positions, seq_cap: Optional[int] = None) -> list[int]:
        """Remove and return the seqs nearest the given positions (ascending).

        Positions are taken in descending order so earlier indices stay valid;
        seqs above seq_cap are skipped (reorder-window flow control).
        """
        taken = []
        for p in sorted(set(positions), reverse=True):
            s = self._take_near(p, seq_cap)
            if s is not None:
                taken.append(s)
        taken.sort()
        return taken

    def _advance_head(self) -> None:
        ring = self._ring
        while self._head < len(ring) and ring[self._head] is None:
            self._head += 1
            self._holes -= 1

    def _take_near(self, p: int, cap: Optional[int]) -> Optional[int]:
        nfront = len(self._front)
        if p < nfront:
            s = self._front[p]
            if cap is not None and s > cap:
                return None
            del self._front[p]
            del self._pos[s]
            return s
        self._advance_head()
        ring = self._ring
        n = len(ring)
        if self._head >= n:
            return None
        i = min(self._head + (p - nfront), n - 1)
        while i < n and ring[i] is None:
            i += 1
        if i >= n:
            i = n - 1
            while i >= self._head and ring[i] is None:
                i -= 1
            if i < self._head:
                return None
        if cap is not None and ring[i] > cap:
            return None
        s = ring[i]
        ring[i] = None
        self._holes += 1
        del self._pos[s]
        self._maybe_compact()
        return s

    def _maybe_compact(self) -> None:
        live = len(self._ring) - self._head - self._holes
        if self._holes > 32 and self._holes > live:
            self._ring = [s for s in self._ring[self._head:] if s is not None]
            self._head = 0
            self._holes = 0
            for i, s in enumerate(self._ring):
                self._pos[s] = i


class PathState:
    """Per-path transport state: RTT/loss estimators, in-flight request queue
    with deadlines, received log counters, CC, and the delivery forecast."""

    def __init__(self, path_id: int, peer_id: str, rtt_hint_us: int, config: TransportConfig):
        self.path_id = path_id
        self.peer_id = peer_id
        self.config = config
        self.rtt_est_us = float(rtt_hint_us)
        self.rtt_var_us = rtt_hint_us / 2.0
        self.inflight: dict[int, tuple[int, int]] = {}  # seq -> (deadline, issued_at)
        self.cc = DefaultCC(config.cc_initial_budget)
        self.forecast = _scheduler.PathForecast(path_id)
        self.alive = True
        self.packets_delivered = 0
        self.packets_lost = 0
        self.received_log: list[tuple[int, int, int]] = []  # (seq, arrived_at, rtt_sample)
        self._win_start: Optional[int] = None
        self._win_count = 0

    @property
    def loss_estimate(self) -> float:
        total = self.packets_delivered + self.packets_lost
        return self.packets_lost / total if total else 0.0

    def rto_us(self) -> int:
        rto = 2.0 * self.rtt_est_us + 4.0 * self.rtt_var_us
        return max(self.config.rto_min_us, int(rto))

    def observe_rtt(self, sample_us: int) -> None:
        a, b = self.config.rtt_alpha, self.config.rtt_beta
        self.rtt_var_us = (1 - b) * self.rtt_var_us + b * abs(sample_us - self.rtt_est_us)
        self.rtt_est_us = (1 - a) * self.rtt_est_us + a * sample_us

    def on_delivered(self, now: int) -> None:
        self.packets_delivered += 1
        if self._win_start is None:
            self._win_start = now
        self._win_count += 1
        interval = now - self._win_start
        if interval >= self.config.forecast_window_us:
            _scheduler.update_forecast(self.forecast, self._win_count, interval,
                                       alpha=self.config.forecast_alpha)
            self._win_start = now
            self._win_count = 0

    def effective_rate_pps(self) -> float:
        if self.forecast.rate_pps > 0:
            return self.forecast.rate_pps
        # bootstrap before any delivery sample: one cc window per RTT
        return max(1.0, self.cc.budget / max(self.rtt_est_us, 1_000.0) * 1e6)


class TransferSession:
    """Client-side state machine for one multipath download task."""

    def __init__(self, video_id: str, byte_range: tuple[int, int], video_size: int,
                 paths, policy: _scheduler.SchedulerPolicy, now: int,
                 config: TransportConfig = DEFAULT_CONFIG,
                 sink: Optional[Callable[[int, bytes], None]] = None,
                 strict: bool = False, audit_interval: int = 0):
        start, end = byte_range
        if end <= start:
            raise SessionRefused("empty byte range")
        if not paths:
            raise SessionRefused("no paths")
        self.video_id = video_id
        self.byte_range = byte_range
        self.video_size = video_size
        self.config = config
        self.policy = policy
        self.sink = sink
        self.seq_lo, self.seq_hi = seq_range_for_byte_range(byte_range, config.packet_size)
        self.queue = RequestQueue(range(self.seq_lo, self.seq_hi))
        self.paths: dict[int, PathState] = {}
        for path_id, peer_id, rtt_hint_us in paths:
            self.paths[path_id] = PathState(path_id, peer_id, rtt_hint_us, config)
        self.watermark = self.seq_lo - 1
        self.reorder: dict[int, bytes] = {}
        self.inflight_count: dict[int, int] = {}
        self.extra_copies: dict[int, int] = {}
        self.opened_at = now
        self.rr_cursor = 0
        self._request_counter = 0
        self.packets_received = 0
        self.redundant_received = 0
        self.protocol_violations = 0
        self.rejects_received = 0
        self.delivered_bytes = 0
        self.duplicate_bytes = 0
        self.received_bytes = 0
        self.strict = strict
        self._audit_interval = audit_interval
        self._ops = 0
        self.audits_run = 0

    # --- queries ---------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.watermark == self.seq_hi - 1

    @property
    def failed(self) -> bool:
        return not self.done and not any(p.alive for p in self.paths.values())

    def is_received(self, seq: int) -> bool:
        return seq <= self.watermark or seq in self.reorder

    def alive_paths(self):
        return [p for p in self.paths.values() if p.alive]

    def aggregate_rate_pps(self) -> float:
        return sum(p.effective_rate_pps() for p in self.alive_paths())

    def next_deadline(self) -> Optional[int]:
        deadlines = [dl for p in self.paths.values() for dl, _ in p.inflight.values()]
        return min(deadlines) if deadlines else None

    # --- operations ------------------------------------------------------

    def pump(self, path_id: int, now: int) -> list[DataRequest]:
        """Extract seqs for this path per the scheduler and bundle them."""
        path = self.paths[path_id]
        if not path.alive:
            return []
        allowed = path.cc.budget
        if self.config.pacing_headroom and path.forecast.rate_pps > 0:
            bdp = path.forecast.rate_pps * path.rtt_est_us / 1e6
            cap = max(self.config.cc_initial_budget, math.ceil(bdp * self.config.pacing_headroom))
            allowed = min(allowed, cap)
        budget = allowed - len(path.inflight)
        if budget <= 0:
            return []
        positions = _scheduler.assign(self.policy, self, path, budget, now)
        cap = self.watermark + self.config.reorder_window
        seqs = self.queue.take_positions(positions, seq_cap=cap)
        spare = budget - len(seqs)
        dups = _scheduler.tail_redundancy(self.policy, self, path, spare)
        for s in seqs + dups:
            self._mark_inflight(path, s, now)
        requests = []
        all_seqs = seqs + dups
        for i in range(0, len(all_seqs), self.config.bundle_size):
            self._request_counter += 1
            requests.append(DataRequest(self._request_counter, path_id,
                                        tuple(all_seqs[i:i + self.config.bundle_size]), now))
        self._tick_audit()
        return requests

    def pump_all(self, now: int) -> list[DataRequest]:
        requests = []
        for path_id in _scheduler.pump_order(self.policy, self):
            requests.extend(self.pump(path_id, now))
        return requests

    def on_packet(self, path_id: int, seq: int, payload: bytes, now: int) -> list[tuple[int, bytes]]:
        """Process one arriving data packet; returns the in-order packets
        released to the player sink."""
        self.packets_received += 1
        if not (self.seq_lo <= seq < self.seq_hi):
            self.protocol_violations += 1
            return []
        self.received_bytes += len(payload)
        path = self.paths.get(path_id)
        if path is not None and seq in path.inflight:
            _, issued_at = path.inflight.pop(seq)
            self._dec_inflight(seq)
            path.observe_rtt(now - issued_at)
            path.received_log.append((seq, now, now - issued_at))
            path.cc.on_ack()
            path.on_delivered(now)
        if self.is_received(seq):
            self.redundant_received += 1
            self.duplicate_bytes += len(payload)
            self._sync_extra(seq)
            self._tick_audit()
            return []
        # a timed-out seq can arrive late while requeued (or re-pumped elsewhere)
        self.queue.discard(seq)
        self.reorder[seq] = payload
        delivered = []
        while (nxt := self.watermark + 1) in self.reorder:
            pl = self.reorder.pop(nxt)
            self.watermark = nxt
            self.delivered_bytes += len(pl)
            delivered.append((nxt, pl))
            if self.sink is not None:
                self.sink(nxt, pl)
        self._sync_extra(seq)
        self._tick_audit()
        return delivered

    def poll_timers(self, now: int) -> list[int]:
        """Expire overdue in-flight seqs back to the front of the overall
        queue; one loss signal per path per poll."""
        expired_total = []
        for path in self.paths.values():
            expired = [s for s, (dl, _) in path.inflight.items() if dl <= now]
            if not expired:
                continue
            for s in expired:
                del path.inflight[s]
                self._dec_inflight(s)
                path.packets_lost += 1
                covered = self.inflight_count.get(s, 0) > 0
                if not self.is_received(s) and not covered and s not in self.queue:
                    self.queue.reinsert([s])
                self._sync_extra(s)
            path.cc.on_loss()
            expired_total.extend(expired)
        self._tick_audit()
        return expired_total

    def on_reject(self, path_id: int, seqs, now: int) -> None:
        """Peer no longer holds the content: reclaim its in-flight seqs and
        stop using the path (stores evict whole videos)."""
        path = self.paths[path_id]
        self.rejects_received += len(seqs)
        for s in seqs:
            if s in path.inflight:
                del path.inflight[s]
                self._dec_inflight(s)
                covered = self.inflight_count.get(s, 0) > 0
                if not self.is_received(s) and not covered and s not in self.queue:
                    self.queue.reinsert([s])
                self._sync_extra(s)
        path.alive = False
        self._tick_audit()

    def cancel(self) -> None:
        for path in self.paths.values():
            path.alive = False
            path.inflight.clear()
        self.inflight_count.clear()
        self.extra_copies.clear()

    # --- internals -------------------------------------------------------

    def _mark_inflight(self, path: PathState, seq: int, now: int) -> None:
        path.inflight[seq] = (now + path.rto_us(), now)
        self.inflight_count[seq] = self.inflight_count.get(seq, 0) + 1
        self._sync_extra(seq)

    def _dec_inflight(self, seq: int) -> None:
        c = self.inflight_count.get(seq, 0) - 1
        if c > 0:
            self.inflight_count[seq] = c
        else:
            self.inflight_count.pop(seq, None)

    def _sync_extra(self, seq: int) -> None:
        c = self.inflight_count.get(seq, 0)
        extra = c if self.is_received(seq) else max(0, c - 1)
        if extra:
            self.extra_copies[seq] = extra
        else:
            self.extra_copies.pop(seq, None)

    def _tick_audit(self) -> None:
        if not self.strict:
            return
        self._ops += 1
        if self._audit_interval and self._ops % self._audit_interval:
            return
        self.audit()

    def audit(self) -> None:
        """Full partition check: every in-range seq sits in exactly one home,
        plus its tracked duplicate multiplicity."""
        self.audits_run += 1
        inflight_by_seq: dict[int, int] = {}
        for p in self.paths.values():
            for s in p.inflight:
                inflight_by_seq[s] = inflight_by_seq.get(s, 0) + 1
        assert inflight_by_seq == self.inflight_count, "inflight accounting drift"
        for seq in range(self.seq_lo, self.seq_hi):
            homes = int(self.is_received(seq)) + int(seq in self.queue) + inflight_by_seq.get(seq, 0)
            expected = 1 + self.extra_copies.get(seq, 0)
            assert homes == expected, (
                f"partition violated for seq {seq}: homes={homes} expected={expected}")
        assert self.packets_received - (self.watermark - self.seq_lo + 1 + len(self.reorder)) \
            - self.protocol_violations == self.redundant_received, "redundancy accounting drift"


def open_session(video_id: str, byte_range: tuple[int, int], video_size: int, paths,
                 policy: _scheduler.SchedulerPolicy, now: int,
                 config: TransportConfig = DEFAULT_CONFIG, **kwargs) -> TransferSession:
    """Open a transfer task; refuses empty ranges and empty path sets
    (the caller then falls back to the CDN)."""
    return TransferSession(video_id, byte_range, video_size, paths, policy, now,
                           config=config, **kwargs)
