"""Client library: hybrid CDN/peer-network switching, the segment pipeline
with a prefetch depth of one, peer filtering and connection retention, and
playback/rebuffer accounting.

VideoPlayback is clock-driven: the simulation calls tick() on a fixed cadence
and supplies segment downloads through an injected factory, so the switching
logic is testable with fakes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Protocol

from pcdnsim.model import Network, Segment, VideoCatalogEntry, segment_video

US_PER_S = 1_000_000


class SwitchMode(Enum):
    CDN_STARTUP = "cdn_startup"
    PCDN = "pcdn"
    CDN_FALLBACK = "cdn_fallback"


@dataclass(frozen=True)
class ClientThresholds:
    min_remaining_segments: int = 2
    min_user_bandwidth_bps: float = 300_000.0
    min_buffer_s: float = 2.0
    pcdn_connect_timeout_s: float = 3.0
    fallback_buffer_s: float = 1.0
    fallback_rate_factor: float = 0.8
    rate_window_s: float = 2.0
    startup_cdn_segments: int = 1
    rtt_max_us: int = 500_000
    loss_max: float = 0.10
    connection_retention_s: float = 120.0
    tick_us: int = 100_000


DEFAULT_THRESHOLDS = ClientThresholds()


@dataclass
class SessionFacts:
    """Inputs to the five-question entry chain, in chain order."""

    pcdn_error: bool
    remaining_segments: int
    user_bandwidth_bps: float
    connect_deadline_passed: bool
    pcdn_connected: bool
    buffer_s: float


def evaluate_entry(thresholds: ClientThresholds, facts: SessionFacts) -> bool:
    """The startup switching chain; every question must clear, in order."""
    if facts.pcdn_error:
        return False
    if facts.remaining_segments < thresholds.min_remaining_segments:
        return False  # too little data left to be worth switching
    if facts.user_bandwidth_bps < thresholds.min_user_bandwidth_bps:
        return False
    if facts.connect_deadline_passed and not facts.pcdn_connected:
        return False  # connection timed out
    return facts.pcdn_connected and facts.buffer_s >= thresholds.min_buffer_s


def evaluate_fallback(thresholds: ClientThresholds, buffer_s: float,
                      pcdn_rate_bps: Optional[float], bitrate_bps: float,
                      pcdn_error: bool) -> Optional[str]:
    """Returns the triggering condition (for the audit log) or None."""
    if pcdn_error:
        return "pcdn_error"
    if buffer_s < thresholds.fallback_buffer_s:
        return "buffer_low"
    if pcdn_rate_bps is not None and pcdn_rate_bps < thresholds.fallback_rate_factor * bitrate_bps:
        return "rate_low"
    return None


@dataclass
class PeerConnection:
    peer_id: str
    established_at: int
    last_used_at: int
    rtt_us: int
    loss: float
    nat_ok: bool = True


def filter_peers(probes: list[PeerConnection], rtt_max_us: int = 500_000,
                 loss_max: float = 0.10) -> list[PeerConnection]:
    """Drop peers with poor probe metrics; keep the rest ordered by RTT."""
    kept = [p for p in probes
            if p.nat_ok and p.rtt_us <= rtt_max_us and p.loss <= loss_max]
    kept.sort(key=lambda p: (p.rtt_us, p.peer_id))
    return kept


class ConnectionCache:
    """Per-client retained peer connections, reusable within the retention cap."""

    def __init__(self, retention_s: float = 120.0):
        self.retention_us = int(retention_s * US_PER_S)
        self._conns: dict[str, PeerConnection] = {}

    def usable(self, peer_id: str, now: int) -> Optional[PeerConnection]:
        conn = self._conns.get(peer_id)
        if conn is not None and now - conn.last_used_at <= self.retention_us:
            return conn
        return None

    def store(self, conn: PeerConnection) -> None:
        self._conns[conn.peer_id] = conn

    def touch(self, peer_id: str, now: int) -> None:
        conn = self._conns.get(peer_id)
        if conn is not None:
            conn.last_used_at = now


class SegmentDownload(Protocol):
    network: Network
    def delivered_bytes(self, now: int) -> int: ...
    def total_bytes(self) -> int: ...
    def failed(self) -> bool: ...
    def done(self, now: int) -> bool: ...
    def cancel(self) -> None: ...


@dataclass
class PlaybackState:
    current_segment: int = 0
    play_position_s: float = 0.0
    buffer_level_s: float = 0.0
    rebuffer_events: int = 0
    rebuffer_time_s: float = 0.0
    jumps_to_cdn: int = 0


@dataclass
class PcdnLinkState:
    """What the connection-setup machinery reports back to the playback."""

    connected: bool = False
    connected_at: Optional[int] = None
    error: bool = False
    setup_latency_us: Optional[int] = None


class VideoPlayback:
    """One video watch: segment pipeline, network switching, and accounting.

    The driver supplies ``start_download(segment, network) -> SegmentDownload``
    and a ``continue_draw()`` for the per-segment-boundary abandon decision.
    """

    def __init__(self, entry: VideoCatalogEntry, now: int,
                 thresholds: ClientThresholds,
                 start_download: Callable[[Segment, Network], Optional[SegmentDownload]],
                 continue_draw: Callable[[], bool] = lambda: True,
                 log: Callable[[dict], None] = lambda e: None,
                 pcdn_enabled: bool = True,
                 segment_len_s: float = 10.0,
                 packet_size: int = 1200):
        self.entry = entry
        self.segments = segment_video(entry, segment_len_s, packet_size)
        self.thresholds = thresholds
        self._start_download = start_download
        self._continue_draw = continue_draw
        self._log = log
        self.pcdn_enabled = pcdn_enabled
        self.started_at = now
        self.mode = SwitchMode.CDN_STARTUP
        self.pcdn = PcdnLinkState()
        self.playback = PlaybackState()
        self.downloads: list[Optional[SegmentDownload]] = [None] * len(self.segments)
        self.playing = False
        self.startup_latency_us: Optional[int] = None
        self.stalled = False
        self.finished = False
        self.abandoned = False
        self.waste_bytes = 0
        self.entered_pcdn = False
        self.jumped = False
        self._last_tick = now
        self._boundaries_drawn = 0
        self._rate_samples: list[tuple[int, int, int]] = []  # (t, pcdn_bytes, total_bytes)
        self._pcdn_active_since: Optional[int] = None
        self._seg_starts = self._prefix_durations()

    def _prefix_durations(self) -> list[float]:
        starts = [0.0]
        for seg in self.segments:
            starts.append(starts[-1] + seg.play_duration_s)
        return starts

    # --- progress queries ---------------------------------------------------

    def segment_at(self, pos_s: float) -> int:
        for i in range(len(self.segments)):
            if pos_s < self._seg_starts[i + 1]:
                return i
        return len(self.segments) - 1

    def frontier_s(self, now: int) -> float:
        """Seconds of contiguous downloaded media from the start."""
        t = 0.0
        for i, seg in enumerate(self.segments):
            d = self.downloads[i]
            if d is None:
                break
            got = d.delivered_bytes(now)
            total = seg.nbytes
            if total == 0 or got >= total:
                t += seg.play_duration_s
                continue
            t += seg.play_duration_s * (got / total)
            break
        return t

    def delivered_of(self, i: int, now: int) -> int:
        d = self.downloads[i]
        return 0 if d is None else min(d.delivered_bytes(now), self.segments[i].nbytes)

    def bytes_by_network(self, now: int) -> dict[Network, int]:
        out = {Network.CDN: 0, Network.PCDN: 0}
        for i, d in enumerate(self.downloads):
            if d is not None:
                out[d.network] += self.delivered_of(i, now)
        return out

    def pcdn_rate_bps(self, now: int, since: Optional[int] = None) -> Optional[float]:
        """Measured peer-network throughput over the rate window, or None when
        no peer download has been active long enough to judge."""
        window = int(self.thresholds.rate_window_s * US_PER_S)
        lo = max(now - window, since if since is not None else 0)
        samples = [s for s in self._rate_samples if s[0] >= lo]
        if len(samples) < 2:
            return None
        t0, p0, _ = samples[0]
        t1, p1, _ = samples[-1]
        if t1 - t0 < window // 2:
            return None
        return (p1 - p0) * 8 * US_PER_S / (t1 - t0)

    def user_bandwidth_bps(self, now: int) -> float:
        window = int(self.thresholds.rate_window_s * US_PER_S)
        samples = [s for s in self._rate_samples if now - s[0] <= window]
        if len(samples) < 2:
            return float("inf")  # no evidence yet; don't block entry on it
        t0, _, b0 = samples[0]
        t1, _, b1 = samples[-1]
        if t1 == t0:
            return float("inf")
        return (b1 - b0) * 8 * US_PER_S / (t1 - t0)

    # --- the clock ------------------------------------------------------------

    def tick(self, now: int) -> None:
        if self.finished:
            return
        dt_s = (now - self._last_tick) / US_PER_S
        self._last_tick = now
        self._sample_rates(now)
        self._advance_playback(now, dt_s)
        if self.finished:
            return
        self._evaluate_switching(now)
        self._pipeline(now)

    def _sample_rates(self, now: int) -> None:
        by_net = self.bytes_by_network(now)
        self._rate_samples.append((now, by_net[Network.PCDN],
                                   by_net[Network.CDN] + by_net[Network.PCDN]))
        horizon = now - 2 * int(self.thresholds.rate_window_s * US_PER_S)
        while self._rate_samples and self._rate_samples[0][0] < horizon:
            self._rate_samples.pop(0)

    def _advance_playback(self, now: int, dt_s: float) -> None:
        frontier = self.frontier_s(now)
        pb = self.playback
        if not self.playing:
            d0 = self.downloads[0]
            if d0 is not None and d0.done(now):
                self.playing = True
                self.startup_latency_us = now - self.started_at
                self._log({"t": now, "event": "playback_started",
                           "startup_us": self.startup_latency_us})
            pb.buffer_level_s = frontier
            return
        advance = min(dt_s, max(0.0, frontier - pb.play_position_s))
        stalled_for = dt_s - advance
        new_pos = pb.play_position_s + advance
        # abandon draws at each crossed segment boundary
        while self._boundaries_drawn + 1 < len(self.segments) + 1 and \
                new_pos >= self._seg_starts[self._boundaries_drawn + 1] - 1e-9:
            self._boundaries_drawn += 1
            if self._boundaries_drawn < len(self.segments) and not self._continue_draw():
                pb.play_position_s = self._seg_starts[self._boundaries_drawn]
                self._abandon(now)
                return
        pb.play_position_s = new_pos
        pb.current_segment = self.segment_at(new_pos)
        pb.buffer_level_s = max(0.0, frontier - new_pos)
        if new_pos >= self.entry.duration_s - 1e-9:
            self._complete(now)
            return
        if stalled_for > 1e-9:
            if not self.stalled:
                self.stalled = True
                pb.rebuffer_events += 1
                self._log({"t": now, "event": "rebuffer_begin", "pos_s": round(new_pos, 3)})
            pb.rebuffer_time_s += stalled_for
        elif self.stalled:
            self.stalled = False
            self._log({"t": now, "event": "rebuffer_end", "pos_s": round(new_pos, 3)})

    def _evaluate_switching(self, now: int) -> None:
        th = self.thresholds
        if self.mode is SwitchMode.CDN_STARTUP and self.pcdn_enabled:
            deadline = self.started_at + int(th.pcdn_connect_timeout_s * US_PER_S)
            remaining = sum(1 for i, d in enumerate(self.downloads)
                            if d is None or not d.done(now))
            facts = SessionFacts(
                pcdn_error=self.pcdn.error,
                remaining_segments=remaining,
                user_bandwidth_bps=self.user_bandwidth_bps(now),
                connect_deadline_passed=now > deadline,
                pcdn_connected=self.pcdn.connected,
                buffer_s=self.playback.buffer_level_s,
            )
            if evaluate_entry(th, facts):
                self.mode = SwitchMode.PCDN
                self.entered_pcdn = True
                self._log({"t": now, "event": "mode_change", "mode": self.mode.value})
            elif facts.connect_deadline_passed and not self.pcdn.connected:
                self.pcdn.error = True
        elif self.mode is SwitchMode.PCDN:
            pending_content = any(
                d is None or (not d.done(now) and not d.failed()) for d in self.downloads)
            if not pending_content:
                return  # tail of the video: buffer drains by design, nothing to switch
            active_pcdn = any(
                d is not None and d.network is Network.PCDN and not d.done(now) and not d.failed()
                for d in self.downloads)
            rate = self.pcdn_rate_bps(now, since=self._pcdn_active_since) if active_pcdn else None
            reason = evaluate_fallback(th, self.playback.buffer_level_s, rate,
                                       self.entry.bitrate_bps, self.pcdn.error)
            if reason is not None:
                self._jump_to_cdn(now, reason)

    def _jump_to_cdn(self, now: int, reason: str) -> None:
        self.mode = SwitchMode.CDN_FALLBACK
        self.jumped = True
        self.playback.jumps_to_cdn += 1
        self._log({"t": now, "event": "fallback", "reason": reason})

    def _pipeline(self, now: int) -> None:
        """Prefetch depth one: the playing segment plus at most the next."""
        if not self.segments:
            self._complete(now)
            return
        if not self.playing:
            # startup: fetch only the first segment; prefetch begins with playback
            if self.downloads[0] is None:
                self.downloads[0] = self._begin(0, self._network_for(0), now)
            return
        playing_idx = self.segment_at(self.playback.play_position_s)
        # restart failed downloads on the CDN (a dead peer set mid-segment)
        for i, d in enumerate(self.downloads):
            if d is not None and d.failed() and not d.done(now):
                self.pcdn.error = True
                if self.mode is SwitchMode.PCDN:
                    self._jump_to_cdn(now, "pcdn_session_failed")
                self._log({"t": now, "event": "segment_restart", "segment": i})
                self.downloads[i] = self._begin(i, Network.CDN, now)
        for i in (playing_idx, playing_idx + 1):
            if i >= len(self.segments) or self.downloads[i] is not None:
                continue
            if i > playing_idx:
                active_beyond = sum(
                    1 for j in range(playing_idx + 1, len(self.segments))
                    if self.downloads[j] is not None and not self.downloads[j].done(now))
                assert active_beyond <= 1, "prefetch depth exceeded"
                if active_beyond >= 1:
                    continue
            self.downloads[i] = self._begin(i, self._network_for(i), now)

    def _network_for(self, seg_index: int) -> Network:
        if seg_index < self.thresholds.startup_cdn_segments:
            return Network.CDN
        return Network.PCDN if self.mode is SwitchMode.PCDN else Network.CDN

    def _begin(self, i: int, network: Network, now: int) -> Optional[SegmentDownload]:
        seg = self.segments[i]
        dl = self._start_download(seg, network)
        if dl is None and network is Network.PCDN:
            # peer network refused (no usable paths): mark and fall back
            self.pcdn.error = True
            if self.mode is SwitchMode.PCDN:
                self._jump_to_cdn(now, "pcdn_open_failed")
            dl = self._start_download(seg, Network.CDN)
        if dl is not None:
            seg.network_mark = dl.network
            if dl.network is Network.PCDN:
                self._pcdn_active_since = now
            self._log({"t": now, "event": "segment_start", "segment": i,
                       "network": dl.network.value})
        return dl

    # --- terminal states ---------------------------------------------------

    def _waste(self, now: int) -> int:
        waste = 0
        for i, seg in enumerate(self.segments):
            got = self.delivered_of(i, now)
            played_s = min(max(self.playback.play_position_s - self._seg_starts[i], 0.0),
                           seg.play_duration_s)
            played_bytes = math.ceil(seg.nbytes * played_s / seg.play_duration_s) \
                if seg.play_duration_s else 0
            waste += max(0, got - played_bytes)
        return waste

    def _abandon(self, now: int) -> None:
        self.abandoned = True
        self.finished = True
        for d in self.downloads:
            if d is not None and not d.done(now):
                d.cancel()
        self.waste_bytes = self._waste(now)
        self._log({"t": now, "event": "abandoned",
                   "pos_s": round(self.playback.play_position_s, 3),
                   "waste_bytes": self.waste_bytes})

    def _complete(self, now: int) -> None:
        self.finished = True
        self.playback.play_position_s = self.entry.duration_s
        self.waste_bytes = self._waste(now)
        self._log({"t": now, "event": "video_end", "waste_bytes": self.waste_bytes})
