"""Experiment outputs: per-video records folded into a MetricsReport with the
metric definitions used throughout the result tables."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

US_PER_S = 1_000_000


@dataclass
class VideoRecord:
    """One playback's accounting, emitted when the video ends."""

    client_id: str
    video_id: str
    started_at: int
    startup_us: int | None
    completed: bool
    abandoned: bool
    failed: bool
    played_s: float
    rebuffer_events: int
    rebuffer_time_s: float
    entered_pcdn: bool
    jumped: bool
    pcdn_unavailable: bool
    waste_bytes: int
    cdn_bytes: int
    pcdn_bytes: int
    duplicate_bytes: int
    residue_bytes: int
    pcdn_received_bytes: int
    packets_needed: int
    packets_received: int
    segments_total: int
    segments_cdn: int
    segments_pcdn: int
    segments_pcdn_cached: int
    segments_pcdn_disk: int
    cdn_throughput_bps: float
    pcdn_throughput_bps: float
    pcdn_segment_time_us: int = 0
    pcdn_segments_timed: int = 0


@dataclass
class MetricsReport:
    videos_started: int = 0
    videos_completed: int = 0
    videos_abandoned: int = 0
    playback_failures: int = 0
    startup_mean_ms: float = 0.0
    rebuffer_rate: float = 0.0            # events / videos
    rebuffer_time_per_100s: float = 0.0   # stalled seconds per 100 s played
    redundancy_rate: float = 0.0          # duplicates / unique packets needed
    jump_rate: float = 0.0                # jumped videos / videos started on pcdn
    fallback_rate: float = 0.0            # jumped or pcdn-failed / videos that tried pcdn
    cache_hit_ratio: float = 0.0          # pcdn segments / all segments
    cache_hit_ratio_cached_tier: float = 0.0
    cache_hit_ratio_disk_tier: float = 0.0
    peer_traffic_share: float = 0.0       # pcdn bytes / all bytes
    download_speed_ratio: float = 0.0     # pcdn throughput / cdn throughput
    pcdn_mean_segment_ms: float = 0.0
    startup_samples: int = 0
    played_seconds: float = 0.0
    cdn_bytes: int = 0
    pcdn_bytes: int = 0
    duplicate_bytes: int = 0
    residue_bytes: int = 0
    delivered_bytes: int = 0
    waste_bytes: int = 0
    packets_needed: int = 0
    packets_received: int = 0
    cost: float = 0.0
    seed: int = 0
    scheduler: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def csv_row(self) -> dict:
        return {k: v for k, v in asdict(self).items()}


CSV_COLUMNS = sorted(MetricsReport.__dataclass_fields__)


def write_csv(reports: list[MetricsReport], fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
    writer.writeheader()
    for r in reports:
        writer.writerow(r.csv_row())


def csv_text(reports: list[MetricsReport]) -> str:
    buf = io.StringIO()
    write_csv(reports, buf)
    return buf.getvalue()


def compute_metrics(records: list[VideoRecord], seed: int = 0, scheduler: str = "",
                    cdn_unit_cost: float = 1.0, peer_unit_cost: float = 0.25) -> MetricsReport:
    """Fold playback records into the report; definitions live here and only
    here so every table shares them."""
    m = MetricsReport(seed=seed, scheduler=scheduler)
    m.videos_started = len(records)
    if not records:
        return m
    pcdn_started = 0
    pcdn_tried = 0
    pcdn_bad = 0
    startup_total_us = 0
    seg_time_us = 0
    seg_timed = 0
    cdn_tp = []
    pcdn_tp = []
    for r in records:
        m.videos_completed += r.completed
        m.videos_abandoned += r.abandoned
        m.playback_failures += r.failed
        if r.startup_us is not None:
            startup_total_us += r.startup_us
            m.startup_samples += 1
        m.played_seconds += r.played_s
        m.rebuffer_rate += r.rebuffer_events
        m.rebuffer_time_per_100s += r.rebuffer_time_s
        m.cdn_bytes += r.cdn_bytes
        m.pcdn_bytes += r.pcdn_bytes
        m.duplicate_bytes += r.duplicate_bytes
        m.residue_bytes += r.residue_bytes
        m.waste_bytes += r.waste_bytes
        m.packets_needed += r.packets_needed
        m.packets_received += r.packets_received
        m.cache_hit_ratio += r.segments_pcdn
        m.cache_hit_ratio_cached_tier += r.segments_pcdn_cached
        m.cache_hit_ratio_disk_tier += r.segments_pcdn_disk
        if r.entered_pcdn:
            pcdn_started += 1
        if r.entered_pcdn or r.pcdn_unavailable:
            pcdn_tried += 1
        if r.jumped or (r.entered_pcdn and r.failed):
            pcdn_bad += 1
        if r.jumped:
            m.jump_rate += 1
        if r.cdn_throughput_bps > 0:
            cdn_tp.append(r.cdn_throughput_bps)
        if r.pcdn_throughput_bps > 0:
            pcdn_tp.append(r.pcdn_throughput_bps)
        seg_time_us += r.pcdn_segment_time_us
        seg_timed += r.pcdn_segments_timed
    nvideos = len(records)
    segments_total = sum(r.segments_total for r in records)
    m.startup_mean_ms = (startup_total_us / m.startup_samples / 1000.0) if m.startup_samples else 0.0
    m.rebuffer_rate /= nvideos
    m.rebuffer_time_per_100s = (
        m.rebuffer_time_per_100s / m.played_seconds * 100.0 if m.played_seconds else 0.0)
    m.redundancy_rate = (
        (m.packets_received - m.packets_needed) / m.packets_needed if m.packets_needed else 0.0)
    m.jump_rate = m.jump_rate / pcdn_started if pcdn_started else 0.0
    m.fallback_rate = pcdn_bad / pcdn_tried if pcdn_tried else 0.0
    m.cache_hit_ratio = m.cache_hit_ratio / segments_total if segments_total else 0.0
    m.cache_hit_ratio_cached_tier = (
        m.cache_hit_ratio_cached_tier / segments_total if segments_total else 0.0)
    m.cache_hit_ratio_disk_tier = (
        m.cache_hit_ratio_disk_tier / segments_total if segments_total else 0.0)
    total_bytes = m.cdn_bytes + m.pcdn_bytes
    m.peer_traffic_share = m.pcdn_bytes / total_bytes if total_bytes else 0.0
    m.delivered_bytes = total_bytes
    m.download_speed_ratio = (
        (sum(pcdn_tp) / len(pcdn_tp)) / (sum(cdn_tp) / len(cdn_tp))
        if pcdn_tp and cdn_tp else 0.0)
    m.pcdn_mean_segment_ms = seg_time_us / seg_timed / 1000.0 if seg_timed else 0.0
    m.cost = m.cdn_bytes * cdn_unit_cost + (m.pcdn_bytes + m.duplicate_bytes) * peer_unit_cost
    return m
