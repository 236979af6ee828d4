"""Packet-level multipath schedulers.

The rate-matching policy ("bytescheduler") predicts, per path, when its next
packets will arrive, predicts when each overall-queue position will be needed
by the in-order sink, and fetches exactly the positions whose need time
matches the path's arrival time. Predictions come from a delivered-throughput
EWMA, deliberately decoupled from the instantaneous CC window. Baselines:
min-RTT and round-robin, which always take the queue front.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class PolicyKind(Enum):
    BYTE = "bytescheduler"
    MINRTT = "minrtt"
    ROUND_ROBIN = "roundrobin"


@dataclass(frozen=True)
class SchedulerPolicy:
    kind: PolicyKind
    redundancy_enabled: bool = False

    @classmethod
    def parse(cls, name: str) -> "SchedulerPolicy":
        key = name.strip().lower()
        if key == "bytescheduler":
            return cls(PolicyKind.BYTE, redundancy_enabled=True)
        if key == "bytescheduler-nr":
            return cls(PolicyKind.BYTE, redundancy_enabled=False)
        if key == "minrtt":
            return cls(PolicyKind.MINRTT)
        if key == "roundrobin":
            return cls(PolicyKind.ROUND_ROBIN)
        raise ValueError(f"unknown scheduler policy: {name!r}")


POLICY_NAMES = ("bytescheduler", "bytescheduler-nr", "minrtt", "roundrobin")


@dataclass
class PathForecast:
    """Delivered-rate estimate for one path (packets/second)."""

    path_id: int
    rate_pps: float = 0.0


def update_forecast(forecast: PathForecast, npackets: int, interval_us: int,
                    alpha: float = 0.25) -> PathForecast:
    """Fold one delivery sample into the forecast EWMA."""
    if interval_us <= 0:
        raise ValueError("interval must be > 0")
    if npackets <= 0:
        return forecast
    rate = npackets / (interval_us / 1e6)
    if forecast.rate_pps <= 0.0:
        forecast.rate_pps = rate
    else:
        forecast.rate_pps = (1 - alpha) * forecast.rate_pps + alpha * rate
    return forecast


def assign(policy: SchedulerPolicy, session, path, budget: int, now: int) -> list[int]:
    """Choose overall-queue positions for this path to pump.

    Baselines take the front; the rate-matching policy skips ahead so each
    selected position's predicted need time matches the path's predicted
    arrival time (within one player frame of slack).
    """
    qlen = len(session.queue)
    if budget <= 0 or qlen == 0:
        return []
    k = min(budget, qlen)
    if policy.kind is not PolicyKind.BYTE or len(session.alive_paths()) <= 1:
        return list(range(k))
    alive = session.alive_paths()
    agg = session.aggregate_rate_pps()
    rate = path.effective_rate_pps()
    if agg <= 0 or rate <= 0:
        return list(range(k))
    rtt_s = path.rtt_est_us / 1e6
    slack_s = session.config.slack_us / 1e6
    inflight = len(path.inflight)
    # need-time of queue position p: the earliest any path could land a packet,
    # plus the time for everything in flight and the first p queued seqs to
    # drain at the aggregate rate
    base_s = min(p2.rtt_est_us / 2e6 + 1.0 / p2.effective_rate_pps() for p2 in alive)
    pending = len(session.inflight_count)
    # positions past the reorder window would stall the sink; leave them alone
    max_p = max(0, session.config.reorder_window - pending - 1)
    positions = []
    prev = -1
    for j in range(budget):
        arrival_s = rtt_s / 2.0 + (inflight + j + 1) / rate
        p = max(0, math.ceil((arrival_s - base_s - slack_s) * agg) - pending)
        p = max(p, prev + 1)
        if p > max_p:
            break
        if p >= qlen:
            p = qlen - 1
            if p <= prev:
                break
        positions.append(p)
        prev = p
    return positions


def tail_redundancy(policy: SchedulerPolicy, session, path, spare_budget: int) -> list[int]:
    """Duplicate the last undelivered in-flight seqs onto this path once the
    unsent queue has drained, racing the task tail across paths."""
    if not policy.redundancy_enabled or spare_budget <= 0:
        return []
    if len(session.queue) > 0:
        return []
    candidates = [
        s for s, c in session.inflight_count.items()
        if c > 0 and s not in path.inflight and not session.is_received(s)
    ]
    if not candidates:
        return []
    candidates.sort()
    k = min(spare_budget, session.config.redundancy_cap, len(candidates))
    return candidates[-k:]


def pump_order(policy: SchedulerPolicy, session) -> list[int]:
    """Deterministic order in which paths get pump opportunities."""
    alive = sorted((p.path_id for p in session.alive_paths()))
    if not alive:
        return []
    if policy.kind is PolicyKind.ROUND_ROBIN:
        i = session.rr_cursor % len(alive)
        session.rr_cursor += 1
        return alive[i:] + alive[:i]
    # minrtt and bytescheduler: lowest-RTT path gets first pick
    return sorted(alive, key=lambda pid: (session.paths[pid].rtt_est_us, pid))
