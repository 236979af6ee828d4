"""Network primitives for the event loop: serialized links, a shared
(half-duplex) WLAN medium per client, NAT punching, and the ideal CDN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def tx_time_us(nbytes: int, bandwidth_bps: float) -> int:
    return int(math.ceil(nbytes * 8 * 1e6 / bandwidth_bps))


@dataclass
class LinkModel:
    """One sender-serialized link (e.g. a peer's uplink)."""

    propagation_us: int
    bandwidth_bps: float
    loss_probability: float = 0.0
    jitter_us: int = 0
    busy_until: int = 0

    def lost(self, rng: np.random.Generator) -> bool:
        return self.loss_probability > 0 and rng.random() < self.loss_probability

    def depart(self, now: int, nbytes: int) -> int:
        """Serialize a frame onto the link; returns the departure instant."""
        start = max(now, self.busy_until)
        leave = start + tx_time_us(nbytes, self.bandwidth_bps)
        self.busy_until = leave
        return leave

    def arrival(self, leave: int, rng: Optional[np.random.Generator] = None) -> int:
        t = leave + self.propagation_us
        if self.jitter_us and rng is not None:
            t += int(rng.integers(0, self.jitter_us + 1))
        return t


@dataclass
class WlanMedium:
    """The client's last hop. Half duplex: requests and data contend for the
    same air time, plus a fixed per-frame overhead for the collision-avoidance
    handshake."""

    bandwidth_bps: float = 80_000_000
    per_frame_overhead_us: int = 120
    half_duplex: bool = True
    _busy: int = 0
    _busy_up: int = 0

    def occupy(self, now: int, nbytes: int, upstream: bool = False) -> int:
        """Returns the instant the frame clears the medium."""
        tx = tx_time_us(nbytes, self.bandwidth_bps) + self.per_frame_overhead_us
        if self.half_duplex:
            start = max(now, self._busy)
            self._busy = start + tx
            return self._busy
        if upstream:
            start = max(now, self._busy_up)
            self._busy_up = start + tx
            return self._busy_up
        start = max(now, self._busy)
        self._busy = start + tx
        return self._busy


NAT_CLASSES = ("open", "cone", "symmetric")


@dataclass
class NatModel:
    punch_delay_mean_us: int = 120_000
    punch_delay_jitter_us: int = 40_000
    punch_failure_probability: float = 0.05
    # pairs that cannot traverse at all
    incompatible: frozenset = frozenset({("symmetric", "symmetric")})

    def compatible(self, class_a: str, class_b: str) -> bool:
        return (class_a, class_b) not in self.incompatible and \
            (class_b, class_a) not in self.incompatible

    def punch(self, rng: np.random.Generator, class_a: str, class_b: str) -> tuple[int, bool]:
        """Returns (delay_us, success). Incompatible pairs fail after a full
        timeout's worth of attempts."""
        jitter = int(rng.integers(-self.punch_delay_jitter_us, self.punch_delay_jitter_us + 1)) \
            if self.punch_delay_jitter_us else 0
        delay = max(1_000, self.punch_delay_mean_us + jitter)
        if not self.compatible(class_a, class_b):
            return delay * 2, False
        ok = rng.random() >= self.punch_failure_probability
        return delay, ok


@dataclass
class CdnFetch:
    """Analytic delivery schedule of one CDN fetch (no per-packet events)."""

    start_us: int           # transfer start (after connect)
    nbytes: int
    rate_bps: float
    outages: tuple[tuple[int, int], ...] = ()

    def bytes_at(self, t: int) -> int:
        if t <= self.start_us:
            return 0
        active = 0
        cursor = self.start_us
        for a, b in self.outages:
            if b <= cursor:
                continue
            if a >= t:
                break
            active += max(0, min(a, t) - cursor)
            cursor = max(cursor, b)
        active += max(0, t - cursor)
        return min(self.nbytes, int(active * self.rate_bps / 8e6))

    def completion_us(self) -> int:
        need = tx_time_us(self.nbytes, self.rate_bps)
        cursor = self.start_us
        for a, b in self.outages:
            if b <= cursor:
                continue
            gap = max(0, a - cursor)
            if need <= gap:
                return cursor + need
            need -= gap
            cursor = max(cursor, b)
        return cursor + need


@dataclass
class CdnModel:
    """The external CDN as a blackbox: fixed connect delay, fixed per-client
    rate, zero loss, unlimited concurrency."""

    connect_delay_us: int = 100_000
    rate_bps: float = 20_000_000
    outages: tuple[tuple[int, int], ...] = ()
    bytes_served: int = field(default=0)

    def fetch(self, now: int, nbytes: int) -> CdnFetch:
        self.bytes_served += nbytes
        return CdnFetch(now + self.connect_delay_us, nbytes, self.rate_bps, self.outages)
