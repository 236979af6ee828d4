"""Peer server: chunk store with per-chunk checksums, priority-based video
replacement with journaled (crash-safe) eviction, request serving, and
heartbeat emission.

Stores hold chunk metadata only; payload bytes are re-materialized from the
deterministic content stream on read, with injected corruption modeled as
damaged physical bytes that fail their checksum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from pcdnsim import model
from pcdnsim.transport import ReadStatus

US_PER_S = 1_000_000

CACHE_TIER_WINDOW_US = 60 * US_PER_S
TRANSIT_GRACE_US = 5 * US_PER_S
FREQ_WINDOW_CYCLES = 3
TRANSIT_PROTECTION_FLOOR = 0.5   # at most half of in-transit videos listed as victims


class CrashPoint(Exception):
    """Raised by the crash-injection hook mid-ingest."""


@dataclass
class ChunkRecord:
    size: int
    checksum: int
    corrupt: bool = False
    verified: bool = False


class ChunkStore:
    """Capacity-bounded map of resident chunks, snapshot/restore-able."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.chunks: dict[tuple[str, int], ChunkRecord] = {}
        self.used = 0

    def put(self, video_id: str, seq: int, size: int, checksum: int) -> None:
        key = (video_id, seq)
        old = self.chunks.get(key)
        if old is not None:
            self.used -= old.size
        self.chunks[key] = ChunkRecord(size, checksum)
        self.used += size
        if self.used > self.capacity:
            raise ValueError(f"store over capacity: {self.used} > {self.capacity}")

    def drop(self, video_id: str, seq: int) -> None:
        rec = self.chunks.pop((video_id, seq), None)
        if rec is not None:
            self.used -= rec.size

    def video_chunks(self, video_id: str) -> list[int]:
        return sorted(seq for (vid, seq) in self.chunks if vid == video_id)

    def video_bytes_used(self, video_id: str) -> int:
        return sum(rec.size for (vid, _), rec in self.chunks.items() if vid == video_id)

    def free_space(self) -> int:
        return self.capacity - self.used

    def to_snapshot(self) -> str:
        doc = {
            "capacity": self.capacity,
            "chunks": [
                {"video": vid, "seq": seq, "size": rec.size,
                 "checksum": rec.checksum, "corrupt": rec.corrupt}
                for (vid, seq), rec in sorted(self.chunks.items())
            ],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_snapshot(cls, text: str) -> "ChunkStore":
        doc = json.loads(text)
        store = cls(doc["capacity"])
        for c in doc["chunks"]:
            store.put(c["video"], c["seq"], c["size"], c["checksum"])
            store.chunks[(c["video"], c["seq"])].corrupt = c["corrupt"]
        return store


@dataclass
class VictimRecord:
    video_id: str
    chunks: list[tuple[int, int, int]]  # (seq, size, checksum)


@dataclass
class EvictionJournal:
    """Temp record of an in-progress replacement: enough to restore the
    pre-operation resident set if the operation dies partway."""

    op_id: int
    incoming_video: str
    incoming_chunks: list[tuple[int, int]]          # (seq, size) planned
    victims: list[VictimRecord]
    evicted: list[tuple[str, int]] = field(default_factory=list)
    written: list[int] = field(default_factory=list)
    phase: str = "plan"                              # plan|evict|write|commit

    def to_text(self) -> str:
        doc = {
            "op_id": self.op_id,
            "incoming_video": self.incoming_video,
            "incoming_chunks": self.incoming_chunks,
            "victims": [{"video_id": v.video_id, "chunks": v.chunks} for v in self.victims],
            "evicted": self.evicted,
            "written": self.written,
            "phase": self.phase,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "EvictionJournal":
        doc = json.loads(text)
        return cls(
            op_id=doc["op_id"],
            incoming_video=doc["incoming_video"],
            incoming_chunks=[tuple(c) for c in doc["incoming_chunks"]],
            victims=[VictimRecord(v["video_id"], [tuple(c) for c in v["chunks"]])
                     for v in doc["victims"]],
            evicted=[tuple(e) for e in doc["evicted"]],
            written=list(doc["written"]),
            phase=doc["phase"],
        )


def recover(store: ChunkStore, journal_text: Optional[str]) -> str:
    """Restart-time repair: roll an interrupted replacement back (or, once
    committed, forward). Returns 'clean', 'rolled_back' or 'rolled_forward'."""
    if journal_text is None:
        return "clean"
    j = EvictionJournal.from_text(journal_text)
    if j.phase == "commit":
        for victim in j.victims:
            for seq, _, _ in victim.chunks:
                store.drop(victim.video_id, seq)
        return "rolled_forward"
    for seq in set(j.written):
        store.drop(j.incoming_video, seq)
    for victim in j.victims:
        for seq, size, checksum in victim.chunks:
            if (victim.video_id, seq) not in store.chunks:
                store.put(victim.video_id, seq, size, checksum)
    return "rolled_back"


@dataclass
class IngestOp:
    video_id: str
    source: str
    journal: EvictionJournal
    steps: list[tuple]      # ("evict", video, seq, size, checksum) | ("write", seq, size) | ("commit",)
    cursor: int = 0

    @property
    def done(self) -> bool:
        return self.cursor >= len(self.steps)


class PeerServer:
    """One peer: storage plus the policy state the replacement scorer needs
    (access frequency window, transit flags, cache tier recency)."""

    def __init__(self, peer_id: str, region: str, vendor: str, nat_class: str,
                 capacity: int, upload_bps: float,
                 catalog: dict[str, model.VideoCatalogEntry],
                 chunk_size: int = model.DEFAULT_CHUNK_SIZE):
        self.peer_id = peer_id
        self.region = region
        self.vendor = vendor
        self.nat_class = nat_class
        self.store = ChunkStore(capacity)
        self.upload_bps = upload_bps
        self.catalog = catalog
        self.chunk_size = chunk_size
        self.current_cycle = 0
        self.access_counts: dict[str, dict[int, int]] = {}
        self._transit_refs: dict[str, int] = {}
        self._transit_released: dict[str, int] = {}
        self.last_served: dict[str, int] = {}
        self.bytes_served = 0
        self._bytes_window_start = 0
        self._bytes_window = 0
        self.bandwidth_utilization = 0.0
        self.ingest_op: Optional[IngestOp] = None
        self.journal_text: Optional[str] = None
        self._op_counter = 0
        self.online = True

    # --- resident set ------------------------------------------------------

    def resident_videos(self) -> list[str]:
        seen: dict[str, int] = {}
        for (vid, _seq) in self.store.chunks:
            seen[vid] = seen.get(vid, 0) + 1
        complete = []
        for vid, n in seen.items():
            entry = self.catalog.get(vid)
            if entry is not None and n == len(model.chunk_video(entry, self.chunk_size)):
                complete.append(vid)
        return sorted(complete)

    def holds_video(self, video_id: str) -> bool:
        entry = self.catalog.get(video_id)
        if entry is None:
            return False
        want = len(model.chunk_video(entry, self.chunk_size))
        return want > 0 and len(self.store.video_chunks(video_id)) == want

    # --- replacement scoring -------------------------------------------------

    def in_transit(self, video_id: str, now: int) -> bool:
        if self._transit_refs.get(video_id, 0) > 0:
            return True
        released = self._transit_released.get(video_id)
        return released is not None and now - released <= TRANSIT_GRACE_US

    def access_frequency(self, video_id: str) -> int:
        counts = self.access_counts.get(video_id, {})
        lo = self.current_cycle - FREQ_WINDOW_CYCLES + 1
        return sum(c for cyc, c in counts.items() if cyc >= lo)

    def tier_cached(self, video_id: str, now: int) -> bool:
        served = self.last_served.get(video_id)
        return served is not None and now - served <= CACHE_TIER_WINDOW_US

    def choose_victims(self, incoming_size: int, now: int,
                       exclude: tuple[str, ...] = ()) -> Optional[list[str]]:
        """Victims ranked by (not in transit, low frequency, disk-only), then
        size similarity to the incoming video; returns None when freeing
        enough would break the in-transit protection floor."""
        if incoming_size > self.store.capacity:
            return None
        needed = incoming_size - self.store.free_space()
        if needed <= 0:
            return []
        candidates = [v for v in self.resident_videos() if v not in exclude]
        transit_total = sum(1 for v in candidates if self.in_transit(v, now))
        transit_budget = int(transit_total * TRANSIT_PROTECTION_FLOOR)

        def class_key(v: str):
            return (self.in_transit(v, now), self.access_frequency(v),
                    self.tier_cached(v, now))

        def size_pref(v: str):
            size = self.store.video_bytes_used(v)
            # closest size first; the not-smaller candidate wins a distance tie
            return (abs(size - incoming_size), size < incoming_size, v)

        victims = []
        freed = 0
        transit_listed = 0
        for v in sorted(candidates, key=lambda v: (class_key(v), size_pref(v))):
            if freed >= needed:
                break
            if self.in_transit(v, now):
                if transit_listed >= transit_budget:
                    continue
                transit_listed += 1
            victims.append(v)
            freed += self.store.video_bytes_used(v)
        if freed < needed:
            return None
        return victims

    # --- ingest (journaled) ----------------------------------------------------

    def begin_ingest(self, video_id: str, source: str, now: int) -> Optional[IngestOp]:
        entry = self.catalog.get(video_id)
        if entry is None or self.holds_video(video_id) or self.ingest_op is not None:
            return None
        victims = self.choose_victims(entry.size, now, exclude=(video_id,))
        if victims is None:
            return None
        chunks = model.chunk_video(entry, self.chunk_size)
        self._op_counter += 1
        journal = EvictionJournal(
            op_id=self._op_counter,
            incoming_video=video_id,
            incoming_chunks=[(c.seq, c.size) for c in chunks],
            victims=[
                VictimRecord(v, [(seq, self.store.chunks[(v, seq)].size,
                                  self.store.chunks[(v, seq)].checksum)
                                 for seq in self.store.video_chunks(v)])
                for v in victims
            ],
        )
        steps: list[tuple] = []
        for victim in journal.victims:
            for seq, size, checksum in victim.chunks:
                steps.append(("evict", victim.video_id, seq, size, checksum))
        for c in chunks:
            steps.append(("write", c.seq, c.size))
        steps.append(("commit",))
        op = IngestOp(video_id, source, journal, steps)
        self.ingest_op = op
        self.journal_text = journal.to_text()
        return op

    def ingest_step(self, crash_after_journal: bool = False) -> Optional[tuple]:
        """Execute the next chunk-granular step; journal is updated before the
        store mutation lands (crash hook between them for tests)."""
        op = self.ingest_op
        if op is None or op.done:
            return None
        step = op.steps[op.cursor]
        kind = step[0]
        entry = self.catalog[op.video_id]
        if kind == "evict":
            _, vid, seq, _size, _checksum = step
            op.journal.phase = "evict"
            op.journal.evicted.append((vid, seq))
            self.journal_text = op.journal.to_text()
            if crash_after_journal:
                raise CrashPoint(op.cursor)
            self.store.drop(vid, seq)
        elif kind == "write":
            _, seq, size = step
            op.journal.phase = "write"
            op.journal.written.append(seq)
            self.journal_text = op.journal.to_text()
            if crash_after_journal:
                raise CrashPoint(op.cursor)
            payload = model.chunk_payload(entry, seq, self.chunk_size)
            self.store.put(op.video_id, seq, size, model.compute_checksum(payload))
        else:  # commit
            op.journal.phase = "commit"
            self.journal_text = op.journal.to_text()
            if crash_after_journal:
                raise CrashPoint(op.cursor)
            self.journal_text = None
            self.ingest_op = None
        op.cursor += 1
        return step

    def abort_ingest(self) -> str:
        """Mid-flight failure (source gone): roll back via the journal."""
        outcome = recover(self.store, self.journal_text)
        self.journal_text = None
        self.ingest_op = None
        return outcome

    def restart(self) -> str:
        """Crash recovery: rebuild policy-clean state from the journal."""
        outcome = recover(self.store, self.journal_text)
        self.journal_text = None
        self.ingest_op = None
        return outcome

    # --- serving -----------------------------------------------------------

    def session_opened(self, video_id: str, now: int) -> None:
        self._transit_refs[video_id] = self._transit_refs.get(video_id, 0) + 1
        cyc = self.access_counts.setdefault(video_id, {})
        cyc[self.current_cycle] = cyc.get(self.current_cycle, 0) + 1

    def session_closed(self, video_id: str, now: int) -> None:
        refs = self._transit_refs.get(video_id, 0)
        if refs <= 1:
            self._transit_refs.pop(video_id, None)
            self._transit_released[video_id] = now
        else:
            self._transit_refs[video_id] = refs - 1

    def note_served(self, video_id: str, nbytes: int, now: int) -> None:
        self.last_served[video_id] = now
        self.bytes_served += nbytes
        if now - self._bytes_window_start >= 1_000_000:
            window = now - self._bytes_window_start
            self.bandwidth_utilization = min(
                1.0, self._bytes_window * 8 / (self.upload_bps * window / US_PER_S))
            self._bytes_window_start = now
            self._bytes_window = 0
        self._bytes_window += nbytes

    def cpu_utilization(self) -> float:
        active = sum(1 for r in self._transit_refs.values() if r > 0)
        return min(1.0, 0.05 * active + (0.1 if self.ingest_op else 0.0))

    def view(self, now_fn) -> "PeerStoreView":
        return PeerStoreView(self, now_fn)

    # --- heartbeat -----------------------------------------------------------

    def emit_heartbeat(self, now: int):
        from pcdnsim.tracker import HeartbeatMessage

        return HeartbeatMessage(
            peer_id=self.peer_id,
            region=self.region,
            vendor=self.vendor,
            nat_class=self.nat_class,
            disk_utilization=self.store.used / self.store.capacity if self.store.capacity else 1.0,
            bandwidth_utilization=self.bandwidth_utilization,
            cpu_utilization=self.cpu_utilization(),
        )


class PeerStoreView:
    """Read view handed to transport.serve_request; verifies chunk digests on
    first touch and flags damage for re-fetch."""

    def __init__(self, peer: PeerServer, now_fn):
        self.peer = peer
        self.now_fn = now_fn
        self.corrupt_flagged: list[tuple[str, int]] = []

    def read_packet(self, video_id: str, packet_seq: int, packet_size: int):
        peer = self.peer
        entry = peer.catalog.get(video_id)
        if entry is None or not peer.online:
            return ReadStatus.ABSENT, None
        start = packet_seq * packet_size
        end = min(start + packet_size, entry.size)
        if start >= end:
            return ReadStatus.ABSENT, None
        first = start // peer.chunk_size
        last = (end - 1) // peer.chunk_size
        for chunk_seq in range(first, last + 1):
            rec = peer.store.chunks.get((video_id, chunk_seq))
            if rec is None:
                return ReadStatus.ABSENT, None
            if not rec.verified or rec.corrupt:
                payload = model.chunk_payload(entry, chunk_seq, peer.chunk_size)
                if rec.corrupt:
                    damaged = bytearray(payload)
                    damaged[0] ^= 0x01
                    payload = bytes(damaged)
                if model.compute_checksum(payload) != rec.checksum:
                    self.corrupt_flagged.append((video_id, chunk_seq))
                    return ReadStatus.CORRUPT, None
                rec.verified = True
        data = model.video_bytes(entry, start, end - start)
        peer.note_served(video_id, len(data), self.now_fn())
        return ReadStatus.OK, data
