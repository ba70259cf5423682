"""Write records and the persistent ring that holds them.

Record layout (little-endian)::

    magic:u8 seq:u64 file_id:u32 offset:u64 len:u32 | payload | marker:u64

``seq`` is the record's logical position in the ring (positions only ever
grow, wrap-around is ``pos % ring_size``), so a stale record left over from
an earlier lap can never be mistaken for the one expected at a position.
``marker`` is a checksum of the header fields and is persisted last; a record
counts as committed only when its marker is durable and matches.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from .pmem import PersistentRegion

MAGIC = 0xA5
HEADER = struct.Struct("<BQIQI")
MARKER = struct.Struct("<Q")
OVERHEAD = HEADER.size + MARKER.size

HEAD_FIELD = 8
TAIL_FIELD = 16
RING_BASE = 24


def commit_marker(seq: int, file_id: int, offset: int, length: int) -> int:
    digest = hashlib.blake2b(HEADER.pack(MAGIC, seq, file_id, offset, length), digest_size=8)
    return int.from_bytes(digest.digest(), "little") or 1


@dataclass(frozen=True)
class WriteRecord:
    seq: int
    file_id: int
    offset: int
    payload: bytes

    @property
    def end(self) -> int:
        return self.offset + len(self.payload)

    def encode(self) -> bytes:
        n = len(self.payload)
        return (
            HEADER.pack(MAGIC, self.seq, self.file_id, self.offset, n)
            + self.payload
            + MARKER.pack(commit_marker(self.seq, self.file_id, self.offset, n))
        )


@dataclass(frozen=True)
class RecordRef:
    """Volatile handle on a record sitting in the ring."""

    pos: int
    next_pos: int
    file_id: int
    offset: int
    length: int

    @property
    def end(self) -> int:
        return self.offset + self.length


def split_payload(offset: int, payload: bytes, limit: int, page_size: int = 4096):
    """Cut a payload into page-aligned pieces no longer than ``limit``."""
    if len(payload) <= limit:
        yield offset, payload
        return
    if limit < 1:
        raise ValueError("log ring too small for any record")
    pos = 0
    while pos < len(payload):
        cur = offset + pos
        boundary = (cur // page_size + 1) * page_size
        step = min(boundary - cur, limit, len(payload) - pos)
        yield cur, payload[pos:pos + step]
        pos += step


class LogRing:
    """A persistent circular log living at ``[RING_BASE, RING_BASE + size)``.

    Head and tail are logical byte positions persisted in two 8-byte fields.
    ``mutation`` switches on deliberately broken persist orderings so the
    crash harness can prove it notices them.
    """

    def __init__(self, region: PersistentRegion, size: int, mutation: str | None = None):
        if size < OVERHEAD + 1:
            raise ValueError(f"log ring of {size} bytes cannot hold a record")
        self.region = region
        self.size = size
        self.mutation = mutation
        self.head = region.load_u64(HEAD_FIELD)
        self.tail = region.load_u64(TAIL_FIELD)

    @property
    def max_payload(self) -> int:
        return self.size - OVERHEAD

    def used(self) -> int:
        return self.tail - self.head

    def _placement(self, pos: int, total: int) -> int:
        if pos % self.size + total > self.size:
            return (pos // self.size + 1) * self.size
        return pos

    def space_needed(self, length: int) -> int:
        total = OVERHEAD + length
        return self._placement(self.tail, total) + total - self.tail

    def fits(self, length: int) -> bool:
        return self.used() + self.space_needed(length) <= self.size

    def append(self, file_id: int, offset: int, payload: bytes) -> RecordRef:
        """Write a record at the tail and make it durable; then move the tail."""
        n = len(payload)
        total = OVERHEAD + n
        if not self.fits(n):
            raise BufferError("log ring is full")
        pos = self._placement(self.tail, total)
        at = RING_BASE + pos % self.size
        body_len = HEADER.size + n
        header = HEADER.pack(MAGIC, pos, file_id, offset, n)
        marker = MARKER.pack(commit_marker(pos, file_id, offset, n))
        region = self.region
        if self.mutation == "marker_before_payload":
            region.store(at, header)
            region.store(at + HEADER.size, payload)
            region.store(at + body_len, marker)
            region.persist(at, HEADER.size)
            region.persist(at + body_len, MARKER.size)
            region.persist(at + HEADER.size, n)
        else:
            region.store(at, header)
            region.store(at + HEADER.size, payload)
            region.persist(at, body_len)
            region.store(at + body_len, marker)
            region.persist(at + body_len, MARKER.size)
        self.tail = pos + total
        region.store_u64(TAIL_FIELD, self.tail)
        return RecordRef(pos, self.tail, file_id, offset, n)

    def retire(self, new_head: int) -> None:
        self.head = new_head
        self.region.store_u64(HEAD_FIELD, new_head)

    def reset(self, pos: int) -> None:
        """Empty the ring at ``pos`` (used after recovery)."""
        self.tail = pos
        self.region.store_u64(TAIL_FIELD, pos)
        self.retire(pos)

    # -- reading back ----------------------------------------------------

    def read_at(self, pos: int, with_payload: bool = True) -> tuple[WriteRecord, int] | None:
        """Return ``(record, next_pos)`` if a committed record sits at ``pos``."""
        ring_off = pos % self.size
        room = self.size - ring_off
        if room < OVERHEAD:
            return None
        at = RING_BASE + ring_off
        magic, seq, fid, offset, n = HEADER.unpack(self.region.load(at, HEADER.size))
        if magic != MAGIC or seq != pos or n > room - OVERHEAD:
            return None
        (marker,) = MARKER.unpack(self.region.load(at + HEADER.size + n, MARKER.size))
        if marker != commit_marker(seq, fid, offset, n):
            return None
        payload = self.region.load(at + HEADER.size, n) if with_payload else b""
        return WriteRecord(seq, fid, offset, payload), pos + OVERHEAD + n

    def looks_started(self, pos: int) -> bool:
        """True when an uncommitted record was begun at ``pos`` (a torn append)."""
        for at_pos in (pos, (pos // self.size + 1) * self.size):
            ring_off = at_pos % self.size
            if self.size - ring_off < HEADER.size:
                continue
            magic, seq, *_ = HEADER.unpack(self.region.load(RING_BASE + ring_off, HEADER.size))
            if magic == MAGIC and seq == at_pos:
                return True
        return False

    def payload(self, ref: RecordRef) -> bytes:
        at = RING_BASE + ref.pos % self.size + HEADER.size
        return self.region.load(at, ref.length)

    def scan(self, start: int):
        """Yield ``(record, next_pos)`` for the committed run beginning at ``start``."""
        pos = start
        while True:
            hit = self.read_at(pos)
            if hit is None:
                lap = (pos // self.size + 1) * self.size
                hit = self.read_at(lap) if lap != pos else None
                if hit is None:
                    return
            yield hit
            pos = hit[1]

    def committed(self, start: int | None = None) -> tuple[list[WriteRecord], int]:
        """All committed records from ``start`` (default: head) and the end position."""
        pos = self.head if start is None else start
        out = []
        for rec, nxt in self.scan(pos):
            out.append(rec)
            pos = nxt
        return out, pos


def replay(store, records) -> int:
    """Apply records to a backing store in order; returns how many were applied."""
    count = 0
    for rec in records:
        if rec.payload:
            store.write(rec.file_id, rec.offset, rec.payload)
        count += 1
    return count
