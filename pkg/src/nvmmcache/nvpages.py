"""NVPages: a page cache whose 4 KiB pages live in NVMM.

Region layout::

    [0, 8)          clean flag
    [8, 24)         redo log head / tail
    [24, 24+log)    redo log ring
    descriptors     16 bytes per slot, 64-byte aligned
    slot arena      4096-aligned, one page per slot

Each pwrite is made durable in the redo log first, then copied into the
page's NVMM slot, then retired from the log.  Once retired, the slot is the
only durable home of the data until the page is written back, which is why
each slot carries a persistent descriptor (owner page, dirty bit, valid
length).  Recovery writes back every dirty slot and then replays whatever is
still committed in the log, in that order.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass

from .backing import BackingStore
from .pmem import PersistentRegion
from .radix import RadixIndex
from .records import RING_BASE, LogRing, replay, split_payload

PAGE = 4096
MIB = 1 << 20
DESCRIPTOR = struct.Struct("<IHHQ")
FLAG_DIRTY = 1


def default_log_bytes(capacity: int) -> int:
    # 1/16 of the region, at least 1 MiB once the region is big enough to spare it
    return max(capacity // 16, min(MIB, capacity // 8))


def _align(value: int, to: int) -> int:
    return -(-value // to) * to


@dataclass(frozen=True)
class Layout:
    capacity: int
    log_bytes: int
    table_base: int
    slot_base: int
    slot_count: int

    @classmethod
    def compute(cls, capacity: int, log_bytes: int | None = None) -> "Layout":
        log = default_log_bytes(capacity) if log_bytes is None else log_bytes
        table_base = _align(RING_BASE + log, 64)
        # largest n with align(table + 16n, PAGE) + n*PAGE <= capacity
        n = max((capacity - table_base) // (PAGE + DESCRIPTOR.size), 0)
        while n > 0 and _align(table_base + n * DESCRIPTOR.size, PAGE) + n * PAGE > capacity:
            n -= 1
        if n < 1:
            raise ValueError(
                f"region of {capacity} bytes leaves no page slots after a {log}-byte redo log"
            )
        slot_base = _align(table_base + n * DESCRIPTOR.size, PAGE)
        return cls(capacity, log, table_base, slot_base, n)

    def slot_offset(self, slot: int) -> int:
        return self.slot_base + slot * PAGE

    def descriptor_offset(self, slot: int) -> int:
        return self.table_base + slot * DESCRIPTOR.size

    @property
    def table_bytes(self) -> int:
        return self.slot_count * DESCRIPTOR.size


def capacity_for_slots(slots: int, log_bytes: int) -> int:
    """Smallest region capacity whose arena holds exactly ``slots`` pages."""
    table_base = _align(RING_BASE + log_bytes, 64)
    return _align(table_base + slots * DESCRIPTOR.size, PAGE) + slots * PAGE


@dataclass(slots=True)
class PageMeta:
    file_id: int
    page_no: int
    slot: int
    dirty: bool = False
    valid_len: int = 0


@dataclass
class RecoveryReport:
    records_replayed: int = 0
    records_ignored: int = 0
    pages_flushed: int = 0


class NVPagesEngine:
    name = "nvpages"

    def __init__(self, region: PersistentRegion, store: BackingStore, log_bytes: int | None = None,
                 mutation: str | None = None, trace_evictions: bool = False):
        self.region = region
        self.store = store
        self.layout = Layout.compute(region.capacity, log_bytes)
        self.mutation = mutation
        self.ring = LogRing(region, self.layout.log_bytes,
                            mutation=mutation if mutation == "marker_before_payload" else None)
        self.index = RadixIndex()
        self.lru: OrderedDict[tuple[int, int], PageMeta] = OrderedDict()
        self.free_slots = list(range(self.layout.slot_count - 1, -1, -1))
        self.sizes: dict[int, int] = {}
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.dirty_evictions = 0
        self.recovery_replays = 0
        self.eviction_trace: list[tuple[int, int]] | None = [] if trace_evictions else None

    # -- lifecycle -------------------------------------------------------

    def recover(self) -> RecoveryReport:
        report = RecoveryReport()
        records, end = self.ring.committed()
        report.records_ignored = int(self._looks_torn(end))
        touched = set()
        # dirty slots first: the log, if anything, is newer than them
        raw = self.region.load(self.layout.table_base, self.layout.table_bytes)
        for slot in range(self.layout.slot_count):
            fid, flags, valid, page_no = DESCRIPTOR.unpack_from(raw, slot * DESCRIPTOR.size)
            if flags & FLAG_DIRTY and valid:
                data = self.region.load(self.layout.slot_offset(slot), valid)
                self.store.write(fid, page_no * PAGE, data)
                touched.add(fid)
                report.pages_flushed += 1
        report.records_replayed = replay(self.store, records)
        touched.update(r.file_id for r in records)
        for fid in sorted(touched):
            self.store.fsync(fid)
        self.ring.reset(end)
        self._clear_descriptors(force=True)
        self.recovery_replays += report.records_replayed
        return report

    def _looks_torn(self, pos: int) -> bool:
        return self.ring.looks_started(pos)

    def start(self) -> None:
        self._clear_descriptors()

    def _clear_descriptors(self, force: bool = False) -> None:
        base, n = self.layout.table_base, self.layout.table_bytes
        if not force and not any(self.region.volatile_view[base:base + n]):
            return
        self.region.store(base, bytes(n))
        self.region.persist(base, n)

    def flush(self) -> None:
        """Write back every dirty page and fsync; used by close."""
        touched = set()
        for meta in self.lru.values():
            if meta.dirty:
                self._write_back(meta)
                touched.add(meta.file_id)
        for fid in sorted(touched):
            self.store.fsync(fid)
        for meta in self.lru.values():
            meta.dirty = False

    def fsync(self, file_id: int) -> None:
        pass

    # -- sizes -----------------------------------------------------------

    def size(self, file_id: int) -> int:
        size = self.sizes.get(file_id)
        if size is None:
            size = self.sizes[file_id] = self.store.size(file_id)
        return size

    # -- page management -------------------------------------------------

    def _write_descriptor(self, meta: PageMeta, flags: int) -> None:
        off = self.layout.descriptor_offset(meta.slot)
        self.region.store(off, DESCRIPTOR.pack(meta.file_id, flags, meta.valid_len, meta.page_no))
        self.region.persist(off, DESCRIPTOR.size)

    def _write_back(self, meta: PageMeta) -> None:
        if meta.valid_len:
            data = self.region.load(self.layout.slot_offset(meta.slot), meta.valid_len)
            self.store.write(meta.file_id, meta.page_no * PAGE, data)

    def evict_lru(self) -> int:
        """Free the least recently used slot, writing it back first if dirty."""
        key, meta = self.lru.popitem(last=False)
        if meta.dirty:
            self._write_back(meta)
            self.store.fsync(meta.file_id)
            meta.dirty = False
            self._write_descriptor(meta, 0)
            self.dirty_evictions += 1
        self.index.remove(*key)
        self.evictions += 1
        if self.eviction_trace is not None:
            self.eviction_trace.append(key)
        return meta.slot

    def _take_slot(self) -> int:
        if self.free_slots:
            return self.free_slots.pop()
        return self.evict_lru()

    def fetch_page(self, file_id: int, page_no: int, overwrite: bool = False) -> PageMeta:
        """Install a missing page.  ``overwrite`` skips the disk read when the
        caller is about to replace all 4096 bytes anyway."""
        slot = self._take_slot()
        valid = min(max(self.size(file_id) - page_no * PAGE, 0), PAGE)
        if not overwrite:
            data = self.store.read(file_id, page_no * PAGE, PAGE) if valid else b""
            if len(data) < PAGE:
                data += bytes(PAGE - len(data))
            off = self.layout.slot_offset(slot)
            self.region.store(off, data)
            self.region.persist(off, PAGE)
        meta = PageMeta(file_id, page_no, slot, False, valid)
        self.index.insert(file_id, page_no, meta)
        self.lru[(file_id, page_no)] = meta
        return meta

    def _page(self, file_id: int, page_no: int, overwrite: bool = False) -> PageMeta:
        meta = self.index.lookup(file_id, page_no)
        if meta is not None:
            self.hits += 1
            self.lru.move_to_end((file_id, page_no))
            return meta
        self.misses += 1
        return self.fetch_page(file_id, page_no, overwrite)

    # -- IO --------------------------------------------------------------

    def pread(self, file_id: int, offset: int, length: int) -> bytes:
        out = bytearray()
        pos, end = offset, offset + length
        while pos < end:
            page_no, in_page = divmod(pos, PAGE)
            step = min(PAGE - in_page, end - pos)
            meta = self._page(file_id, page_no)
            out += self.region.load(self.layout.slot_offset(meta.slot) + in_page, step)
            pos += step
        return bytes(out)

    def pwrite(self, file_id: int, offset: int, payload: bytes) -> None:
        self.size(file_id)
        for off, chunk in split_payload(offset, payload, self.ring.max_payload):
            if self.mutation == "slot_before_marker":
                self._apply(file_id, off, chunk)
                self.ring.append(file_id, off, chunk)
            else:
                self.ring.append(file_id, off, chunk)
                self._apply(file_id, off, chunk)
            self.ring.retire(self.ring.tail)
        end = offset + len(payload)
        if end > self.sizes[file_id]:
            self.sizes[file_id] = end

    def _apply(self, file_id: int, offset: int, chunk: bytes) -> None:
        pos, end = offset, offset + len(chunk)
        while pos < end:
            page_no, in_page = divmod(pos, PAGE)
            step = min(PAGE - in_page, end - pos)
            meta = self._page(file_id, page_no, overwrite=step == PAGE)
            valid = max(meta.valid_len, in_page + step)
            if not meta.dirty or valid != meta.valid_len:
                meta.dirty = True
                meta.valid_len = valid
                self._write_descriptor(meta, FLAG_DIRTY)
            at = self.layout.slot_offset(meta.slot) + in_page
            self.region.store(at, chunk[pos - offset:pos - offset + step])
            self.region.persist(at, step)
            pos += step

    def stats(self) -> dict[str, int]:
        return {
            "hits": self.hits,
            "misses": self.misses,
            "evictions": self.evictions,
            "dirty_evictions": self.dirty_evictions,
            "recovery_replays": self.recovery_replays,
        }
