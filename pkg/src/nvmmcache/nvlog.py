"""NVLog: a persistent write log drained to disk, plus a small DRAM cache.

Region layout::

    [0, 8)       clean flag
    [8, 24)      log head (drained boundary) / tail (append boundary)
    [24, ...)    log ring

A pwrite is acknowledged once its record is committed in the ring.  A drainer
takes batches of records from the head, submits them to the backing store
(merging writes to the same page), fsyncs, and only then moves the head.

Reads are served from a DRAM page cache kept up to date by pwrite.  On a miss
the page comes from the backing store, and if it still has undrained records
(it is in the patch set) those are overlaid in log order.

The drainer runs in one of two modes.  ``background=True`` starts a real
thread that waits on a condition variable.  Otherwise draining is driven from
the calling thread at deterministic points, which is what the crash harness
and the virtual-clock benchmarks need: with a clock attached the drainer is
simulated on the clock's background lane (it starts as soon as it is free and
records are waiting); without one it drains whenever a batch's worth of pages
is pending.
"""

from __future__ import annotations

import threading
from collections import OrderedDict, deque

from .backing import BackingStore
from .nvpages import RecoveryReport
from .pmem import PersistentRegion
from .records import RING_BASE, LogRing, RecordRef, replay, split_payload

PAGE = 4096
POLL_SECONDS = 0.010


def _pages(offset: int, length: int) -> range:
    if length <= 0:
        return range(0)
    return range(offset // PAGE, (offset + length - 1) // PAGE + 1)


class NVLogEngine:
    name = "nvlog"

    def __init__(self, region: PersistentRegion, store: BackingStore, dram_bytes: int,
                 drain_batch_pages: int = 64, log_bytes: int | None = None,
                 mutation: str | None = None, background: bool = False, clock=None):
        if drain_batch_pages < 1:
            raise ValueError("drain_batch_pages must be at least 1")
        self.region = region
        self.store = store
        self.clock = clock
        self.mutation = mutation
        size = region.capacity - RING_BASE if log_bytes is None else log_bytes
        if RING_BASE + size > region.capacity:
            raise ValueError(f"log of {size} bytes does not fit a {region.capacity}-byte region")
        self.ring = LogRing(region, size,
                            mutation=mutation if mutation == "marker_before_payload" else None)
        self.frames = dram_bytes // PAGE
        self.batch_pages = drain_batch_pages
        self.background = background

        self.pending: deque[tuple[RecordRef, float]] = deque()
        self.patches: dict[tuple[int, int], int] = {}
        self.dram: OrderedDict[tuple[int, int], bytearray] = OrderedDict()
        self.sizes: dict[int, int] = {}

        self.dram_hits = 0
        self.dram_misses = 0
        self.patch_scans = 0
        self.records_drained = 0
        self.batches = 0
        self.fsyncs = 0
        self.writer_stalls = 0
        self.recovery_replays = 0

        self._lock = threading.RLock()
        self._cond = threading.Condition(self._lock)
        self._running = False
        self._paused = False
        self._thread: threading.Thread | None = None
        self.drain_error: BaseException | None = None

    # -- lifecycle -------------------------------------------------------

    def recover(self) -> RecoveryReport:
        records, end = self.ring.committed()
        report = RecoveryReport(records_ignored=int(self.ring.looks_started(end)))
        report.records_replayed = replay(self.store, records)
        for fid in sorted({r.file_id for r in records}):
            self.store.fsync(fid)
        self.ring.reset(end)
        self.recovery_replays += report.records_replayed
        return report

    def start(self) -> None:
        if self.background and self._thread is None:
            self._running = True
            self._thread = threading.Thread(target=self._drain_loop, name="nvlog-drainer",
                                            daemon=True)
            self._thread.start()

    def stop(self) -> None:
        thread = self._thread
        if thread is None:
            return
        with self._cond:
            self._running = False
            self._paused = False
            self._cond.notify_all()
        thread.join()
        self._thread = None

    def pause_drainer(self) -> None:
        with self._cond:
            self._paused = True

    def resume_drainer(self) -> None:
        with self._cond:
            self._paused = False
            self._cond.notify_all()

    def flush(self) -> None:
        """Drain everything; used by close."""
        self.stop()
        with self._lock:
            while self.pending:
                self.drain_batch()

    def fsync(self, file_id: int) -> None:
        pass

    def size(self, file_id: int) -> int:
        size = self.sizes.get(file_id)
        if size is None:
            size = self.sizes[file_id] = self.store.size(file_id)
        return size

    # -- drainer ---------------------------------------------------------

    def _drain_loop(self) -> None:
        while True:
            with self._cond:
                while self._running and (self._paused or not self.pending):
                    self._cond.wait(POLL_SECONDS)
                if not self._running:
                    return
                try:
                    self.drain_batch()
                except BaseException as exc:  # surfaced to the writer
                    self.drain_error = exc
                    self._running = False
                    self._cond.notify_all()
                    return

    def _select_batch(self, ready_by: float | None) -> list[tuple[RecordRef, float]]:
        batch = []
        pages: set[tuple[int, int]] = set()
        for ref, t in self.pending:
            if ready_by is not None and t > ready_by and batch:
                break
            touched = {(ref.file_id, p) for p in _pages(ref.offset, ref.length)}
            if batch and len(pages | touched) > self.batch_pages:
                break
            pages |= touched
            batch.append((ref, t))
        return batch

    def drain_batch(self) -> int:
        """Move one batch of records to the backing store.  Returns its size."""
        with self._cond:
            if not self.pending:
                return 0
            clock = self.clock
            ready = max(self.pending[0][1], clock.bg_free_at) if clock is not None else None
            batch = self._select_batch(ready)
            new_head = batch[-1][0].next_pos
            if clock is not None:
                with clock.background(ready_at=ready):
                    files = self._submit(batch, new_head)
            else:
                files = self._submit(batch, new_head)
            for _ in batch:
                ref, _t = self.pending.popleft()
                for p in _pages(ref.offset, ref.length):
                    key = (ref.file_id, p)
                    left = self.patches[key] - 1
                    if left:
                        self.patches[key] = left
                    else:
                        del self.patches[key]
            self.batches += 1
            self.records_drained += len(batch)
            self.fsyncs += len(files)
            self._cond.notify_all()
            return len(batch)

    def _submit(self, batch, new_head: int) -> list[int]:
        # merge the batch page by page, keeping log order within each page
        merged: dict[tuple[int, int], tuple[bytearray, list[list[int]]]] = {}
        for ref, _t in batch:
            data = self.ring.payload(ref)
            pos, end = ref.offset, ref.end
            while pos < end:
                page_no, in_page = divmod(pos, PAGE)
                step = min(PAGE - in_page, end - pos)
                key = (ref.file_id, page_no)
                if key not in merged:
                    merged[key] = (bytearray(PAGE), [])
                buf, spans = merged[key]
                src = pos - ref.offset
                buf[in_page:in_page + step] = data[src:src + step]
                spans.append([in_page, in_page + step])
                pos += step
        if self.mutation == "head_before_fsync":
            self.ring.retire(new_head)
        files = sorted({fid for fid, _ in merged})
        for (fid, page_no), (buf, spans) in sorted(merged.items()):
            for start, stop in _coalesce(spans):
                self.store.write(fid, page_no * PAGE + start, buf[start:stop])
        for fid in files:
            self.store.fsync(fid)
        if self.mutation != "head_before_fsync":
            self.ring.retire(new_head)
        return files

    def _catch_up(self) -> None:
        """Clock-driven mode: let the simulated drainer do what it could have
        done by now."""
        clock = self.clock
        if clock is None:
            return
        while self.pending and clock.bg_free_at <= clock.now:
            self.drain_batch()

    def _make_room(self, length: int) -> None:
        if self.ring.fits(length):
            return
        self.writer_stalls += 1
        if self.background:
            while not self.ring.fits(length):
                if self.drain_error is not None:
                    raise RuntimeError("drainer failed") from self.drain_error
                if self._thread is None:
                    self.drain_batch()
                    continue
                self._cond.notify_all()
                self._cond.wait(POLL_SECONDS)
            return
        while not self.ring.fits(length):
            self.drain_batch()
            if self.clock is not None:
                self.clock.wait_for_background()

    # -- IO --------------------------------------------------------------

    def pwrite(self, file_id: int, offset: int, payload: bytes) -> None:
        with self._cond:
            self._catch_up()
            self.size(file_id)
            now = self.clock.now if self.clock is not None else 0.0
            for off, chunk in split_payload(offset, payload, self.ring.max_payload):
                self._make_room(len(chunk))
                ref = self.ring.append(file_id, off, chunk)
                if self.clock is not None:
                    now = self.clock.now
                self.pending.append((ref, now))
                for p in _pages(off, len(chunk)):
                    key = (file_id, p)
                    frame = self.dram.get(key)
                    if frame is not None:
                        lo = max(off, p * PAGE)
                        hi = min(off + len(chunk), (p + 1) * PAGE)
                        frame[lo - p * PAGE:hi - p * PAGE] = chunk[lo - off:hi - off]
                        if self.clock is not None:
                            self.clock.charge("dram", hi - lo)
                    self.patches[key] = self.patches.get(key, 0) + 1
            end = offset + len(payload)
            if end > self.sizes[file_id]:
                self.sizes[file_id] = end
            if self.background:
                self._cond.notify_all()
            elif self.clock is None and len(self.patches) >= self.batch_pages:
                self.drain_batch()

    def pread(self, file_id: int, offset: int, length: int) -> bytes:
        out = bytearray()
        with self._cond:
            self._catch_up()
            pos, end = offset, offset + length
            while pos < end:
                page_no, in_page = divmod(pos, PAGE)
                step = min(PAGE - in_page, end - pos)
                frame = self._frame(file_id, page_no)
                out += frame[in_page:in_page + step]
                if self.clock is not None:
                    self.clock.charge("dram", step)
                pos += step
        return bytes(out)

    def _frame(self, file_id: int, page_no: int) -> bytearray:
        key = (file_id, page_no)
        frame = self.dram.get(key)
        if frame is not None:
            self.dram_hits += 1
            self.dram.move_to_end(key)
            return frame
        self.dram_misses += 1
        frame = bytearray(self.store.read(file_id, page_no * PAGE, PAGE))
        if len(frame) < PAGE:
            frame.extend(bytes(PAGE - len(frame)))
        if key in self.patches:
            self.patch_scans += 1
            base = page_no * PAGE
            for ref, _t in self.pending:
                if ref.file_id != file_id or ref.end <= base or ref.offset >= base + PAGE:
                    continue
                data = self.ring.payload(ref)
                lo, hi = max(ref.offset, base), min(ref.end, base + PAGE)
                frame[lo - base:hi - base] = data[lo - ref.offset:hi - ref.offset]
        if self.frames:
            if len(self.dram) >= self.frames:
                self.dram.popitem(last=False)
            self.dram[key] = frame
            if self.clock is not None:
                self.clock.charge("dram", PAGE)
        return frame

    # -- inspection ------------------------------------------------------

    def patch_counts(self) -> dict[tuple[int, int], int]:
        with self._lock:
            return dict(self.patches)

    def stats(self) -> dict[str, float]:
        return {
            "dram_hits": self.dram_hits,
            "dram_misses": self.dram_misses,
            "hits": self.dram_hits,
            "misses": self.dram_misses,
            "patch_scans": self.patch_scans,
            "records_drained": self.records_drained,
            "batches": self.batches,
            "fsyncs": self.fsyncs,
            "writer_stalls": self.writer_stalls,
            "writer_stall_time": self.clock.stall_time if self.clock is not None else 0.0,
            "recovery_replays": self.recovery_replays,
        }


def _coalesce(spans: list[list[int]]) -> list[tuple[int, int]]:
    """Merge overlapping or touching ``[start, stop)`` spans."""
    out: list[tuple[int, int]] = []
    for start, stop in sorted(spans):
        if out and start <= out[-1][1]:
            if stop > out[-1][1]:
                out[-1] = (out[-1][0], stop)
        else:
            out.append((start, stop))
    return out
