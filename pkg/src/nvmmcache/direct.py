"""Baseline engine: every call goes straight to the backing store.

With ``fsync_per_write`` each pwrite is followed by an fsync, which gives the
same durability contract as the NVMM engines and makes this the correctness
oracle for them.
"""

from __future__ import annotations

from .backing import BackingStore
from .nvpages import RecoveryReport


class DirectEngine:
    name = "direct"

    def __init__(self, store: BackingStore, fsync_per_write: bool = False):
        self.store = store
        self.fsync_per_write = fsync_per_write
        self.writes = 0

    def recover(self) -> RecoveryReport:
        return RecoveryReport()

    def start(self) -> None:
        pass

    def size(self, file_id: int) -> int:
        return self.store.size(file_id)

    def pread(self, file_id: int, offset: int, length: int) -> bytes:
        return self.store.read(file_id, offset, length)

    def pwrite(self, file_id: int, offset: int, payload: bytes) -> None:
        self.store.write(file_id, offset, payload)
        self.writes += 1
        if self.fsync_per_write:
            self.store.fsync(file_id)

    def fsync(self, file_id: int) -> None:
        self.store.fsync(file_id)

    def flush(self) -> None:
        for fid in self.store.file_ids():
            if self.store.has_pending(fid):
                self.store.fsync(fid)

    def stats(self) -> dict[str, int]:
        return {"hits": 0, "misses": 0, "writes": self.writes}
