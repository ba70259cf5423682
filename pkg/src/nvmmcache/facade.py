"""POSIX-like entry points over one of the three engines.

    engine = engine_open(EngineConfig("nvlog"), "region.img", "store/")
    fh = engine.f_open("data.bin", create=True)
    engine.f_pwrite(fh, 0, b"hello")
    engine.f_pread(fh, 0, 5)
    engine.close()

Opening an engine maps its region, runs the engine's recovery procedure when
the clean flag says the previous session did not shut down properly, and then
raises the flag.  ``close`` drains or writes back everything, fsyncs, and
lowers the flag.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .backing import BackingStore
from .direct import DirectEngine
from .nvlog import NVLogEngine
from .nvpages import NVPagesEngine, RecoveryReport
from .pmem import PersistentRegion, region_open

PAGE_SIZE = 4096
MIB = 1 << 20
ENGINES = ("nvpages", "nvlog", "direct")
MUTATIONS = ("marker_before_payload", "head_before_fsync", "slot_before_marker")


class EngineClosedError(RuntimeError):
    pass


class StaleHandleError(OSError):
    pass


class IORangeError(ValueError):
    pass


@dataclass
class EngineConfig:
    engine: str = "nvpages"
    nvmm_capacity: int = 64 * MIB
    dram_cache_capacity: int = 8 * MIB
    page_size: int = PAGE_SIZE
    drain_batch_pages: int = 64
    # explicit ring size; None picks each engine's default
    log_bytes: int | None = None
    background_drain: bool = True
    fsync_per_write: bool = False
    mutation: str | None = None
    trace_evictions: bool = False

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.page_size != PAGE_SIZE:
            raise ValueError("page_size is fixed at 4096")
        for name in ("nvmm_capacity", "dram_cache_capacity"):
            value = getattr(self, name)
            if value <= 0 or value % PAGE_SIZE:
                raise ValueError(f"{name} must be a positive multiple of {PAGE_SIZE}")
        if self.mutation is not None and self.mutation not in MUTATIONS:
            raise ValueError(f"unknown mutation {self.mutation!r}")


@dataclass
class FileHandle:
    file_id: int
    path: str
    engine: "Engine" = field(repr=False)
    closed: bool = False

    @property
    def size(self) -> int:
        return self.engine.impl.size(self.file_id)


# paths of regions currently owned by an open engine
_open_regions: set[str] = set()


class Engine:
    def __init__(self, config: EngineConfig, region: PersistentRegion | None,
                 store: BackingStore, impl):
        self.config = config
        self.region = region
        self.store = store
        self.impl = impl
        self.recovery_runs = 0
        self.last_recovery: RecoveryReport | None = None
        self.closed = False
        self._handles: dict[int, FileHandle] = {}
        self._next_handle = 0

    # -- files -----------------------------------------------------------

    def _live(self):
        if self.closed:
            raise EngineClosedError("engine is closed")

    def _check(self, handle: FileHandle):
        self._live()
        if handle.closed or handle.engine is not self:
            raise StaleHandleError(f"stale handle for {handle.path}")

    def f_open(self, path: str | os.PathLike, create: bool = False) -> FileHandle:
        self._live()
        path = Path(path).as_posix()
        fid = self.store.lookup(path)
        if fid is None:
            if not create:
                raise FileNotFoundError(path)
            fid = self.store.create(path)
        handle = FileHandle(fid, path, self)
        self._handles[id(handle)] = handle
        return handle

    def f_close(self, handle: FileHandle) -> None:
        self._check(handle)
        handle.closed = True
        self._handles.pop(id(handle), None)

    def f_pread(self, handle: FileHandle, offset: int, length: int) -> bytes:
        self._check(handle)
        if offset < 0 or length < 0:
            raise IORangeError("negative offset or length")
        n = min(length, self.impl.size(handle.file_id) - offset)
        if n <= 0:
            return b""
        return self.impl.pread(handle.file_id, offset, n)

    def f_pwrite(self, handle: FileHandle, offset: int, payload) -> None:
        self._check(handle)
        if offset < 0:
            raise IORangeError("negative offset")
        if not payload:
            return
        self.impl.pwrite(handle.file_id, offset, bytes(payload))

    def f_fsync(self, handle: FileHandle) -> None:
        self._check(handle)
        self.impl.fsync(handle.file_id)

    # -- lifecycle -------------------------------------------------------

    def close(self) -> None:
        self._live()
        self.impl.flush()
        if self.region is not None:
            self.region.set_clean_flag(0)
            self.region.close()
        self.closed = True
        self._release()

    def abandon(self) -> None:
        """Drop the engine without flushing (the process died)."""
        stop = getattr(self.impl, "stop", None)
        if stop is not None:
            stop()
        self.closed = True
        self._release()

    def _release(self):
        if self.region is not None and self.region.path is not None:
            _open_regions.discard(str(self.region.path.resolve()))
        if self.region is not None:
            self.region.attached = False

    def attach_clock(self, clock) -> None:
        self.store.clock = clock
        if self.region is not None:
            self.region.clock = clock
        if isinstance(self.impl, NVLogEngine):
            self.impl.clock = clock

    def stats(self) -> dict:
        out = dict(self.impl.stats())
        out["recovery_runs"] = self.recovery_runs
        out["bytes_to_disk"] = self.store.bytes_written_counter
        out["disk_fsyncs"] = self.store.fsync_counter
        out["nvmm_bytes_written"] = self.region.write_byte_counter if self.region else 0
        return out


def _make_impl(config: EngineConfig, region, store):
    if config.engine == "nvpages":
        return NVPagesEngine(region, store, log_bytes=config.log_bytes,
                             mutation=config.mutation, trace_evictions=config.trace_evictions)
    if config.engine == "nvlog":
        return NVLogEngine(region, store, config.dram_cache_capacity,
                           drain_batch_pages=config.drain_batch_pages,
                           log_bytes=config.log_bytes, mutation=config.mutation,
                           background=config.background_drain)
    return DirectEngine(store, fsync_per_write=config.fsync_per_write)


def engine_open(config: EngineConfig, region_path: str | os.PathLike | None = None,
                store_root: str | os.PathLike | None = None, *,
                region: PersistentRegion | None = None, store: BackingStore | None = None,
                clock=None) -> Engine:
    """Open an engine.  ``region``/``store`` reuse in-memory objects (the crash
    harness reopens on the region that survived a simulated crash)."""
    if store is None:
        store = BackingStore(store_root)
    if config.engine != "direct":
        if region is None:
            key = None
            if region_path is not None:
                key = str(Path(region_path).resolve())
                if key in _open_regions:
                    raise RuntimeError(f"region {region_path} is already open")
            region = region_open(region_path, config.nvmm_capacity)
        else:
            if getattr(region, "attached", False):
                raise RuntimeError("region is already owned by an open engine")
            if region.capacity != config.nvmm_capacity:
                raise ValueError("region capacity does not match the configuration")
            region.reopen()
            key = str(region.path.resolve()) if region.path is not None else None
        if key is not None:
            _open_regions.add(key)
        region.attached = True
    else:
        region = None
    impl = _make_impl(config, region, store)
    engine = Engine(config, region, store, impl)
    try:
        if region is not None and region.get_clean_flag() == 1:
            engine.last_recovery = impl.recover()
            engine.recovery_runs = 1
        impl.start()
        if region is not None:
            region.set_clean_flag(1)
    except BaseException:
        engine.abandon()
        raise
    if clock is not None:
        engine.attach_clock(clock)
    return engine
