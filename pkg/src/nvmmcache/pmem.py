"""Emulated byte-addressable persistent memory.

A region keeps two byte arrays: the volatile view that loads and stores see,
and the durable image that survives a simulated power failure.  Only
``persist`` moves bytes from the former to the latter, in 64-byte units, so a
crash plan can interrupt a persist part way through and leave a torn prefix.
"""

from __future__ import annotations

import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

PERSIST_UNIT = 64
CLEAN_FLAG_OFFSET = 0
FILE_MAGIC = b"NVMEMU01"
FILE_HEADER = struct.Struct("<8sQ")


class RegionError(Exception):
    """Base class for persistent region failures."""


class RegionRangeError(RegionError, IndexError):
    pass


class CapacityMismatchError(RegionError):
    pass


class RegionFormatError(RegionError):
    pass


class SimulatedCrash(Exception):
    """Raised out of ``persist`` when an armed crash plan fires.

    Once raised the region is frozen: every further store or persist raises
    again until ``crash()`` resets the volatile view.
    """


@dataclass(frozen=True)
class CrashPlan:
    """Where to cut power.

    ``after_persist`` is the 1-based persist index.  With ``torn_units`` unset
    the whole persist reaches the durable image before the crash; otherwise
    only its first ``torn_units`` 64-byte units do.
    """

    after_persist: int
    torn_units: int | None = None

    def __post_init__(self):
        if self.after_persist < 1:
            raise ValueError("after_persist is 1-based")
        if self.torn_units is not None and self.torn_units < 0:
            raise ValueError("torn_units must be non-negative")

    def describe(self) -> str:
        if self.torn_units is None:
            return f"after_persist_{self.after_persist}"
        return f"mid_persist_{self.after_persist}_units_{self.torn_units}"


def persist_units(offset: int, length: int) -> int:
    """Number of 64-byte units touched by ``[offset, offset + length)``."""
    if length <= 0:
        return 0
    start = offset - offset % PERSIST_UNIT
    return -(-(offset + length - start) // PERSIST_UNIT)


class PersistentRegion:
    def __init__(self, capacity: int, path: str | os.PathLike | None = None):
        if capacity <= 0 or capacity % 4096:
            raise ValueError(f"capacity must be a positive multiple of 4096, got {capacity}")
        self.capacity = capacity
        self.path = Path(path) if path is not None else None
        self.volatile_view = bytearray(capacity)
        self.durable_image = bytearray(capacity)
        self.write_byte_counter = 0
        self.load_byte_counter = 0
        self.persist_counter = 0
        self.plan: CrashPlan | None = None
        self.crashed = False
        self.closed = False
        self.attached = False
        # (offset, length) of each persist, when tracing is on
        self.persist_trace: list[tuple[int, int]] | None = None
        # optional cost sink; see clock.VirtualClock
        self.clock = None
        self._lock = threading.Lock()

    # -- lifecycle -------------------------------------------------------

    def _check_live(self):
        if self.crashed:
            raise SimulatedCrash("region is frozen after a crash")
        if self.closed:
            raise RegionError("region is closed")

    def _check_range(self, offset: int, length: int):
        if offset < 0 or length < 0 or offset + length > self.capacity:
            raise RegionRangeError(
                f"range [{offset}, {offset + length}) outside region of {self.capacity} bytes"
            )

    def checkpoint(self) -> None:
        """Write the durable image to the backing path, if there is one."""
        if self.path is None:
            return
        tmp = self.path.with_name(self.path.name + ".tmp")
        with open(tmp, "wb") as f:
            f.write(FILE_HEADER.pack(FILE_MAGIC, self.capacity))
            f.write(self.durable_image)
        os.replace(tmp, self.path)

    def close(self) -> None:
        self._check_live()
        self.checkpoint()
        self.closed = True

    def crash(self) -> None:
        """Lose everything that was not persisted."""
        self.volatile_view[:] = self.durable_image
        self.crashed = False
        self.closed = False
        self.plan = None
        self.checkpoint()

    def reopen(self) -> None:
        """Reset per-open counters, as a fresh ``region_open`` would."""
        self.write_byte_counter = 0
        self.load_byte_counter = 0
        self.persist_counter = 0
        self.closed = False

    def arm(self, plan: CrashPlan | None) -> None:
        self.plan = plan

    def start_trace(self) -> None:
        self.persist_trace = []

    # -- data path -------------------------------------------------------

    def store(self, offset: int, payload) -> None:
        n = len(payload)
        self._check_range(offset, n)
        self._check_live()
        self.volatile_view[offset:offset + n] = payload
        with self._lock:
            self.write_byte_counter += n
        if self.clock is not None:
            self.clock.charge("nvmm_write", n)

    def load(self, offset: int, length: int) -> bytes:
        self._check_range(offset, length)
        with self._lock:
            self.load_byte_counter += length
        if self.clock is not None:
            self.clock.charge("nvmm_read", length)
        return bytes(self.volatile_view[offset:offset + length])

    def persist(self, offset: int, length: int) -> None:
        self._check_range(offset, length)
        self._check_live()
        with self._lock:
            self.persist_counter += 1
            index = self.persist_counter
        if self.persist_trace is not None:
            self.persist_trace.append((offset, length))
        plan = self.plan
        if plan is not None and plan.after_persist == index:
            if plan.torn_units is None:
                self._copy(offset, offset + length)
            else:
                unit_start = offset - offset % PERSIST_UNIT
                cut = min(offset + length, unit_start + plan.torn_units * PERSIST_UNIT)
                if cut > offset:
                    self._copy(offset, cut)
            self.plan = None
            self.crashed = True
            raise SimulatedCrash(plan.describe())
        self._copy(offset, offset + length)

    def _copy(self, start: int, end: int) -> None:
        self.durable_image[start:end] = self.volatile_view[start:end]

    # -- clean flag ------------------------------------------------------

    def set_clean_flag(self, value: int) -> None:
        if value not in (0, 1):
            raise ValueError("clean flag is 0 or 1")
        self.store(CLEAN_FLAG_OFFSET, value.to_bytes(8, "little"))
        self.persist(CLEAN_FLAG_OFFSET, 8)

    def get_clean_flag(self) -> int:
        raw = bytes(self.volatile_view[CLEAN_FLAG_OFFSET:CLEAN_FLAG_OFFSET + 8])
        return int.from_bytes(raw, "little")

    # small helpers used by the engines for 8-byte fields
    def load_u64(self, offset: int) -> int:
        return int.from_bytes(self.load(offset, 8), "little")

    def store_u64(self, offset: int, value: int, persist: bool = True) -> None:
        self.store(offset, value.to_bytes(8, "little"))
        if persist:
            self.persist(offset, 8)


def region_open(path: str | os.PathLike | None, capacity: int) -> PersistentRegion:
    """Open (or create) a region, loading a prior durable image from ``path``."""
    region = PersistentRegion(capacity, path)
    if path is None:
        return region
    p = Path(path)
    if not p.exists():
        return region
    with open(p, "rb") as f:
        header = f.read(FILE_HEADER.size)
        if len(header) != FILE_HEADER.size:
            raise RegionFormatError(f"{p}: truncated header")
        magic, stored = FILE_HEADER.unpack(header)
        if magic != FILE_MAGIC:
            raise RegionFormatError(f"{p}: bad magic {magic!r}")
        if stored != capacity:
            raise CapacityMismatchError(f"{p}: image holds {stored} bytes, asked for {capacity}")
        n = f.readinto(region.durable_image)
        if n != capacity:
            raise RegionFormatError(f"{p}: image is short ({n} of {capacity} bytes)")
    region.volatile_view[:] = region.durable_image
    return region
