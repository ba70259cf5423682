"""Deterministic cost model standing in for wall-clock time.

Every touch of a medium (DRAM copy, NVMM load/store, disk read/write, fsync)
is charged ``latency + nbytes * ns_per_byte`` to the lane currently running.
The application lane is what a benchmark reports.  NVLog's drainer charges a
background lane that runs alongside it; the application only pays for the
drainer when it has to wait for it (a stall).
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field, fields

MEDIA = ("dram", "nvmm_read", "nvmm_write", "disk_read", "disk_write", "disk_fsync")


@dataclass(frozen=True)
class MediumCost:
    latency_ns: float = 0.0
    ns_per_byte: float = 0.0

    def __post_init__(self):
        if self.latency_ns < 0 or self.ns_per_byte < 0:
            raise ValueError("costs must be non-negative")

    def cost(self, nbytes: int) -> float:
        return self.latency_ns + nbytes * self.ns_per_byte


@dataclass(frozen=True)
class CostModel:
    # Orderings follow published Optane/NVMe characteristics; the numbers
    # themselves are placeholders meant to be overridden by a profile.
    dram: MediumCost = MediumCost(0.0, 0.08)
    nvmm_read: MediumCost = MediumCost(0.0, 0.33)
    nvmm_write: MediumCost = MediumCost(0.0, 1.0)
    disk_read: MediumCost = MediumCost(10_000.0, 0.4)
    disk_write: MediumCost = MediumCost(20_000.0, 0.4)
    disk_fsync: MediumCost = MediumCost(100_000.0, 0.0)

    def check_replication_profile(self) -> None:
        """Replication runs need NVMM reads to cost at least as much as DRAM reads."""
        if self.nvmm_read.ns_per_byte < self.dram.ns_per_byte:
            raise ValueError("nvmm_read must not be cheaper than dram")

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "CostModel":
        """Build from ``medium.latency_ns`` / ``medium.ns_per_byte`` keys."""
        base = {f.name: getattr(cls(), f.name) for f in fields(cls)}
        for key, raw in values.items():
            medium, _, attr = key.partition(".")
            if medium not in base or attr not in ("latency_ns", "ns_per_byte"):
                raise KeyError(f"unknown cost key {key!r}")
            cur = base[medium]
            kw = {"latency_ns": cur.latency_ns, "ns_per_byte": cur.ns_per_byte}
            kw[attr] = float(raw)
            base[medium] = MediumCost(**kw)
        return cls(**base)


REPLICATION_PROFILE = CostModel()


@dataclass
class Event:
    lane: str
    medium: str
    nbytes: int
    cost: float


@dataclass
class VirtualClock:
    model: CostModel = field(default_factory=CostModel)
    record_events: bool = False
    now: float = 0.0
    bg_free_at: float = 0.0
    stall_time: float = 0.0
    events: list[Event] = field(default_factory=list)
    per_medium: dict[str, float] = field(default_factory=dict)
    _bg_cursor: float | None = None

    def charge(self, medium: str, nbytes: int) -> float:
        cost = getattr(self.model, medium).cost(nbytes)
        self.per_medium[medium] = self.per_medium.get(medium, 0.0) + cost
        if self._bg_cursor is not None:
            self._bg_cursor += cost
            lane = "background"
        else:
            self.now += cost
            lane = "app"
        if self.record_events:
            self.events.append(Event(lane, medium, nbytes, cost))
        return cost

    @contextmanager
    def background(self, ready_at: float | None = None):
        """Charge everything inside to the background lane.

        The work starts once the lane is free and its input is ready
        (``ready_at``, default: now).
        """
        if self._bg_cursor is not None:
            yield
            return
        ready = self.now if ready_at is None else ready_at
        self._bg_cursor = max(ready, self.bg_free_at)
        try:
            yield
        finally:
            self.bg_free_at = self._bg_cursor
            self._bg_cursor = None

    def wait_for_background(self) -> float:
        """Application blocks until the background lane is idle."""
        if self._bg_cursor is not None:
            return 0.0
        gap = self.bg_free_at - self.now
        if gap <= 0:
            return 0.0
        self.now = self.bg_free_at
        self.stall_time += gap
        if self.record_events:
            self.events.append(Event("app", "stall", 0, gap))
        return gap
