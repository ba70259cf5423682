"""Crash-point enumeration and recovery verification.

A script is run once with persist tracing to learn every persist the engine
issues (including open and close).  Each persist index then becomes a crash
plan: cut power right after it, or part way through it when it spans more
than one 64-byte unit.  For every plan the script is replayed from scratch
until the plan fires, both the region and the backing store lose their
volatile state, the engine is reopened (which runs recovery) and closed, and
the resulting files are compared with an oracle built from the writes that
had been acknowledged.  The write in flight when power was cut may land
entirely or not at all; anything in between is a failure.
"""

from __future__ import annotations

import random
import time
from functools import lru_cache
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backing import BackingStore
from .facade import EngineConfig, engine_open
from .nvpages import capacity_for_slots
from .pmem import CrashPlan, PersistentRegion, SimulatedCrash, persist_units

KIB = 1 << 10
MIB = 1 << 20
MAX_TORN_VARIANTS = 4


@dataclass(frozen=True)
class Op:
    kind: str  # "W" or "R"
    file: str
    offset: int
    length: int
    seed: int = 0

    def payload(self) -> bytes:
        return _payload(self.seed, self.length)

    def line(self) -> str:
        if self.kind == "W":
            return f"W {self.file} {self.offset} {self.length} {self.seed}"
        return f"R {self.file} {self.offset} {self.length}"


@lru_cache(maxsize=4096)
def _payload(seed: int, length: int) -> bytes:
    return np.random.default_rng(seed).bytes(length)


def parse_script(text: str) -> list[Op]:
    ops = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0].upper()
        if kind == "W" and len(parts) == 5:
            ops.append(Op("W", parts[1], int(parts[2]), int(parts[3]), int(parts[4])))
        elif kind == "R" and len(parts) == 4:
            ops.append(Op("R", parts[1], int(parts[2]), int(parts[3])))
        else:
            raise ValueError(f"script line {lineno}: cannot parse {raw!r}")
    return ops


def format_script(ops: list[Op]) -> str:
    return "".join(op.line() + "\n" for op in ops)


def random_script(seed: int, n_ops: int, file_size: int, io_size: int = 4096,
                  read_fraction: float = 0.5, files: tuple[str, ...] = ("data",),
                  aligned: bool = True) -> list[Op]:
    rng = random.Random(seed)
    ops = []
    for _ in range(n_ops):
        name = rng.choice(files)
        if aligned:
            offset = rng.randrange(file_size // io_size) * io_size
            length = io_size
        else:
            offset = rng.randrange(file_size)
            length = rng.randrange(1, 2 * io_size)
        if rng.random() < read_fraction:
            ops.append(Op("R", name, offset, length))
        else:
            ops.append(Op("W", name, offset, length, rng.getrandbits(32)))
    return ops


@dataclass
class CrashSetup:
    """An engine configuration plus the file images every case starts from."""

    config: EngineConfig
    images: dict[str, bytes]

    def __post_init__(self):
        self.config = replace(self.config, background_drain=False)


def default_config(engine: str, mutation: str | None = None) -> EngineConfig:
    """Small regions so scripts of a few hundred ops hit eviction, drain and
    log wrap-around."""
    if engine == "nvpages":
        log = 64 * KIB
        return EngineConfig("nvpages", nvmm_capacity=capacity_for_slots(96, log),
                            log_bytes=log, mutation=mutation, background_drain=False)
    if engine == "nvlog":
        return EngineConfig("nvlog", nvmm_capacity=128 * KIB, dram_cache_capacity=64 * KIB,
                            drain_batch_pages=8, mutation=mutation, background_drain=False)
    return EngineConfig(engine, fsync_per_write=True, background_drain=False)


def initial_images(seed: int, file_size: int, files: tuple[str, ...] = ("data",)) -> dict[str, bytes]:
    rng = np.random.default_rng(seed)
    return {name: rng.bytes(file_size) for name in files}


class OracleState:
    """Shadow copy of each file with every acknowledged write applied."""

    def __init__(self, images: dict[str, bytes]):
        self.files = {name: bytearray(data) for name, data in images.items()}
        self.acked = 0

    def apply(self, op: Op) -> None:
        if op.kind != "W" or op.length == 0:
            return
        buf = self.files.setdefault(op.file, bytearray())
        end = op.offset + op.length
        if end > len(buf):
            buf.extend(bytes(end - len(buf)))
        buf[op.offset:end] = op.payload()

    @classmethod
    def after(cls, images: dict[str, bytes], ops: list[Op]) -> "OracleState":
        state = cls(images)
        for op in ops:
            state.apply(op)
        state.acked = len(ops)
        return state


@dataclass
class Verdict:
    plan: str
    passed: bool
    divergence: tuple[str, int] | None = None
    records_replayed: int = 0
    acked: int = 0
    fired: bool = True

    def __str__(self):
        status = "pass" if self.passed else f"FAIL at {self.divergence}"
        return f"{self.plan}: {status} (acked={self.acked}, replayed={self.records_replayed})"


@dataclass
class _Outcome:
    region: PersistentRegion | None
    store: BackingStore
    acked: int
    crashed: bool


def _execute(setup: CrashSetup, script: list[Op], plan: CrashPlan | None,
             trace: bool = False) -> _Outcome:
    store = BackingStore.from_images(setup.images)
    region = None
    if setup.config.engine != "direct":
        region = PersistentRegion(setup.config.nvmm_capacity)
        region.arm(plan)
        if trace:
            region.start_trace()
    acked = 0
    engine = None
    try:
        engine = engine_open(setup.config, region=region, store=store)
        handles = {}
        for op in script:
            fh = handles.get(op.file)
            if fh is None:
                fh = handles[op.file] = engine.f_open(op.file, create=True)
            if op.kind == "W":
                engine.f_pwrite(fh, op.offset, op.payload())
            else:
                engine.f_pread(fh, op.offset, op.length)
            acked += 1
        engine.close()
    except SimulatedCrash:
        if engine is not None:
            engine.abandon()
        return _Outcome(region, store, acked, True)
    return _Outcome(region, store, acked, False)


def enumerate_crash_points(setup: CrashSetup, script: list[Op]) -> list[CrashPlan]:
    """Every after-persist point of a clean run, plus torn variants."""
    outcome = _execute(setup, script, None, trace=True)
    if outcome.region is None:
        return []
    plans = []
    for k, (offset, length) in enumerate(outcome.region.persist_trace, 1):
        plans.append(CrashPlan(k))
        for u in torn_variants(persist_units(offset, length)):
            plans.append(CrashPlan(k, u))
    return plans


def torn_variants(units: int) -> list[int]:
    """Prefix lengths to try for a persist of ``units`` units (at most four)."""
    if units <= 1:
        return []
    if units - 1 <= MAX_TORN_VARIANTS:
        return list(range(1, units))
    picks = {max(1, min(units - 1, -(-units * q // 4))) for q in (1, 2, 3)}
    picks.add(units - 1)
    return sorted(picks)


def _compare(store: BackingStore, expected: dict[str, bytearray]) -> tuple[str, int] | None:
    for name in sorted(expected):
        fid = store.lookup(name)
        want = expected[name]
        got = store.durable_buffer(fid) if fid is not None else b""
        if got == want:
            continue
        got, want = bytes(got), bytes(want)
        n = min(len(got), len(want))
        a = np.frombuffer(got[:n], dtype=np.uint8)
        b = np.frombuffer(want[:n], dtype=np.uint8)
        diff = np.flatnonzero(a != b)
        return name, int(diff[0]) if diff.size else n
    return None


def run_crash_case(setup: CrashSetup, script: list[Op], plan: CrashPlan | None) -> Verdict:
    label = plan.describe() if plan is not None else "no_crash"
    outcome = _execute(setup, script, plan)
    acked = outcome.acked
    replayed = 0
    if outcome.crashed:
        if outcome.region is not None:
            outcome.region.crash()
        outcome.store.crash()
        engine = engine_open(setup.config, region=outcome.region, store=outcome.store)
        if engine.last_recovery is not None:
            replayed = engine.last_recovery.records_replayed
        engine.close()
    before = OracleState.after(setup.images, script[:acked])
    divergence = _compare(outcome.store, before.files)
    if divergence is not None and outcome.crashed and acked < len(script):
        # the interrupted write may have landed as a whole
        after = OracleState.after(setup.images, script[:acked + 1])
        if _compare(outcome.store, after.files) is None:
            divergence = None
    return Verdict(label, divergence is None, divergence, replayed, acked, outcome.crashed)


def run_exhaustive(setup: CrashSetup, script: list[Op], stop_on_fail: bool = False,
                   plans: list[CrashPlan] | None = None) -> list[Verdict]:
    if plans is None:
        plans = enumerate_crash_points(setup, script)
    verdicts = []
    for plan in plans:
        v = run_crash_case(setup, script, plan)
        verdicts.append(v)
        if stop_on_fail and not v.passed:
            break
    return verdicts


@dataclass
class FuzzSummary:
    cases: int = 0
    seeds_run: int = 0
    failures: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def fuzz_crash(config: EngineConfig, n_ops: int, seeds, budget: float,
               plans_per_seed: int = 50, file_size: int = 1 * MIB,
               aligned: bool = False) -> FuzzSummary:
    """Random scripts with random crash plans until ``budget`` seconds pass."""
    summary = FuzzSummary()
    if budget <= 0:
        return summary
    deadline = time.monotonic() + budget
    for seed in seeds:
        if time.monotonic() >= deadline:
            break
        setup = CrashSetup(config, initial_images(seed, file_size))
        script = random_script(seed, n_ops, file_size, aligned=aligned)
        plans = enumerate_crash_points(setup, script)
        rng = random.Random(seed)
        chosen = rng.sample(plans, min(plans_per_seed, len(plans)))
        summary.seeds_run += 1
        for plan in chosen:
            if time.monotonic() >= deadline:
                break
            v = run_crash_case(setup, script, plan)
            summary.cases += 1
            if not v.passed:
                summary.failures.append((seed, plan.describe(), str(v.divergence)))
    return summary


def load_script(path: str | Path) -> list[Op]:
    return parse_script(Path(path).read_text())
