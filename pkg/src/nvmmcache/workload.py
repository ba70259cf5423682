"""FIO-style random IO workloads, run on a virtual clock.

Four access mixes (pure reads, 50/50, 90/10, pure writes) under a uniform or
a skewed distribution where 95% of accesses land on 5% of the file.  The
skewed law is a bounded Zipf whose exponent is fitted at startup so the top
5% of ranks carry 95% of the mass; ranks are then scattered over the file
through a seeded permutation so the hot set is not a prefix.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backing import BackingStore
from .clock import CostModel, VirtualClock
from .config import load_kv, parse_bool, parse_list, parse_size
from .facade import EngineConfig, engine_open

MIB = 1 << 20
READ_FRACTION = {"randr": 1.0, "randrw": 0.5, "randrw90": 0.9, "randw": 0.0}
DISTRIBUTIONS = ("uniform", "zipf95_5")
HOT_FRACTION = 0.05
HOT_MASS = 0.95
CALIBRATION_TOLERANCE = 0.002
BENCH_FILE = "bench.dat"

CSV_COLUMNS = [
    "engine", "nvmm_capacity", "mix", "distribution", "mean_virtual_time",
    "hits", "misses", "bytes_to_disk", "fsyncs", "nvmm_bytes_written", "status",
]


def normalize_distribution(name: str) -> str:
    if name in ("zipf", "zipf95_5"):
        return "zipf95_5"
    if name == "uniform":
        return name
    raise ValueError(f"unknown distribution {name!r}")


@dataclass
class WorkloadSpec:
    file_size: int = 32 * MIB
    total_bytes: int = 32 * MIB
    io_size: int = 4096
    mix: str = "randr"
    distribution: str = "uniform"
    seed: int = 0
    repeats: int = 1

    def __post_init__(self):
        self.distribution = normalize_distribution(self.distribution)
        if self.mix not in READ_FRACTION:
            raise ValueError(f"unknown mix {self.mix!r}")
        if self.io_size <= 0 or self.file_size % self.io_size:
            raise ValueError("io_size must divide file_size")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")

    @property
    def pages(self) -> int:
        return self.file_size // self.io_size

    @property
    def ops(self) -> int:
        return self.total_bytes // self.io_size

    @property
    def label(self) -> str:
        return self.mix if self.distribution == "uniform" else f"{self.mix}-zipf"


# -- distributions ---------------------------------------------------------

def hot_count(pages: int) -> int:
    return max(1, math.ceil(HOT_FRACTION * pages))


def zipf_weights(pages: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, pages + 1, dtype=np.float64)
    # work in log space so large exponents do not underflow to all-zero
    logw = -exponent * np.log(ranks)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def hot_mass(pages: int, exponent: float) -> float:
    return float(zipf_weights(pages, exponent)[: hot_count(pages)].sum())


def calibrate_zipf(pages: int, target: float = HOT_MASS) -> float | None:
    """Exponent whose top-5% mass equals ``target`` (bisection), or None when
    no Zipf law over this many pages can reach it within tolerance."""
    k = hot_count(pages)
    if k >= pages or k / pages >= target:
        return None
    lo, hi = 0.0, 1.0
    while hot_mass(pages, hi) < target:
        hi *= 2
        if hi > 1e4:
            return None
    for _ in range(200):
        mid = (lo + hi) / 2
        if hot_mass(pages, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    s = (lo + hi) / 2
    if abs(hot_mass(pages, s) - target) > CALIBRATION_TOLERANCE:
        return None
    return s


class PageSampler:
    def __init__(self, pages: int, distribution: str, rng: np.random.Generator):
        self.pages = pages
        self.distribution = normalize_distribution(distribution)
        self.exponent = None
        self.perm = None
        if self.distribution == "uniform":
            self.cdf = None
            return
        self.exponent = calibrate_zipf(pages)
        if self.exponent is not None:
            probs = zipf_weights(pages, self.exponent)
        else:
            warnings.warn(f"zipf calibration infeasible for {pages} pages; "
                          "using a two-bucket 95/5 distribution", RuntimeWarning, stacklevel=2)
            k = hot_count(pages)
            probs = np.empty(pages)
            if k >= pages:
                probs[:] = 1.0 / pages
            else:
                probs[:k] = HOT_MASS / k
                probs[k:] = (1 - HOT_MASS) / (pages - k)
        self.cdf = np.cumsum(probs)
        self.cdf[-1] = 1.0
        self.perm = rng.permutation(pages)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.cdf is None:
            return rng.integers(0, self.pages, size=n)
        ranks = np.searchsorted(self.cdf, rng.random(n), side="right")
        return self.perm[np.minimum(ranks, self.pages - 1)]


def gen_offsets(spec: WorkloadSpec, rng: np.random.Generator | None = None) -> list[tuple[str, int]]:
    """Deterministic ``(op, offset)`` stream for ``spec``."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    sampler = PageSampler(spec.pages, spec.distribution, rng)
    pages = sampler.sample(spec.ops, rng)
    reads = rng.random(spec.ops) < READ_FRACTION[spec.mix]
    return [("read" if r else "write", int(p) * spec.io_size) for r, p in zip(reads, pages)]


# -- running ---------------------------------------------------------------

@dataclass
class RunReport:
    engine: str
    nvmm_capacity: int
    mix: str
    distribution: str
    virtual_times: list[float] = field(default_factory=list)
    counters: list[dict] = field(default_factory=list)
    status: str = "ok"

    @property
    def mean_virtual_time(self) -> float:
        return sum(self.virtual_times) / len(self.virtual_times) if self.virtual_times else float("nan")

    def mean(self, key: str) -> float:
        if not self.counters:
            return float("nan")
        return sum(c.get(key, 0) for c in self.counters) / len(self.counters)

    @property
    def hit_rate(self) -> float:
        hits, misses = self.mean("hits"), self.mean("misses")
        return hits / (hits + misses) if hits + misses else 0.0

    def row(self) -> list[str]:
        def fmt(x: float) -> str:
            return format(x, ".17g")
        return [
            self.engine, str(self.nvmm_capacity), self.mix, self.distribution,
            fmt(self.mean_virtual_time), fmt(self.mean("hits")), fmt(self.mean("misses")),
            fmt(self.mean("bytes_to_disk")), fmt(self.mean("disk_fsyncs")),
            fmt(self.mean("nvmm_bytes_written")), self.status,
        ]


def repeat_seed(seed: int, repeat: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed & (2**64 - 1), repeat])


def run_once(config: EngineConfig, spec: WorkloadSpec, cost: CostModel, seed,
             record_events: bool = False):
    """One seeded run.  Returns ``(virtual_time, counters, clock)``."""
    config = replace(config, background_drain=False)
    rng = np.random.default_rng(seed)
    image = rng.bytes(spec.file_size)
    ops = gen_offsets(spec, rng)
    store = BackingStore.from_images({BENCH_FILE: image})
    clock = VirtualClock(cost, record_events=record_events)
    engine = engine_open(config, store=store, clock=clock)
    fh = engine.f_open(BENCH_FILE)
    io_size = spec.io_size
    for op, offset in ops:
        if op == "read":
            engine.f_pread(fh, offset, io_size)
        else:
            engine.f_pwrite(fh, offset, rng.bytes(io_size))
    elapsed = clock.now
    counters = engine.stats()
    engine.attach_clock(None)
    engine.close()
    return elapsed, counters, clock


def run_workload(config: EngineConfig, spec: WorkloadSpec, cost: CostModel | None = None) -> RunReport:
    cost = cost or CostModel()
    report = RunReport(config.engine, config.nvmm_capacity, spec.mix, spec.distribution)
    for r in range(spec.repeats):
        elapsed, counters, _ = run_once(config, spec, cost, repeat_seed(spec.seed, r))
        report.virtual_times.append(elapsed)
        report.counters.append(counters)
    return report


# -- matrix ----------------------------------------------------------------

@dataclass
class MatrixConfig:
    engines: list[str] = field(default_factory=lambda: ["nvpages", "nvlog", "direct"])
    nvmm_sizes: list[int] = field(default_factory=lambda: [16 * MIB, 64 * MIB])
    mixes: list[str] = field(default_factory=lambda: list(READ_FRACTION))
    distributions: list[str] = field(default_factory=lambda: list(DISTRIBUTIONS))
    file_size: int = 32 * MIB
    total_bytes: int | None = None
    io_size: int = 4096
    dram: int = 8 * MIB
    drain_batch_pages: int = 64
    seed: int = 0
    repeats: int = 5
    direct_fsync: bool = False
    cost: CostModel = field(default_factory=CostModel)

    @classmethod
    def from_mapping(cls, values: dict[str, str], base_dir: Path | None = None) -> "MatrixConfig":
        cfg = cls()
        for key, raw in values.items():
            if key == "engines":
                cfg.engines = parse_list(raw)
            elif key in ("nvmm", "nvmm_sizes"):
                cfg.nvmm_sizes = [parse_size(x) for x in parse_list(raw)]
            elif key == "mixes":
                cfg.mixes = parse_list(raw)
            elif key in ("distributions", "dists"):
                cfg.distributions = [normalize_distribution(x) for x in parse_list(raw)]
            elif key in ("file_size", "total_bytes", "io_size", "dram"):
                setattr(cfg, key, parse_size(raw))
            elif key in ("seed", "repeats", "drain_batch_pages"):
                setattr(cfg, key, int(raw))
            elif key == "direct_fsync":
                cfg.direct_fsync = parse_bool(raw)
            elif key == "cost_profile":
                path = Path(raw)
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                cfg.cost = CostModel.from_mapping(load_kv(path))
            else:
                raise KeyError(f"unknown matrix key {key!r}")
        return cfg

    def cells(self):
        for engine in self.engines:
            for nvmm in self.nvmm_sizes:
                for dist in self.distributions:
                    for mix in self.mixes:
                        yield engine, nvmm, mix, dist


def run_matrix(cfg: MatrixConfig) -> list[RunReport]:
    reports = []
    for engine, nvmm, mix, dist in cfg.cells():
        spec = WorkloadSpec(cfg.file_size, cfg.total_bytes or cfg.file_size, cfg.io_size,
                            mix, dist, cfg.seed, cfg.repeats)
        try:
            econf = EngineConfig(engine, nvmm_capacity=nvmm, dram_cache_capacity=cfg.dram,
                                 drain_batch_pages=cfg.drain_batch_pages,
                                 background_drain=False, fsync_per_write=cfg.direct_fsync)
            report = run_workload(econf, spec, cfg.cost)
        except Exception as exc:
            report = RunReport(engine, nvmm, mix, dist, status=f"error: {type(exc).__name__}: {exc}")
        reports.append(report)
    return reports


def reports_to_csv(reports: list[RunReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for report in reports:
        writer.writerow(report.row())
    return buf.getvalue()


def write_csv(reports: list[RunReport], out: str | Path) -> None:
    Path(out).write_text(reports_to_csv(reports), encoding="utf-8")
