"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import random
import time

import numpy as np
import pytest

from nvmmcache.backing import BackingStore
from nvmmcache.clock import REPLICATION_PROFILE
from nvmmcache.crash import (
    CrashSetup,
    default_config,
    initial_images,
    random_script,
    run_exhaustive,
)
from nvmmcache.facade import EngineConfig, engine_open
from nvmmcache.nvlog import NVLogEngine
from nvmmcache.nvpages import capacity_for_slots
from nvmmcache.pmem import CrashPlan, PersistentRegion, SimulatedCrash
from nvmmcache.workload import (
    READ_FRACTION,
    PageSampler,
    WorkloadSpec,
    gen_offsets,
    hot_count,
    run_workload,
)

KIB, MIB = 1 << 10, 1 << 20
PAGE = 4096


# 1 -------------------------------------------------------------------------

def test_c1_exhaustive_crash_durability(verdict):
    t0 = time.monotonic()
    images = initial_images(7, 8 * MIB)
    script = random_script(7, 200, 8 * MIB, io_size=PAGE, read_fraction=0.5)
    detail, ok = [], True
    for engine in ("nvpages", "nvlog"):
        verdicts = run_exhaustive(CrashSetup(default_config(engine), images), script)
        failed = [v for v in verdicts if not v.passed]
        ok &= not failed and len(verdicts) > 0
        detail.append(f"{engine} {len(verdicts) - len(failed)}/{len(verdicts)}")
    elapsed = time.monotonic() - t0
    detail.append(f"{elapsed:.1f}s")
    verdict(1, "exhaustive crash points pass for both engines", ok and elapsed < 60, ", ".join(detail))


# 2 -------------------------------------------------------------------------

MUTANTS = [
    ("nvlog", "marker_before_payload"),
    ("nvlog", "head_before_fsync"),
    ("nvpages", "slot_before_marker"),
]


def test_c2_harness_detects_mutations(verdict):
    t0 = time.monotonic()
    images = initial_images(7, 8 * MIB)
    script = random_script(7, 200, 8 * MIB)
    detail, ok = [], True
    for engine, mutation in MUTANTS:
        setup = CrashSetup(default_config(engine, mutation), images)
        verdicts = run_exhaustive(setup, script, stop_on_fail=True)
        caught = [v for v in verdicts if not v.passed]
        ok &= bool(caught)
        detail.append(f"{mutation}: {caught[0].plan if caught else 'missed'}")
    elapsed = time.monotonic() - t0
    detail.append(f"{elapsed:.1f}s")
    verdict(2, "all ordering mutations detected", ok and elapsed < 60, "; ".join(detail))


# 3 -------------------------------------------------------------------------

def _run_script(config, images, script):
    store = BackingStore.from_images(images)
    engine = engine_open(config, store=store)
    handles = {}
    for op in script:
        fh = handles.get(op.file) or handles.setdefault(op.file, engine.f_open(op.file, create=True))
        if op.kind == "W":
            engine.f_pwrite(fh, op.offset, op.payload())
        else:
            engine.f_pread(fh, op.offset, op.length)
    engine.close()
    return {name: store.durable_contents(store.lookup(name)) for name in sorted(handles)}


def test_c3_engine_equivalence(verdict):
    t0 = time.monotonic()
    mixes = list(READ_FRACTION)
    configs = [
        EngineConfig("nvpages", nvmm_capacity=capacity_for_slots(32, 64 * KIB), log_bytes=64 * KIB,
                     background_drain=False),
        EngineConfig("nvlog", nvmm_capacity=128 * KIB, dram_cache_capacity=32 * KIB,
                     drain_batch_pages=8, background_drain=False),
        EngineConfig("direct", fsync_per_write=True),
    ]
    mismatches = 0
    for seed in range(20):
        mix = mixes[seed % 4]
        images = initial_images(seed, 512 * KIB, files=("a", "b"))
        script = random_script(seed, 500, 512 * KIB, read_fraction=READ_FRACTION[mix],
                               files=("a", "b"), aligned=bool(seed % 2))
        results = [_run_script(c, images, script) for c in configs]
        mismatches += results[0] != results[2] or results[1] != results[2]
    elapsed = time.monotonic() - t0
    verdict(3, "nvpages, nvlog and direct leave identical bytes", mismatches == 0 and elapsed < 30,
            f"{20 - mismatches}/20 scripts identical, {elapsed:.1f}s")


# 4 -------------------------------------------------------------------------

def _write_ratio(config, spec):
    rng = np.random.default_rng(spec.seed)
    store = BackingStore.from_images({"f": rng.bytes(spec.file_size)})
    engine = engine_open(config, store=store)
    fh = engine.f_open("f")
    for off in range(0, spec.file_size, PAGE):  # make every page resident
        engine.f_pread(fh, off, PAGE)
    before = engine.region.write_byte_counter
    payload = 0
    for _, off in gen_offsets(spec, rng):
        engine.f_pwrite(fh, off, rng.bytes(PAGE))
        payload += PAGE
    written = engine.region.write_byte_counter - before
    engine.close()
    return written / payload


def test_c4_double_write(verdict):
    spec = WorkloadSpec(8 * MIB, 8 * MIB, mix="randw", seed=1)
    nvpages = _write_ratio(EngineConfig("nvpages", nvmm_capacity=64 * MIB, background_drain=False), spec)
    nvlog = _write_ratio(EngineConfig("nvlog", nvmm_capacity=64 * MIB, background_drain=False), spec)
    ok = 2.0 <= nvpages <= 2.1 and 1.0 <= nvlog <= 1.1
    verdict(4, "NVMM bytes per payload byte", ok, f"nvpages {nvpages:.4f}, nvlog {nvlog:.4f}")


# 5 -------------------------------------------------------------------------

def _brute_lru(trace, slots):
    resident, evicted = [], []
    for key in trace:
        if key in resident:
            resident.remove(key)
        elif len(resident) == slots:
            evicted.append(resident.pop(0))
        resident.append(key)
    return evicted


def test_c5_lru_fidelity(verdict):
    log = 64 * KIB
    config = EngineConfig("nvpages", nvmm_capacity=capacity_for_slots(64, log), log_bytes=log,
                          background_drain=False, trace_evictions=True)
    store = BackingStore.from_images({"f": bytes(256 * PAGE), "g": bytes(64 * PAGE)})
    engine = engine_open(config, store=store)
    handles = {"f": engine.f_open("f"), "g": engine.f_open("g")}
    rng = random.Random(5)
    trace = []
    for _ in range(10_000):
        name = "f" if rng.random() < 0.8 else "g"
        page = rng.randrange(256 if name == "f" else 64)
        if rng.random() < 0.3:
            page = rng.randrange(16)  # a small hot set keeps some pages alive
        fh = handles[name]
        if rng.random() < 0.5:
            engine.f_pread(fh, page * PAGE, 16)
        else:
            engine.f_pwrite(fh, page * PAGE + 8, b"t" * 16)
        trace.append((fh.file_id, page))
    expected = _brute_lru(trace, 64)
    got = engine.impl.eviction_trace
    divergences = sum(a != b for a, b in zip(got, expected)) + abs(len(got) - len(expected))
    engine.close()
    verdict(5, "eviction order equals brute-force LRU", divergences == 0,
            f"{len(expected)} evictions, {divergences} divergences")


# 6 -------------------------------------------------------------------------

def test_c6_zipf_calibration(verdict):
    detail, ok = [], True
    for pages in (256, 4096, 65536):
        rng = np.random.default_rng(pages)
        sampler = PageSampler(pages, "zipf", rng)
        samples = sampler.sample(10**6, rng)
        hot = np.zeros(pages, dtype=bool)
        hot[sampler.perm[: hot_count(pages)]] = True
        mass = float(hot[samples].mean())
        ok &= abs(mass - 0.95) <= 0.015
        detail.append(f"P={pages}: {mass:.4f}")
    verdict(6, "hottest 5% of pages take 95% of accesses", ok, ", ".join(detail))


# 7 -------------------------------------------------------------------------

def _mean_time(engine, mix, dist, **kw):
    spec = WorkloadSpec(32 * MIB, 32 * MIB, mix=mix, distribution=dist, seed=2024, repeats=5)
    config = EngineConfig(engine, nvmm_capacity=64 * MIB, dram_cache_capacity=8 * MIB,
                          background_drain=False, **kw)
    return run_workload(config, spec, REPLICATION_PROFILE).mean_virtual_time


def test_c7_directional_replication(verdict):
    REPLICATION_PROFILE.check_replication_profile()
    t = {}
    for mix, dist in (("randr", "uniform"), ("randr", "zipf"), ("randw", "uniform"), ("randw", "zipf")):
        for engine in ("nvpages", "nvlog"):
            t[engine, mix, dist] = _mean_time(engine, mix, dist)
    for dist in ("uniform", "zipf"):
        t["direct", "randw", dist] = _mean_time("direct", "randw", dist, fsync_per_write=True)
    a = all(t["nvlog", "randr", d] < t["nvpages", "randr", d] for d in ("uniform", "zipf"))
    b = t["nvlog", "randw", "uniform"] < t["nvpages", "randw", "uniform"]
    gaps = [t["direct", "randw", d] / t[e, "randw", d]
            for e in ("nvpages", "nvlog") for d in ("uniform", "zipf")]
    c = min(gaps) >= 10
    ms = {k: v / 1e6 for k, v in t.items()}
    detail = (f"randr nvlog/nvpages {ms['nvlog', 'randr', 'uniform']:.1f}/{ms['nvpages', 'randr', 'uniform']:.1f} ms, "
              f"randr-zipf {ms['nvlog', 'randr', 'zipf']:.1f}/{ms['nvpages', 'randr', 'zipf']:.1f} ms, "
              f"randw {ms['nvlog', 'randw', 'uniform']:.1f}/{ms['nvpages', 'randw', 'uniform']:.1f} ms, "
              f"direct+fsync gap >= {min(gaps):.1f}x")
    verdict(7, "nvlog < nvpages on reads and writes, both far below direct+fsync", a and b and c, detail)


# 8 -------------------------------------------------------------------------

def test_c8_cache_size_monotonicity(verdict):
    spec = WorkloadSpec(32 * MIB, 32 * MIB, mix="randrw", distribution="zipf", seed=2024, repeats=5)
    rates = {}
    for nvmm in (16 * MIB, 64 * MIB):
        config = EngineConfig("nvpages", nvmm_capacity=nvmm, background_drain=False)
        rates[nvmm] = run_workload(config, spec, REPLICATION_PROFILE).hit_rate
    ok = rates[64 * MIB] > rates[16 * MIB]
    verdict(8, "nvpages hit rate grows from 16 MiB to 64 MiB NVMM", ok,
            f"16 MiB {rates[16 * MIB]:.5f}, 64 MiB {rates[64 * MIB]:.5f}")


# 9 -------------------------------------------------------------------------

def _patchset_instance(seed):
    rng = random.Random(seed)
    region = PersistentRegion(rng.choice([16, 32, 64]) * KIB)
    store = BackingStore.from_images({"a": bytes(8 * PAGE), "b": bytes(8 * PAGE)})
    engine = NVLogEngine(region, store, 8 * KIB, drain_batch_pages=rng.randint(1, 6))
    for _ in range(rng.randint(1, 25)):
        if rng.random() < 0.15:
            engine.drain_batch()
        else:
            fid = rng.choice([1, 2])
            off = rng.randrange(10 * PAGE)
            engine.pwrite(fid, off, bytes([rng.randrange(256)]) * rng.randint(1, 2 * PAGE))
        brute = {}
        for rec, _ in engine.ring.scan(engine.ring.head):
            for p in range(rec.offset // PAGE, (rec.end - 1) // PAGE + 1):
                brute[(rec.file_id, p)] = brute.get((rec.file_id, p), 0) + 1
        if engine.patch_counts() != brute:
            return False
    return True


def _recovered(engine_name, region_image, images, crash_at=None):
    capacity = len(region_image)
    region = PersistentRegion(capacity)
    region.durable_image[:] = region_image
    region.volatile_view[:] = region_image
    store = BackingStore.from_images(images)
    config = (EngineConfig("nvpages", nvmm_capacity=capacity, log_bytes=16 * KIB, background_drain=False)
              if engine_name == "nvpages" else
              EngineConfig("nvlog", nvmm_capacity=capacity, dram_cache_capacity=8 * KIB,
                           drain_batch_pages=64, background_drain=False))
    if crash_at is not None:
        region.arm(CrashPlan(crash_at))
        try:
            engine_open(config, region=region, store=store)
        except SimulatedCrash:
            region.crash()
            store.crash()
        else:
            return None
    engine = engine_open(config, region=region, store=store)
    engine.close()
    return {n: store.durable_contents(store.lookup(n)) for n in images}


def _replay_instance(seed):
    """Recovery interrupted at any persist and rerun ends where one clean pass ends."""
    rng = random.Random(seed)
    engine_name = "nvpages" if seed % 2 else "nvlog"
    capacity = capacity_for_slots(8, 16 * KIB) if engine_name == "nvpages" else 64 * KIB
    images = {"a": rng.randbytes(8 * PAGE)}
    store = BackingStore.from_images(images)
    region = PersistentRegion(capacity)
    config = (EngineConfig("nvpages", nvmm_capacity=capacity, log_bytes=16 * KIB, background_drain=False)
              if engine_name == "nvpages" else
              EngineConfig("nvlog", nvmm_capacity=capacity, dram_cache_capacity=8 * KIB,
                           drain_batch_pages=64, background_drain=False))
    engine = engine_open(config, region=region, store=store)
    fh = engine.f_open("a")
    for _ in range(rng.randint(1, 10)):
        engine.f_pwrite(fh, rng.randrange(8 * PAGE), rng.randbytes(rng.randint(1, 3000)))
    engine.abandon()
    region.crash()
    store.crash()
    crashed_image = bytes(region.durable_image)
    crashed_files = {n: store.durable_contents(store.lookup(n)) for n in images}
    once = _recovered(engine_name, crashed_image, crashed_files)
    probe = PersistentRegion(capacity)
    probe.durable_image[:] = crashed_image
    probe.volatile_view[:] = crashed_image
    engine_open(config, region=probe, store=BackingStore.from_images(crashed_files))
    recovery_persists = probe.persist_counter
    for k in range(1, recovery_persists + 1):
        again = _recovered(engine_name, crashed_image, crashed_files, crash_at=k)
        if again is not None and again != once:
            return False
    return True


def test_c9_patchset_and_replay_properties(verdict):
    patch_fail = [s for s in range(1000) if not _patchset_instance(s)]
    replay_fail = [s for s in range(1000) if not _replay_instance(s)]
    ok = not patch_fail and not replay_fail
    verdict(9, "PatchSet exactness and replay idempotence", ok,
            f"patchset {1000 - len(patch_fail)}/1000, replay {1000 - len(replay_fail)}/1000")


# 10 ------------------------------------------------------------------------

def test_c10_recovery_flag(verdict, tmp_path):
    detail, ok = [], True
    for name in ("nvpages", "nvlog"):
        config = EngineConfig(name, nvmm_capacity=256 * KIB, dram_cache_capacity=32 * KIB,
                              background_drain=False)
        rpath, sroot = tmp_path / f"{name}.img", tmp_path / name
        eng = engine_open(config, rpath, sroot)
        fh = eng.f_open("f", create=True)
        eng.f_pwrite(fh, 0, b"x" * 100)
        eng.close()
        clean = engine_open(config, rpath, sroot)
        after_clean = clean.recovery_runs
        fh = clean.f_open("f")
        clean.f_pwrite(fh, 50, b"y" * 100)
        clean.region.checkpoint()  # power fails: only persisted bytes reach the image
        clean.abandon()
        dirty = engine_open(config, rpath, sroot)
        after_crash = dirty.recovery_runs
        data = dirty.f_pread(dirty.f_open("f"), 0, 150)
        dirty.close()
        ok &= after_clean == 0 and after_crash == 1 and data == b"x" * 50 + b"y" * 100
        detail.append(f"{name}: clean->{after_clean}, crash->{after_crash}")
    verdict(10, "recovery runs only after an unclean shutdown", ok, ", ".join(detail))
