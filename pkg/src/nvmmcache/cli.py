"""Command line: ``bench`` (workloads) and ``crash`` (crash-consistency checks)."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .clock import CostModel
from .config import load_kv, parse_size
from .facade import MUTATIONS, EngineConfig

log = logging.getLogger("nvmmcache")


def _size(text: str) -> int:
    try:
        return parse_size(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# -- bench -----------------------------------------------------------------

def bench_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Run FIO-style workloads on a virtual clock.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one engine on one workload")
    run.add_argument("--engine", choices=["nvpages", "nvlog", "direct"], required=True)
    run.add_argument("--mix", choices=["randr", "randrw", "randrw90", "randw"], required=True)
    run.add_argument("--dist", choices=["uniform", "zipf"], default="uniform")
    run.add_argument("--file-size", type=_size, default=32 << 20)
    run.add_argument("--total-bytes", type=_size, default=None)
    run.add_argument("--io-size", type=_size, default=4096)
    run.add_argument("--nvmm", type=_size, default=64 << 20)
    run.add_argument("--dram", type=_size, default=8 << 20)
    run.add_argument("--drain-batch", type=int, default=64)
    run.add_argument("--fsync-per-write", action="store_true",
                     help="direct engine: fsync after every pwrite")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--repeats", type=int, default=5)
    run.add_argument("--cost-profile", type=Path, default=None)
    run.add_argument("--out", type=Path, default=None, help="CSV output (default: stdout)")

    matrix = sub.add_parser("matrix", help="run the full engine x workload grid from a config file")
    matrix.add_argument("--config", type=Path, required=True)
    matrix.add_argument("--out", type=Path, default=None)
    return p


def bench_main(argv: list[str] | None = None) -> int:
    from .workload import MatrixConfig, WorkloadSpec, reports_to_csv, run_matrix, run_workload

    args = bench_parser().parse_args(argv)
    if args.command == "run":
        cost = CostModel.from_mapping(load_kv(args.cost_profile)) if args.cost_profile else CostModel()
        spec = WorkloadSpec(args.file_size, args.total_bytes or args.file_size, args.io_size,
                            args.mix, args.dist, args.seed, args.repeats)
        config = EngineConfig(args.engine, nvmm_capacity=args.nvmm, dram_cache_capacity=args.dram,
                              drain_batch_pages=args.drain_batch, background_drain=False,
                              fsync_per_write=args.fsync_per_write)
        reports = [run_workload(config, spec, cost)]
    else:
        cfg = MatrixConfig.from_mapping(load_kv(args.config), base_dir=args.config.parent)
        reports = run_matrix(cfg)
    text = reports_to_csv(reports)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text, encoding="utf-8")
    failed = [r for r in reports if r.status != "ok"]
    for r in failed:
        log.error("%s %s %s: %s", r.engine, r.mix, r.distribution, r.status)
    return 1 if failed else 0


# -- crash -----------------------------------------------------------------

def crash_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crash", description="Crash-injection checks for the NVMM engines.")
    sub = p.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("exhaustive", help="try every crash point of a script")
    ex.add_argument("--engine", choices=["nvpages", "nvlog"], required=True)
    ex.add_argument("--script", type=Path, default=None,
                    help="op script (W file off len seed / R file off len); "
                         "without it a random randrw script is generated")
    ex.add_argument("--seed", type=int, default=0, help="seed for the initial file image")
    ex.add_argument("--ops", type=int, default=200, help="ops in a generated script")
    ex.add_argument("--file-size", type=_size, default=8 << 20)
    ex.add_argument("--mutation", choices=MUTATIONS, default=None)
    ex.add_argument("--stop-on-fail", action="store_true")

    fz = sub.add_parser("fuzz", help="random scripts with random crash points")
    fz.add_argument("--engine", choices=["nvpages", "nvlog"], required=True)
    fz.add_argument("--ops", type=int, default=50)
    fz.add_argument("--seeds", type=int, default=100)
    fz.add_argument("--plans", type=int, default=50, help="crash plans per seed")
    fz.add_argument("--budget", type=float, default=60.0, help="seconds")
    fz.add_argument("--file-size", type=_size, default=1 << 20)
    fz.add_argument("--mutation", choices=MUTATIONS, default=None)
    return p


def crash_main(argv: list[str] | None = None) -> int:
    from . import crash

    args = crash_parser().parse_args(argv)
    config = crash.default_config(args.engine, args.mutation)
    if args.command == "exhaustive":
        images = crash.initial_images(args.seed, args.file_size)
        if args.script is not None:
            script = crash.load_script(args.script)
        else:
            script = crash.random_script(args.seed, args.ops, args.file_size)
        setup = crash.CrashSetup(config, images)
        verdicts = crash.run_exhaustive(setup, script, stop_on_fail=args.stop_on_fail)
        failed = [v for v in verdicts if not v.passed]
        for v in failed:
            print(f"FAIL seed={args.seed} plan={v.plan} divergence={v.divergence}")
        print(f"{args.engine}: {len(verdicts) - len(failed)}/{len(verdicts)} crash cases passed")
        return 1 if failed else 0

    summary = crash.fuzz_crash(config, args.ops, range(args.seeds), args.budget,
                               plans_per_seed=args.plans, file_size=args.file_size)
    for seed, plan, where in summary.failures:
        print(f"FAIL seed={seed} plan={plan} divergence={where}")
    print(f"{args.engine}: {summary.cases} cases over {summary.seeds_run} seeds, "
          f"{len(summary.failures)} failures")
    return 1 if summary.failures else 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    if argv and argv[0] == "bench":
        return bench_main(argv[1:])
    if argv and argv[0] == "crash":
        return crash_main(argv[1:])
    print("usage: python -m nvmmcache {bench|crash} ...", file=sys.stderr)
    return 2


def bench_entry() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    sys.exit(bench_main())


def crash_entry() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    sys.exit(crash_main())
