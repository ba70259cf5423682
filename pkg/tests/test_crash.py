from nvmmcache.crash import (
    CrashSetup,
    Op,
    _execute,
    default_config,
    enumerate_crash_points,
    format_script,
    fuzz_crash,
    initial_images,
    parse_script,
    random_script,
    run_crash_case,
    run_exhaustive,
    torn_variants,
)

KIB = 1 << 10


def setup(engine, mutation=None):
    return CrashSetup(default_config(engine, mutation), initial_images(1, 64 * KIB))


def test_script_roundtrip():
    ops = random_script(3, 20, 64 * KIB, aligned=False)
    assert parse_script(format_script(ops)) == ops
    assert parse_script("# comment\nW f 0 4 9\nR f 0 4\n") == [Op("W", "f", 0, 4, 9), Op("R", "f", 0, 4)]


def test_torn_variants():
    assert torn_variants(1) == []
    assert torn_variants(3) == [1, 2]
    picks = torn_variants(65)
    assert len(picks) <= 4 and all(1 <= u < 65 for u in picks) and 64 in picks


def test_one_plan_per_persist_plus_torn():
    s = setup("nvlog")
    script = random_script(2, 10, 64 * KIB)
    outcome = _execute(s, script, None, trace=True)
    plans = enumerate_crash_points(s, script)
    whole = [p for p in plans if p.torn_units is None]
    assert len(whole) == outcome.region.persist_counter
    assert [p.after_persist for p in whole] == list(range(1, len(whole) + 1))


def test_each_nvlog_write_yields_at_least_two_points():
    s = setup("nvlog")
    script = [Op("W", "data", i * 4096, 4096, i) for i in range(3)]
    empty = len(enumerate_crash_points(s, []))
    assert len(enumerate_crash_points(s, script)) - empty >= 6


def test_no_crash_run_passes():
    s = setup("nvpages")
    assert run_crash_case(s, random_script(4, 30, 64 * KIB), None).passed


def test_empty_script_survives_every_crash():
    for engine in ("nvpages", "nvlog"):
        verdicts = run_exhaustive(setup(engine), [])
        assert verdicts and all(v.passed for v in verdicts)


def test_small_exhaustive_passes_unmutated():
    for engine in ("nvpages", "nvlog"):
        script = random_script(5, 25, 64 * KIB, aligned=False)
        verdicts = run_exhaustive(setup(engine), script)
        assert all(v.passed for v in verdicts), [str(v) for v in verdicts if not v.passed]


def test_fuzz_zero_budget_is_empty():
    summary = fuzz_crash(default_config("nvlog"), 10, range(3), 0)
    assert summary.cases == 0 and summary.ok


def test_fuzz_short_run():
    summary = fuzz_crash(default_config("nvlog"), 20, range(2), 30, plans_per_seed=5,
                         file_size=64 * KIB)
    assert summary.cases == 10 and summary.ok
