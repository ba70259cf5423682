from nvmmcache.cli import bench_main, crash_main, main
from nvmmcache.crash import format_script, random_script


def test_bench_run_writes_csv(tmp_path):
    out = tmp_path / "r.csv"
    rc = bench_main(["run", "--engine", "nvpages", "--mix", "randrw", "--dist", "zipf",
                     "--file-size", "256KiB", "--nvmm", "512KiB", "--repeats", "1",
                     "--out", str(out)])
    assert rc == 0
    header, row = out.read_text().splitlines()
    assert row.startswith("nvpages,524288,randrw,zipf95_5,")


def test_bench_matrix(tmp_path):
    cfg = tmp_path / "m.cfg"
    cfg.write_text("engines = direct\nnvmm = 64KiB\nmixes = randr\ndistributions = uniform\n"
                   "file_size = 64KiB\nrepeats = 1\n")
    out = tmp_path / "m.csv"
    assert bench_main(["matrix", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 2


def test_crash_exhaustive_script(tmp_path, capsys):
    script = tmp_path / "s.txt"
    script.write_text(format_script(random_script(1, 10, 64 * 1024)))
    rc = crash_main(["exhaustive", "--engine", "nvlog", "--script", str(script),
                     "--file-size", "64KiB"])
    assert rc == 0
    assert "crash cases passed" in capsys.readouterr().out


def test_crash_mutation_fails_with_plan(capsys):
    rc = crash_main(["exhaustive", "--engine", "nvlog", "--mutation", "head_before_fsync",
                     "--ops", "60", "--file-size", "64KiB", "--seed", "3", "--stop-on-fail"])
    assert rc == 1
    assert "FAIL seed=3 plan=" in capsys.readouterr().out


def test_crash_fuzz(capsys):
    rc = crash_main(["fuzz", "--engine", "nvpages", "--ops", "10", "--seeds", "1",
                     "--plans", "3", "--file-size", "64KiB", "--budget", "20"])
    assert rc == 0
    assert "3 cases over 1 seeds, 0 failures" in capsys.readouterr().out


def test_main_dispatch():
    assert main([]) == 2
