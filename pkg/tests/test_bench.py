import csv
import json

import numpy as np
import pytest

from fastmmot import bench
from fastmmot.cli import main
from fastmmot.core import InvalidParam, SizeOverflow
from fastmmot.formats import dumps_report


@pytest.mark.parametrize("power", [1, 3])
def test_slope_exact_regression(power):
    sizes = [64, 128, 256, 512, 1024, 2048]
    times = [2.5e-7 * n ** power for n in sizes]
    assert bench.fit_slope(sizes, times) == pytest.approx(power, abs=1e-9)


def test_spec_validation():
    with pytest.raises(InvalidParam):
        bench.BenchmarkSpec(sizes=(64, 32))
    with pytest.raises(InvalidParam):
        bench.BenchmarkSpec(repeats=0)
    with pytest.raises(InvalidParam):
        bench.BenchmarkSpec(family="bogus")
    with pytest.raises(InvalidParam):
        bench.BenchmarkSpec(solver="slow")


def test_dense_beyond_budget_refused():
    with pytest.raises(SizeOverflow):
        bench.run_benchmark(bench.BenchmarkSpec(sizes=(8, 500), solver="dense", repeats=1))


def test_both_skips_dense_beyond_budget():
    spec = bench.BenchmarkSpec(sizes=(8, 12), solver="both", repeats=1, iterations=5, budget=1000)
    recs = bench.run_benchmark(spec)["records"]
    skipped = [r for r in recs if r.get("skipped")]
    assert [(r["size"], r["solver"]) for r in skipped] == [(12, "dense")]
    assert all("plan_diff_fro" not in r for r in recs if r["size"] == 12)


@pytest.mark.parametrize("family", ["random1d", "ricker", "lmarginal", "random2d", "images"])
def test_plan_difference_small(family):
    sizes = (4, 5, 6) if family != "ricker" else (6, 8, 10)
    spec = bench.BenchmarkSpec(family=family, sizes=sizes, solver="both", repeats=1, order=4)
    rep = bench.run_benchmark(spec)
    diffs = [r["plan_diff_fro"] for r in rep["records"]]
    assert len(diffs) == 2 * len(sizes)
    assert max(diffs) <= 1e-12
    assert set(rep["slopes"]) == {"fast", "dense"}


def test_slope_needs_three_sizes():
    rep = bench.run_benchmark(bench.BenchmarkSpec(sizes=(8, 16), repeats=1, iterations=3))
    assert rep["slopes"] == {}


def test_report_deterministic_when_masked():
    spec = bench.BenchmarkSpec(sizes=(8, 16, 32), solver="both", repeats=2, iterations=20, seed=7)
    a = dumps_report(bench.mask_timing(bench.run_benchmark(spec)))
    b = dumps_report(bench.mask_timing(bench.run_benchmark(spec)))
    assert a == b
    assert "time_s" not in a and "slopes" not in a


def test_parallel_matches_serial():
    spec = bench.BenchmarkSpec(sizes=(8, 16, 24), repeats=1, iterations=10, seed=2)
    a = dumps_report(bench.mask_timing(bench.run_benchmark(spec)))
    b = dumps_report(bench.mask_timing(bench.run_benchmark(spec, parallel_instances=2)))
    assert a == b


def test_csv_outputs(tmp_path):
    spec = bench.BenchmarkSpec(sizes=(6, 8), solver="both", repeats=1, iterations=4)
    rep = bench.run_benchmark(spec)
    bench.write_csv(tmp_path / "t.csv", rep)
    bench.write_trace_csv(tmp_path / "tr.csv", rep)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["size", "solver", "mean_time_s", "distance", "residual", "plan_diff_fro"]
    assert len(rows) == 5
    trace = list(csv.reader(open(tmp_path / "tr.csv")))
    assert trace[0] == ["size", "solver", "iteration", "time_s", "residual"]
    assert len(trace) == 1 + 2 * 2 * 4
    times = [float(r[3]) for r in trace[1:5]]
    assert times == sorted(times)


def test_cli_bench_deterministic(tmp_path, capsys):
    outs = []
    for k in range(2):
        out = tmp_path / f"b{k}.json"
        argv = ["bench", "--family", "random1d", "--sizes", "8", "16", "32", "--repeats", "1",
                "--seed", "5", "--max-iter", "10", "--output", str(out)]
        assert main(argv) == 0
        outs.append(dumps_report(bench.mask_timing(json.loads(out.read_text()))))
    assert outs[0] == outs[1]
    assert "slope" in capsys.readouterr().out


def test_cli_bench_dense_over_budget(tmp_path, capsys):
    code = main(["bench", "--dense", "--sizes", "500", "--repeats", "1"])
    assert code != 0
    assert json.loads(capsys.readouterr().err)["error"] == "SizeOverflow"


def test_instance_families():
    spec = bench.BenchmarkSpec(family="images")
    inst = bench.make_instance(spec, 6)
    assert inst.kind == "2d" and inst.shape == (6, 6)
    assert inst.dense_entries() == 36 ** 3
    lm = bench.make_instance(bench.BenchmarkSpec(family="lmarginal", order=5), 4)
    assert len(lm.marginals) == 5 and lm.dense_entries() == 4 ** 5
    np.testing.assert_allclose(sum(m.weights.sum() for m in lm.marginals), 5.0)
