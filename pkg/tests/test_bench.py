import pytest

from dftopk.bench import BenchRow, bench_csv, loglog_slope, run_bench, time_operator
from dftopk.core import ValidationError


def test_slope_of_exact_power_law():
    rows = [BenchRow("op", n, n // 2, int(3 * n ** 2), 1, 0) for n in (5, 10, 50, 100, 500, 1000)]
    assert loglog_slope(rows) == pytest.approx(2.0, abs=1e-6)


def test_degraded_mode_emits_rows():
    rows, slopes = run_bench(sizes=(4, 8), ops=("dftopk", "softsort", "neuralsort", "strict_bisect"), reps=1, warmup=0)
    assert len(rows) == 8
    assert all(r.median_ns > 0 and r.k == r.n // 2 for r in rows)
    assert set(slopes) == {"dftopk", "softsort", "neuralsort", "strict_bisect"}
    text = bench_csv(rows)
    assert text.splitlines()[0] == "operator,n,k,median_ns,reps,warmup"
    assert len(text.splitlines()) == 9


def test_batched_timing():
    assert time_operator("dftopk", 16, reps=2, warmup=0, batch=8).median_ns > 0


def test_bad_inputs():
    with pytest.raises(ValidationError):
        time_operator("nope", 10)
    with pytest.raises(ValidationError):
        time_operator("dftopk", 1)
