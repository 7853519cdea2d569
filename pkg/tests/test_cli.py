import csv

from dftopk.cli import main


def test_gradcheck_small(tmp_path):
    assert main(["gradcheck", "--seed", "1", "--instances", "10", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "gradcheck.csv").read_text().startswith("op_name,")


def test_gradcheck_self_test_fails():
    assert main(["gradcheck", "--instances", "10", "--corrupt"]) == 2


def test_gradcheck_zero_instances():
    assert main(["gradcheck", "--instances", "0"]) == 1


def test_unknown_command_and_flag():
    assert main(["frobnicate"]) == 1
    assert main(["bench", "--ops", "nope"]) == 1
    assert main(["bench", "--sizes", "1,2"]) == 1


def test_bench_csv(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--sizes", "4,8", "--reps", "1", "--warmup", "0", "--ops", "dftopk", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["n"] for r in rows] == ["4", "8"]


def _train(tmp_path, name):
    out = tmp_path / name
    args = ["train", "--set", "days=2", "--set", "pvs_per_day=32", "--set", "batch_pvs=16",
            "--set", "loss_kinds=dftopk,neuralsort,softsort,pointwise_bce", "--out-dir", str(out)]
    assert main(args) == 0
    return out


def test_train_is_byte_deterministic(tmp_path):
    a = _train(tmp_path, "a")
    b = _train(tmp_path, "b")
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    for kind in ("dftopk", "neuralsort", "softsort", "pointwise_bce"):
        assert (a / f"model_{kind}.bin").read_bytes() == (b / f"model_{kind}.bin").read_bytes()
    rows = list(csv.DictReader((a / "metrics.csv").open()))
    assert [r["loss_kind"] for r in rows] == ["dftopk", "neuralsort", "softsort", "pointwise_bce"]


def test_train_bad_config(tmp_path, capsys):
    assert main(["train", "--set", "bogus_key=1", "--out-dir", str(tmp_path)]) == 1
    assert "bogus_key" in capsys.readouterr().err


def test_sweep_tau(tmp_path):
    out = tmp_path / "sweep.csv"
    args = ["sweep-tau", "--taus", "0.1,1", "--set", "sweep_days=2", "--set", "sweep_pvs_per_day=32",
            "--set", "batch_pvs=16", "--out", str(out)]
    assert main(args) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "tau,joint_recall,sum_deviation_mean"
    assert len(lines) == 3


def test_sweep_rejects_nonpositive_tau():
    assert main(["sweep-tau", "--taus", "0,1"]) == 1
