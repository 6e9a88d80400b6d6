import json
import subprocess
import sys

import numpy as np
import pytest

from homog.cli import main


def run(*argv):
    return subprocess.run([sys.executable, "-m", "homog", *argv], capture_output=True, text=True)


@pytest.mark.parametrize("sub", [[], ["simulate"], ["fit"], ["segment"], ["tune"], ["replicate"]])
def test_help_exits_zero(sub):
    res = run(*sub, "--help")
    assert res.returncode == 0 and "usage" in res.stdout


def test_usage_errors_exit_two():
    assert run("fit").returncode == 2
    assert run("segment", "--sample").returncode == 2  # needs --delta or --groups
    assert main(["simulate", "--m", "3", "--out", "/tmp/never.csv"]) == 2


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert main(["simulate", "--m", "4", "--T", "50", "--seed", "1", "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.truth.json").read_bytes() == (tmp_path / "b.truth.json").read_bytes()
    assert not list(tmp_path.glob("*.tmp*"))


def test_segment_bundled_sample(capsys):
    assert main(["segment", "--sample", "--delta", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["change_points"] == [4] and out["groups"] == 2


def test_segment_file_and_sorting(tmp_path, capsys):
    path = tmp_path / "b.txt"
    path.write_text("20\n0\n10\n0\n10\n20\n")
    assert main(["segment", str(path), "--groups", "3"]) == 3  # unsorted input is a data error
    capsys.readouterr()
    assert main(["segment", str(path), "--groups", "3", "--sort"]) == 0
    assert json.loads(capsys.readouterr().out)["change_points"] == [2, 4]


def test_missing_input_exits_nonzero(tmp_path):
    res = run("fit", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path / "o"))
    assert res.returncode == 3 and "nope.csv" in res.stderr
    assert main(["segment", str(tmp_path / "nope.txt"), "--delta", "1"]) == 3


def test_bad_csv_is_data_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,t,y,x1,x2\na,1,abc,1,2\n")
    assert main(["fit", str(path), "--out-dir", str(tmp_path / "o")]) == 3


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    d = tmp_path_factory.mktemp("fit")
    panel = d / "panel.csv"
    assert main(["simulate", "--m", "4", "--T", "200", "--sigma", "0.01", "--seed", "2",
                 "--out", str(panel)]) == 0
    out = d / "out"
    assert main(["fit", str(panel), "--truth", str(d / "panel.truth.json"), "--out-dir", str(out),
                 "--K", "7", "--h1-max", "4", "--h2-max", "6"]) == 0
    return d, out


def test_fit_outputs(fitted):
    d, out = fitted
    fit = json.loads((out / "fit.json").read_text())
    parts = json.loads((out / "partitions.json").read_text())
    assert len(fit["betas"]) == 4 and all(b[0] == 1.0 for b in fit["betas"])
    assert fit["transform"] == "cdf"
    assert parts["nmi_beta"] == 1.0
    assert "metrics" in parts
    curves = np.genfromtxt(out / "links.csv", delimiter=",", names=True, dtype=None, encoding=None)
    assert len(curves) == 4 * 200 and np.isfinite(curves["g"]).all()
    surface = np.genfromtxt(out / "cv_surface.csv", delimiter=",", names=True)
    assert surface["chosen"].sum() == 1 and np.isfinite(surface["mean"]).any()


def test_over_skips_tuning(fitted, tmp_path):
    d, _ = fitted
    out = tmp_path / "over"
    assert main(["fit", str(d / "panel.csv"), "--variant", "over", "--out-dir", str(out)]) == 0
    parts = json.loads((out / "partitions.json").read_text())
    assert not (out / "cv_surface.csv").exists()
    assert len(set(parts["beta_individual_groups"])) == 4


def test_tune_prints_surface(fitted, capsys):
    d, _ = fitted
    assert main(["tune", str(d / "panel.csv"), "--K", "6", "--h1-max", "2", "--h2-max", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "h1,h2,mean,se,chosen" and len(lines) == 5
    assert sum(int(l.rsplit(",", 1)[1]) for l in lines[1:]) == 1


def test_replicate_smoke_and_byte_identity(tmp_path):
    args = ["replicate", "--m", "4", "--T", "120", "--reps", "1", "--K", "6",
            "--variants", "oracle,over"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("table_beta.csv", "table_fun.csv"):
        a, b = (tmp_path / "a" / name).read_bytes(), (tmp_path / "b" / name).read_bytes()
        assert a == b and a.startswith(b"variant,")


def test_thread_env_overrides_flag(monkeypatch):
    from homog import cli
    monkeypatch.setenv("HOMOG_THREADS", "3")
    args = cli.build_parser().parse_args(["--threads", "7", "segment", "--sample", "--delta", "1"])
    assert cli._threads(args) == 3
    monkeypatch.setenv("HOMOG_THREADS", "zero")
    with pytest.raises(cli.UsageError):
        cli._threads(args)
