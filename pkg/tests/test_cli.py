import csv
import json
import subprocess
import sys

import pytest

from polylab import cli
from polylab.cli import ConfigError, ExperimentConfig, build_config, main, read_config_file


def _run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def _csv(out):
    with open(out / "results.csv", newline="") as fh:
        return list(csv.reader(fh))


def test_config_file_and_flag_precedence(tmp_path):
    cfg_file = tmp_path / "exp.cfg"
    cfg_file.write_text("# scan settings\nbeta = 0.2, 0.4\nreps = 500\ndim = 2\nhorizon = 3\nseed = 9\n")
    raw = read_config_file(cfg_file)
    assert raw["beta"] == "0.2, 0.4"
    code, out = _run(tmp_path, "a", "scan", "--config", str(cfg_file), "--reps", "300", "--workers", "1")
    assert code == 0
    report = (out / "report.txt").read_text()
    assert "reps = 300" in report and "beta = 0.20000000000000001,0.40000000000000002" in report
    assert "seed = 9" in report and "dim = 2" in report
    rows = _csv(out)
    assert len(rows) == 3 and rows[1][rows[0].index("reps")] == "300"


def test_bad_config_file(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("beta 0.3\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        read_config_file(p)
    p.write_text("colour = blue\n")
    assert main(["scan", "--config", str(p)]) == 2


@pytest.mark.parametrize("args,msg", [
    (["scan", "--stat", "moment:-0.5", "--dist", "gaussian:0,1"], "negative moment"),
    (["scan", "--stat", "moment:-0.5", "--dist", "discrete:[(-inf,0.5),(0,0.5)]"], "negative moment"),
    (["certify", "--stat", "lp:4", "--dist", "gaussian:0,1"], "upper ratio bound"),
    (["certify", "--stat", "neg:2", "--dist", "discrete:[(-inf,0.5),(0,0.5)]"], "lower ratio bound"),
    (["certify", "--stat", "lp:1"], "> 1"),
    (["certify", "--model", "brw", "--displacement", "gaussian:0,1", "--stat", "strong:2"], "upper ratio bound"),
    (["scan", "--stat", "sup"], "needs an argument"),
    (["scan", "--reps", "10"], "reps"),
    (["scan", "--dim", "5"], "dim"),
    (["scan", "--dim", "3", "--horizon", "401"], "exceeds"),
    (["scan", "--beta", "-1"], "beta"),
    (["scan", "--stat", "lp:2"], "not available"),
    (["replica", "--dist", "discrete:[(1e308,0.5),(0,0.5)]", "--beta", "2"], "lambda"),
    (["branching", "--offspring", "[(0,0.5),(1,0.5)]"], "mean offspring"),
    (["branching", "--model", "polymer"], "model = gw"),
    (["scan", "--dist", "uniform"], "uniform"),
    (["scan", "--seed", "-3"], "seed"),
])
def test_unsupported_rejected_before_compute(tmp_path, capsys, monkeypatch, args, msg):
    called = []
    monkeypatch.setattr(cli, "run_experiment", lambda cfg: called.append(cfg))
    assert main([*args, "--out", str(tmp_path / "x")]) == 2
    assert msg in capsys.readouterr().err
    assert not called and not (tmp_path / "x").exists()


def test_csv_schema_is_stable(tmp_path):
    code, out = _run(tmp_path, "s", "scan", "--stat", "mean,m2,sup:2,inf:2,moment:-0.5", "--horizon", "2,4",
                     "--reps", "200", "--workers", "1")
    assert code == 0
    header = _csv(out)[0]
    assert header == ["model", "sampler", "param", "dim", "n", "reps", "seed", "mean_mean", "mean_se",
                      "m2_mean", "m2_se", "sup2.0_hits", "sup2.0_est", "sup2.0_lo", "sup2.0_hi",
                      "inf2.0_hits", "inf2.0_est", "inf2.0_lo", "inf2.0_hi", "moment-0.5_mean", "moment-0.5_se"]
    code, out = _run(tmp_path, "c", "certify", "--stat", "lp:4", "--dim", "3", "--beta", "0.3",
                     "--horizon", "3", "--reps", "200", "--workers", "1")
    assert _csv(out)[0] == ["sampler", "param", "n", "kind", "t", "K", "reps", "hits", "lower_conf",
                            "upper_conf", "requirement", "status", "epsilon", "exponent", "bound",
                            "moment_mean", "moment_se", "check"]


def test_records_and_report(tmp_path):
    code, out = _run(tmp_path, "d", "domination", "--model", "gw", "--reps", "500", "--k", "3", "--l", "3",
                     "--workers", "1")
    assert code == 0
    recs = [json.loads(s) for s in (out / "records.jsonl").read_text().splitlines()]
    assert [r["statistic"] for r in recs] == ["domination[x2](k=3,l=3)", "domination[x4](k=3,l=3)"]
    for r in recs:
        assert {"N", "mean", "SE", "CI", "verdict", "experiment"} <= set(r)
    report = (out / "report.txt").read_text()
    assert "version.numpy" in report and "wall_clock_s" in report and "status = ok" in report


@pytest.mark.parametrize("args", [
    ["scan", "--dim", "2", "--beta", "0.4,0.8", "--horizon", "4,8", "--stat", "mean,m2,sup:2,inf:3"],
    ["domination", "--model", "brw", "--theta", "0.3", "--k", "3", "--l", "3"],
    ["certify", "--dim", "3", "--beta", "0.3", "--horizon", "5", "--stat", "lp:4,neg:2,strong:2"],
    ["branching", "--horizon", "5,10"],
])
def test_byte_identical_across_workers_and_reruns(tmp_path, args):
    bodies = []
    for i, w in enumerate(("1", "2", "1")):
        code, out = _run(tmp_path, f"r{i}", *args, "--reps", "2500", "--workers", w, "--seed", "77")
        assert code in (0, 1)
        bodies.append((out / "results.csv").read_bytes())
    assert bodies[0] == bodies[1] == bodies[2]


def test_workers_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("POLYLAB_WORKERS", "2")
    cfg_seen = []
    monkeypatch.setattr(cli, "run_experiment", lambda cfg: cfg_seen.append(cfg) or cli.RunReport(cfg))
    assert main(["scan", "--out", str(tmp_path / "e")]) == 0
    assert cfg_seen[0].workers == 2
    assert main(["scan", "--workers", "1", "--out", str(tmp_path / "e")]) == 0
    assert cfg_seen[1].workers == 1


def test_exit_status_on_failed_check(tmp_path, monkeypatch):
    def failing(cfg):
        rep = cli.RunReport(cfg)
        rep.add("forced", "", "fail")
        return rep

    monkeypatch.setattr(cli, "run_experiment", failing)
    assert main(["scan", "--out", str(tmp_path / "f")]) == 1


def test_verify_subcommand(tmp_path):
    code, out = _run(tmp_path, "v", "verify", "--reps", "2000", "--seeds", "5", "--horizon", "6",
                     "--workers", "1")
    assert code == 0
    rows = _csv(out)
    verdicts = [r[rows[0].index("verdict")] for r in rows[1:]]
    assert len(verdicts) >= 10 and set(verdicts) == {"pass"}


def test_replica_subcommand(tmp_path):
    code, out = _run(tmp_path, "rp", "replica", "--dist", "gaussian:0,1", "--dim", "3", "--beta", "0.3",
                     "--horizon", "4,20", "--reps", "2000", "--workers", "1")
    assert code == 0
    rows = _csv(out)
    head = rows[0]
    assert float(rows[2][head.index("l2_beta")]) < float(rows[1][head.index("l2_beta")])


def test_checkpoint_resume_gives_same_csv(tmp_path):
    args = ["scan", "--reps", "3000", "--workers", "1", "--checkpoint-every", "1"]
    code, out = _run(tmp_path, "cp", *args)
    first = (out / "results.csv").read_bytes()
    assert any((out / "checkpoints").iterdir())
    # rerun picks up the finished checkpoint and writes the same body
    code, out = _run(tmp_path, "cp", *args)
    assert (out / "results.csv").read_bytes() == first


def test_experiment_id_ignores_workers_and_out():
    a = build_config("scan", {"workers": "1", "out": "a"})
    b = build_config("scan", {"workers": "3", "out": "b"})
    c = build_config("scan", {"seed": "1"})
    assert a.experiment_id == b.experiment_id != c.experiment_id
    assert isinstance(a, ExperimentConfig) and a.stat == ("mean", "m2", "sup:2")


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "polylab", "scan", "--reps", "100", "--horizon", "2",
                          "--workers", "1", "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "results.csv" in res.stdout
    bad = subprocess.run([sys.executable, "-m", "polylab", "scan", "--reps", "1"], capture_output=True, text=True)
    assert bad.returncode == 2 and "reps" in bad.stderr
