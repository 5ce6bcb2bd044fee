import json
import shutil
import subprocess
import sys
from importlib import resources

import pytest

from tempoly import __version__
from tempoly.cli import main

FIXTURE = resources.files("tempoly") / "data" / "omega_d2_m5.json"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def doc(out):
    return json.loads(out)


class TestPlan:
    def test_rewind_feasible(self, capsys):
        code, out, _ = run(capsys, "plan", "--d", "2", "--n", "1", "--budget", "1", "--targets", "-1")
        assert code == 0
        d = doc(out)
        assert d["seed"] == 0 and d["version"] == __version__
        assert d["command"][:2] == ["tempoly", "plan"]

    def test_infeasible(self, capsys):
        code, out, err = run(capsys, "plan", "--d", "3", "--n", "1", "--budget", "1", "--targets", "-1")
        assert code == 1
        assert doc(out)["reason"] == "infeasible"
        assert "infeasible" in err

    def test_fractions_and_compile(self, capsys, tmp_path):
        prog = tmp_path / "prog.json"
        code, out, _ = run(capsys, "plan", "--d", "2", "--n", "2", "--budget", "1", "--targets", "1,-1/2",
                           "--dt", "0.125", "--compile", "--program-out", str(prog))
        assert code == 0
        assert json.loads(prog.read_text())["format"] == "tempoly.program/1"

    def test_compile_needs_dt(self, capsys):
        code, _, _ = run(capsys, "plan", "--d", "2", "--n", "1", "--budget", "1", "--targets", "0", "--compile")
        assert code == 2


class TestVerify:
    def test_fixture_hundred_passes(self, capsys):
        code, out, _ = run(capsys, "verify", "--poly", str(FIXTURE), "--target", "swap", "--samples", "100")
        assert code == 0
        assert doc(out)["passes"] == 100

    def test_tampered_fixture_fails(self, capsys, tmp_path):
        data = json.loads(FIXTURE.read_text())
        data["terms"][0]["re"] += 0.5
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(data))
        code, out, _ = run(capsys, "verify", "--poly", str(bad), "--target", "swap", "--samples", "10")
        assert code == 1
        d = doc(out)
        assert d["reason"] == "proportionality check failed"
        assert d["passes"] < 10 and len(d["results"]) == 10

    def test_malformed_poly_is_usage_error(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"n_parties": 1}')
        code, out, _ = run(capsys, "verify", "--poly", str(bad))
        assert code == 2 and doc(out)["reason"] == "usage"


class TestConstructAndCard:
    def test_round_trip_through_files(self, capsys, tmp_path):
        path = tmp_path / "r.json"
        assert run(capsys, "construct", "qubit-rewind", "--s", "2", "--out", str(path))[0] == 0
        code, _, _ = run(capsys, "verify", "--poly", str(path), "--target", "rewind", "--s", "2")
        assert code == 0
        code, out, _ = run(capsys, "card", "--poly", str(path))
        card = doc(out)
        assert code == 0
        assert [s["branching"] for s in card["card"]["schedule"][0]] == [True, True, False, False, True, True]

    def test_fast_forward(self, capsys, tmp_path):
        path = tmp_path / "e.json"
        code, _, _ = run(capsys, "construct", "fast-forward", "--n", "2", "--j", "1", "--s", "4",
                         "--out", str(path))
        assert code == 0
        code, out, _ = run(capsys, "verify", "--poly", str(path), "--target", "translate", "--j", "1",
                           "--power", "8", "--samples", "5")
        assert code == 0

    def test_missing_perm(self, capsys):
        assert run(capsys, "construct", "perm", "--n", "3")[0] == 2


class TestSimulate:
    def test_deterministic_output(self, capsys, tmp_path):
        path = tmp_path / "r.json"
        run(capsys, "construct", "qubit-rewind", "--s", "1", "--out", str(path))
        argv = ["simulate", "--poly", str(path), "--trials", "2000", "--seed", "3"]
        a = run(capsys, *argv)[1]
        b = run(capsys, *argv)[1]
        assert a == b
        assert doc(a)["seed"] == 3

    def test_jobs_independent_mean(self, capsys):
        base = ["simulate", "--poly", str(FIXTURE), "--trials", "3000"]
        a = doc(run(capsys, *base, "--jobs", "1")[1])
        b = doc(run(capsys, *base, "--jobs", "3")[1])
        assert a["mean"] == b["mean"]

    def test_csv(self, capsys, tmp_path):
        csv = tmp_path / "p.csv"
        code, _, _ = run(capsys, "simulate", "--poly", str(FIXTURE), "--trials", "50", "--csv", str(csv))
        assert code == 0
        assert len(csv.read_text().strip().splitlines()) >= 50

    def test_bad_sampler(self, capsys):
        assert run(capsys, "simulate", "--poly", str(FIXTURE), "--sampler", "gaussian")[0] == 2

    def test_needs_one_source(self, capsys):
        assert run(capsys, "simulate")[0] == 2


class TestSearch:
    def test_small(self, capsys, tmp_path):
        code, out, _ = run(capsys, "search", "--m", "3", "--out-dir", str(tmp_path))
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["dims"]["quotient"] == 0
        assert report["bound"] > 0 and report["seed"] == 0


class TestUsage:
    def test_no_subcommand(self, capsys):
        code, out, err = run(capsys)
        assert code == 2 and doc(out)["exit"] == 2 and err

    def test_unknown_flag(self, capsys):
        assert run(capsys, "plan", "--bogus")[0] == 2

    def test_config_defaults_and_override(self, capsys, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('[plan]\nd = 2\nn = 1\nbudget = "1"\ntargets = "-1"\n')
        code, out, _ = run(capsys, "plan", "--config", str(cfg), "--d", "2", "--n", "1", "--budget", "1",
                           "--targets", "-1")
        assert code == 0
        code, out, _ = run(capsys, "plan", "--config", str(cfg), "--d", "3", "--n", "1", "--budget", "1",
                           "--targets", "-1")
        assert code == 1

    def test_config_unknown_key(self, capsys, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[plan]\nwobble = 3\n")
        code, out, _ = run(capsys, "plan", "--config", str(cfg), "--d", "2", "--n", "1", "--budget", "1",
                           "--targets", "0")
        assert code == 2 and "wobble" in doc(out)["detail"]


class TestReproduce:
    def test_subset_writes_reports(self, capsys, tmp_path):
        code, out, _ = run(capsys, "reproduce-paper", "--report-dir", str(tmp_path), "--only", "14,15",
                           "--quiet")
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert [c["criterion"] for c in report["criteria"]] == [14, 15]
        assert "wall clock" in (tmp_path / "summary.md").read_text()
        first = (tmp_path / "report.json").read_bytes()
        run(capsys, "reproduce-paper", "--report-dir", str(tmp_path), "--only", "14,15", "--quiet")
        assert (tmp_path / "report.json").read_bytes() == first


@pytest.mark.skipif(shutil.which("tempoly") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["tempoly", "plan", "--d", "3", "--n", "1", "--budget", "1", "--targets", "-1"],
                         capture_output=True, text=True)
    assert res.returncode == 1 and json.loads(res.stdout)["reason"] == "infeasible"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tempoly.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
