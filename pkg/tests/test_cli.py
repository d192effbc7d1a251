import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from roughflow.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, RunReport, _jsonable, main
from roughflow.grid_path import read_csv
from roughflow.rough_lift import read_csv_rough

FLOW_CFG = "[experiment]\nscenario = flow\n[drift]\nfamily = bump\na = 0.1\n"


def run_cli(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestExitCodes:
    def test_unknown_scenario(self, tmp_path, capsys):
        code, _, err = run_cli(["sample_fbm", "--out", tmp_path], capsys)
        assert code == EXIT_USAGE
        assert "unknown scenario" in err

    def test_invalid_hurst(self, tmp_path, capsys):
        code, _, err = run_cli(["sample-fbm", "--hurst", "0.3", "--out", tmp_path], capsys)
        assert code == EXIT_USAGE and "hurst" in err

    def test_invalid_config_line(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[grid]\nsteps = -4\n")
        code, _, err = run_cli(["--config", cfg, "--out", tmp_path], capsys)
        assert code == EXIT_USAGE and "line 2" in err

    def test_missing_config(self, tmp_path, capsys):
        code, _, _ = run_cli(["--config", tmp_path / "nope.cfg"], capsys)
        assert code == EXIT_USAGE

    @pytest.mark.parametrize("spec", ["0", "3-x", "15"])
    def test_bad_criteria(self, tmp_path, spec, capsys):
        code, _, err = run_cli(["verify-all", "--criteria", spec, "--out", tmp_path], capsys)
        assert code == EXIT_USAGE and "--criteria" in err

    def test_threads_environment(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("ROUGHFLOW_THREADS", "many")
        code, _, err = run_cli(["sample-fbm", "--out", tmp_path], capsys)
        assert code == EXIT_USAGE and "ROUGHFLOW_THREADS" in err

    def test_scenario_needing_brownian_noise(self, tmp_path, capsys):
        code, _, err = run_cli(["flow", "--hurst", "0.4", "--out", tmp_path], capsys)
        assert code == EXIT_USAGE and "hurst = 0.5" in err


class TestSampleFbm:
    def test_single_path(self, tmp_path, capsys):
        code, out, _ = run_cli(["sample-fbm", "--hurst", "0.4", "--steps", "32", "--oversample", "2",
                                "--out", tmp_path], capsys)
        assert code == EXIT_OK
        report = json.loads(out)
        assert report["passed"] and report["scenario"] == "sample-fbm"
        path = read_csv(tmp_path / "fbm.csv")
        assert path.steps == 64 and path.values[0, 0] == 0.0
        assert json.loads((tmp_path / "report.json").read_text()) == report

    def test_count_and_file_target(self, tmp_path, capsys):
        target = tmp_path / "runs" / "w.csv"
        code, out, _ = run_cli(["sample-fbm", "--count", "3", "--dim", "2", "--steps", "16",
                                "--hurst", "0.4", "--out", target], capsys)
        assert code == EXIT_OK
        names = [target.with_name(f"w_{k}.csv") for k in range(3)]
        assert json.loads(out)["artifacts"] == [str(n) for n in names]
        assert all(read_csv(n).dim == 2 for n in names)
        assert not np.array_equal(read_csv(names[0]).values, read_csv(names[1]).values)
        assert target.with_suffix(".report.json").exists()

    def test_repeat_runs_are_byte_identical(self, tmp_path, capsys):
        for sub in ("a", "b"):
            run_cli(["sample-fbm", "--seed", "5", "--hurst", "0.35", "--out", tmp_path / sub], capsys)
        assert (tmp_path / "a" / "fbm.csv").read_bytes() == (tmp_path / "b" / "fbm.csv").read_bytes()

    def test_seed_changes_output(self, tmp_path, capsys):
        for seed in (1, 2):
            run_cli(["sample-fbm", "--seed", seed, "--steps", "8", "--out", tmp_path / str(seed)], capsys)
        assert (tmp_path / "1" / "fbm.csv").read_bytes() != (tmp_path / "2" / "fbm.csv").read_bytes()


class TestScenarios:
    def test_lift_checks(self, tmp_path, capsys):
        code, out, err = run_cli(["lift-checks", "--dim", "2", "--steps", "128", "--out", tmp_path], capsys)
        assert code == EXIT_OK
        numbers = [c["criterion"] for c in json.loads(out)["checks"]]
        assert numbers == [2, 3]
        assert read_csv_rough(tmp_path / "lift.csv").dim == 2
        assert "[PASS]  2" in err

    @pytest.mark.parametrize("solver", ["euler", "picard"])
    def test_solve(self, tmp_path, solver, capsys):
        target = tmp_path / "x.csv"
        code, out, _ = run_cli(["solve", "--solver", solver, "--steps", "256", "--out", target], capsys)
        assert code == EXIT_OK
        report = json.loads(out)
        assert report["data"]["solver"] == solver
        sol = read_csv(target)
        assert sol.steps == 256 and sol.values[0, 0] == pytest.approx(0.3)

    def test_solvers_agree(self, tmp_path, capsys):
        finals = []
        for solver in ("euler", "picard"):
            _, out, _ = run_cli(["solve", "--solver", solver, "--steps", "1024", "--out", tmp_path / solver],
                                capsys)
            finals.append(json.loads(out)["data"]["final"][0])
        assert abs(finals[0] - finals[1]) < 0.05

    def test_transform_check(self, tmp_path, capsys):
        code, out, _ = run_cli(["transform-check", "--steps", "128", "--out", tmp_path], capsys)
        assert code == EXIT_OK
        data = json.loads(out)["data"]
        assert data["ellipticity"]["passes"] and data["circulation"]["passes"]
        assert data["roundtrip"] <= 1e-10

    def test_transform_check_rejects_rotational_field(self, tmp_path, capsys):
        cfg = tmp_path / "rot.cfg"
        cfg.write_text("[grid]\ndim = 2\nhurst = 0.4\n[sigma]\nfamily = rotational_2d\n")
        code, out, _ = run_cli(["transform-check", "--config", cfg, "--out", tmp_path], capsys)
        assert code == EXIT_FAIL
        assert not json.loads(out)["data"]["circulation"]["passes"]

    def test_flow(self, tmp_path, capsys):
        cfg = tmp_path / "flow.cfg"
        cfg.write_text(FLOW_CFG)
        code, out, _ = run_cli(["--config", cfg, "--out", tmp_path / "a"], capsys)
        assert code == EXIT_OK
        assert [c["criterion"] for c in json.loads(out)["checks"]] == [11, 12, 14]
        header = (tmp_path / "a" / "psi.csv").read_text().splitlines()[0]
        assert header == "s,t,x,value"
        moments = json.loads((tmp_path / "a" / "moments.json").read_text())
        assert set(moments["slopes"]) == {"space", "time-s", "time-t", "J-field"}
        run_cli(["--config", cfg, "--out", tmp_path / "b"], capsys)
        for name in ("psi.csv", "derivative.csv", "moments.json", "uniqueness.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_uniqueness(self, tmp_path, capsys):
        code, out, _ = run_cli(["uniqueness", "--steps", "256", "--out", tmp_path], capsys)
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "uniqueness.json").read_text())
        assert payload["contrast"]["steps"] == [256, 512, 1024, 2048]
        assert payload["own_residual"] <= 1e-10


class TestVerifyAll:
    def test_subset(self, tmp_path, capsys):
        code, out, err = run_cli(["verify-all", "--criteria", "2-3", "--out", tmp_path], capsys)
        assert code == EXIT_OK
        assert [c["criterion"] for c in json.loads(out)["checks"]] == [2, 3]
        assert err.count("[PASS]") == 2

    def test_threads_keep_order(self, tmp_path, capsys):
        code, out, _ = run_cli(["verify-all", "--criteria", "2,3,13", "--threads", "3", "--out", tmp_path],
                               capsys)
        assert code == EXIT_OK
        assert [c["criterion"] for c in json.loads(out)["checks"]] == [2, 3, 13]

    def test_tolerance_override_can_fail_a_check(self, tmp_path, capsys):
        cfg = tmp_path / "tight.cfg"
        cfg.write_text("[tolerances]\n2.ito = 1e-30\n")
        code, out, _ = run_cli(["verify-all", "--criteria", "2", "--config", cfg, "--out", tmp_path], capsys)
        assert code == EXIT_FAIL
        ms = json.loads(out)["checks"][0]["measurements"]
        assert next(m for m in ms if m["name"] == "ito")["threshold"] == 1e-30

    def test_unknown_tolerance_measurement(self, tmp_path, capsys):
        cfg = tmp_path / "typo.cfg"
        cfg.write_text("[tolerances]\n2.itoo = 1e-3\n")
        code, _, err = run_cli(["verify-all", "--criteria", "2", "--config", cfg, "--out", tmp_path], capsys)
        assert code == EXIT_USAGE and "itoo" in err


class TestReport:
    def test_json_is_strict(self):
        payload = _jsonable({"a": np.float64(np.inf), "b": np.arange(3), "c": np.bool_(True),
                             "d": (np.int64(2), float("nan"))})
        assert json.loads(json.dumps(payload, allow_nan=False)) == {
            "a": "inf", "b": [0, 1, 2], "c": True, "d": [2, "nan"]}

    def test_error_fails_report(self):
        rep = RunReport("solve", 1, {})
        assert rep.passed
        rep.error = "SolverError: blew up"
        assert not rep.passed and json.loads(rep.to_json())["passed"] is False


@pytest.mark.skipif(shutil.which("roughflow") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["roughflow", "sample-fbm", "--steps", "8", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["passed"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "roughflow.cli", "nonsense"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
