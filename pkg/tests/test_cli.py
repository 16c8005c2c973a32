import json
import subprocess
import sys

import pytest

from backward_lq.cli import ARTIFACTS, RunConfig, THREADS_ENV, main, spec_from_config, ConfigError

SMALL = ["--paths", "1200", "--dt", "1/64", "--ode-dt", "1/640"]
FILES = ("riccati.csv", "bsde.csv", "trajectory.csv", "control.csv", "cost.json",
         "diagnostics.json")


def _run(tmp_path, *args, env=None):
    import os
    full_env = {**os.environ, **(env or {})}
    return subprocess.run([sys.executable, "-m", "backward_lq", *args], cwd=tmp_path,
                          env=full_env, capture_output=True, text=True, timeout=300)


@pytest.fixture(scope="module")
def small_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    assert main(["--preset", "blqb", *SMALL, "--out", str(out / "a")]) == 0
    return out


def test_writes_all_artifacts(small_out):
    a = small_out / "a"
    assert sorted(p.name for p in a.iterdir()) == sorted(FILES)
    header = (a / "riccati.csv").read_text().splitlines()[0]
    assert header == "t,upsilon,gamma1,gamma2,sigma"
    rows = (a / "bsde.csv").read_text().splitlines()
    assert len(rows) == 66
    cost = json.loads((a / "cost.json").read_text())
    assert {"j_formula", "j_mc", "agreement", "decomposition"} <= set(cost)
    diag = json.loads((a / "diagnostics.json").read_text())
    assert diag["validation"]["accepted"] and diag["problem"] == "blqb"


def test_byte_identical_across_runs_and_threads(small_out, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "2")
    assert main(["--preset", "blqb", *SMALL, "--out", str(small_out / "b")]) == 0
    for name in FILES:
        assert (small_out / "a" / name).read_bytes() == (small_out / "b" / name).read_bytes()


def test_artifact_subset(tmp_path):
    assert main(["--preset", "blqa", *SMALL, "--out", str(tmp_path),
                 "--artifacts", "riccati,cost"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["cost.json", "riccati.csv"]
    cost = json.loads((tmp_path / "cost.json").read_text())
    # the certificate reproduces the closed-form optimal cost within MC error
    assert abs(cost["j_formula"] - cost["reference"]) <= 3 * cost["formula_stderr"]


def test_indefinite_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('[problem]\nn = 1\nm = 1\nG = 1.0\n'
                   '[problem.coefficients]\nA = 1.0\nB = 1.0\nR = 0.0\n')
    assert main(["--config", str(cfg), *SMALL, "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "REJECT_INDEFINITE"


def test_bad_paths_exit_2(tmp_path, capsys):
    assert main(["--preset", "blqa", "--paths", "50", "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "BAD_CONFIG"


def test_unwritable_out_exit_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["--preset", "blqa", *SMALL, "--out", str(blocker / "sub")]) == 4


def test_coarse_grid_exit_3(tmp_path, capsys):
    assert main(["--preset", "blqb", "--paths", "400", "--dt", "1/8", "--ode-dt", "1/80",
                 "--out", str(tmp_path)]) == 3
    assert json.loads(capsys.readouterr().err)["error"] == "NONCONVERGED"


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "many")
    assert main(["--preset", "blqa", "--out", str(tmp_path)]) == 2


def test_config_file_run_table(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[problem]\nn = 1\nm = 1\nG = 1.0\nname = "toy"\n'
                   '[problem.coefficients]\nA = 0.5\nB = {kind = "polynomial", coeffs = [1.0, 1.0]}\n'
                   'R = 1.0\nN2 = 1.0\nH = {kind = "exponential", rate = -0.1}\n'
                   '[problem.terminal]\nkind = "smooth"\nconstant = 1.0\n'
                   'terms = [["sin", 1.0, 1.0, 0.0]]\n'
                   '[run]\npaths = 600\ndt = "1/32"\node_dt = "1/320"\nseed = 5\n')
    proc = _run(tmp_path, "--config", str(cfg), "--artifacts", "cost,diagnostics")
    assert proc.returncode == 0, proc.stderr
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert diag["problem"] == "toy" and diag["config"]["n_paths"] == 600


def test_spec_from_config_matrix_entries():
    spec = spec_from_config({"n": 2, "m": 1, "G": [[1, 0], [0, 1]],
                             "coefficients": {"A": [[1, 0], [0, 2]], "B": [[1], [0]],
                                              "R": 1.0}}, n_steps=8)
    assert spec.A(0.0).shape == (2, 2) and spec.B(0.3).shape == (2, 1)
    assert spec.H(0.0).shape == (2, 2)


@pytest.mark.parametrize("problem", [{"n": 1}, {"n": 1, "m": 1, "coefficients": {"Q": 1.0}},
                                     {"n": 1, "m": 1, "coefficients": {"A": {"kind": "spline"}}},
                                     {"n": 1, "m": 1, "terminal": {"kind": "digital"}}])
def test_spec_from_config_errors(problem):
    with pytest.raises(ConfigError):
        spec_from_config(problem)


@pytest.mark.parametrize("changes", [{"preset": None}, {"preset": "nope"}, {"dt_ode": 1.0},
                                     {"basis_degree": 0}, {"artifacts": ("plots",)}])
def test_run_config_check(changes):
    cfg = RunConfig(preset="blqa")
    for k, v in changes.items():
        setattr(cfg, k, v)
    with pytest.raises(ConfigError):
        cfg.check()


def test_module_entry_help(tmp_path):
    proc = _run(tmp_path, "--help")
    assert proc.returncode == 0
    for flag in ("--preset", "--config", "--paths", "--dt", "--seed", "--out"):
        assert flag in proc.stdout
    assert set(ARTIFACTS) <= set(proc.stdout.replace(",", " ").split())
