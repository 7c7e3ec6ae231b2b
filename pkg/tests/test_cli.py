import shutil
from pathlib import Path

import numpy as np
import pytest

from recdual.cli import DEFAULTS, run
from recdual.io import load_field, save_model
from recdual.oracles import random_tiny_model

MODELS = Path(__file__).resolve().parent.parent / "models"


def manifest(path):
    return dict(line.split("=", 1) for line in Path(path).read_text().splitlines())


def test_example_one(tmp_path, capsys):
    assert run(["--manifest-dir", str(tmp_path), "example", "1", "--beta", "0.4"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["V0,V1,V2", "0.4,0.4,0.416667"]
    m = manifest(tmp_path / "recdual-example.manifest")
    assert m["error"] == ""
    assert float(m["result.V2"]) == pytest.approx(0.25 / 0.6)
    assert "wall_time_s" in m and "numpy" in m


def test_example_two(tmp_path, capsys):
    assert run(["--manifest-dir", str(tmp_path), "example", "2", "--sigma", "0.1"]) == 0
    header, row = capsys.readouterr().out.splitlines()
    assert header == "beta,V"
    beta, value = map(float, row.split(","))
    assert value == pytest.approx(1.270378, abs=1e-6)


def test_example_bad_parameter(tmp_path):
    assert run(["--manifest-dir", str(tmp_path), "example", "2", "--sigma", "0.5"]) == 1
    assert "no beta" in manifest(tmp_path / "recdual-example.manifest")["error"]


def test_validate_shipped_models(tmp_path, capsys):
    for name in ("example1.model", "example2.model"):
        assert run(["--manifest-dir", str(tmp_path), "validate", str(MODELS / name)]) == 0
    assert capsys.readouterr().out.split() == ["ok", "ok"]


def test_validate_bad_model(tmp_path, capsys):
    bad = tmp_path / "bad.model"
    bad.write_text("[meta]\nbeta = 0.5\nstates = 1\nactions = 1\nshocks = 1\nconstraints = 1\n"
                   "[transition]\n0.9\n[reward]\n0\n[constraint 0]\n0\n[threshold 0]\n0\n")
    assert run(["--manifest-dir", str(tmp_path), "validate", str(bad)]) == 1
    assert "transition row 0" in capsys.readouterr().out
    m = manifest(tmp_path / "recdual-validate.manifest")
    assert m["result.violations"] == "1" and m["error"]


def test_missing_file_is_io_error(tmp_path):
    assert run(["--manifest-dir", str(tmp_path), "validate", str(tmp_path / "nope")]) == 3
    assert run(["solve", str(tmp_path / "nope"), "--out", str(tmp_path / "f.bin")]) == 3
    assert manifest(tmp_path / "f.bin.manifest")["error"].startswith("cannot read model")


def test_bad_tolerance_is_rejected(tmp_path):
    out = tmp_path / "f.bin"
    assert run(["solve", str(MODELS / "example1.model"), "--tol", "0", "--out", str(out)]) == 1
    assert not out.exists()
    assert manifest(str(out) + ".manifest")["error"]


def test_usage_error(tmp_path):
    assert run(["--manifest-dir", str(tmp_path), "solve"]) == 1


def test_non_convergence_exit_code(tmp_path):
    out = tmp_path / "f.bin"
    code = run(["solve", str(MODELS / "example1.model"), "--max-iter", "2", "--gamma-step",
                "0.5", "--gamma-max", "3", "--out", str(out)])
    assert code == 2
    assert out.exists()  # the last iterate is still written
    m = manifest(str(out) + ".manifest")
    assert m["result.converged"] == "False" and "no convergence" in m["error"]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny")
    model = d / "tiny.model"
    save_model(random_tiny_model(2, horizon=np.inf), model)
    field = d / "tiny.bin"
    assert run(["solve", str(model), "--gamma-step", "0.25", "--gamma-max", "20",
                "--out", str(field), "--report", str(d / "report.csv")]) == 0
    return d, model, field


def test_solve_outputs(tiny_run):
    d, model, field = tiny_run
    f = load_field(field)
    assert f.values.shape == (1, 2, 81)
    lines = (d / "report.csv").read_text().splitlines()
    assert lines[0] == "iter,norm,max_monotonicity_violation"
    assert manifest(str(field) + ".manifest")["result.converged"] == "True"


def test_policy_command(tiny_run, capsys):
    d, model, field = tiny_run
    out = d / "stage.csv"
    assert run(["policy", str(model), str(field), "--iters", "2000", "--out", str(out)]) == 0
    header, *rows = out.read_text().splitlines()
    assert header == "action,label,prob,lambda_0,promise_s0_0,promise_s1_0"
    assert sum(float(r.split(",")[2]) for r in rows) == pytest.approx(1.0)
    m = manifest(str(out) + ".manifest")
    assert float(m["result.promise_shortfall"]) < 1e-2


def test_simulate_is_byte_stable(tiny_run, capsys):
    d, model, field = tiny_run
    outs = []
    for k in range(2):
        out = d / f"paths{k}.csv"
        assert run(["simulate", str(model), str(field), "--paths", "200", "--horizon", "6",
                    "--seed", "3", "--iters", "500", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].startswith(b"path_id,t,shock,action,reward,g_0,promise_0,")


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("RECDUAL_THREADS", "1")
    assert run(["--manifest-dir", str(tmp_path), "example", "1"]) == 0
    assert manifest(tmp_path / "recdual-example.manifest")["config.threads"] == "1"


def test_ramsey_commands(tmp_path):
    fig1 = tmp_path / "fig1.csv"
    assert run(["ramsey", "curves", "--out", str(fig1)]) == 0
    assert fig1.read_text().splitlines()[0] == "ell,f_g0,f_g065,welfare_g0"
    fig2 = tmp_path / "fig2.csv"
    assert run(["ramsey", "scatter", "--branch", "H", "--lottery", "--out", str(fig2)]) == 0
    assert fig2.read_text().splitlines()[0] == "b,ell0,ell1,ell2,pi1,revenue,welfare"
    assert Path(str(fig2) + ".manifest").exists()


def test_defaults_table_is_complete():
    for key in ("tol", "max_iter", "grid_n", "iters", "sigma0", "paths", "horizon", "seed"):
        assert key in DEFAULTS


def test_console_script_installed():
    assert shutil.which("recdual") is not None
