import json
import math

import pytest

from talenti_lab import io as tio
from talenti_lab.cli import EXIT_CHECK, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from talenti_lab.mesh import cap_mask, generate_icosphere


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_torsion_model(capsys):
    code, out, _ = run(capsys, "torsion", "--model", "--K", "1", "--N", "2", "--v", "0.5")
    assert code == EXIT_OK
    assert float(out) == pytest.approx(2 * math.log(2) - 1, abs=1e-10)


def test_missing_option_is_usage_error(capsys):
    code, _, err = run(capsys, "torsion", "--model", "--K", "1", "--v", "0.5")
    assert code == EXIT_USAGE
    assert "usage:" in err and "--N" in err
    assert run(capsys, "no-such-command")[0] == EXIT_USAGE
    assert run(capsys, "model", "--K", "-1", "--N", "2")[0] == EXIT_USAGE


def test_model_and_eigen(capsys):
    code, out, _ = run(capsys, "model", "--K", "1", "--N", "2", "--v", "0.25")
    d = json.loads(out)
    assert code == EXIT_OK
    assert d["iso_profile"] == pytest.approx(math.sqrt(0.25 * 0.75))
    code, out, _ = run(capsys, "eigen", "--model", "--K", "1", "--N", "2", "--v", "0.5")
    assert float(out) == pytest.approx(2.0, abs=1e-6)
    code, out, _ = run(capsys, "sobolev", "--model", "--K", "1", "--N", "2", "--v", "0.5")
    assert float(out) == pytest.approx(math.log(2), abs=1e-10)


def test_solve_model_writes_csv(tmp_path, capsys):
    code, _, _ = run(
        capsys, "solve-model", "--K", "1", "--N", "2", "--v", "0.5", "--n-grid", "33", "--out", str(tmp_path)
    )
    assert code == EXIT_OK
    d = json.loads((tmp_path / "solve_model.json").read_text())
    assert d["w0"] == pytest.approx(2 * math.log(2), abs=1e-10)
    lines = (tmp_path / "model.csv").read_text().splitlines()
    assert lines[0] == "rho,w,w_prime" and len(lines) == 34


def test_talenti_check_from_config(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# two caps\nK = 1\nN = 2\nicosphere = 3\ndomain = twocap:0.3\nf = radial:cosdist\nn_grid = 128\n")
    code, _, err = run(capsys, "talenti-check", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == EXIT_OK, err
    rep = json.loads((tmp_path / "o" / "talenti.json").read_text())
    assert list(rep) == ["v", "alpha", "pointwise_margin", "gradient_margins", "monotonicity_violation",
                         "torsion", "faber_krahn", "sobolev", "mesh_h", "pass"]
    assert (tmp_path / "o" / "talenti_curve.csv").read_text().startswith("rho,u_star,w\n")
    # command-line flags override the file
    code, out, _ = run(capsys, "talenti-check", "--config", str(cfg), "--f", "const:0")
    assert json.loads(out)["pointwise_margin"] == 0.0


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert run(capsys, "torsion", "--config", str(cfg))[0] == EXIT_USAGE
    cfg.write_text("just words\n")
    assert run(capsys, "torsion", "--config", str(cfg))[0] == EXIT_USAGE


def test_failing_check_exit_code(capsys):
    # a negative tolerance makes the equality case fail
    code, _, err = run(
        capsys, "torsion", "--K", "1", "--N", "2", "--icosphere", "3", "--domain", "cap:0.5", "--c-tol", "-1"
    )
    assert code == EXIT_CHECK
    assert "FAIL" in err


def test_mask_domain_and_csv_function(tmp_path, capsys):
    m = generate_icosphere(3)
    tio.write_mask_csv(tmp_path / "mask.csv", cap_mask(m, (1.0, 0.0, 0.0), 0.2))
    tio.write_vertex_csv(tmp_path / "f.csv", (m.vertices[:, 0] + 1.0))
    code, out, err = run(
        capsys, "sobolev", "--K", "1", "--N", "2", "--icosphere", "3",
        "--domain", f"mask:{tmp_path / 'mask.csv'}", "--f", f"csv:{tmp_path / 'f.csv'}", "--p", "4",
    )
    assert code == EXIT_OK, err
    assert json.loads(out)["sobolev"][0]["attained"] > 0


def test_rearrange_cells(tmp_path, capsys):
    p = tmp_path / "cells.csv"
    p.write_text("value,weight\n1,0.25\n-3,0.25\n2,0.125\n")
    code, out, _ = run(capsys, "rearrange", "--cells", str(p))
    assert code == EXIT_OK
    assert out.splitlines() == ["breakpoint,value", "0.0,3.0", "0.25,2.0", "0.375,1.0", "0.625,1.0"]


def test_unknown_specs_are_usage_errors(capsys):
    base = ("talenti-check", "--K", "1", "--N", "2", "--icosphere", "2")
    assert run(capsys, *base, "--domain", "blob:1")[0] == EXIT_USAGE
    assert run(capsys, *base, "--domain", "cap:0.4", "--f", "radial:nope")[0] == EXIT_USAGE
    assert run(capsys, *base, "--domain", "cap:1.5")[0] == EXIT_USAGE
    assert run(capsys, *base, "--domain", "cap:0.4", "--N", "3")[0] == EXIT_USAGE


def test_brownian_analytic(capsys):
    code, out, _ = run(
        capsys, "brownian", "--K", "1", "--N", "2", "--domain", "cap:0.5", "--analytic",
        "--dt", "1e-3", "--n", "500", "--seed", "1",
    )
    assert code == EXIT_OK
    d = json.loads(out)
    assert 1.0 < d["mean"] < 1.8
    assert run(capsys, "brownian", "--domain", "cap:0.5", "--analytic", "--dt", "0.5", "--n", "5")[0] == EXIT_USAGE


def test_numeric_failure_exit_code(capsys, monkeypatch):
    from talenti_lab import cli
    from talenti_lab.model_solver import ModelQuadratureError

    def broken(*a, **k):
        raise ModelQuadratureError("routes disagree")

    monkeypatch.setattr(cli, "torsional_rigidity_model", broken)
    code, _, err = run(capsys, "torsion", "--model", "--K", "1", "--N", "2", "--v", "0.5")
    assert code == EXIT_NUMERIC
    assert "numerical failure" in err
