import csv
import json
import pathlib

import numpy as np
import pytest

from droc.cli import main
from droc.outputs import read_solution

CONFIGS = pathlib.Path(__file__).resolve().parents[1] / "configs"


def write_json(path, raw):
    path.write_text(json.dumps(raw))
    return str(path)


def toy_config(tmp_path, **ambiguity):
    amb = {"mu": 0.0, "sigma": 0.5, "p_lower": -1.0, "p_upper": 1.0, "m": 5}
    amb.update(ambiguity)
    return write_json(tmp_path / "toy.json", {
        "model": {"name": "toy:zero"}, "ambiguity": amb,
        "control": {"n": 1, "lower": [-1.0], "upper": [1.0]}, "solver": {"multistart": 0},
    })


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def zero_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("zero")
    code = main(["--quiet", "--out", str(out), "solve", str(CONFIGS / "zero_toy.json")])
    return code, out


def test_solve_zero_toy(zero_run, capsys):
    code, out = zero_run
    assert code == 0
    for name in ("solution.csv", "worstcase.csv", "kkt.txt", "trace.csv", "manifest.json"):
        assert (out / name).exists()
    _, keyed = read_solution(out / "solution.csv")
    assert keyed["status"] == "converged"
    assert float(keyed["objective_lp"]) == 0.0
    assert 0.0 <= float(keyed["objective"]) <= 1e-3
    header = read_rows(out / "trace.csv")[0]
    assert header == ["k", "rho", "omega", "eta", "merit", "yTb", "G_eps", "max_g", "pg_norm"]


def test_solution_csv_is_rectangular(zero_run):
    rows = read_rows(zero_run[1] / "solution.csv")
    assert rows[0] == ["piece_index", "t_start", "t_end", "u_1"]
    assert len({len(r) for r in rows}) == 1


def test_manifest_and_reproducibility(zero_run, tmp_path):
    _, out = zero_run
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest) == {"command", "config_sha256", "seed", "version", "outputs"}
    assert main(["--quiet", "--out", str(tmp_path), "solve", str(CONFIGS / "zero_toy.json")]) == 0
    for name in ("solution.csv", "worstcase.csv", "kkt.txt", "trace.csv", "manifest.json"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_check_accepts_zero_toy_solution(zero_run, tmp_path):
    sol = zero_run[1] / "solution.csv"
    args = ["--quiet", "--out", str(tmp_path), "check", str(CONFIGS / "zero_toy.json"), "--solution", str(sol)]
    assert main(args) == 0


def test_check_detects_perturbed_dual(tmp_path, capsys):
    cfg = CONFIGS / "linear_toy.json"
    sol = tmp_path / "sol.csv"
    # optimum of the quadratic toy with its LP dual, then y_1 shifted by 0.1
    assert main(["--quiet", "--out", str(tmp_path / "inner"), "inner", str(cfg), "--control", _control(tmp_path, [-0.5])]) == 0
    y = [float(v) for v in (tmp_path / "inner" / "inner.txt").read_text().split("y = ")[1].split("\n")[0].split()]
    rows = [["piece_index", "t_start", "t_end", "u_1"], ["1", "0.0", "1.0", "-0.5"],
            ["y_1", repr(y[0]), "", ""], ["y_2", repr(y[1]), "", ""], ["y_3", repr(y[2]), "", ""]]
    _write_rows(sol, rows)
    assert main(["--quiet", "--out", str(tmp_path / "ok"), "check", str(cfg), "--solution", str(sol)]) == 0
    rows[2][1] = repr(y[0] + 0.1)
    _write_rows(sol, rows)
    capsys.readouterr()
    assert main(["--quiet", "--out", str(tmp_path / "bad"), "check", str(cfg), "--solution", str(sol)]) == 2
    report = dict(line.split(" = ", 1) for line in capsys.readouterr().out.strip().splitlines())
    assert float(report["complementarity_residual"]) > 1e-6


def test_check_missing_solution_file(tmp_path, capsys):
    args = ["--out", str(tmp_path), "check", str(CONFIGS / "zero_toy.json"), "--solution", str(tmp_path / "nope.csv")]
    assert main(args) == 1
    assert "error" in capsys.readouterr().err


def _control(tmp_path, values):
    path = tmp_path / "control.csv"
    path.write_text("u\n" + "\n".join(repr(float(v)) for v in values) + "\n")
    return str(path)


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _parse_inner(text):
    out = {}
    for line in text.strip().splitlines():
        key, value = line.split(" = ")
        out[key] = [float(v) for v in value.split()]
    return out


def test_inner_table1_control(tmp_path, case, capsys):
    ctrl = _control(tmp_path, case.reference_control)
    assert main(["--quiet", "--out", str(tmp_path), "inner", str(CONFIGS / "fedbatch.json"), "--control", ctrl]) == 0
    res = _parse_inner(capsys.readouterr().out)
    # the verified LP optimum at the simulated costs (mirror of the printed q*)
    np.testing.assert_allclose(res["q"], case.reference_q[::-1], atol=1e-3)
    assert res["primal_objective"][0] == pytest.approx(-4.1107, abs=1e-3)
    assert res["duality_gap"][0] <= 1e-8


def test_inner_constant_control_matches_baseline(tmp_path, case, capsys):
    from droc.bench import constant_control_baseline
    ctrl = _control(tmp_path, [0.01] * 25)
    assert main(["--quiet", "--out", str(tmp_path), "inner", str(CONFIGS / "fedbatch.json"), "--control", ctrl]) == 0
    res = _parse_inner(capsys.readouterr().out)
    assert res["primal_objective"][0] == pytest.approx(constant_control_baseline(case, 0.01).objective, abs=1e-9)


def test_inner_infeasible_moments(tmp_path, capsys):
    cfg = toy_config(tmp_path, m=1, placement="midpoint")
    assert main(["--out", str(tmp_path), "inner", cfg, "--control", _control(tmp_path, [0.0])]) == 1
    assert "moment-infeasible support" in capsys.readouterr().err


def test_discretize_uniform(tmp_path, capsys):
    cfg = toy_config(tmp_path, mu=0.0, sigma=0.5, m=4, placement="midpoint", density={"kind": "uniform"})
    assert main(["--quiet", "--out", str(tmp_path), "discretize", cfg]) == 0
    rows = read_rows(tmp_path / "discretize.csv")
    weights = [float(r[3]) for r in rows[1:] if r[0] == "4"]
    np.testing.assert_allclose(weights, 0.25, atol=1e-14)


def test_discretize_truncnorm(tmp_path, capsys):
    assert main(["--quiet", "--out", str(tmp_path), "discretize", str(CONFIGS / "truncnorm_density.json")]) == 0
    out = capsys.readouterr().out
    assert "m = 10:" in out and "m = 20:" in out and "within_bounds = true" in out


def test_discretize_negative_table(tmp_path, capsys):
    (tmp_path / "psi.csv").write_text("-1,0.5\n0,-0.1\n1,0.5\n")
    cfg = toy_config(tmp_path, density={"kind": "table", "path": "psi.csv"})
    assert main(["--out", str(tmp_path), "discretize", cfg]) == 1
    assert "InvalidDensity" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    path = write_json(tmp_path / "bad.json", {"solver": {"speed": "fast"}})
    assert main(["--out", str(tmp_path), "solve", path]) == 1
    assert "unknown key" in capsys.readouterr().err


def test_bench_without_solve(tmp_path, capsys):
    code = main(["--quiet", "--out", str(tmp_path), "bench", "--no-solve"])
    table = capsys.readouterr().out
    assert code == 2  # the printed-LP rows do not reproduce
    assert "PASS  terminal biomass" in table
    for name in ("figure_reference.csv", "figure_constant_0.01.csv", "bench.txt", "manifest.json"):
        assert (tmp_path / name).exists()
    assert read_rows(tmp_path / "figure_reference.csv")[0] == ["t", "scenario_index", "m_S", "X", "S", "V"]


def test_threads_from_environment(zero_run, tmp_path, monkeypatch):
    monkeypatch.setenv("DROC_THREADS", "2")
    assert main(["--quiet", "--out", str(tmp_path), "solve", str(CONFIGS / "zero_toy.json")]) == 0
    assert (tmp_path / "solution.csv").read_bytes() == (zero_run[1] / "solution.csv").read_bytes()
    monkeypatch.setenv("DROC_THREADS", "many")
    assert main(["--quiet", "--out", str(tmp_path), "solve", str(CONFIGS / "zero_toy.json")]) == 1


def test_global_flags_after_subcommand(tmp_path):
    assert main(["solve", "--config", str(CONFIGS / "zero_toy.json"), "--out", str(tmp_path), "--quiet"]) == 0
