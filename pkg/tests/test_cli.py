import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from scfem.adaptive import IterationRecord, run
from scfem.cli import (CSV_COLUMNS, ConfigError, RunConfig, build_manifest, emit_svg_plot, execute, main,
                       parse_config, read_csv, snapshot_mesh, write_csv)
from scfem.mesh import read_mesh
from scfem.problems import cookie_problem

SVG = "{http://www.w3.org/2000/svg}"


def test_parse_config_defaults_and_overrides():
    cfg = parse_config(problem="cookie", family="leja")
    assert (cfg.M, cfg.tol, cfg.theta_x, cfg.theta_y, cfg.vartheta) == (8, 2e-2, 0.3, 0.3, 1.0)
    assert parse_config(problem="fourier", family="cc").M == 4
    cfg = parse_config("problem=fourier\nfamily=cc\ntheta-x = 0.5  # comment\n", tol=1e-2)
    assert (cfg.problem, cfg.family, cfg.theta_x, cfg.tol) == ("fourier", "cc", 0.5, 1e-2)


def test_parse_config_from_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("problem = cookie\nfamily = leja\nmax_iter = 7\n")
    assert parse_config(str(f)).max_iter == 7
    assert parse_config(f, max_iter=3).max_iter == 3


def test_parse_config_collects_all_errors():
    with pytest.raises(ConfigError) as err:
        parse_config(problem="cookie", theta_x=1.5, colour="red")
    text = " ".join(err.value.violations)
    assert len(err.value.violations) == 3
    assert "family" in text and "theta_x" in text and "colour" in text
    with pytest.raises(ConfigError):
        parse_config(problem="disk", family="leja")
    with pytest.raises(ConfigError):
        parse_config(problem="cookie", family="leja", tol="abc")
    with pytest.raises(ConfigError):
        parse_config("no equals sign here\n")


def fake_records(n):
    return [IterationRecord(iteration=k, refinement="spatial" if k < n - 1 else "none", dof=81 * 2 ** k,
                            dof_total_vertices=81 * 2 ** k, mu_bar=0.5 / 1.6 ** k, tau_bar=0.1,
                            mu=0.4 / 1.5 ** k, tau=0.05, eta=0.4 / 1.5 ** k + 0.05, n_colpts=1,
                            n_triangles=128 * 2 ** k, wall_ms=1.5) for k in range(n)]


def test_csv_round_trip(tmp_path):
    recs = fake_records(1)
    path = write_csv(recs, tmp_path / "run.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 2 and lines[0] == ",".join(CSV_COLUMNS)
    back = read_csv(path)
    assert back[0].dof == 81 and back[0].refinement == "none"
    assert back[0].eta == pytest.approx(recs[0].eta, rel=1e-12)
    with pytest.raises(ValueError):
        write_csv([], tmp_path / "empty.csv")


def test_svg_plot(tmp_path):
    recs = fake_records(6)
    recs[2].mu = float("nan")
    root = ET.parse(emit_svg_plot(recs, tmp_path / "c.svg")).getroot()
    series = {p.get("data-name"): p for p in root.iter(SVG + "polyline")}
    assert set(series) == {"eta", "mu", "tau", "mu_bar", "tau_bar"}
    eta = np.array([[float(c) for c in pt.split(",")] for pt in series["eta"].get("points").split()])
    assert len(eta) == 6 and np.all(np.diff(eta[:, 0]) > 0)
    # estimates decrease, so screen y grows
    assert np.all(np.diff(eta[:, 1]) > 0)
    assert len(series["mu"].get("points").split()) == 5
    for cls in ("xtick", "ytick"):
        exps = [int(t.get("data-exp")) for t in root.iter(SVG + "text") if t.get("class") == cls]
        assert exps == list(range(exps[0], exps[0] + len(exps))) and len(exps) >= 2
    with pytest.raises(ValueError):
        emit_svg_plot(recs[:1], tmp_path / "d.svg")


def test_mesh_snapshot(tmp_path):
    p = cookie_problem()
    path = snapshot_mesh(p.initial_mesh(), tmp_path / "mesh.txt")
    rows = path.read_text().splitlines()
    assert rows[0] == "vertices 81" and rows[82] == "triangles 128" and len(rows) == 81 + 128 + 2
    m = read_mesh(path)
    assert m.n_vertices == 81 and m.n_triangles == 128 and m.n_dofs == 49
    np.testing.assert_array_equal(m.triangles, p.initial_mesh().triangles)


def test_manifest_contents():
    res = run(cookie_problem(), "cc", tol=1e-6, max_iter=3)
    cfg = RunConfig(problem="cookie", family="cc", M=8, tol=1e-6, max_iter=3)
    man = build_manifest(cfg, res, 0.1, "family=cc")
    json.dumps(man)
    assert man["status"] == "max_iter_reached" and man["n_records"] == 3
    assert man["config"]["family"] == "cc" and man["config_text"] == "family=cc"
    assert man["totals"]["initial_mesh_solves"] >= 1
    assert man["final"]["n_triangles"] == res.state.mesh.n_triangles
    assert len(man["diagnostics"]["mu_over_mu_bar"]) == 3 and all(v > 0 for v in man["diagnostics"]["mu_over_mu_bar"])


def run_cli(out, *extra):
    return main(["run", "--problem", "fourier", "--family", "leja", "--tol", "1e-6", "--max-iter", "4",
                 "--out", str(out), *extra])


def strip_wall(rows):
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows]


def test_cli_run_and_determinism(tmp_path, capsys):
    assert run_cli(tmp_path / "a") == 1
    assert "stopped after 4 records" in capsys.readouterr().out
    for name in ("run.csv", "manifest.json", "convergence.svg", "mesh_final.txt"):
        assert (tmp_path / "a" / name).is_file()
    run_cli(tmp_path / "b")
    rows = [list(csv.DictReader((tmp_path / d / "run.csv").open())) for d in "ab"]
    assert len(rows[0]) == 4 and strip_wall(rows[0]) == strip_wall(rows[1])
    assert (tmp_path / "a" / "mesh_final.txt").read_bytes() == (tmp_path / "b" / "mesh_final.txt").read_bytes()
    man = [json.loads((tmp_path / d / "manifest.json").read_text()) for d in "ab"]
    assert strip_wall(man[0]["records"]) == strip_wall(man[1]["records"])


def test_cli_converged_exit_code(tmp_path):
    assert main(["run", "--problem", "cookie", "--family", "cc", "--tol", "100", "--out", str(tmp_path)]) == 0
    assert not (tmp_path / "convergence.svg").exists()
    assert len((tmp_path / "run.csv").read_text().splitlines()) == 2


def test_cli_config_file_and_errors(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("problem=fourier\nfamily=cc\nmax_iter=2\ntol=1e-6\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"]["family"] == "cc" and man["config_text"] == cfg.read_text()
    with pytest.raises(SystemExit):
        main(["run", "--problem", "cookie", "--out", str(tmp_path)])
    with pytest.raises(SystemExit):
        main(["run", "--problem", "cookie", "--family", "leja", "--theta-x", "1.5", "--out", str(tmp_path)])


def test_execute_uses_config_out(tmp_path):
    cfg = parse_config(problem="cookie", family="leja", tol=100.0, out=str(tmp_path / "x"))
    execute(cfg)
    assert (tmp_path / "x" / "run.csv").is_file()
