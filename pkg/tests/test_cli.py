import numpy as np
import pytest

from physarum import cli
from physarum.cli import export_vtk, main, parse_config, read_fields
from physarum.diagnostics import read_trace_csv
from physarum.errors import ConfigError
from physarum.mesh import TriMesh, read_mesh, structured_rect_mesh

FAST_OT = """\
# small transport case
scenario = ot
resolution = 12
kind = 3
tau = 1e-5
snapshots = 0.1, 0.01, 1e-5
"""


def read_vtk_sections(path):
    lines = path.read_text().splitlines()
    return {ln.split()[0]: int(ln.split()[1]) for ln in lines if ln.split() and ln.split()[0] in
            ("POINTS", "CELLS", "CELL_TYPES", "CELL_DATA", "POINT_DATA")}, lines


def test_parse_defaults_and_values():
    cfg = parse_config(FAST_OT + "source_center = 0.25, 0.5\nobstacle_angle_deg = 30\n")
    assert cfg.resolution == 12 and cfg.kind == "3"
    assert cfg.snapshots == (0.1, 0.01, 1e-5)
    assert cfg.geometry.source_center == (0.25, 0.5)
    assert cfg.geometry.obstacle_angle_deg == 30.0
    assert cli.schedule_for(cfg).dt_cap == 0.25
    assert cli.schedule_for(parse_config("scenario = maze\nresolution = 16\n")).dt_cap == 0.5


@pytest.mark.parametrize(
    "text",
    [
        "scenario = ot\ntau = -1\n",
        "resolution = 4\n",
        "scenario = ot\nunknown = 1\n",
        "scenario = ot\nic = gaussian\n",
        "scenario = ot\nkind = -2\n",
        "scenario = ot\nmax_steps = 0\n",
        "scenario = ot\ndt0 = 1\ndt_cap = 0.5\n",
        "scenario = ot\nsource_center = 0.1\n",
        "scenario = ot\nmesh = missing.txt\n",
        "scenario = maze\nmask = missing.txt\n",
        "scenario = ot\nscenario = maze\n",
        "scenario ot\n",
    ],
)
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_invalid_config_exit_code_and_no_outputs(tmp_path, monkeypatch):
    out = tmp_path / "out"
    (tmp_path / "bad.cfg").write_text(f"scenario = ot\ntau = -5e-9\noutput = {out}\n")
    assert main(["run", str(tmp_path / "bad.cfg")]) == 2
    assert not out.exists()


@pytest.fixture(scope="module")
def ot_run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("run")
    (base / "ot.cfg").write_text(FAST_OT)
    code = main(["run", str(base / "ot.cfg"), "--output", str(base / "out")])
    return code, base / "out"


def test_run_outputs(ot_run_dir):
    code, out = ot_run_dir
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["field_000.txt", "field_001.txt", "field_002.txt", "final.txt",
                     "k.txt", "mesh.txt", "summary.txt", "trace.csv"]
    summary = dict(line.split(" = ") for line in (out / "summary.txt").read_text().splitlines())
    assert summary["converged"] == "true"
    assert float(summary["final_variation"]) <= 1e-5
    assert int(summary["steps"]) == len(read_trace_csv(out / "trace.csv"))
    assert "mk_residual" in summary
    mesh = read_mesh(out / "mesh.txt")
    assert mesh.n_triangles == 2 * 12 * 12
    thresholds = [float(p.read_text().split()[2]) for p in sorted(out.glob("field_*.txt"))]
    assert thresholds == [0.1, 0.01, 1e-5]
    mu, g, u = read_fields(out / "field_001.txt")
    assert len(mu) == len(g) == mesh.n_triangles


def test_run_deterministic(ot_run_dir, tmp_path):
    _, out = ot_run_dir
    cfg = parse_config(FAST_OT)
    assert cli.run(cfg, tmp_path / "again", log=lambda *_: None) == 0
    for name in ("trace.csv", "final.txt", "summary.txt", "field_000.txt"):
        assert (tmp_path / "again" / name).read_bytes() == (out / name).read_bytes()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    cfg = parse_config("scenario = ot\nresolution = 8\ntau = 1e-3\n")
    assert cli.run(cfg, log=lambda *_: None) == 0
    assert (tmp_path / "env" / "summary.txt").exists()


def test_non_convergence_exit_code(tmp_path):
    cfg = parse_config("scenario = ot\nresolution = 8\nmax_steps = 5\n")
    assert cli.run(cfg, tmp_path, log=lambda *_: None) == 1
    summary = (tmp_path / "summary.txt").read_text()
    assert "converged = false" in summary
    assert len(read_trace_csv(tmp_path / "trace.csv")) == 5


def test_solver_failure_exit_code(tmp_path):
    cfg = parse_config("scenario = ot\nresolution = 8\nsolver_tol = 1e-30\n")
    assert cli.run(cfg, tmp_path, log=lambda *_: None) == 3


def test_external_mesh(tmp_path):
    from physarum.mesh import write_mesh

    write_mesh(structured_rect_mesh(10, 10), tmp_path / "coarse.txt")
    (tmp_path / "c.cfg").write_text("scenario = ot\nmesh = coarse.txt\ntau = 1e-3\n")
    assert main(["run", str(tmp_path / "c.cfg"), "-o", str(tmp_path / "o")]) == 0
    assert read_mesh(tmp_path / "o" / "mesh.txt").n_triangles == 200


def test_small_maze_run(tmp_path):
    mask = tmp_path / "maze.txt"
    mask.write_text("########\n#S.....#\n#####..#\n#T.....#\n########\n")
    (tmp_path / "m.cfg").write_text("scenario = maze\nmask = maze.txt\nresolution = 8\ntau = 1e-4\n")
    assert main(["run", str(tmp_path / "m.cfg"), "-o", str(tmp_path / "o")]) == 0


def test_vtk_two_triangles(tmp_path):
    mesh = structured_rect_mesh(1, 1)
    export_vtk(mesh, tmp_path / "m.vtk", {"mu": [1.0, 2.0]}, {"u": np.arange(4.0)})
    counts, lines = read_vtk_sections(tmp_path / "m.vtk")
    assert counts == {"POINTS": 4, "CELLS": 2, "CELL_TYPES": 2, "CELL_DATA": 2, "POINT_DATA": 4}
    i = lines.index("SCALARS mu double 1")
    assert [float(v) for v in lines[i + 2 : i + 4]] == [1.0, 2.0]
    assert lines[0] == "# vtk DataFile Version 3.0"


def test_vtk_rejects_wrong_length(tmp_path):
    from physarum.errors import ContractError

    with pytest.raises(ContractError):
        export_vtk(structured_rect_mesh(1, 1), tmp_path / "m.vtk", {"mu": [1.0]})


def test_export_state(ot_run_dir, capsys):
    _, out = ot_run_dir
    assert main(["export", str(out)]) == 0
    written = sorted(out.glob("*.vtk"))
    assert len(written) == 4
    counts, lines = read_vtk_sections(out / "final.vtk")
    fine_nodes = 25 * 25
    assert counts["POINTS"] == fine_nodes and counts["CELLS"] == 4 * 2 * 144
    for name in ("mu", "k", "gradmag", "flux", "u"):
        assert f"SCALARS {name} double 1" in lines


def test_verify_graph_suite(capsys):
    assert main(["verify", "graph"]) == 0
    assert "[PASS] 1." in capsys.readouterr().out


def test_verify_unknown_suite():
    assert main(["verify", "nonsense"]) == 2
