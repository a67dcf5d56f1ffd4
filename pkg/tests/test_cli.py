import csv
import json
from pathlib import Path

import pytest

from hhostokes.cli import ConfigError, main, parse_config
from hhostokes.mesh import format_mesh, generate

ROOT = Path(__file__).resolve().parents[1]


def test_mesh_info(capsys, tmp_path):
    assert main(["mesh-info", "--family", "cartesian", "--n", "4", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "cells=16" in out
    assert f"h={2 ** 0.5 / 4:.10g}" in out
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == 0 and summary["mesh"]["n_cells"] == 16


def test_mesh_info_from_file(capsys, tmp_path):
    path = tmp_path / "tri.mesh"
    path.write_text(format_mesh(generate("distorted_triangular", 2)))
    assert main(["mesh-info", "--mesh-file", str(path), "--out", str(tmp_path)]) == 0
    assert "cells=8" in capsys.readouterr().out


def test_check_law(capsys, tmp_path):
    status = main(["check-law", "--samples", "500", "--out", str(tmp_path)])
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln]
    assert status == 0
    assert len(lines) == 12 and all(ln.startswith("PASS") for ln in lines)
    for r in (1.5, 1.75, 2, 2.25, 2.5, 2.75):
        assert any(f"r={r:g} " in ln for ln in lines)


def test_convergence_outputs(capsys, tmp_path):
    argv = ["convergence", "--r", "1.75", "--a", "1", "--levels", "[2,4]", "--out", str(tmp_path)]
    assert main(argv) == 0
    capsys.readouterr()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == 0
    assert summary["config"]["law"]["r"] == 1.75
    assert [lv["n"] for lv in summary["levels"]] == [2, 4]
    outs = summary["outputs"]
    for key in ("csv", "gnuplot", "figure"):
        assert Path(outs[key]).stat().st_size > 0
    rows = list(csv.DictReader(open(outs["csv"])))
    assert [r["n"] for r in rows] == ["2", "4"]
    assert rows[0]["family"] == "cartesian" and rows[0]["r"] == "1.75"


def test_convergence_csv_deterministic(capsys, tmp_path):
    texts = []
    for i in range(2):
        out = tmp_path / str(i)
        assert main(["convergence", "--r", "2.5", "--levels", "[2,4]", "--no-figure", "--out", str(out)]) == 0
        texts.append(next(out.glob("*.csv")).read_bytes())
    capsys.readouterr()
    assert texts[0] == texts[1]


def test_solve_writes_csv(capsys, tmp_path):
    assert main(["solve", "--n", "4", "--family", "distorted_triangular", "--out", str(tmp_path)]) == 0
    assert "converged after 1 Newton" in capsys.readouterr().out
    assert (tmp_path / "solve.csv").read_text().startswith("family,k,r,n,h")


def test_non_convergence_status(capsys, tmp_path):
    argv = ["solve", "--r", "2.75", "--n", "4", "--max-iter", "1", "--no-continuation", "--out", str(tmp_path)]
    assert main(argv) == 2
    capsys.readouterr()
    assert json.loads((tmp_path / "summary.json").read_text())["status"] == 2


@pytest.mark.parametrize(
    "argv,match",
    [
        (["solve", "--r", "1"], "r must lie"),
        (["solve", "--r", "1.5", "--gamma", "100"], "admissible interval"),
        (["solve", "--set", "newton.bogus=1"], "unknown"),
        (["solve", "--family", "cartesian", "--mesh-file", "x.mesh"], "conflicting"),
        (["convergence", "--levels", "[8,4]"], "strictly increasing"),
        (["solve", "--family", "distorted_triangular", "--amplitude", "0.4"], "amplitude"),
    ],
)
def test_rejections(argv, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(argv)


def test_rejection_exit_status(capsys):
    assert main(["solve", "--r", "0.5"]) == 64
    assert "error:" in capsys.readouterr().err


def test_example_config_and_overrides():
    path = ROOT / "configs" / "convergence_r175.json"
    cfg = parse_config(["convergence", "--config", str(path)])
    assert cfg.law.r == 1.75 and cfg.levels == [4, 8, 16, 32] and cfg.family == "cartesian"
    cfg = parse_config(["convergence", "--config", str(path), "--r", "2.5", "--set", "newton.tol=1e-10"])
    assert cfg.law.r == 2.5 and cfg.newton.tol == 1e-10
