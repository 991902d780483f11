import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from oracles import isotropic_stiffness, read_binary_stl
from shellular.cli import EXIT_DEGENERATE, EXIT_IO, EXIT_OK, EXIT_VALIDATION, main, resolve_threads
from shellular.field import DesignParams, plane_design, random_design

GOLDEN = Path(__file__).parent / "golden"


def run(tmp_path, name, *argv):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, out


def artifacts(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "manifest.json"}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


def test_gen_deterministic(tmp_path, capsys):
    a = run(tmp_path, "a", "gen", "--random", "cubic:2", "--seed", "7", "-r", "32")
    b = run(tmp_path, "b", "gen", "--random", "cubic:2", "--seed", "7", "-r", "32")
    assert a[0] == b[0] == EXIT_OK
    assert artifacts(a[1]) == artifacts(b[1])
    assert set(artifacts(a[1])) == {"design.json", "field.raw", "occupancy.raw", "isosurface.obj",
                                    "isosurface.stl", "mesh_stats.json"}
    assert len((a[1] / "field.raw").read_bytes()) == 4 * 32 ** 3
    line = capsys.readouterr().out
    for key in ("t_field=", "t_mesh=", "t_PBC="):
        assert key in line


def test_gen_plane_design(tmp_path):
    design = write_json(tmp_path / "plane.json", plane_design(0).to_dict())
    code, out = run(tmp_path, "out", "gen", "--design", str(design), "-r", "64")
    assert code == EXIT_OK
    verts = np.array([list(map(float, line.split()[1:])) for line in (out / "isosurface.obj").read_text().splitlines()
                      if line.startswith("v ")])
    dist = np.min(np.abs(verts[:, :1] - np.array([[0.0, 0.5, 1.0]])), axis=1)
    assert dist.max() <= 0.5 / 64
    assert np.any(np.abs(verts[:, 0] - 0.5) < 1e-9)


def test_gen_reproducible_from_manifest(tmp_path):
    code, out = run(tmp_path, "a", "gen", "--random", "tet:2", "--seed", "3", "-r", "16", "--sharpness", "300")
    assert code == EXIT_OK
    a = json.loads((out / "manifest.json").read_text())["arguments"]
    argv = [a["command"], "--random", a["random"], "--seed", str(a["seed"]), "-r", str(a["resolution"]),
            "--sharpness", str(a["sharpness"]), "--floor", str(a["floor"])]
    code, again = run(tmp_path, "b", *argv)
    assert code == EXIT_OK
    assert artifacts(again) == artifacts(out)


def test_manifest_contents(tmp_path):
    code, out = run(tmp_path, "out", "gen", "--random", "none:4", "--seed", "1", "-r", "16")
    assert code == EXIT_OK
    m = json.loads((out / "manifest.json").read_text())
    assert m["command"] == "gen" and m["seed"] == 1 and m["resolution"] == 16
    assert {"shellular", "numpy", "scipy", "python"} <= set(m["versions"])
    assert {"t_field", "t_mesh", "t_PBC"} <= set(m["timings_ms"])
    for name, digest in m["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert "timings_ms" in m["nondeterministic_fields"]


def test_homog_solid(tmp_path):
    code, out = run(tmp_path, "out", "homog", "--solid", "-r", "8")
    assert code == EXIT_OK
    c = np.array(json.loads((out / "tensor.json").read_text())["C"])
    np.testing.assert_allclose(c, isotropic_stiffness(1.0, 0.3), atol=1e-10)
    report = json.loads((out / "report.json").read_text())
    assert report["E_x"] == pytest.approx(1.0, abs=1e-10)


def test_homog_plane_orthotropic(tmp_path):
    # planes normal to z, so C11 is an in-plane stiffness
    design = write_json(tmp_path / "plane.json", plane_design(2).to_dict())
    code, out = run(tmp_path, "out", "homog", "--design", str(design), "-r", "16")
    assert code == EXIT_OK
    c = np.array(json.loads((out / "tensor.json").read_text())["C"])
    offdiag = np.abs(c[:3, 3:]).sum() + np.abs(np.triu(c[3:, 3:], 1)).sum()
    assert c[0, 0] > 1e-4
    assert offdiag < 1e-6 * c[0, 0]
    assert json.loads((out / "report.json").read_text())["offdiag"] < 1e-6 * c[0, 0]


@pytest.mark.parametrize("golden", sorted(GOLDEN.glob("*.json")), ids=lambda p: p.stem)
def test_homog_golden(tmp_path, golden):
    doc = json.loads(golden.read_text())
    code, out = run(tmp_path, "out", *doc["cli"])
    assert code == EXIT_OK
    tensor = json.loads((out / "tensor.json").read_text())
    c, ref = np.array(tensor["C"]), np.array(doc["C"])
    np.testing.assert_allclose(c, ref, atol=1e-9 * np.abs(ref).max())
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["resolution"] == 32
    report = json.loads((out / "report.json").read_text())
    assert report["K_eff"] == pytest.approx(doc["report"]["K_eff"], rel=1e-8)


def test_homog_bytes_reproducible(tmp_path):
    a = run(tmp_path, "a", "homog", "--random", "cubic:2", "--seed", "4", "-r", "16")
    b = run(tmp_path, "b", "homog", "--random", "cubic:2", "--seed", "4", "-r", "16")
    assert a[0] == b[0] == EXIT_OK
    assert artifacts(a[1]) == artifacts(b[1])


def test_sample_byte_identical(tmp_path):
    plan = write_json(tmp_path / "plan.json", [{"symmetry": "cubic", "n_charges": 2, "samples": 3},
                                               {"symmetry": "tet", "n_charges": 2, "samples": 2}])
    a = run(tmp_path, "a", "sample", "--spec", str(plan), "-r", "16", "--seed", "5")
    b = run(tmp_path, "b", "sample", "--spec", str(plan), "-r", "16", "--seed", "5")
    assert a[0] == b[0] == EXIT_OK
    assert (a[1] / "campaign.csv").read_bytes() == (b[1] / "campaign.csv").read_bytes()
    m = json.loads((a[1] / "manifest.json").read_text())
    assert m["counts"]["total"] == 5


def test_optimize_trace(tmp_path):
    code, out = run(tmp_path, "out", "optimize", "--objective", "max_bulk", "--evals", "40", "-r", "16",
                    "--seed", "1", "--reeval-r", "0")
    assert code == EXIT_OK
    lines = (out / "trace.csv").read_text().splitlines()
    col = lines[0].split(",").index("best")
    best = [float(line.split(",")[col]) for line in lines[1:]]
    assert len(best) >= 2 and all(b <= a for a, b in zip(best, best[1:]))
    summary = json.loads((out / "best_report.json").read_text())
    assert summary["best_energy"] == pytest.approx(best[-1])
    DesignParams.from_dict(json.loads((out / "best_design.json").read_text()))


def test_fit_writes_report(tmp_path):
    code, out = run(tmp_path, "out", "fit", "--target", "schwarz_p", "--iters", "20", "--charges", "4",
                    "--n-on", "200", "--n-off", "100", "-r", "32")
    assert code == EXIT_OK
    rep = json.loads((out / "distance_report.json").read_text())
    assert rep["iterations"] == 20 and rep["average"] > 0 and rep["hausdorff"] >= rep["average"]
    assert rep["energy"] <= rep["initial_energy"]
    history = (out / "fit_history.csv").read_text().splitlines()
    assert history[0] == "iteration,energy"


def test_tile_five_block(tmp_path):
    spec = {"grid": [[["a", "b"], ["b", "a"]], [["b", "a"], ["a", "b"]]], "blend_width": 0.1,
            "designs": {"a": random_design("cubic_octant", 2, 2, seed=1).to_dict(),
                        "b": random_design("cubic_octant", 2, 2, seed=2).to_dict()}}
    path = write_json(tmp_path / "blocks.json", spec)
    code, out = run(tmp_path, "out", "tile", "--spec", str(path), "-n", "5", "-r", "8")
    assert code == EXIT_OK
    files = sorted(p.name for p in out.iterdir())
    assert files == ["manifest.json", "tiled.stl"]
    _, _, tris = read_binary_stl((out / "tiled.stl").read_bytes())
    assert tris.min() >= 0 and tris.max() <= 5
    assert tris.reshape(-1, 3).max(axis=0).min() > 4.5


@pytest.mark.parametrize("fmt", ["stl", "obj"])
def test_export_formats(tmp_path, fmt):
    code, out = run(tmp_path, "iso", "export", "--random", "cubic:2", "--seed", "2", "-r", "16", "--format", fmt)
    assert code == EXIT_OK and (out / f"isosurface.{fmt}").exists()
    code, out = run(tmp_path, "vox", "export", "--random", "cubic:2", "--seed", "2", "-r", "16", "--format", fmt,
                    "--voxels", "0.5")
    assert code == EXIT_OK and (out / f"voxels.{fmt}").exists()


def test_exit_codes(tmp_path):
    assert run(tmp_path, "a", "gen", "--random", "cubic:2", "-r", "4")[0] == EXIT_VALIDATION
    assert run(tmp_path, "b", "gen", "--random", "cube:2")[0] == EXIT_VALIDATION
    assert run(tmp_path, "c", "gen")[0] == EXIT_VALIDATION
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(tmp_path, "d", "gen", "--design", str(bad))[0] == EXIT_VALIDATION
    zero = DesignParams([[0.1, 0.2, 0.3], [0.6, 0.5, 0.4]], [1, -1], np.zeros((2, 2, 2)))
    path = write_json(tmp_path / "zero.json", zero.to_dict())
    assert run(tmp_path, "e", "gen", "--design", str(path), "-r", "8")[0] == EXIT_DEGENERATE
    assert run(tmp_path, "f", "gen", "--design", str(tmp_path / "missing.json"))[0] == EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["gen", "--random", "cubic:2", "-r", "8", "--out", str(blocker / "sub")]) == EXIT_IO


def test_threads(monkeypatch, tmp_path):
    assert resolve_threads(3) == 3
    monkeypatch.setenv("SHELL_THREADS", "2")
    assert resolve_threads(0) == 2
    monkeypatch.setenv("SHELL_THREADS", "many")
    assert run(tmp_path, "out", "gen", "--random", "cubic:2", "-r", "8")[0] == EXIT_VALIDATION
    monkeypatch.delenv("SHELL_THREADS")
    assert resolve_threads(0) >= 1


def test_no_writes_outside_out(tmp_path, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    monkeypatch.chdir(work)
    commands = [["gen", "--random", "cubic:2", "-r", "8"],
                ["homog", "--random", "cubic:2", "-r", "8"],
                ["export", "--random", "cubic:2", "-r", "8"]]
    for i, argv in enumerate(commands):
        assert main([*argv, "--out", str(tmp_path / "out" / str(i))]) == EXIT_OK
    assert list(work.iterdir()) == []
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out", "work"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "shellular.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
