import json
import subprocess
import sys

import numpy as np
import pytest

from graspd.cli import main
from graspd.mesh import icosphere, read_obj, write_obj
from graspd.opt import OptimizerConfig, save_config
from graspd.sdf import grid_from_function, load_grid, save_grid

TINY = dict(steps=20, smoothing_steps=10, eval_every=10, eval_frames=20)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_obj(d / "sphere.obj", {"sphere": icosphere(0.03, 3)})
    assert main(["bake", str(d / "sphere.obj"), "--dims", "40", "--out", str(d / "sphere.gsdf")]) == 0
    save_config(OptimizerConfig(**TINY), d / "cfg.json")
    return d


@pytest.fixture(scope="module")
def synth_dir(workdir):
    out = workdir / "run"
    rc = main(["synth", "--hand", "tripod", "--sdf", str(workdir / "sphere.gsdf"), "--config",
               str(workdir / "cfg.json"), "--seeds", "3", "--out", str(out)])
    assert rc == 0
    return out


def test_bake_output(workdir, capsys):
    g = load_grid(workdir / "sphere.gsdf")
    assert g.dims == (40, 40, 40)
    assert g.query([0, 0, 0]) < 0
    assert main(["bake", str(workdir / "sphere.obj"), "--dims", "8", "--out", str(workdir / "s8.gsdf")]) == 0
    out = capsys.readouterr().out
    assert "min" in out and "max" in out


def test_bake_missing_mesh(workdir):
    assert main(["bake", str(workdir / "nope.obj"), "--out", str(workdir / "x.gsdf")]) == 1


def test_bake_bad_dims(workdir):
    assert main(["bake", str(workdir / "sphere.obj"), "--dims", "0", "--out", str(workdir / "x.gsdf")]) == 2


def test_bake_open_mesh(workdir):
    from graspd.mesh import TriMesh
    m = icosphere(0.03, 2)
    write_obj(workdir / "open.obj", {"open": TriMesh(m.vertices, m.faces[20:])})
    assert main(["bake", str(workdir / "open.obj"), "--dims", "24", "--out", str(workdir / "o.gsdf")]) == 2


def test_synth_outputs(synth_dir):
    manifest = json.loads((synth_dir / "manifest.json").read_text())
    assert manifest["seeds"] == 3
    assert sorted(manifest["ranking"]) == ["grasp_000.json", "grasp_001.json", "grasp_002.json"]
    disp = [json.loads((synth_dir / f).read_text())["displacement"] for f in manifest["ranking"]]
    assert disp == sorted(disp)
    for f in manifest["ranking"]:
        g = json.loads((synth_dir / f).read_text())
        assert g["trace"]["steps"] == TINY["steps"]
        assert set(g["candidate"]) == {"hand_pose", "prescribed"}
    assert len(manifest["inputs"]["sdf"]["sha256"]) == 64


def test_synth_byte_identical(workdir, synth_dir):
    out = workdir / "run2"
    rc = main(["synth", "--hand", "tripod", "--sdf", str(workdir / "sphere.gsdf"), "--config",
               str(workdir / "cfg.json"), "--seeds", "3", "--jobs", "2", "--out", str(out)])
    assert rc == 0
    for name in ("grasp_000.json", "grasp_001.json", "grasp_002.json", "manifest.json"):
        a, b = (synth_dir / name).read_bytes(), (out / name).read_bytes()
        if name == "manifest.json":
            a, b = a.replace(str(synth_dir).encode(), b""), b.replace(str(out).encode(), b"")
        assert a == b


def test_synth_zero_seeds(workdir):
    out = workdir / "zero"
    assert main(["synth", "--hand", "tripod", "--sdf", str(workdir / "sphere.gsdf"), "--seeds", "0",
                 "--out", str(out)]) == 0
    assert [p.name for p in out.iterdir()] == ["manifest.json"]


def test_synth_bad_hand(workdir, capsys):
    bad = workdir / "bad_hand.json"
    bad.write_text(json.dumps({"links": [{"name": "a", "parent": "a"}],
                               "palm": {"link": "a", "center": [0, 0, 0], "normal": [0, 0, 1]}}))
    assert main(["synth", "--hand", str(bad), "--sdf", str(workdir / "sphere.gsdf"), "--seeds", "1",
                 "--out", str(workdir / "bad")]) == 2
    assert "cycle" in capsys.readouterr().err


def test_synth_bad_config(workdir):
    cfg = workdir / "badcfg.json"
    cfg.write_text(json.dumps({"steps": 10, "smoothing_steps": 20}))
    assert main(["synth", "--hand", "tripod", "--sdf", str(workdir / "sphere.gsdf"), "--config", str(cfg),
                 "--seeds", "1", "--out", str(workdir / "bc")]) == 2


def test_eval(workdir, synth_dir, tmp_path):
    files = sorted(str(p) for p in synth_dir.glob("grasp_*.json"))
    out = tmp_path / "eval.jsonl"
    rc = main(["eval", *files, "--hand", "tripod", "--sdf", str(workdir / "sphere.gsdf"), "--frames", "20",
               "--out", str(out)])
    assert rc == 0
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(lines) == 4
    summary = lines[-1]["summary"]
    assert summary["top2"]["n"] == 2 and summary["top5"]["n"] == 3


def test_eval_single_grasp(workdir, synth_dir, capsys):
    f = str(synth_dir / "grasp_000.json")
    assert main(["eval", f, "--hand", "tripod", "--sdf", str(workdir / "sphere.gsdf"), "--frames", "20"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    report, summary = json.loads(lines[0]), json.loads(lines[-1])
    assert summary["top2"]["displacement"] == pytest.approx(report["displacement"])
    assert summary["top5"] == summary["top2"]


def test_eval_missing_and_corrupted(workdir, synth_dir, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ this is not json")
    good = str(synth_dir / "grasp_001.json")
    rc = main(["eval", good, str(bad), str(tmp_path / "missing.json"), "--hand", "tripod", "--sdf",
               str(workdir / "sphere.gsdf"), "--frames", "20"])
    assert rc == 0
    captured = capsys.readouterr()
    assert "missing.json" in captured.err
    assert len([l for l in captured.out.splitlines() if '"file"' in l]) == 1
    assert main(["eval", str(tmp_path / "missing.json"), "--hand", "tripod", "--sdf",
                 str(workdir / "sphere.gsdf")]) == 1
    assert main(["eval", str(bad), "--hand", "tripod", "--sdf", str(workdir / "sphere.gsdf")]) == 2


def test_eval_detects_input_drift(workdir, synth_dir, tmp_path, caplog):
    other = tmp_path / "other.gsdf"
    g = load_grid(workdir / "sphere.gsdf")
    save_grid(grid_from_function(lambda q: np.linalg.norm(q, axis=-1) - 0.031, g.lo, g.hi, 40), other)
    main(["eval", str(synth_dir / "grasp_000.json"), "--hand", "tripod", "--sdf", str(other), "--frames", "5"])
    assert any("differs" in r.message for r in caplog.records)


def test_export(workdir, synth_dir, tmp_path):
    out = tmp_path / "scene.obj"
    assert main(["export", str(synth_dir / "grasp_000.json"), "--hand", "tripod", "--sdf",
                 str(workdir / "sphere.gsdf"), "--out", str(out)]) == 0
    text = out.read_text()
    assert "g hand" in text and "g object" in text
    obj = read_obj(out)
    assert len(obj.faces) > 0
    # object vertices come after the hand group
    verts, group = [], None
    for line in text.splitlines():
        if line.startswith("g "):
            group = line[2:].strip()
        elif line.startswith("v ") and group == "object":
            verts.append([float(x) for x in line.split()[1:4]])
    radii = np.linalg.norm(np.array(verts), axis=1)
    h = load_grid(workdir / "sphere.gsdf").spacing.max()
    assert np.all(np.abs(radii - 0.03) <= 2 * h)


def test_export_empty_object(workdir, synth_dir, tmp_path, caplog):
    empty = tmp_path / "empty.gsdf"
    save_grid(grid_from_function(lambda q: np.linalg.norm(q, axis=-1) + 0.01, [-0.04] * 3, [0.04] * 3, 12), empty)
    out = tmp_path / "e.obj"
    assert main(["export", str(synth_dir / "grasp_000.json"), "--hand", "tripod", "--sdf", str(empty),
                 "--out", str(out)]) == 0
    text = out.read_text()
    assert "g object" in text
    assert text.split("g object")[1].strip() == ""
    assert any("empty" in r.message or "no zero" in r.message for r in caplog.records)


def test_export_missing_grasp(workdir, tmp_path):
    assert main(["export", str(tmp_path / "none.json"), "--hand", "tripod", "--sdf",
                 str(workdir / "sphere.gsdf"), "--out", str(tmp_path / "x.obj")]) == 1


def test_console_script(workdir):
    r = subprocess.run([sys.executable, "-m", "graspd.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "graspd" in r.stdout
