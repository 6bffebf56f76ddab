"""Command-line front end: ``graspd bake | synth | eval | export``.

Exit codes: 0 success, 1 I/O error, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .diffcore import UsageError
from .hand import HandModel, HandValidationError, load_hand
from .loss import GraspCandidate
from .mesh import MeshError, TriMesh, box_mesh, capsule_mesh, icosphere, read_obj, write_obj
from .metrics import EvalReport, append_jsonl, evaluate, placed_primitives
from .opt import OptimizerConfig, load_config, synthesize
from .sdf import BakeError, bake
from .sdf.grid import GridFormatError, SdfGrid, load_grid, save_grid
from .sim import ContactParams, object_state

log = logging.getLogger("graspd")

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3
TOP_K = (2, 5)


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def dump_json(obj) -> str:
    """Canonical JSON text: sorted keys, no timestamps, so reruns are byte-identical."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _load_inputs(hand, sdf) -> tuple[HandModel, SdfGrid]:
    try:
        model = load_hand(hand)
    except FileNotFoundError as exc:
        raise CliError(f"hand file not found: {exc.filename}", EXIT_IO)
    except HandValidationError as exc:
        raise CliError(f"invalid hand: {exc}", EXIT_INVALID)
    try:
        grid = load_grid(sdf)
    except FileNotFoundError as exc:
        raise CliError(f"sdf file not found: {exc.filename}", EXIT_IO)
    except (GridFormatError, ValueError) as exc:
        raise CliError(f"invalid sdf: {exc}", EXIT_INVALID)
    return model, grid


def _hand_source(hand) -> Path:
    from .hand import ASSET_DIR, BUNDLED
    p = Path(hand)
    if str(hand) in BUNDLED and not p.exists():
        return ASSET_DIR / f"{hand}.json"
    return p


# -------------------------------------------------------------------- bake

def cmd_bake(args) -> int:
    try:
        mesh = read_obj(args.mesh)
    except FileNotFoundError:
        raise CliError(f"mesh not found: {args.mesh}", EXIT_IO)
    except MeshError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    try:
        grid = bake(mesh, args.dims, args.padding)
    except BakeError as exc:
        shown = "; ".join(str(tuple(int(i) for i in n)) for n in exc.nodes[:10])
        more = f" (+{len(exc.nodes) - 10} more)" if len(exc.nodes) > 10 else ""
        raise CliError(f"{exc}; ambiguous nodes: {shown}{more}", EXIT_INVALID)
    out = Path(args.out)
    try:
        save_grid(grid, out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO)
    v = grid.values
    print(f"wrote {out}: dims {grid.dims}, spacing {np.round(grid.spacing, 6).tolist()}, "
          f"phi min {v.min():.6g} max {v.max():.6g}, interior nodes {int((v < 0).sum())}")
    return EXIT_OK


# ------------------------------------------------------------------- synth

def _trace_summary(trace) -> dict:
    if not trace:
        return {"steps": 0}
    task = [r.task for r in trace]
    phys = [r.physics for r in trace]
    return {"steps": len(trace), "first": trace[0].to_dict(), "last": trace[-1].to_dict(),
            "min_task": min(task), "min_physics": min(phys)}


def _run_job(payload) -> dict:
    hand, sdf, cfg_dict, density, job = payload
    model, grid = _load_inputs(hand, sdf)
    config = OptimizerConfig.from_dict(cfg_dict)
    state = object_state(grid, density)
    params = ContactParams()
    try:
        res = synthesize(model, grid, config, params, state, job=job)
    except (FloatingPointError, ValueError) as exc:
        return {"job": job, "status": "failed", "error": str(exc)}
    if res.diverged and not math.isfinite(res.best_displacement):
        return {"job": job, "status": "failed", "error": "optimization diverged"}
    disp = res.best_displacement
    grasp = {
        "format": "graspd-grasp/1",
        "hand": model.name,
        "seed": config.seed,
        "job": job,
        "config": config.to_dict(),
        "candidate": res.best.to_dict(),
        "init_pose": res.init_pose.to_dict(),
        "best_step": res.best_step,
        "displacement": disp if math.isfinite(disp) else None,
        "checkpoints": [{"step": c["step"], "displacement": c["displacement"] if math.isfinite(c["displacement"])
                         else None} for c in res.checkpoints],
        "final_losses": res.final_report.to_dict() if res.final_report else None,
        "trace": _trace_summary(res.trace),
        "diverged": res.diverged,
    }
    return {"job": job, "status": "ok", "grasp": grasp, "displacement": disp}


def cmd_synth(args) -> int:
    model, grid = _load_inputs(args.hand, args.sdf)
    if args.config:
        try:
            config = load_config(args.config)
        except FileNotFoundError:
            raise CliError(f"config not found: {args.config}", EXIT_IO)
        except (ValueError, TypeError) as exc:
            raise CliError(f"invalid config: {exc}", EXIT_INVALID)
    else:
        config = OptimizerConfig()
    if args.seeds < 0:
        raise CliError("--seeds must be nonnegative", EXIT_INVALID)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}", EXIT_IO)

    payloads = [(str(args.hand), str(args.sdf), config.to_dict(), args.density, job) for job in range(args.seeds)]
    if args.jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_job, payloads))
    else:
        results = [_run_job(p) for p in payloads]

    entries = []
    for r in sorted(results, key=lambda r: r["job"]):
        entry = {"job": r["job"], "status": r["status"]}
        if r["status"] == "ok":
            name = f"grasp_{r['job']:03d}.json"
            (out / name).write_text(dump_json(r["grasp"]))
            entry.update(file=name, displacement=r["grasp"]["displacement"])
        else:
            entry["error"] = r["error"]
            log.warning("job %d failed: %s", r["job"], r["error"])
        entries.append(entry)
    ok = [e for e in entries if e["status"] == "ok"]
    ranked = sorted(ok, key=lambda e: (math.inf if e["displacement"] is None else e["displacement"], e["job"]))
    inputs = {"hand": {"path": str(args.hand), "sha256": sha256(_hand_source(args.hand))},
              "sdf": {"path": str(args.sdf), "sha256": sha256(args.sdf)}}
    if args.config:
        inputs["config"] = {"path": str(args.config), "sha256": sha256(args.config)}
    manifest = {"format": "graspd-manifest/1", "tool_version": __version__, "inputs": inputs,
                "config": config.to_dict(), "density": args.density, "seeds": args.seeds,
                "grasps": entries, "ranking": [e["file"] for e in ranked]}
    (out / "manifest.json").write_text(dump_json(manifest))
    print(f"{len(ok)}/{args.seeds} grasps written to {out}")
    if args.seeds and not ok:
        return EXIT_NUMERIC
    return EXIT_OK


# -------------------------------------------------------------------- eval

def load_grasp(path) -> GraspCandidate:
    data = json.loads(Path(path).read_text())
    return GraspCandidate.from_dict(data["candidate"])


def _check_manifest(files, hand, sdf):
    """Warn when the inputs differ from the ones a grasp directory was made with."""
    seen = set()
    for f in files:
        m = Path(f).parent / "manifest.json"
        if m in seen or not m.exists():
            continue
        seen.add(m)
        try:
            inputs = json.loads(m.read_text())["inputs"]
        except (ValueError, KeyError):
            log.warning("unreadable manifest %s", m)
            continue
        for key, path in (("hand", _hand_source(hand)), ("sdf", Path(sdf))):
            if key in inputs and path.exists() and inputs[key]["sha256"] != sha256(path):
                log.warning("%s differs from the one recorded in %s", key, m)


def summarize(reports: list[EvalReport]) -> dict:
    """Mean metrics over the top-k grasps ranked by displacement."""
    order = sorted(range(len(reports)), key=lambda i: reports[i].displacement)
    out = {}
    for k in TOP_K:
        chosen = [reports[i] for i in order[:k]]
        agg = {}
        for key in ("contact_area", "interpen_volume", "epsilon", "displacement", "contact_count"):
            vals = [getattr(r, key) for r in chosen]
            agg[key] = float(np.mean(vals)) if vals and all(math.isfinite(v) for v in vals) else None
        agg["n"] = len(chosen)
        out[f"top{k}"] = agg
    return out


def cmd_eval(args) -> int:
    model, grid = _load_inputs(args.hand, args.sdf)
    _check_manifest(args.grasps, args.hand, args.sdf)
    state = object_state(grid, args.density)
    params = ContactParams()
    reports, names, missing = [], [], []
    for f in args.grasps:
        try:
            cand = load_grasp(f)
        except FileNotFoundError:
            log.warning("missing grasp file: %s", f)
            missing.append(f)
            continue
        except (ValueError, KeyError, TypeError) as exc:
            log.warning("skipping corrupted grasp file %s: %s", f, exc)
            continue
        try:
            rep = evaluate(model, cand.hand_pose, grid, params, state, np.random.default_rng(args.seed),
                           directions=args.directions, frames=args.frames)
        except (ValueError, UsageError) as exc:
            log.warning("skipping %s: %s", f, exc)
            continue
        reports.append(rep)
        names.append(str(f))
        line = {"file": str(f), **rep.to_dict()}
        if args.out:
            append_jsonl(args.out, [line])
        else:
            print(json.dumps(line, sort_keys=True))
    if missing:
        print("missing: " + ", ".join(map(str, missing)), file=sys.stderr)
    if not reports:
        return EXIT_IO if missing else EXIT_INVALID
    summary = {"summary": summarize(reports), "files": names}
    if args.out:
        append_jsonl(args.out, [summary])
    print(json.dumps(summary["summary"], sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------ export

def hand_mesh(model: HandModel, pose) -> TriMesh:
    verts, faces, base = [], [], 0
    for shape, R, t in placed_primitives(model, pose):
        kind = type(shape).__name__
        if kind == "Sphere":
            m = icosphere(shape.radius, 2)
        elif kind == "Capsule":
            m = capsule_mesh(shape.radius, shape.half_length)
        else:
            m = box_mesh(shape.half_extents)
        verts.append(m.vertices @ R.T + t)
        faces.append(m.faces + base)
        base += len(m.vertices)
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), int))
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def object_mesh(grid: SdfGrid) -> TriMesh:
    """Zero level set of the grid via marching cubes, in world coordinates."""
    from skimage.measure import marching_cubes

    v = grid.values
    if not (v.min() < 0 < v.max()):
        log.warning("grid has no zero crossing; object group is empty")
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), int))
    verts, faces, _, _ = marching_cubes(v, level=0.0, spacing=tuple(grid.spacing))
    local = verts + grid.lo
    # skimage orients faces toward increasing values; flip so normals point outward
    return TriMesh(local @ grid.rotation.T + grid.translation, faces[:, ::-1])


def cmd_export(args) -> int:
    model, grid = _load_inputs(args.hand, args.sdf)
    try:
        cand = load_grasp(args.grasp)
    except FileNotFoundError:
        raise CliError(f"grasp file not found: {args.grasp}", EXIT_IO)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"invalid grasp file: {exc}", EXIT_INVALID)
    try:
        hand = hand_mesh(model, cand.hand_pose)
    except UsageError as exc:
        raise CliError(f"grasp does not match the hand: {exc}", EXIT_INVALID)
    try:
        write_obj(args.out, {"hand": hand, "object": object_mesh(grid)})
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO)
    print(f"wrote {args.out}")
    return EXIT_OK


# -------------------------------------------------------------------- main

def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graspd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"graspd {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bake", help="bake a watertight OBJ mesh into an SDF grid")
    b.add_argument("mesh")
    b.add_argument("--dims", type=_positive_int, default=64)
    b.add_argument("--padding", type=_nonneg_float, default=0.01, help="meters added around the mesh bounds")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bake)

    s = sub.add_parser("synth", help="optimize grasps for one hand and object")
    s.add_argument("--hand", required=True, help="hand JSON file or bundled name (pinch, tripod)")
    s.add_argument("--sdf", required=True)
    s.add_argument("--config", help="optimizer config JSON")
    s.add_argument("--seeds", type=int, default=10, help="number of grasps")
    s.add_argument("--jobs", type=_positive_int, default=1)
    s.add_argument("--density", type=_nonneg_float, default=1000.0, help="object density, kg/m^3")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="evaluate grasp files")
    e.add_argument("grasps", nargs="+")
    e.add_argument("--hand", required=True)
    e.add_argument("--sdf", required=True)
    e.add_argument("--density", type=_nonneg_float, default=1000.0)
    e.add_argument("--directions", type=_positive_int, default=1024)
    e.add_argument("--frames", type=_positive_int, default=500)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="JSON-lines file to append to (default: stdout)")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="write hand and object as one OBJ scene")
    x.add_argument("grasp")
    x.add_argument("--hand", required=True)
    x.add_argument("--sdf", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    level = os.environ.get("GRASPD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"graspd: {exc}", file=sys.stderr)
        return exc.code
    except FloatingPointError as exc:
        print(f"graspd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
