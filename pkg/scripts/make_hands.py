"""Regenerate the bundled hand descriptions in src/graspd/assets/.

Fingers sit on a circle around the palm center and point along the palm
normal (+z) at zero flexion; every joint flexes about the local x axis,
which tilts the finger toward the palm axis.
"""
import json
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

OUT = Path(__file__).resolve().parents[1] / "src" / "graspd" / "assets"


def r3(v):
    return [round(float(x), 6) for x in v]


def capsule_points(radius, length, rings, around=8, tip=False):
    pts = []
    for k in range(rings):
        z = length * (k + 0.5) / rings
        for a in range(around):
            th = 2 * np.pi * a / around
            pts.append([radius * np.cos(th), radius * np.sin(th), z])
    if tip:
        pts.append([0.0, 0.0, length + radius])
        for a in range(4):
            th = 2 * np.pi * a / 4 + np.pi / 4
            s = radius / np.sqrt(2)
            pts.append([s * np.cos(th), s * np.sin(th), length + s])
    return [r3(p) for p in pts]


def finger(prefix, parent, theta, base_radius, segments):
    radial = np.array([np.cos(theta), np.sin(theta), 0.0])
    normal = np.array([0.0, 0.0, 1.0])
    tangent = np.cross(radial, normal)
    frame = np.stack([tangent, radial, normal], axis=1)  # columns: local x, y, z
    rpy = Rotation.from_matrix(frame).as_euler("xyz")
    links = []
    prev = parent
    for k, (name, length, radius, lower, upper) in enumerate(segments):
        last = k == len(segments) - 1
        origin = {"xyz": r3(base_radius * radial), "rpy": r3(rpy)} if k == 0 else \
            {"xyz": [0.0, 0.0, round(segments[k - 1][1], 6)], "rpy": [0.0, 0.0, 0.0]}
        links.append({
            "name": f"{prefix}_{name}",
            "parent": prev,
            "origin": origin,
            "joint": {"axis": [1.0, 0.0, 0.0], "lower": lower, "upper": upper, "open_at": "lower"},
            "points": capsule_points(radius, length, rings=4 if k == 0 else 3, tip=last),
            "primitives": [{"type": "capsule", "radius": radius, "half_length": round(length / 2, 6),
                            "xyz": [0.0, 0.0, round(length / 2, 6)], "rpy": [0.0, 0.0, 0.0]}],
        })
        prev = f"{prefix}_{name}"
    return links


def palm(half, grid):
    xs = np.linspace(-0.8 * half[0], 0.8 * half[0], grid)
    ys = np.linspace(-0.8 * half[1], 0.8 * half[1], grid)
    pts = [r3([x, y, 0.0]) for x in xs for y in ys]
    return {
        "name": "palm", "parent": None,
        "origin": {"xyz": [0.0, 0.0, 0.0], "rpy": [0.0, 0.0, 0.0]},
        "points": pts,
        "primitives": [{"type": "box", "half_extents": r3(half),
                        "xyz": [0.0, 0.0, -half[2]], "rpy": [0.0, 0.0, 0.0]}],
    }


def tripod():
    segs = [("prox", 0.04, 0.009, -0.6, 0.6), ("mid", 0.03, 0.008, 0.0, 1.0), ("dist", 0.025, 0.0075, 0.0, 0.6)]
    links = [palm([0.055, 0.055, 0.01], 5)]
    for i, th in enumerate(np.deg2rad([90.0, 210.0, 330.0])):
        links += finger(f"f{i}", "palm", th, 0.045, segs)
    return {"name": "tripod", "links": links,
            "palm": {"link": "palm", "center": [0.0, 0.0, 0.0], "normal": [0.0, 0.0, 1.0]},
            "neighbors": []}


def pinch():
    segs = [("prox", 0.045, 0.009, -0.6, 0.6), ("dist", 0.04, 0.008, 0.0, 1.0)]
    links = [palm([0.025, 0.045, 0.01], 4)]
    for i, th in enumerate(np.deg2rad([90.0, 270.0])):
        links += finger(f"f{i}", "palm", th, 0.035, segs)
    return {"name": "pinch", "links": links,
            "palm": {"link": "palm", "center": [0.0, 0.0, 0.0], "normal": [0.0, 0.0, 1.0]},
            "neighbors": []}


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for name, fn in (("tripod", tripod), ("pinch", pinch)):
        (OUT / f"{name}.json").write_text(json.dumps(fn(), indent=1) + "\n")
        print("wrote", OUT / f"{name}.json")
