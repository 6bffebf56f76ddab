"""Triangle meshes: ASCII OBJ I/O and a few generators."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise MeshError("face index out of range")

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                # fan-triangulate polygons
                for a in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[a], idx[a + 1]])
        except ValueError as exc:
            raise MeshError(f"{path}:{lineno}: cannot parse {line!r}") from exc
    if not verts or not faces:
        raise MeshError(f"{path}: no triangles found")
    return TriMesh(np.array(verts), np.array(faces))


def write_obj(path, groups: dict[str, TriMesh]) -> None:
    """Write one or more named groups into a single OBJ file."""
    lines = ["# graspd scene"]
    offset = 1
    for name, mesh in groups.items():
        lines.append(f"o {name}")
        lines.append(f"g {name}")
        lines.extend(f"v {x:.6g} {y:.6g} {z:.6g}" for x, y, z in mesh.vertices)
        lines.extend(f"f {a + offset} {b + offset} {c + offset}" for a, b, c in mesh.faces)
        offset += len(mesh.vertices)
    Path(path).write_text("\n".join(lines) + "\n")


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriMesh(np.array(verts) * radius + np.asarray(center), np.array(faces))


def box_mesh(half_extents=(0.5, 0.5, 0.5), center=(0.0, 0.0, 0.0)) -> TriMesh:
    h = np.asarray(half_extents, float)
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], float) * h
    # outward-oriented quads over the corner indexing above (bit order x, y, z)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return TriMesh(corners + np.asarray(center), np.array(faces))


def capsule_mesh(radius: float, half_length: float, segments: int = 16, rings: int = 6) -> TriMesh:
    """Capsule along z, used when exporting hand links."""
    verts, faces = [], []
    profile = []
    for i in range(rings + 1):
        a = -np.pi / 2 + (np.pi / 2) * i / rings
        profile.append((radius * np.cos(a), -half_length + radius * np.sin(a)))
    for i in range(rings + 1):
        a = (np.pi / 2) * i / rings
        profile.append((radius * np.cos(a), half_length + radius * np.sin(a)))
    for r, z in profile:
        for s in range(segments):
            th = 2 * np.pi * s / segments
            verts.append((r * np.cos(th), r * np.sin(th), z))
    for i in range(len(profile) - 1):
        for s in range(segments):
            a = i * segments + s
            b = i * segments + (s + 1) % segments
            c = a + segments
            d = b + segments
            faces += [(a, b, d), (a, d, c)]
    return TriMesh(np.array(verts), np.array(faces))
