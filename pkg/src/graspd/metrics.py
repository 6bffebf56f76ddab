"""Grasp evaluation: contact area, interpenetration, epsilon quality, shake test."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

from .hand import HandModel, HandPose, pose_kinematics
from .sdf.grid import SdfGrid
from .sim import GRAVITY, ContactParams, ObjectState, SimulationDivergence, simulate

VOXEL = 1e-3
EPS_ZERO = 1e-12
SHAKE_DIRECTIONS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)


@dataclass
class EvalReport:
    contact_area: float  # cm^2
    interpen_volume: float  # cm^3
    ratio: float | None  # cm^-1, None when there is no interpenetration
    epsilon: float
    displacement: float  # cm, inf when the shake test diverged
    contact_count: int

    def to_dict(self) -> dict:
        d = asdict(self)
        if not math.isfinite(d["displacement"]):
            d["displacement"] = None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        disp = d["displacement"]
        return cls(d["contact_area"], d["interpen_volume"], d["ratio"], d["epsilon"],
                   math.inf if disp is None else disp, d["contact_count"])


def append_jsonl(path, records) -> None:
    """Append EvalReports (or plain dicts) to a JSON-lines file, one per line."""
    with open(path, "a") as fh:
        for r in records:
            fh.write((r.to_json() if isinstance(r, EvalReport) else json.dumps(r, sort_keys=True)) + "\n")


# ------------------------------------------------------------- primitives

def placed_primitives(model: HandModel, pose: HandPose, kin=None):
    """(shape, world rotation, world translation) for every hand primitive."""
    kin = kin or pose_kinematics(model, pose)
    out = []
    for i, link in enumerate(model.links):
        R, t = kin.rotations[i], kin.translations[i]
        for prim in link.primitives:
            out.append((prim.shape, R @ prim.rotation, R @ prim.translation + t))
    return out


def _world_bounds(shape, R, t):
    kind = type(shape).__name__
    if kind == "Sphere":
        e = np.full(3, shape.radius)
    elif kind == "Capsule":
        e = np.abs(R[:, 2]) * shape.half_length + shape.radius
    else:
        e = np.abs(R) @ np.asarray(shape.half_extents)
    return t - e, t + e


def _inside_hand(prims, pts):
    inside = np.zeros(len(pts), bool)
    for shape, R, t in prims:
        lo, hi = _world_bounds(shape, R, t)
        near = np.all((pts >= lo) & (pts <= hi), axis=1) & ~inside
        if np.any(near):
            inside[near] = shape.query((pts[near] - t) @ R) < 0
    return inside


def _object_bounds(grid: SdfGrid):
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    c = grid.lo + corners * (grid.hi - grid.lo)
    w = c @ grid.rotation.T + grid.translation
    return w.min(axis=0), w.max(axis=0)


def interpenetration_volume(model: HandModel, pose: HandPose, grid: SdfGrid, voxel: float = VOXEL) -> float:
    """Volume (cm^3) of hand primitives inside the object, on a world lattice of ``voxel`` cells."""
    prims = placed_primitives(model, pose)
    if not prims:
        return 0.0
    blo = np.min([_world_bounds(*p)[0] for p in prims], axis=0)
    bhi = np.max([_world_bounds(*p)[1] for p in prims], axis=0)
    olo, ohi = _object_bounds(grid)
    lo, hi = np.maximum(blo, olo), np.minimum(bhi, ohi)
    if np.any(hi <= lo):
        return 0.0
    i0 = np.floor(lo / voxel).astype(int)
    i1 = np.ceil(hi / voxel).astype(int)
    axes = [(np.arange(i0[a], i1[a]) + 0.5) * voxel for a in range(3)]
    count = 0
    # slab by slab along x to bound memory
    yz = np.stack(np.meshgrid(axes[1], axes[2], indexing="ij"), -1).reshape(-1, 2)
    for x in axes[0]:
        pts = np.column_stack([np.full(len(yz), x), yz])
        hit = grid.query(pts) < 0
        if np.any(hit):
            count += int(np.count_nonzero(_inside_hand(prims, pts[hit])))
    return count * voxel ** 3 * 1e6


# surface samples of each primitive in its own frame: (points, normals, area weights)

def _fibonacci(n):
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    th = np.pi * (1 + 5 ** 0.5) * i
    r = np.sqrt(1 - z * z)
    return np.column_stack([r * np.cos(th), r * np.sin(th), z])


@lru_cache(maxsize=256)
def _surface_samples(shape, h):
    kind = type(shape).__name__
    if kind == "Sphere":
        r = shape.radius
        n = max(8, int(math.ceil(4 * math.pi * r * r / (h * h))))
        u = _fibonacci(n)
        return u * r, u, np.full(n, 4 * math.pi * r * r / n)
    if kind == "Capsule":
        r, L = shape.radius, shape.half_length
        n_sph = max(8, int(math.ceil(4 * math.pi * r * r / (h * h))))
        u = _fibonacci(n_sph)
        caps = u * r + np.where(u[:, 2:3] >= 0, 1.0, -1.0) * np.array([0, 0, L])
        n_ring = max(8, int(math.ceil(2 * math.pi * r / h)))
        n_len = max(1, int(math.ceil(2 * L / h)))
        th = 2 * np.pi * (np.arange(n_ring) + 0.5) / n_ring
        zs = -L + 2 * L * (np.arange(n_len) + 0.5) / n_len
        T, Z = np.meshgrid(th, zs, indexing="ij")
        nrm = np.column_stack([np.cos(T).ravel(), np.sin(T).ravel(), np.zeros(T.size)])
        cyl = nrm * r + np.column_stack([np.zeros(T.size), np.zeros(T.size), Z.ravel()])
        pts = np.concatenate([caps, cyl])
        nrms = np.concatenate([u, nrm])
        w = np.concatenate([np.full(n_sph, 4 * math.pi * r * r / n_sph),
                            np.full(T.size, 2 * math.pi * r * 2 * L / T.size)])
        return pts, nrms, w
    he = np.asarray(shape.half_extents)
    pts, nrms, ws = [], [], []
    for a in range(3):
        b, c = [k for k in range(3) if k != a]
        nb = max(1, int(math.ceil(2 * he[b] / h)))
        nc = max(1, int(math.ceil(2 * he[c] / h)))
        ub = -he[b] + 2 * he[b] * (np.arange(nb) + 0.5) / nb
        uc = -he[c] + 2 * he[c] * (np.arange(nc) + 0.5) / nc
        B, C = np.meshgrid(ub, uc, indexing="ij")
        for s in (-1.0, 1.0):
            p = np.zeros((B.size, 3))
            p[:, a] = s * he[a]
            p[:, b], p[:, c] = B.ravel(), C.ravel()
            n = np.zeros((B.size, 3))
            n[:, a] = s
            pts.append(p)
            nrms.append(n)
            ws.append(np.full(B.size, 4 * he[b] * he[c] / B.size))
    return np.concatenate(pts), np.concatenate(nrms), np.concatenate(ws)


def hand_surface(model: HandModel, pose: HandPose, spacing: float = VOXEL, kin=None):
    """World samples (points, outward normals, areas) of the union surface of the hand primitives."""
    prims = placed_primitives(model, pose, kin)
    pts, nrms, ws = [], [], []
    for k, (shape, R, t) in enumerate(prims):
        p, n, w = _surface_samples(shape, spacing)
        p = p @ R.T + t
        others = prims[:k] + prims[k + 1:]
        keep = ~_inside_hand(others, p)
        pts.append(p[keep])
        nrms.append((n @ R.T)[keep])
        ws.append(w[keep])
    if not pts:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(nrms), np.concatenate(ws)


def contact_area(model: HandModel, pose: HandPose, grid: SdfGrid, band: float = 1e-3,
                 spacing: float = VOXEL) -> float:
    """Area (cm^2) of hand surface within ``band`` of the object surface and facing it."""
    pts, nrms, ws = hand_surface(model, pose, spacing)
    if len(pts) == 0:
        return 0.0
    olo, ohi = _object_bounds(grid)
    near = np.all((pts >= olo - band) & (pts <= ohi + band), axis=1)
    if not np.any(near):
        return 0.0
    phi, g = grid.evaluate(pts[near])
    facing = np.sum(nrms[near] * g, axis=1) < -0.5 * np.linalg.norm(g, axis=1)
    hit = (np.abs(phi) < band) & facing
    return float(np.sum(ws[near][hit])) * 1e4


# ------------------------------------------------------------------ epsilon

def hand_contacts(model: HandModel, pose: HandPose, grid: SdfGrid, kin=None):
    """(points, inward unit normals) of hand surface points inside the object."""
    kin = kin or pose_kinematics(model, pose)
    pts = np.asarray(kin.points)
    phi, g = grid.evaluate(pts)
    hit = phi < 0
    n = g[hit]
    n = -n / np.maximum(np.linalg.norm(n, axis=1), 1e-12)[:, None]
    return pts[hit], n


def wrench_set(points, normals, mu, com, rho=1.0, edges=8):
    """Pyramid-edge wrenches (unit normal force) with torques scaled by 1/rho."""
    W = []
    for p, n in zip(np.atleast_2d(points), np.atleast_2d(normals)):
        n = n / np.linalg.norm(n)
        a = np.array([1.0, 0, 0]) if abs(n[0]) < 0.9 else np.array([0, 1.0, 0])
        t1 = np.cross(n, a)
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(n, t1)
        for j in range(edges):
            th = 2 * np.pi * j / edges
            f = n + mu * (np.cos(th) * t1 + np.sin(th) * t2)
            W.append(np.concatenate([f, np.cross(p - com, f) / rho]))
    return np.array(W).reshape(-1, 6)


def _refine(W, d0, iters=20):
    """Minimize max_w w.d / |d| near ``d0`` by repeated tangent-plane LPs."""
    d = d0
    best = float(np.max(W @ d))
    for _ in range(iters):
        # variables (d, t): minimize t s.t. W d <= t, d0 . d = 1
        c = np.zeros(7)
        c[6] = 1.0
        A = np.hstack([W, -np.ones((len(W), 1))])
        res = linprog(c, A_ub=A, b_ub=np.zeros(len(W)), A_eq=np.append(d, 0.0)[None], b_eq=[1.0],
                      bounds=[(-1e3, 1e3)] * 6 + [(None, None)], method="highs")
        if res.status != 0:
            break
        nd = res.x[:6] / np.linalg.norm(res.x[:6])
        val = float(np.max(W @ nd))
        if val >= best - 1e-14:
            break
        d, best = nd, val
    return best


def epsilon_metric(contacts, mu: float, com, edges: int = 8, directions: int = 1024, rng=None,
                   rho: float = 1.0, refine: int = 16) -> float:
    """Sampled radius of the largest origin ball inside the grasp wrench space.

    The support function is minimized over ``directions`` random unit
    6-vectors; the ``refine`` best are then polished locally.  Every
    evaluated direction bounds the true radius from above.
    """
    points, normals = contacts if isinstance(contacts, tuple) else (
        [c[0] for c in contacts], [c[1] for c in contacts])
    points = np.asarray(points, float).reshape(-1, 3)
    if len(points) == 0:
        return 0.0
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    rng = rng if rng is not None else np.random.default_rng(0)
    W = wrench_set(points, np.asarray(normals, float).reshape(-1, 3), mu, np.asarray(com, float), rho, edges)
    D = rng.normal(size=(directions, 6))
    D /= np.linalg.norm(D, axis=1)[:, None]
    h = np.max(D @ W.T, axis=1)
    if h.min() <= 0:
        return 0.0
    order = np.argsort(h)[:refine]
    best = min([_refine(W, D[i]) for i in order] + [float(h.min())])
    # support values at rounding level mean the origin sits on the hull boundary
    return best if best > EPS_ZERO else 0.0


# ------------------------------------------------------------------ shake test

def displacement_test(model: HandModel, pose: HandPose, grid: SdfGrid, params: ContactParams,
                      state: ObjectState, frames: int = 500, frame_dt: float = 1e-3,
                      directions=SHAKE_DIRECTIONS, kin=None) -> float:
    """Mean com displacement (cm) under gravity along each of ``directions``.

    The hand is static; each frame is integrated in substeps of ``params.dt``.
    Returns inf if any run diverges.
    """
    kin = kin or pose_kinematics(model, pose)
    pts = np.asarray(kin.points)
    sub = max(1, int(round(frame_dt / params.dt)))
    g = GRAVITY * state.mass
    out = []
    for d in np.atleast_2d(directions):
        ext = np.concatenate([g * np.asarray(d, float), np.zeros(3)])
        try:
            final = simulate(pts, grid, state, ext, params.with_(offset=0.0), frames * sub)
        except SimulationDivergence:
            return math.inf
        out.append(np.linalg.norm(final.com - state.com) * 100.0)
    return float(np.mean(out))


def evaluate(model: HandModel, pose: HandPose, grid: SdfGrid, params: ContactParams, state: ObjectState,
             rng=None, directions: int = 1024, frames: int = 500) -> EvalReport:
    kin = pose_kinematics(model, pose)
    pts, nrm = hand_contacts(model, pose, grid, kin)
    eps = epsilon_metric((pts, nrm), params.mu, state.com, directions=directions, rng=rng, rho=state.radius)
    vol = interpenetration_volume(model, pose, grid)
    area = contact_area(model, pose, grid)
    disp = displacement_test(model, pose, grid, params, state, frames=frames, kin=kin)
    return EvalReport(area, vol, area / vol if vol > 0 else None, eps, disp, int(len(pts)))
