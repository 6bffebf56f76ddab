"""Penalty contact between a static hand and one free rigid object.

Forces follow the convention "force acting on the object": a hand point
penetrating the object pushes it along -grad(phi).  Relative velocities are
the object's rigid velocity at the contact point (the hand never moves
during a rollout).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from . import diffcore as dc
from ._accel import USE_NUMBA, njit
from .sdf._kernels import trilinear, trilinear_point
from .sdf.grid import SdfGrid

TANGENT_EPS = 1e-9
GRAVITY = 9.8


class SimulationDivergence(FloatingPointError):
    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class ContactParams:
    k_n: float = 1e6
    k_f: float = 1e8
    mu: float = 0.8
    alpha: float = 0.1
    dt: float = 1e-5
    offset: float = 0.0

    def __post_init__(self):
        for name in ("k_n", "k_f", "mu", "dt", "offset"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")

    def with_(self, **kw) -> "ContactParams":
        return replace(self, **kw)


@dataclass
class ContactForce:
    point: object
    f_n: object
    f_t: object
    # signed normal force k_n * min(d, 0) * |grad phi| (carries the leak)
    normal: object

    @property
    def f_c(self):
        return self.f_n + self.f_t


@dataclass
class ObjectState:
    """Rigid object; ``position``/``rotation`` place the SDF frame in the world.

    ``velocity`` is (linear velocity of the COM, world angular velocity).
    """
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    velocity: object = field(default_factory=lambda: np.zeros(6))
    mass: float = 1.0
    inertia: np.ndarray = field(default_factory=lambda: np.eye(3))
    com_local: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # bounding-sphere radius about the com; scales angular speed in norms
    radius: float = 1.0

    def __post_init__(self):
        self.position = np.asarray(self.position, float)
        self.rotation = np.asarray(self.rotation, float)
        self.inertia = np.asarray(self.inertia, float)
        self.com_local = np.asarray(self.com_local, float)
        if not isinstance(self.velocity, dc.Var):
            self.velocity = np.asarray(self.velocity, float)
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if not np.allclose(self.inertia, self.inertia.T) or np.any(np.linalg.eigvalsh(self.inertia) <= 0):
            raise ValueError("inertia must be symmetric positive definite")

    @property
    def com(self) -> np.ndarray:
        return self.rotation @ self.com_local + self.position

    def inverse_inertia_world(self) -> np.ndarray:
        R = self.rotation
        return R @ np.linalg.inv(self.inertia) @ R.T


def _object_query(obj, x):
    """Differentiable (phi, grad) of an SDF grid or analytic primitive."""
    return obj.evaluate_var(x)


def point_velocity(velocity, points, com):
    """Rigid velocity v + w x (x - com) of the object at world points."""
    v = velocity[0:3]
    w = velocity[3:6]
    r = points - com
    if isinstance(w, dc.Var) or isinstance(r, dc.Var):
        return v + dc.cross(dc.expand_dims(w, 0) + np.zeros((1, 3)), r)
    return v + np.cross(w, r)


def contact_force(x, v_rel, grid, params: ContactParams, offset=None, alpha=None) -> ContactForce:
    """Per-point penalty contact force on the object, batched over rows of ``x``.

    ``x`` and ``v_rel`` may be tape variables.  ``offset`` overrides the
    level-set offset in ``params``.
    """
    offset = params.offset if offset is None else offset
    alpha = params.alpha if alpha is None else alpha
    single = np.ndim(dc._val(x)) == 1
    if single:
        x = dc.reshape(x, (1, 3))
    phi, g = _object_query(grid, x)
    pen = dc.leaky_min_zero(phi - offset, alpha)
    gn = dc.rownorm(g)
    n_hat = g / dc.expand_dims(dc.maximum(gn, 1e-12), -1)
    f_n = params.k_n * dc.expand_dims(pen, -1) * g
    normal = params.k_n * pen * gn
    v = v_rel
    if np.ndim(dc._val(v)) == 1:
        v = dc.expand_dims(v, 0)
    v_t = v - dc.expand_dims(dc.dot(v, n_hat), -1) * n_hat
    vt_mag = dc.rownorm(v_t)
    moving = dc._val(vt_mag) >= TANGENT_EPS
    mag = dc.minimum(params.k_f * vt_mag, -params.mu * normal)
    scale = dc.where(moving, mag / dc.maximum(vt_mag, TANGENT_EPS), 0.0)
    f_t = -dc.expand_dims(scale, -1) * v_t
    if single:
        return ContactForce(x[0], f_n[0], f_t[0], normal[0])
    return ContactForce(x, f_n, f_t, normal)


def aggregate_wrench(forces, com):
    """Total (force, torque about ``com``) of contact forces as a 6-vector.

    Accepts a batched ContactForce or a list of them.
    """
    if isinstance(forces, ContactForce):
        forces = [forces]
    if not forces:
        return np.zeros(6)
    parts = []
    for f in forces:
        p, fc = f.point, f.f_c
        if np.ndim(dc._val(fc)) == 1:
            p, fc = dc.reshape(p, (1, 3)), dc.reshape(fc, (1, 3))
        torque = dc.cross(p - com, fc)
        parts.append(dc.concatenate([dc.vsum(fc, 0), dc.vsum(torque, 0)], 0))
    total = parts[0]
    for w in parts[1:]:
        total = total + w
    return total


def point_wrenches(forces: ContactForce, com):
    """Per-point 6-wrenches (force, (x - com) x f_c), shape (N, 6)."""
    fc = forces.f_c
    return dc.concatenate([fc, dc.cross(forces.point - com, fc)], -1)


def _accelerate(state: ObjectState, velocity, wrench, dt):
    lin = velocity[0:3] + (dt / state.mass) * wrench[0:3]
    ang = velocity[3:6] + dt * (state.inverse_inertia_world() @ wrench[3:6])
    return dc.concatenate([lin, ang], 0)


def euler_step(state: ObjectState, wrench, external, dt) -> ObjectState:
    """Semi-implicit Euler: update the velocity, then move with the new one.

    The velocity may be a tape variable; the pose update uses plain values.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    w = wrench + np.asarray(external, float)
    vel = _accelerate(state, state.velocity, w, dt)
    vv = dc._val(vel)
    com = state.com + dt * vv[0:3]
    R = Rotation.from_rotvec(dt * vv[3:6]).as_matrix() @ state.rotation
    return replace(state, position=com - R @ state.com_local, rotation=R, velocity=vel)


def velocity_norm(u, length: float):
    """Norm of a 6-velocity with angular speed scaled by ``length``."""
    return dc.norm(u * np.array([1.0, 1.0, 1.0, length, length, length]))


def _check_finite(x, step):
    if not np.all(np.isfinite(dc._val(x))):
        raise SimulationDivergence("non-finite object state", step)


def rollout_actual_points(points, grid, state: ObjectState, init_velocity, params: ContactParams,
                          T: int = 1, offset=None, alpha=None):
    """Final object velocity after ``T`` contact steps against fixed hand points.

    The object pose is held at ``state`` over the horizon (at T = 1 it does
    not enter the result); the velocity is updated every step.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    u = init_velocity
    com = state.com
    for step in range(T):
        vel = point_velocity(u, points, com)
        forces = contact_force(points, vel, grid, params, offset, alpha)
        u = _accelerate(state, u, aggregate_wrench(forces, com), params.dt)
        _check_finite(u, step)
    return u


def rollout_actual(hand_pose, model, grid, init_velocity, params: ContactParams, T: int = 1,
                   state: ObjectState | None = None):
    """``rollout_actual_points`` with hand points from forward kinematics."""
    from .hand import pose_kinematics

    state = state or ObjectState()
    pts = pose_kinematics(model, hand_pose).points
    return rollout_actual_points(pts, grid, state, init_velocity, params, T)


def rollout_prescribed(f_d, init_velocity, state: ObjectState, dt: float, T: int = 1):
    """Final velocity when the object wrench is the sum of prescribed per-point wrenches."""
    if T < 1:
        raise ValueError("T must be at least 1")
    total = dc.vsum(f_d, 0) if np.ndim(dc._val(f_d)) == 2 else f_d
    u = init_velocity
    for step in range(T):
        u = _accelerate(state, u, total, dt)
        _check_finite(u, step)
    return u


def mass_properties(grid: SdfGrid, density: float = 1000.0):
    """(mass, local com, local inertia about com) by voxel integration of phi < 0.

    Each grid cell contributes its center sample.
    """
    v = grid.values
    centers = 0.125 * (v[:-1, :-1, :-1] + v[1:, :-1, :-1] + v[:-1, 1:, :-1] + v[:-1, :-1, 1:]
                       + v[1:, 1:, :-1] + v[1:, :-1, 1:] + v[:-1, 1:, 1:] + v[1:, 1:, 1:])
    inside = np.argwhere(centers < 0)
    if len(inside) == 0:
        raise ValueError("grid has no interior (no phi < 0)")
    h = grid.spacing
    pts = grid.lo + (inside + 0.5) * h
    cell_mass = density * float(np.prod(h))
    mass = cell_mass * len(pts)
    com = pts.mean(axis=0)
    r = pts - com
    sq = np.sum(r * r, axis=1)
    inertia = cell_mass * (np.eye(3) * sq.sum() - r.T @ r)
    # each cell as a small solid box
    inertia += np.diag([h[1] ** 2 + h[2] ** 2, h[0] ** 2 + h[2] ** 2, h[0] ** 2 + h[1] ** 2]) * mass / 12.0
    return mass, com, inertia


def object_state(grid: SdfGrid, density: float = 1000.0) -> ObjectState:
    """Canonical (unmoved) object state with voxel mass properties."""
    mass, com, inertia = mass_properties(grid, density)
    nodes = grid.node_positions()[grid.values <= 0]
    radius = float(np.max(np.linalg.norm(nodes - com, axis=1))) if len(nodes) else float(np.max(grid.spacing))
    return ObjectState(mass=mass, inertia=inertia, com_local=com, radius=radius)


# ------------------------------------------------------------ multi-step

@njit
def _simulate_numba(values, lo, spacing, pts, com_local, mass, inertia_inv, R0, p0, v0, external,
                    k_n, k_f, mu, offset, dt, n_steps, stabilize, reach):
    R = R0.copy()
    com = R @ com_local + p0
    v = v0.copy()
    n = pts.shape[0]
    near = np.empty(n, np.int64)
    phis = np.empty(n)
    grads = np.empty((n, 3))
    cand = np.empty(n, np.int64)
    n_cand = 0
    # points farther than `shell` outside the offset surface are skipped until the
    # object could have moved them that far (trilinear phi is at most 2-Lipschitz)
    shell = 4.0 * float(np.max(spacing))
    moved = np.inf
    for step in range(n_steps):
        if moved * 2.0 >= shell:
            n_cand = 0
            for i in range(n):
                rx, ry, rz = pts[i, 0] - com[0], pts[i, 1] - com[1], pts[i, 2] - com[2]
                if rx * rx + ry * ry + rz * rz > (reach + shell) ** 2:
                    continue
                lx = R[0, 0] * rx + R[1, 0] * ry + R[2, 0] * rz + com_local[0]
                ly = R[0, 1] * rx + R[1, 1] * ry + R[2, 1] * rz + com_local[1]
                lz = R[0, 2] * rx + R[1, 2] * ry + R[2, 2] * rz + com_local[2]
                phi, g0, g1, g2 = trilinear_point(values, lo, spacing, lx, ly, lz)
                if phi - offset < shell:
                    cand[n_cand] = i
                    n_cand += 1
            moved = 0.0
        moved += dt * (math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
                       + math.sqrt(v[3] * v[3] + v[4] * v[4] + v[5] * v[5]) * (reach + shell))
        m = 0
        for c in range(n_cand):
            i = cand[c]
            rx, ry, rz = pts[i, 0] - com[0], pts[i, 1] - com[1], pts[i, 2] - com[2]
            if rx * rx + ry * ry + rz * rz > reach * reach:
                continue
            lx = R[0, 0] * rx + R[1, 0] * ry + R[2, 0] * rz + com_local[0]
            ly = R[0, 1] * rx + R[1, 1] * ry + R[2, 1] * rz + com_local[1]
            lz = R[0, 2] * rx + R[1, 2] * ry + R[2, 2] * rz + com_local[2]
            phi, g0, g1, g2 = trilinear_point(values, lo, spacing, lx, ly, lz)
            if phi - offset < 0.0:
                near[m] = i
                phis[m] = phi - offset
                grads[m, 0] = R[0, 0] * g0 + R[0, 1] * g1 + R[0, 2] * g2
                grads[m, 1] = R[1, 0] * g0 + R[1, 1] * g1 + R[1, 2] * g2
                grads[m, 2] = R[2, 0] * g0 + R[2, 1] * g1 + R[2, 2] * g2
                m += 1
        fx, fy, fz = external[0], external[1], external[2]
        tx, ty, tz = external[3], external[4], external[5]
        for c in range(m):
            i = near[c]
            d = phis[c]
            gx, gy, gz = grads[c, 0], grads[c, 1], grads[c, 2]
            gn = math.sqrt(gx * gx + gy * gy + gz * gz)
            rx, ry, rz = pts[i, 0] - com[0], pts[i, 1] - com[1], pts[i, 2] - com[2]
            # object velocity at the point
            vx = v[0] + v[4] * rz - v[5] * ry
            vy = v[1] + v[5] * rx - v[3] * rz
            vz = v[2] + v[3] * ry - v[4] * rx
            inv = 1.0 / max(gn, 1e-12)
            nx, ny, nz = gx * inv, gy * inv, gz * inv
            vn = vx * nx + vy * ny + vz * nz
            ux, uy, uz = vx - vn * nx, vy - vn * ny, vz - vn * nz
            vtm = math.sqrt(ux * ux + uy * uy + uz * uz)
            cx, cy, cz = k_n * d * gx, k_n * d * gy, k_n * d * gz
            if vtm >= 1e-9:
                mag = min(k_f * vtm, -mu * k_n * d * gn)
                if stabilize:
                    # do not let friction reverse the slip within one step
                    mag = min(mag, mass * vtm / (dt * m))
                s = mag / vtm
                cx -= s * ux
                cy -= s * uy
                cz -= s * uz
            fx += cx
            fy += cy
            fz += cz
            tx += ry * cz - rz * cy
            ty += rz * cx - rx * cz
            tz += rx * cy - ry * cx
        # angular acceleration R I^-1 R^T tau, written out to avoid small-matrix temporaries
        bx = R[0, 0] * tx + R[1, 0] * ty + R[2, 0] * tz
        by = R[0, 1] * tx + R[1, 1] * ty + R[2, 1] * tz
        bz = R[0, 2] * tx + R[1, 2] * ty + R[2, 2] * tz
        cx = inertia_inv[0, 0] * bx + inertia_inv[0, 1] * by + inertia_inv[0, 2] * bz
        cy = inertia_inv[1, 0] * bx + inertia_inv[1, 1] * by + inertia_inv[1, 2] * bz
        cz = inertia_inv[2, 0] * bx + inertia_inv[2, 1] * by + inertia_inv[2, 2] * bz
        v[0] += dt * fx / mass
        v[1] += dt * fy / mass
        v[2] += dt * fz / mass
        v[3] += dt * (R[0, 0] * cx + R[0, 1] * cy + R[0, 2] * cz)
        v[4] += dt * (R[1, 0] * cx + R[1, 1] * cy + R[1, 2] * cz)
        v[5] += dt * (R[2, 0] * cx + R[2, 1] * cy + R[2, 2] * cz)
        com[0] += dt * v[0]
        com[1] += dt * v[1]
        com[2] += dt * v[2]
        wx, wy, wz = v[3] * dt, v[4] * dt, v[5] * dt
        th = math.sqrt(wx * wx + wy * wy + wz * wz)
        if th > 0.0:
            ax, ay, az = wx / th, wy / th, wz / th
            sn, cs = math.sin(th), 1.0 - math.cos(th)
            # Rodrigues rotation applied to each column of R
            for col in range(3):
                px, py, pz = R[0, col], R[1, col], R[2, col]
                kx, ky, kz = ay * pz - az * py, az * px - ax * pz, ax * py - ay * px
                kkx, kky, kkz = ay * kz - az * ky, az * kx - ax * kz, ax * ky - ay * kx
                R[0, col] = px + sn * kx + cs * kkx
                R[1, col] = py + sn * ky + cs * kky
                R[2, col] = pz + sn * kz + cs * kkz
        if not (math.isfinite(v[0] + v[1] + v[2] + v[3] + v[4] + v[5]) and math.isfinite(com[0] + com[1] + com[2])):
            return R, com, v, step
    return R, com, v, -1


def _simulate_numpy(values, lo, spacing, pts, com_local, mass, inertia_inv, R0, p0, v0, external,
                    k_n, k_f, mu, offset, dt, n_steps, stabilize, reach):
    R = R0.copy()
    com = R @ com_local + p0
    v = v0.copy()
    for step in range(n_steps):
        rel = pts - com
        close = np.sum(rel * rel, axis=1) <= reach * reach
        phi, g, _ = trilinear(values, lo, spacing, rel[close] @ R + com_local, False, use_numba=False)
        d = np.full(len(pts), np.inf)
        d[close] = phi - offset
        g_all = np.zeros((len(pts), 3))
        g_all[close] = g
        g = g_all
        hit = d < 0
        active = int(hit.sum())
        force = external[0:3].copy()
        torque = external[3:6].copy()
        if active:
            d, gw, r = d[hit], g[hit] @ R.T, pts[hit] - com
            gn = np.linalg.norm(gw, axis=1)
            fn = k_n * d[:, None] * gw
            vp = v[0:3] + np.cross(v[3:6], r)
            nh = gw / np.maximum(gn, 1e-12)[:, None]
            vt = vp - np.sum(vp * nh, axis=1)[:, None] * nh
            vtm = np.linalg.norm(vt, axis=1)
            mag = np.minimum(k_f * vtm, -mu * k_n * d * gn)
            if stabilize:
                mag = np.minimum(mag, mass * vtm / (dt * active))
            scale = np.where(vtm >= 1e-9, mag / np.maximum(vtm, 1e-9), 0.0)
            fc = fn - scale[:, None] * vt
            force += fc.sum(axis=0)
            torque += np.cross(r, fc).sum(axis=0)
        Iw = R @ inertia_inv @ R.T
        v[0:3] += dt * force / mass
        v[3:6] += dt * (Iw @ torque)
        com = com + dt * v[0:3]
        th = np.linalg.norm(v[3:6] * dt)
        if th > 0:
            R = Rotation.from_rotvec(v[3:6] * dt).as_matrix() @ R
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(com))):
            return R, com, v, step
    return R, com, v, -1


def simulate(points, grid: SdfGrid, state: ObjectState, external, params: ContactParams,
             n_steps: int, stabilize: bool = True, use_numba=None) -> ObjectState:
    """Advance the object ``n_steps`` of ``params.dt`` against static hand points.

    The SDF follows the object pose.  With ``stabilize`` the friction impulse
    is capped so it cannot reverse the slip velocity within one step.
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    fn = _simulate_numba if use_numba else _simulate_numpy
    pts = np.ascontiguousarray(points, float).reshape(-1, 3)
    # beyond the bounding sphere (plus interpolation slack) phi stays above the offset
    reach = state.radius + 2.0 * float(np.max(grid.spacing)) + params.offset
    R, com, v, failed = fn(grid.values, grid.lo, grid.spacing, pts, state.com_local, float(state.mass),
                           np.linalg.inv(state.inertia), state.rotation, state.position,
                           np.asarray(state.velocity, float), np.asarray(external, float),
                           params.k_n, params.k_f, params.mu, params.offset, params.dt, int(n_steps),
                           bool(stabilize), reach)
    if failed >= 0:
        raise SimulationDivergence("non-finite object state", int(failed))
    return replace(state, position=com - R @ state.com_local, rotation=R, velocity=v)
