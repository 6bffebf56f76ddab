"""Grasp losses: task, physics relaxation, joint priors and self-intersection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import diffcore as dc
from .hand import HandModel, HandPose, forward_kinematics, joint_losses
from .sim import (ContactParams, ObjectState, contact_force, point_wrenches, rollout_actual_points,
                  rollout_prescribed, velocity_norm)

DEFAULT_VELOCITIES = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.01, 0.01, 0.01, 0.0, 0.0, 0.0],
    [-0.01, -0.01, -0.01, 0.0, 0.0, 0.0],
])


@dataclass
class GraspCandidate:
    """Hand pose plus prescribed per-point wrenches.

    ``prescribed`` has shape (M, N, 6): one wrench set per initial velocity
    of the metric, each wrench about the object com in world axes.
    """
    hand_pose: HandPose
    prescribed: np.ndarray

    @classmethod
    def zeros(cls, pose: HandPose, n_points: int, n_rollouts: int = len(DEFAULT_VELOCITIES)):
        return cls(pose, np.zeros((n_rollouts, n_points, 6)))

    def to_dict(self) -> dict:
        return {"hand_pose": self.hand_pose.to_dict(), "prescribed": np.asarray(self.prescribed).tolist()}

    @classmethod
    def from_dict(cls, d) -> "GraspCandidate":
        return cls(HandPose.from_dict(d["hand_pose"]), np.asarray(d["prescribed"], float))


@dataclass
class LossReport:
    task: float
    physics: float
    qrange: float
    qlimit: float
    inter: float
    multipliers: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("task", "physics", "qrange", "qlimit", "inter"):
            if not math.isfinite(getattr(self, name)):
                raise FloatingPointError(f"loss {name} is not finite")

    def to_dict(self) -> dict:
        return {"task": self.task, "physics": self.physics, "qrange": self.qrange, "qlimit": self.qlimit,
                "inter": self.inter, "multipliers": dict(self.multipliers)}


def rollout_velocities(velocities, points, com):
    """Object velocity at each point for each initial velocity: (M, N, 3)."""
    V = np.asarray(velocities, float).reshape(-1, 6)
    r = points - com
    lin = V[:, None, 0:3]
    if not np.any(V[:, 3:6]):
        return np.broadcast_to(lin, (len(V), len(dc._val(points)), 3))
    return lin + dc.cross(V[:, None, 3:6] + np.zeros((1, 1, 3)), dc.expand_dims(r, 0))


def task_loss(f_d, state: ObjectState, params: ContactParams, velocities=DEFAULT_VELOCITIES, T: int = 1):
    """Mean final speed of the object under prescribed wrenches.

    ``f_d`` is (N, 6), shared by every rollout, or (M, N, 6) with one set per
    initial velocity.
    """
    V = np.asarray(velocities, float).reshape(-1, 6)
    if len(V) < 1:
        raise ValueError("need at least one initial velocity")
    per_rollout = np.ndim(dc._val(f_d)) == 3
    total = 0.0
    for m, v0 in enumerate(V):
        fm = f_d[m] if per_rollout else f_d
        u = rollout_prescribed(fm, v0, state, params.dt, T)
        total = total + velocity_norm(u, state.radius)
    return total / len(V)


def actual_wrenches(points, grid, state: ObjectState, params: ContactParams, velocities=None,
                    offset=None, alpha=None):
    """Per-point contact wrenches, (M, N, 6) for M initial velocities (default: at rest)."""
    if velocities is None:
        velocities = np.zeros((1, 6))
    v = rollout_velocities(velocities, points, state.com)
    forces = contact_force(points, v, grid, params, offset, alpha)
    return point_wrenches(forces, state.com), forces


def physics_loss(points, f_d, grid, state: ObjectState, params: ContactParams, velocities=None,
                 offset=None, alpha=None):
    """Norm of the stacked difference between actual and prescribed wrenches.

    A 2-D ``f_d`` is compared against the wrenches with the object at rest;
    a 3-D one against the wrenches at each initial velocity.
    """
    if np.ndim(dc._val(f_d)) == 2:
        velocities = None
        f_d = dc.expand_dims(f_d, 0)
    elif velocities is None:
        velocities = DEFAULT_VELOCITIES
    W, _ = actual_wrenches(points, grid, state, params, velocities, offset, alpha)
    return dc.norm(W - f_d)


def grasp_loss(points, grid, state: ObjectState, params: ContactParams, velocities=DEFAULT_VELOCITIES,
               T: int = 1, offset=None, alpha=None):
    """Mean final speed with contact forces from the simulated hand."""
    V = np.asarray(velocities, float).reshape(-1, 6)
    total = 0.0
    for v0 in V:
        u = rollout_actual_points(points, grid, state, v0, params, T, offset, alpha)
        total = total + velocity_norm(u, state.radius)
    return total / len(V)


# ------------------------------------------------------------ self contact

@dataclass(frozen=True)
class _PairTable:
    kind: str
    point: np.ndarray  # hand point index
    link: np.ndarray  # link carrying the primitive
    rot: np.ndarray  # primitive frame in link frame
    trans: np.ndarray
    params: np.ndarray  # sphere: (r,), capsule: (r, h), box: (hx, hy, hz)


@lru_cache(maxsize=16)
def _pair_tables(model: HandModel):
    rows = {"sphere": [], "capsule": [], "box": []}
    owner = model.point_link
    for a, b in model.collision_pairs():
        pts = np.nonzero(owner == a)[0]
        for prim in model.links[b].primitives:
            s = prim.shape
            kind = type(s).__name__.lower()
            if kind == "sphere":
                par = (s.radius, 0.0, 0.0)
            elif kind == "capsule":
                par = (s.radius, s.half_length, 0.0)
            else:
                par = s.half_extents
            for p in pts:
                rows[kind].append((p, b, prim.rotation, prim.translation, par))
    tables = []
    for kind, r in rows.items():
        if not r:
            continue
        tables.append(_PairTable(kind, np.array([x[0] for x in r]), np.array([x[1] for x in r]),
                                 np.stack([x[2] for x in r]), np.stack([x[3] for x in r]),
                                 np.array([x[4] for x in r], float)))
    return tuple(tables)


def _primitive_phi(kind, p, par):
    if kind == "sphere":
        return dc.rownorm(p) - par[:, 0]
    if kind == "capsule":
        h = par[:, 1]
        z = dc.clip(p[:, 2], -h, h)
        zero = np.zeros(len(h))
        return dc.rownorm(p - dc.stack([zero, zero, z], -1)) - par[:, 0]
    q = dc.absolute(p) - par
    return dc.rownorm(dc.relu(q)) + dc.minimum(dc.vmax(q, -1), 0.0)


def self_penetration(model: HandModel, kin) -> list:
    """Signed distances of hand points to non-neighbor link primitives, one array per kind."""
    out = []
    for tab in _pair_tables(model):
        x = dc.take(kin.points, tab.point)
        R = dc.take(kin.rotations, tab.link)
        t = dc.take(kin.translations, tab.link)
        # row-vector form of R^T (x - t)
        local = (dc.expand_dims(x - t, 1) @ R)[:, 0, :]
        p = (dc.expand_dims(local - tab.trans, 1) @ tab.rot)[:, 0, :]
        out.append(_primitive_phi(tab.kind, p, tab.params))
    return out


def self_intersection_loss(model: HandModel, kin, params: ContactParams):
    """Norm of the stacked normal forces between non-neighbor links.

    Primitive SDFs have unit gradients, so each force norm is k_n * |min(phi, 0)|.
    """
    parts = [dc.leaky_min_zero(phi, 0.0) for phi in self_penetration(model, kin)]
    if not parts:
        return 0.0
    return params.k_n * dc.norm(dc.concatenate(parts, 0))


# ------------------------------------------------------------------ totals

@dataclass
class LossTerms:
    """Tape values of every loss for one evaluation."""
    task: object
    physics: object
    qrange: object
    qlimit: object
    inter: object
    kin: object = None

    def report(self, multipliers=None) -> LossReport:
        f = lambda v: float(dc._val(v))
        return LossReport(f(self.task), f(self.physics), f(self.qrange), f(self.qlimit), f(self.inter),
                          dict(multipliers or {}))


def loss_terms(model: HandModel, grid, state: ObjectState, params: ContactParams, position, rotation,
               joints, f_d, increment=None, velocities=DEFAULT_VELOCITIES, offset=None, alpha=None,
               relaxed: bool = True, T: int = 1) -> LossTerms:
    """Evaluate all losses from (possibly tape) parameters on one tape.

    With ``relaxed`` false the task term is the simulated grasp metric and
    the physics term is zero.
    """
    kin = forward_kinematics(model, position, rotation, joints, increment)
    qrange, qlimit = joint_losses(model, joints)
    inter = self_intersection_loss(model, kin, params)
    if relaxed:
        task = task_loss(f_d, state, params, velocities, T)
        physics = physics_loss(kin.points, f_d, grid, state, params, velocities, offset, alpha)
    else:
        task = grasp_loss(kin.points, grid, state, params, velocities, T, offset, alpha)
        physics = 0.0
    return LossTerms(task, physics, qrange, qlimit, inter, kin)


def total_report(candidate: GraspCandidate, model: HandModel, grid, state: ObjectState,
                 params: ContactParams, velocities=DEFAULT_VELOCITIES, offset=None, T: int = 1,
                 multipliers=None) -> tuple[LossReport, dict]:
    """All five losses and their gradients from a single backward pass.

    Returns the report and gradients of the summed losses keyed by
    ``position``, ``rotation`` (body-frame increment), ``joints`` and ``prescribed``.
    """
    tape = dc.Tape()
    pose = candidate.hand_pose
    pos = tape.var(pose.position)
    inc = tape.var(np.zeros(3))
    q = tape.var(pose.joints)
    fd = tape.var(candidate.prescribed)
    terms = loss_terms(model, grid, state, params, pos, pose.rotation, q, fd, inc, velocities, offset, T=T)
    total = terms.task + terms.physics + terms.qrange + terms.qlimit + terms.inter
    g = tape.backward(total)
    grads = {k: g.get(v, np.zeros(np.shape(v.value))) for k, v in
             (("position", pos), ("rotation", inc), ("joints", q), ("prescribed", fd))}
    return terms.report(multipliers), grads
