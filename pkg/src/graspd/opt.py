"""Grasp synthesis: initialization, coarse-to-fine schedule, Adamax and MDMM."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import diffcore as dc
from .hand import HandModel, HandPose, forward_kinematics, matrix_to_quat, palm_frame
from .loss import DEFAULT_VELOCITIES, GraspCandidate, LossReport, loss_terms
from .metrics import displacement_test
from .sdf.grid import SdfGrid
from .sim import ContactParams, ObjectState

log = logging.getLogger(__name__)

CONSTRAINTS = ("task", "limit")


@dataclass(frozen=True)
class OptimizerConfig:
    steps: int = 7000
    lr_pose: float = 3e-3
    lr_forces: float = 1e-2
    c_task: float = 1e-4
    c_limit: float = 1e-4
    damping: float = 1.0
    lr_multiplier: float = 1e-4
    # divide each constraint violation by its threshold before the ascent step
    normalize_constraints: bool = True
    smoothing_steps: int = 5000
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    relaxation: bool = True
    smoothing: bool = True
    leak: bool = True
    approach_distance: float = 0.10
    max_offset: float = 0.10
    eval_every: int = 1000
    eval_frames: int = 500

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.steps < 0 or self.smoothing_steps < 0:
            raise ValueError("steps and smoothing_steps must be nonnegative")
        if self.smoothing_steps > self.steps:
            raise ValueError("steps must be at least smoothing_steps")
        if self.lr_pose <= 0 or self.lr_forces <= 0 or self.lr_multiplier <= 0:
            raise ValueError("learning rates must be positive")
        if not all(0 <= b < 1 for b in self.betas) or len(self.betas) != 2:
            raise ValueError("betas must be two numbers in [0, 1)")
        if self.eval_every <= 0:
            raise ValueError("eval_every must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "OptimizerConfig":
        return OptimizerConfig.from_dict({**self.to_dict(), **kw})


def load_config(path) -> OptimizerConfig:
    return OptimizerConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(config: OptimizerConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ pieces

@dataclass
class MultiplierState:
    value: dict = field(default_factory=lambda: {k: 0.0 for k in CONSTRAINTS})
    delta: dict = field(default_factory=lambda: {k: 0.0 for k in CONSTRAINTS})

    def update(self, violations: dict, config: OptimizerConfig) -> "MultiplierState":
        """Damped projected ascent: lam <- max(0, lam + lr * g - damping * previous change)."""
        value, delta = {}, {}
        for k in CONSTRAINTS:
            new = max(0.0, self.value[k] + config.lr_multiplier * violations[k] - config.damping * self.delta[k])
            delta[k] = new - self.value[k]
            value[k] = new
        return MultiplierState(value, delta)


class Adamax:
    """Adamax over a dict of named arrays, with per-name learning rates."""

    def __init__(self, lrs: dict, betas=(0.9, 0.999), eps=1e-8):
        self.lrs = dict(lrs)
        self.b1, self.b2 = betas
        self.eps = eps
        self.m: dict = {}
        self.u: dict = {}
        self.t = 0

    def step(self, grads: dict) -> dict:
        """Return the parameter increments (already negated) for ``grads``."""
        self.t += 1
        out = {}
        for k, g in grads.items():
            g = np.asarray(g, float)
            m = self.m.get(k, np.zeros_like(g))
            u = self.u.get(k, np.zeros_like(g))
            m = self.b1 * m + (1 - self.b1) * g
            u = np.maximum(self.b2 * u, np.abs(g))
            self.m[k], self.u[k] = m, u
            out[k] = -self.lrs[k] / (1 - self.b1 ** self.t) * m / (u + self.eps)
        return out


def smoothing_radius(step: int, init_r: float, config: OptimizerConfig) -> float:
    """Level-set offset: linear decay from ``init_r`` to 0 over the smoothing steps."""
    if not config.smoothing or config.smoothing_steps == 0:
        return 0.0
    return init_r * max(0.0, 1.0 - step / config.smoothing_steps)


def constraint_violations(report: LossReport, config: OptimizerConfig) -> dict:
    g = {"task": report.task - config.c_task, "limit": report.qlimit - config.c_limit}
    if config.normalize_constraints:
        g = {"task": g["task"] / config.c_task, "limit": g["limit"] / config.c_limit}
    return g


def mdmm_step(report: LossReport, grads: dict, multipliers: MultiplierState, config: OptimizerConfig,
              optimizer: Adamax):
    """One MDMM iteration.

    ``grads`` are gradients of the Lagrangian at the current multipliers.
    Returns (parameter increments, new multipliers).
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}: {report}")
    updates = optimizer.step(grads)
    return updates, multipliers.update(constraint_violations(report, config), config)


def _surface_cells(grid: SdfGrid):
    v = grid.values
    corners = [v[a:v.shape[0] - 1 + a, b:v.shape[1] - 1 + b, c:v.shape[2] - 1 + c]
               for a in (0, 1) for b in (0, 1) for c in (0, 1)]
    lo = np.minimum.reduce(corners)
    hi = np.maximum.reduce(corners)
    return np.argwhere((lo < 0) & (hi >= 0))


def sample_initial_pose(model: HandModel, grid: SdfGrid, rng, config: OptimizerConfig = OptimizerConfig(),
                        max_attempts: int = 100) -> HandPose:
    """Open hand facing a random surface point, palm center ``approach_distance`` away."""
    cells = _surface_cells(grid)
    if len(cells) == 0:
        raise ValueError("grid has no zero level set")
    for _ in range(max_attempts):
        cell = cells[rng.integers(len(cells))]
        x = grid.lo + (cell + rng.random(3)) * grid.spacing
        x = x @ grid.rotation.T + grid.translation
        for _ in range(5):
            phi, g = grid.evaluate(x)
            gg = float(g @ g)
            if gg < 1e-12:
                break
            x = x - phi * g / gg
        phi, g = grid.evaluate(x)
        gn = float(np.linalg.norm(g))
        if gn >= 1e-6:
            break
    else:
        raise ValueError("could not find a surface point with a usable normal")
    n = g / gn
    roll = rng.uniform(0.0, 2 * np.pi)
    joints = model.open_q.copy()
    kin = forward_kinematics(model, np.zeros(3), np.eye(3), joints)
    center, normal = palm_frame(model, kin)
    align, _ = Rotation.align_vectors([-n], [normal])
    R = (Rotation.from_rotvec(-n * roll) * align).as_matrix()
    position = x + config.approach_distance * n - R @ center
    return HandPose(position, matrix_to_quat(R), joints)


def initial_offset(model: HandModel, pose: HandPose, grid: SdfGrid, config: OptimizerConfig) -> float:
    """Closest hand-object distance less 1 cm, kept within [0, max_offset]."""
    kin = forward_kinematics(model, pose.position, pose.rotation, pose.joints)
    d = float(np.min(grid.query(kin.points)))
    return float(np.clip(d - 0.01, 0.0, config.max_offset))


# -------------------------------------------------------------- main loop

@dataclass
class SynthesisResult:
    best: GraspCandidate
    final: GraspCandidate
    trace: list
    final_report: LossReport
    best_step: int
    best_displacement: float
    checkpoints: list
    diverged: bool = False
    init_pose: HandPose | None = None


def _evaluate(model, grid, state, params, candidate, offset, alpha, config, velocities, multipliers):
    """Losses and Lagrangian gradients at one candidate."""
    tape = dc.Tape()
    pose = candidate.hand_pose
    pos = tape.var(pose.position)
    inc = tape.var(np.zeros(3))
    q = tape.var(pose.joints)
    fd = tape.var(candidate.prescribed)
    terms = loss_terms(model, grid, state, params, pos, pose.rotation, q, fd, inc, velocities,
                       offset, alpha, relaxed=config.relaxation)
    lam = multipliers.value
    scale_t = 1.0 / config.c_task if config.normalize_constraints else 1.0
    scale_l = 1.0 / config.c_limit if config.normalize_constraints else 1.0
    objective = terms.physics + terms.qrange + terms.inter
    objective = objective + (lam["task"] * scale_t) * terms.task + (lam["limit"] * scale_l) * terms.qlimit
    report = terms.report(lam)
    if not isinstance(objective, dc.Var):
        return report, {"position": np.zeros(3), "rotation": np.zeros(3), "joints": np.zeros_like(pose.joints),
                        "prescribed": np.zeros_like(candidate.prescribed)}
    g = tape.backward(objective)
    grads = {"position": g.get(pos, np.zeros(3)), "rotation": g.get(inc, np.zeros(3)),
             "joints": g.get(q, np.zeros_like(pose.joints)),
             "prescribed": g.get(fd, np.zeros_like(candidate.prescribed))}
    return report, grads


def _apply(candidate: GraspCandidate, upd: dict) -> GraspCandidate:
    pose = candidate.hand_pose.rotated(upd["rotation"])
    pose = HandPose(pose.position + upd["position"], pose.quaternion, pose.joints + upd["joints"])
    return GraspCandidate(pose, candidate.prescribed + upd["prescribed"])


def synthesize(model: HandModel, grid: SdfGrid, config: OptimizerConfig, params: ContactParams,
               state: ObjectState, job: int = 0, velocities=DEFAULT_VELOCITIES, init_pose: HandPose | None = None,
               callback=None) -> SynthesisResult:
    """Optimize one grasp; deterministic in (config.seed, job)."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, job]))
    pose = init_pose or sample_initial_pose(model, grid, rng, config)
    V = np.asarray(velocities, float).reshape(-1, 6)
    candidate = GraspCandidate.zeros(pose, model.n_points, len(V))
    alpha = params.alpha if config.leak else 0.0
    init_r = initial_offset(model, pose, grid, config) if config.smoothing else 0.0
    # torques are stepped in units of force times the object radius
    force_lr = config.lr_forces * np.array([1.0, 1.0, 1.0, state.radius, state.radius, state.radius])
    adamax = Adamax({"position": config.lr_pose, "rotation": config.lr_pose, "joints": config.lr_pose,
                     "prescribed": force_lr}, config.betas, config.eps)
    multipliers = MultiplierState()
    trace = []
    checkpoints = []
    eval_at = set(range(config.smoothing_steps, config.steps + 1, config.eval_every)) | {config.steps}
    best, best_step, best_disp = candidate, 0, math.inf
    diverged = False

    def checkpoint(step, cand):
        nonlocal best, best_step, best_disp
        disp = displacement_test(model, cand.hand_pose, grid, params, state, frames=config.eval_frames)
        checkpoints.append({"step": step, "displacement": disp})
        if disp <= best_disp:
            best, best_step, best_disp = cand, step, disp

    for step in range(config.steps):
        r = smoothing_radius(step, init_r, config)
        try:
            report, grads = _evaluate(model, grid, state, params, candidate, r, alpha, config, V, multipliers)
            upd, multipliers = mdmm_step(report, grads, multipliers, config, adamax)
        except FloatingPointError as exc:
            log.warning("job %d diverged at step %d: %s", job, step, exc)
            diverged = True
            break
        trace.append(report)
        candidate = _apply(candidate, upd)
        if callback is not None:
            callback(step, report, candidate)
        if step + 1 in eval_at:
            checkpoint(step + 1, candidate)
    if not checkpoints:
        checkpoint(len(trace), candidate)
    try:
        final_report, _ = _evaluate(model, grid, state, params, candidate, 0.0, alpha, config, V, multipliers)
    except FloatingPointError:
        final_report = trace[-1] if trace else None
    return SynthesisResult(best, candidate, trace, final_report, best_step, best_disp, checkpoints, diverged, pose)
