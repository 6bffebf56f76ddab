import numpy as np
import pytest

from graspd.hand import palm_frame, pose_kinematics
from graspd.loss import LossReport
from graspd.opt import (Adamax, MultiplierState, OptimizerConfig, initial_offset, load_config, mdmm_step,
                        sample_initial_pose, save_config, smoothing_radius, synthesize)
from graspd.sim import ContactParams

SHORT = dict(steps=30, smoothing_steps=20, eval_every=10, eval_frames=20)


def report(task=0.0, qlimit=0.0, physics=1.0):
    return LossReport(task, physics, 0.5, qlimit, 0.0)


def test_sample_pose_geometry(tripod, sphere_grid):
    rng = np.random.default_rng(0)
    h = sphere_grid.spacing.max()
    for _ in range(20):
        pose = sample_initial_pose(tripod, sphere_grid, rng)
        center, normal = palm_frame(tripod, pose_kinematics(tripod, pose))
        assert abs(np.linalg.norm(center) - 0.13) <= 2 * h
        # the approach point lies 10 cm along the palm normal, on the surface
        a = center + 0.10 * normal
        assert abs(sphere_grid.query(a)) <= 1e-9
        n = sphere_grid.grad(a)
        assert np.dot(normal, n / np.linalg.norm(n)) == pytest.approx(-1.0, abs=1e-9)
        np.testing.assert_array_equal(pose.joints, tripod.open_q)


def test_sample_pose_deterministic(tripod, sphere_grid):
    a = sample_initial_pose(tripod, sphere_grid, np.random.default_rng(7))
    b = sample_initial_pose(tripod, sphere_grid, np.random.default_rng(7))
    assert a.to_dict() == b.to_dict()


def test_sample_pose_needs_surface(tripod):
    from graspd.sdf import grid_from_function
    empty = grid_from_function(lambda q: np.linalg.norm(q, axis=-1) + 0.1, [-1] * 3, [1] * 3, 8)
    with pytest.raises(ValueError):
        sample_initial_pose(tripod, empty, np.random.default_rng(0))


def test_initial_offset(tripod, sphere_grid):
    cfg = OptimizerConfig()
    pose = sample_initial_pose(tripod, sphere_grid, np.random.default_rng(1))
    r = initial_offset(tripod, pose, sphere_grid, cfg)
    d = float(np.min(sphere_grid.query(pose_kinematics(tripod, pose).points)))
    assert r == pytest.approx(min(d - 0.01, cfg.max_offset))


def test_smoothing_radius():
    cfg = OptimizerConfig()
    assert smoothing_radius(0, 0.08, cfg) == 0.08
    assert smoothing_radius(cfg.smoothing_steps, 0.08, cfg) == 0.0
    assert smoothing_radius(cfg.smoothing_steps // 2, 0.08, cfg) == pytest.approx(0.04)
    rs = [smoothing_radius(s, 0.08, cfg) for s in range(cfg.steps)]
    assert all(b <= a for a, b in zip(rs, rs[1:]))
    assert smoothing_radius(0, 0.08, cfg.replace(smoothing=False)) == 0.0


def test_multipliers_inactive_constraints():
    cfg = OptimizerConfig()
    m = MultiplierState()
    for _ in range(5):
        m = m.update({"task": -1.0, "limit": -0.5}, cfg)
    assert m.value == {"task": 0.0, "limit": 0.0}


def test_multiplier_increases_when_violated():
    cfg = OptimizerConfig()
    opt = Adamax({"x": 1e-3})
    rep = report(task=cfg.c_task + 1.0)
    _, m = mdmm_step(rep, {"x": np.ones(2)}, MultiplierState(), cfg, opt)
    assert m.value["task"] > 0
    assert m.value["limit"] == 0.0


def test_multipliers_stay_nonnegative():
    cfg = OptimizerConfig(lr_multiplier=1.0)
    rng = np.random.default_rng(0)
    m = MultiplierState()
    for _ in range(200):
        m = m.update({"task": rng.normal(), "limit": rng.normal()}, cfg)
        assert min(m.value.values()) >= 0


def test_zero_gradients_no_update():
    cfg = OptimizerConfig()
    opt = Adamax({"x": 1e-3, "y": 1e-2})
    upd, _ = mdmm_step(report(), {"x": np.zeros(3), "y": np.zeros((2, 6))}, MultiplierState(), cfg, opt)
    assert all(np.all(u == 0) for u in upd.values())


def test_nonfinite_gradient_aborts():
    with pytest.raises(FloatingPointError):
        mdmm_step(report(), {"x": np.array([np.nan])}, MultiplierState(), OptimizerConfig(), Adamax({"x": 1.0}))


def test_adamax_first_step():
    opt = Adamax({"x": 0.1}, (0.9, 0.999), 1e-8)
    upd = opt.step({"x": np.array([2.0, -0.5, 0.0])})
    np.testing.assert_allclose(upd["x"], [-0.1, 0.1, 0.0], rtol=1e-7)


def test_config_round_trip(tmp_path):
    cfg = OptimizerConfig(steps=100, smoothing_steps=50, seed=3, betas=(0.8, 0.99))
    p = tmp_path / "c.json"
    save_config(cfg, p)
    assert load_config(p) == cfg


def test_config_defaults():
    cfg = OptimizerConfig()
    assert (cfg.steps, cfg.lr_pose, cfg.lr_forces, cfg.c_task, cfg.c_limit, cfg.damping, cfg.smoothing_steps) == \
        (7000, 3e-3, 1e-2, 1e-4, 1e-4, 1.0, 5000)
    assert cfg.betas == (0.9, 0.999) and cfg.eps == 1e-8


@pytest.mark.parametrize("bad", [dict(steps=10), dict(lr_pose=0.0), dict(betas=(1.0, 0.5)), dict(bogus=1)])
def test_config_validation(bad):
    with pytest.raises((ValueError, TypeError)):
        OptimizerConfig.from_dict({**OptimizerConfig().to_dict(), **bad})


def test_steps_zero_returns_initialization(tripod, sphere_grid, sphere_state):
    cfg = OptimizerConfig(steps=0, smoothing_steps=0, eval_frames=20)
    res = synthesize(tripod, sphere_grid, cfg, ContactParams(), sphere_state)
    assert res.trace == []
    assert res.best.hand_pose.to_dict() == res.init_pose.to_dict()
    assert np.all(res.best.prescribed == 0)


def test_synthesize_deterministic(tripod, sphere_grid, sphere_state):
    cfg = OptimizerConfig(seed=4, **SHORT)
    a = synthesize(tripod, sphere_grid, cfg, ContactParams(), sphere_state, job=1)
    b = synthesize(tripod, sphere_grid, cfg, ContactParams(), sphere_state, job=1)
    assert [r.to_dict() for r in a.trace] == [r.to_dict() for r in b.trace]
    assert a.final.hand_pose.to_dict() == b.final.hand_pose.to_dict()
    assert a.checkpoints == b.checkpoints
    c = synthesize(tripod, sphere_grid, cfg, ContactParams(), sphere_state, job=2)
    assert c.init_pose.to_dict() != a.init_pose.to_dict()


def test_satisfied_constraints_reduce_to_plain_adamax(tripod, sphere_grid, sphere_state):
    # huge thresholds keep both constraints satisfied, so multipliers stay 0
    from graspd.loss import GraspCandidate, loss_terms
    from graspd import diffcore as dc
    cfg = OptimizerConfig(steps=5, smoothing_steps=0, c_task=10.0, c_limit=10.0, eval_frames=5, smoothing=False)
    seen = []
    res = synthesize(tripod, sphere_grid, cfg, ContactParams(), sphere_state,
                     callback=lambda s, rep, cand: seen.append(cand))
    assert all(r.multipliers == {"task": 0.0, "limit": 0.0} for r in res.trace)

    r = sphere_state.radius
    adamax = Adamax({"position": cfg.lr_pose, "rotation": cfg.lr_pose, "joints": cfg.lr_pose,
                     "prescribed": cfg.lr_forces * np.array([1, 1, 1, r, r, r])})
    cand = GraspCandidate.zeros(res.init_pose, tripod.n_points)
    for step in range(cfg.steps):
        t = dc.Tape()
        pose = cand.hand_pose
        pos, inc, q, fd = t.var(pose.position), t.var(np.zeros(3)), t.var(pose.joints), t.var(cand.prescribed)
        terms = loss_terms(tripod, sphere_grid, sphere_state, ContactParams(), pos, pose.rotation, q, fd, inc,
                           offset=0.0)
        g = t.backward(terms.physics + terms.qrange + terms.inter)
        upd = adamax.step({"position": g.get(pos, np.zeros(3)), "rotation": g.get(inc, np.zeros(3)),
                           "joints": g.get(q, np.zeros(tripod.n_joints)),
                           "prescribed": g.get(fd, np.zeros_like(cand.prescribed))})
        p2 = pose.rotated(upd["rotation"])
        from graspd.hand import HandPose
        cand = GraspCandidate(HandPose(p2.position + upd["position"], p2.quaternion, p2.joints + upd["joints"]),
                              cand.prescribed + upd["prescribed"])
        np.testing.assert_allclose(cand.hand_pose.position, seen[step].hand_pose.position, rtol=0, atol=1e-15)
        np.testing.assert_allclose(cand.hand_pose.joints, seen[step].hand_pose.joints, rtol=0, atol=1e-15)
