import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from graspd import diffcore as dc
from graspd.hand import (HandPose, HandValidationError, forward_kinematics, hand_from_dict, joint_losses,
                         load_hand, matrix_to_quat, pose_kinematics)


def one_joint_hand(**joint):
    j = {"axis": [0, 0, 1], "lower": -2.0, "upper": 2.0}
    j.update(joint)
    return {
        "name": "one",
        "links": [
            {"name": "base", "parent": None},
            {"name": "tip", "parent": "base", "joint": j, "points": [[1, 0, 0]]},
        ],
        "palm": {"link": "base", "center": [0, 0, 0], "normal": [0, 0, 1]},
    }


def test_single_joint_rotation():
    model = hand_from_dict(one_joint_hand())
    kin = forward_kinematics(model, np.zeros(3), np.eye(3), np.array([np.pi / 2]))
    np.testing.assert_allclose(kin.points[0], [0, 1, 0], atol=1e-12)


def test_zero_configuration(tripod):
    kin = forward_kinematics(tripod, np.zeros(3), np.eye(3), np.zeros(tripod.n_joints))
    # compose the fixed link transforms by hand
    frames = {}
    for i, link in enumerate(tripod.links):
        if link.parent < 0:
            frames[i] = (link.rotation, link.translation)
        else:
            Rp, tp = frames[link.parent]
            frames[i] = (Rp @ link.rotation, Rp @ link.translation + tp)
    expected = np.concatenate([(frames[i][0] @ l.points.T).T + frames[i][1]
                               for i, l in enumerate(tripod.links) if len(l.points)])
    np.testing.assert_allclose(kin.points, expected, atol=1e-15)


def test_translation_equivariance(tripod):
    rng = np.random.default_rng(0)
    q = rng.uniform(tripod.lower, tripod.upper)
    R = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
    t = np.array([0.3, -0.2, 0.05])
    a = forward_kinematics(tripod, np.zeros(3), R, q).points
    b = forward_kinematics(tripod, t, R, q).points
    np.testing.assert_allclose(b - a, np.broadcast_to(t, a.shape), atol=1e-15)


def test_rigid_invariance(tripod):
    rng = np.random.default_rng(1)
    q = rng.uniform(tripod.lower, tripod.upper)
    R0 = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
    p0 = rng.normal(size=3)
    G = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
    s = rng.normal(size=3)
    a = forward_kinematics(tripod, p0, R0, q).points
    b = forward_kinematics(tripod, G @ p0 + s, G @ R0, q).points
    np.testing.assert_allclose(b, a @ G.T + s, atol=1e-14)


def test_joint_count_mismatch(tripod):
    with pytest.raises(dc.UsageError):
        forward_kinematics(tripod, np.zeros(3), np.eye(3), np.zeros(3))


def test_fk_gradients_match_fd(tripod):
    rng = np.random.default_rng(2)
    q0 = rng.uniform(tripod.lower, tripod.upper)
    R = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
    w = rng.normal(size=(tripod.n_points, 3))
    x0 = np.concatenate([rng.normal(size=3) * 0.1, rng.normal(size=3) * 0.1, q0])

    def f(t, x):
        kin = forward_kinematics(tripod, x[0:3], R, x[6:], increment=x[3:6])
        return dc.vsum(kin.points * w)

    assert dc.finite_difference_check(f, x0, 1e-6) < 1e-5


def test_bundled_tripod(tripod):
    assert tripod.n_joints == 9
    assert len(tripod.fingertips) == 3
    assert all(len(tripod.links[i].points) >= 8 for i in tripod.fingertips)


def test_bundled_pinch(pinch):
    assert pinch.n_joints == 4
    assert len(pinch.fingertips) == 2


def test_bad_limits_names_joint():
    data = one_joint_hand(lower=1.0, upper=0.5)
    with pytest.raises(HandValidationError, match="tip"):
        hand_from_dict(data)


def test_self_parent_is_cycle():
    data = one_joint_hand()
    data["links"][1]["parent"] = "tip"
    data["links"].append({"name": "other", "parent": None})
    with pytest.raises(HandValidationError, match="cycle"):
        hand_from_dict(data)


def test_missing_palm():
    data = one_joint_hand()
    del data["palm"]
    with pytest.raises(HandValidationError, match="palm"):
        hand_from_dict(data)


def test_palm_missing_normal():
    data = one_joint_hand()
    del data["palm"]["normal"]
    with pytest.raises(HandValidationError, match="palm.normal"):
        hand_from_dict(data)


def test_non_unit_axis():
    with pytest.raises(HandValidationError, match="axis"):
        hand_from_dict(one_joint_hand(axis=[0, 0, 2]))


def test_load_from_file(tmp_path):
    p = tmp_path / "h.json"
    p.write_text(json.dumps(one_joint_hand()))
    assert load_hand(p).n_joints == 1
    p.write_text("{not json")
    with pytest.raises(HandValidationError):
        load_hand(p)


def test_joint_losses(tripod):
    mid = tripod.midrange()
    qrange, qlimit = joint_losses(tripod, mid)
    assert qrange == 0.0 and qlimit == 0.0

    q = mid.copy()
    q[4] = tripod.upper[4] + 0.1
    assert joint_losses(tripod, q)[1] == pytest.approx(0.1, abs=1e-15)

    qrange, qlimit = joint_losses(tripod, tripod.upper.copy())
    assert qlimit == 0.0
    assert qrange == pytest.approx(np.linalg.norm((tripod.upper - tripod.lower) / 2), rel=1e-15)
    qrange, qlimit = joint_losses(tripod, tripod.lower.copy())
    assert qlimit == 0.0


def test_qlimit_zero_iff_within_limits(tripod):
    rng = np.random.default_rng(3)
    span = tripod.upper - tripod.lower
    for _ in range(200):
        q = rng.uniform(tripod.lower - 0.3 * span, tripod.upper + 0.3 * span)
        inside = np.all((q >= tripod.lower) & (q <= tripod.upper))
        assert (joint_losses(tripod, q)[1] == 0) == inside


def test_pose_quaternion_normalized():
    pose = HandPose([0, 0, 0], [2, 0, 0, 0], [])
    assert abs(np.linalg.norm(pose.quaternion) - 1) < 1e-9
    R = Rotation.from_rotvec([0.3, -0.2, 0.1]).as_matrix()
    np.testing.assert_allclose(HandPose([0, 0, 0], matrix_to_quat(R), []).rotation, R, atol=1e-14)


def test_pose_increment_composes_in_body_frame(tripod):
    rng = np.random.default_rng(4)
    pose = HandPose(rng.normal(size=3), matrix_to_quat(Rotation.random(random_state=1).as_matrix()),
                    tripod.midrange())
    w = np.array([0.01, -0.02, 0.03])
    a = pose_kinematics(tripod, pose.rotated(w)).points
    b = forward_kinematics(tripod, pose.position, pose.rotation, pose.joints, increment=w).points
    np.testing.assert_allclose(a, dc._val(b), atol=1e-14)
