"""Articulated hand: revolute-joint tree, surface points and collision primitives.

Hand description files are JSON::

    {
      "name": "tripod",
      "links": [
        {"name": "palm", "parent": null,
         "origin": {"xyz": [0, 0, 0], "rpy": [0, 0, 0]},
         "points": [[x, y, z], ...],                       # meters, link frame
         "primitives": [{"type": "box", "half_extents": [...],
                         "xyz": [...], "rpy": [...]}]},
        {"name": "f0_prox", "parent": "palm",
         "origin": {"xyz": [...], "rpy": [...]},            # joint frame in parent
         "joint": {"axis": [1, 0, 0], "lower": -0.5, "upper": 1.6,
                   "open_at": "lower"},                     # radians
         "points": [...], "primitives": [...]}
      ],
      "palm": {"link": "palm", "center": [...], "normal": [...]},
      "neighbors": [["f0_prox", "f1_prox"]]
    }

Parent/child pairs are always neighbors.  Leaf links are fingertips.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import diffcore as dc
from .sdf.primitives import Box, Capsule, Sphere

ASSET_DIR = Path(__file__).parent / "assets"
BUNDLED = ("pinch", "tripod")


class HandValidationError(ValueError):
    pass


def rpy_matrix(rpy) -> np.ndarray:
    return Rotation.from_euler("xyz", rpy).as_matrix()


@dataclass(frozen=True)
class PlacedPrimitive:
    shape: Sphere | Capsule | Box
    rotation: np.ndarray
    translation: np.ndarray


@dataclass
class Link:
    name: str
    parent: int  # -1 for the root
    rotation: np.ndarray  # fixed joint-frame rotation in the parent frame
    translation: np.ndarray
    points: np.ndarray  # (n, 3) link frame
    primitives: list[PlacedPrimitive] = field(default_factory=list)
    axis: np.ndarray | None = None
    lower: float = 0.0
    upper: float = 0.0
    open_at: str = "lower"


@dataclass(eq=False)
class HandModel:
    name: str
    links: list[Link]
    palm_link: int
    palm_center: np.ndarray
    palm_normal: np.ndarray
    neighbors: frozenset

    def __post_init__(self):
        self._validate()
        self._index()

    # ------------------------------------------------------------------ setup
    def _validate(self):
        n = len(self.links)
        for i, link in enumerate(self.links):
            if link.parent == i:
                raise HandValidationError(f"links[{link.name}].parent: cycle (link is its own parent)")
            if link.parent >= n:
                raise HandValidationError(f"links[{link.name}].parent: unknown parent index {link.parent}")
        for i in range(n):
            seen, j = set(), i
            while j >= 0:
                if j in seen:
                    raise HandValidationError(f"links[{self.links[i].name}].parent: cycle in chain")
                seen.add(j)
                j = self.links[j].parent
        roots = [i for i, l in enumerate(self.links) if l.parent < 0]
        if len(roots) != 1:
            raise HandValidationError(f"links: expected exactly one root, found {len(roots)}")
        for link in self.links:
            if link.parent < 0:
                continue
            if link.axis is None:
                raise HandValidationError(f"links[{link.name}].joint: missing joint")
            if abs(np.linalg.norm(link.axis) - 1.0) > 1e-6:
                raise HandValidationError(f"links[{link.name}].joint.axis: not a unit vector")
            if link.lower > link.upper:
                raise HandValidationError(
                    f"links[{link.name}].joint: lower limit {link.lower} exceeds upper {link.upper}")
            if link.open_at not in ("lower", "upper"):
                raise HandValidationError(f"links[{link.name}].joint.open_at: must be lower|upper")
        children = {l.parent for l in self.links}
        for i, link in enumerate(self.links):
            if i not in children and len(link.points) < 1:
                raise HandValidationError(f"links[{link.name}].points: fingertip link has no surface points")
        if not 0 <= self.palm_link < n:
            raise HandValidationError("palm.link: unknown link")
        if np.linalg.norm(self.palm_normal) < 1e-9:
            raise HandValidationError("palm.normal: zero vector")

    def _index(self):
        links = self.links
        root = next(i for i, l in enumerate(links) if l.parent < 0)
        self.root = root
        self.joint_links = [i for i, l in enumerate(links) if l.parent >= 0]
        self.joint_of_link = {l: j for j, l in enumerate(self.joint_links)}
        depth = {root: 0}

        def d(i):
            if i not in depth:
                depth[i] = d(links[i].parent) + 1
            return depth[i]

        for i in range(len(links)):
            d(i)
        self.depth = depth
        self.levels = []
        for lev in range(1, max(depth.values()) + 1):
            self.levels.append([i for i in range(len(links)) if depth[i] == lev])
        self.lower = np.array([links[i].lower for i in self.joint_links])
        self.upper = np.array([links[i].upper for i in self.joint_links])
        self.open_q = np.array([links[i].lower if links[i].open_at == "lower" else links[i].upper
                                for i in self.joint_links])
        pts, owner = [], []
        for i, l in enumerate(links):
            pts.append(np.asarray(l.points, float).reshape(-1, 3))
            owner += [i] * len(l.points)
        self.points_local = np.concatenate(pts) if pts else np.zeros((0, 3))
        self.point_link = np.array(owner, dtype=np.int64)
        children = {l.parent for l in links}
        self.fingertips = [i for i in range(len(links)) if i not in children]
        pairs = set()
        for i, l in enumerate(links):
            if l.parent >= 0:
                pairs.add((min(i, l.parent), max(i, l.parent)))
        self.neighbor_pairs = frozenset(pairs | set(self.neighbors))
        self.palm_normal = np.asarray(self.palm_normal, float) / np.linalg.norm(self.palm_normal)

    # --------------------------------------------------------------- queries
    @property
    def n_joints(self) -> int:
        return len(self.joint_links)

    @property
    def n_points(self) -> int:
        return len(self.points_local)

    def link_index(self, name: str) -> int:
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise KeyError(name)

    def collision_pairs(self) -> list[tuple[int, int]]:
        """Ordered (points of a, primitives of b) pairs that are not neighbors."""
        out = []
        n = len(self.links)
        for a in range(n):
            for b in range(n):
                if a == b or (min(a, b), max(a, b)) in self.neighbor_pairs:
                    continue
                if len(self.links[a].points) and self.links[b].primitives:
                    out.append((a, b))
        return out

    def midrange(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


# ---------------------------------------------------------------------- pose

@dataclass
class HandPose:
    position: np.ndarray
    quaternion: np.ndarray  # (w, x, y, z)
    joints: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, float).reshape(3)
        q = np.asarray(self.quaternion, float).reshape(4)
        self.quaternion = q / np.linalg.norm(q)
        self.joints = np.asarray(self.joints, float).reshape(-1)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    def rotated(self, increment) -> "HandPose":
        """Compose a body-frame rotation-vector increment onto the base."""
        r = Rotation.from_matrix(self.rotation) * Rotation.from_rotvec(np.asarray(increment, float))
        return HandPose(self.position, matrix_to_quat(r.as_matrix()), self.joints)

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "quaternion": self.quaternion.tolist(),
                "joints": self.joints.tolist()}

    @classmethod
    def from_dict(cls, d) -> "HandPose":
        return cls(d["position"], d["quaternion"], d["joints"])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def matrix_to_quat(R) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    return q if w >= 0 else -q


# ---------------------------------------------------------------------- FK

@dataclass
class Kinematics:
    points: object  # (N, 3) world surface points
    rotations: object  # (L, 3, 3) link frames
    translations: object  # (L, 3)


def forward_kinematics(model: HandModel, position, rotation, joints, increment=None) -> Kinematics:
    """World surface points and link frames.

    ``position``, ``joints`` and ``increment`` may be tape variables;
    ``rotation`` is the (constant) base orientation and ``increment`` a
    body-frame rotation vector composed onto it.
    """
    if np.shape(dc._val(joints)) != (model.n_joints,):
        raise dc.UsageError(f"expected {model.n_joints} joint angles, got {np.shape(dc._val(joints))}")
    R_base = np.asarray(rotation, float)
    if increment is not None:
        R_base = R_base @ dc.rotvec_to_matrix(increment)
    links = model.links
    # per-joint rotations A_j = I + sin q K + (1 - cos q) K^2
    K = np.stack([_skew(links[i].axis) for i in model.joint_links] or [np.zeros((3, 3))])[:model.n_joints]
    K2 = K @ K
    s = dc.sin(joints)
    c = 1.0 - dc.cos(joints)
    A = np.eye(3) + dc.expand_dims(dc.expand_dims(s, -1), -1) * K + dc.expand_dims(dc.expand_dims(c, -1), -1) * K2

    root = model.root
    lev_R = [dc.expand_dims(R_base @ links[root].rotation, 0)]
    lev_t = [dc.expand_dims(position + R_base @ links[root].translation, 0)]
    pos_in_level = {root: (0, 0)}
    for lev, members in enumerate(model.levels, start=1):
        prev = lev - 1
        pidx = [pos_in_level[links[i].parent][1] for i in members]
        F = np.stack([links[i].rotation for i in members])
        f = np.stack([links[i].translation for i in members])
        Rp = dc.take(lev_R[prev], pidx)
        tp = dc.take(lev_t[prev], pidx)
        Aj = dc.take(A, [model.joint_of_link[i] for i in members])
        lev_R.append(Rp @ (F @ Aj))
        lev_t.append(tp + dc.swapaxes(Rp @ f[:, :, None], -1, -2)[:, 0, :])
        for k, i in enumerate(members):
            pos_in_level[i] = (lev, k)
    R_all = dc.concatenate(lev_R, 0)
    t_all = dc.concatenate(lev_t, 0)
    order = []
    for lev, members in enumerate([[root]] + model.levels):
        order += members
    perm = np.argsort(order)  # link index -> row in the concatenated arrays
    R_links = dc.take(R_all, perm)
    t_links = dc.take(t_all, perm)
    Rp = dc.take(R_links, model.point_link)
    tp = dc.take(t_links, model.point_link)
    pts = dc.swapaxes(Rp @ model.points_local[:, :, None], -1, -2)[:, 0, :] + tp
    return Kinematics(pts, R_links, t_links)


def pose_kinematics(model: HandModel, pose: HandPose) -> Kinematics:
    return forward_kinematics(model, pose.position, pose.rotation, pose.joints)


def _skew(w):
    return np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]], float)


def joint_losses(model: HandModel, joints):
    """(L_qrange, L_qlimit) for joint angles (array or tape variable)."""
    qrange = dc.norm(joints - model.midrange())
    qlimit = dc.vsum(dc.relu(joints - model.upper) + dc.relu(model.lower - joints))
    return qrange, qlimit


def palm_frame(model: HandModel, kin: Kinematics):
    """World palm center and outward palm normal (numpy)."""
    R = dc._val(kin.rotations)[model.palm_link]
    t = dc._val(kin.translations)[model.palm_link]
    return R @ model.palm_center + t, R @ model.palm_normal


# -------------------------------------------------------------------- loading

def _primitive_from_dict(d) -> PlacedPrimitive:
    kind = d.get("type")
    if kind == "sphere":
        shape = Sphere(float(d["radius"]))
    elif kind == "capsule":
        shape = Capsule(float(d["radius"]), float(d["half_length"]))
    elif kind == "box":
        shape = Box(tuple(d["half_extents"]))
    else:
        raise HandValidationError(f"primitive type {kind!r} is not sphere|capsule|box")
    return PlacedPrimitive(shape, rpy_matrix(d.get("rpy", [0, 0, 0])), np.asarray(d.get("xyz", [0, 0, 0]), float))


def hand_from_dict(data: dict) -> HandModel:
    try:
        raw = data["links"]
    except KeyError as exc:
        raise HandValidationError("links: missing") from exc
    names = [l.get("name") for l in raw]
    if len(set(names)) != len(names):
        raise HandValidationError("links: duplicate link names")
    index = {n: i for i, n in enumerate(names)}
    links = []
    for l in raw:
        parent = l.get("parent")
        if parent is not None and parent not in index:
            raise HandValidationError(f"links[{l['name']}].parent: unknown link {parent!r}")
        origin = l.get("origin", {})
        joint = l.get("joint")
        axis = None
        lower = upper = 0.0
        open_at = "lower"
        if joint is not None:
            axis = np.asarray(joint["axis"], float)
            lower, upper = float(joint["lower"]), float(joint["upper"])
            open_at = joint.get("open_at", "lower")
        try:
            prims = [_primitive_from_dict(p) for p in l.get("primitives", [])]
        except Exception as exc:
            raise HandValidationError(f"links[{l['name']}].primitives: {exc}") from exc
        links.append(Link(
            name=l["name"], parent=-1 if parent is None else index[parent],
            rotation=rpy_matrix(origin.get("rpy", [0, 0, 0])),
            translation=np.asarray(origin.get("xyz", [0, 0, 0]), float),
            points=np.asarray(l.get("points", []), float).reshape(-1, 3),
            primitives=prims, axis=axis, lower=lower, upper=upper, open_at=open_at))
    palm = data.get("palm")
    if not palm or "link" not in palm or palm["link"] not in index:
        raise HandValidationError("palm: missing or unknown palm link")
    for key in ("center", "normal"):
        if np.shape(palm.get(key)) != (3,):
            raise HandValidationError(f"palm.{key}: expected a 3-vector")
    neighbors = set()
    for a, b in data.get("neighbors", []):
        if a not in index or b not in index:
            raise HandValidationError(f"neighbors: unknown link in pair ({a}, {b})")
        neighbors.add((min(index[a], index[b]), max(index[a], index[b])))
    return HandModel(data.get("name", "hand"), links, index[palm["link"]],
                     np.asarray(palm["center"], float), np.asarray(palm["normal"], float),
                     frozenset(neighbors))


def load_hand(path_or_name) -> HandModel:
    """Load a hand description file, or a bundled hand by name."""
    path = Path(path_or_name)
    if str(path_or_name) in BUNDLED and not path.exists():
        path = ASSET_DIR / f"{path_or_name}.json"
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise HandValidationError(f"{path}: invalid JSON ({exc})") from exc
    return hand_from_dict(data)
