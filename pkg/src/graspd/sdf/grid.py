"""Discretized signed-distance grid with a clamped exterior extension."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import diffcore as dc
from ._kernels import trilinear

MAGIC = b"GSDF"
VERSION = 1
DEFAULT_DIMS = 256
DEFAULT_PADDING = 0.01


class GridFormatError(ValueError):
    pass


@dataclass(eq=False)
class SdfGrid:
    """Node values ``values[i, j, k]`` at ``lo + (i, j, k) * spacing``.

    ``rotation``/``translation`` map object-local points to world points.
    """

    values: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise GridFormatError(f"grid needs at least 2 nodes per axis, got {self.values.shape}")
        if not np.all(self.hi > self.lo):
            raise GridFormatError("grid bounds are empty")
        if not np.all(np.isfinite(self.values)):
            raise GridFormatError("grid values must be finite")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.array(self.dims) - 1)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def with_pose(self, rotation, translation) -> "SdfGrid":
        return SdfGrid(self.values, self.lo, self.hi, rotation, translation)

    def node_positions(self) -> np.ndarray:
        axes = [np.linspace(self.lo[a], self.hi[a], self.dims[a]) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def to_local(self, x) -> np.ndarray:
        return (np.asarray(x, float) - self.translation) @ self.rotation

    # -- plain numpy evaluation -------------------------------------------------

    def evaluate(self, x, want_hess=False):
        """(phi, world gradient, world Hessian) for world points of shape (..., 3)."""
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        phi, g, h = trilinear(self.values, self.lo, self.spacing, self.to_local(x).reshape(-1, 3), want_hess)
        R = self.rotation
        g = g @ R.T
        phi = phi.reshape(lead)
        g = g.reshape(lead + (3,))
        if want_hess:
            h = (R @ h @ R.T).reshape(lead + (3, 3))
            return phi, g, h
        return phi, g

    def query(self, x):
        """Signed distance at world point(s) ``x``."""
        phi = self.evaluate(x)[0]
        return float(phi) if np.ndim(phi) == 0 else phi

    def grad(self, x):
        return self.evaluate(x)[1]

    def effective_distance(self, x, offset: float = 0.0):
        """Distance to the ``offset`` level set; negative means penetration."""
        if offset < 0:
            raise ValueError("level-set offset must be nonnegative")
        return self.query(x) - offset

    # -- tape evaluation ------------------------------------------------------------

    def evaluate_var(self, x, pose=None):
        """Differentiable (phi, grad) for world points ``x`` (Var or array, (N, 3)).

        ``pose`` optionally overrides the grid pose with ``(R, t)`` that may
        themselves be tape variables.
        """
        if pose is None:
            R, t = self.rotation, self.translation
        else:
            R, t = pose
        moving = isinstance(R, dc.Var) or isinstance(t, dc.Var)
        identity = not moving and np.array_equal(R, np.eye(3)) and not np.any(t)
        local = x if identity else (x - t) @ R
        phi, g = _local_query(self, local)
        if not identity:
            g = g @ dc.swapaxes(R, -1, -2) if isinstance(R, dc.Var) else g @ np.asarray(R).T
        return phi, g


def _local_query(grid: SdfGrid, x):
    xv = dc._val(x)
    phi, g, h = trilinear(grid.values, grid.lo, grid.spacing, xv, want_hess=isinstance(x, dc.Var))
    if not isinstance(x, dc.Var):
        return phi, g
    tape = x.tape
    phi_var = tape.record(phi, (x,), lambda gp: (gp[:, None] * g,))
    grad_var = tape.record(g, (x,), lambda gg: (np.einsum("nij,nj->ni", h, gg),))
    return phi_var, grad_var


def grid_from_function(fn, lo, hi, dims=64) -> SdfGrid:
    """Sample ``fn`` (vectorized over (..., 3) points) on a regular grid."""
    dims = (dims,) * 3 if np.isscalar(dims) else tuple(dims)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    axes = [np.linspace(lo[a], hi[a], dims[a]) for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return SdfGrid(fn(pts), lo, hi)


def save_grid(grid: SdfGrid, path) -> None:
    nx, ny, nz = grid.dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<3I", nx, ny, nz))
        fh.write(struct.pack("<6d", *grid.lo, *grid.hi))
        fh.write(np.asarray(grid.values, "<f8").ravel(order="F").tobytes())


def load_grid(path) -> SdfGrid:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise GridFormatError(f"{path}: not a GSDF file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise GridFormatError(f"{path}: unsupported GSDF version {version}")
    dims = struct.unpack_from("<3I", data, 8)
    bounds = struct.unpack_from("<6d", data, 20)
    n = dims[0] * dims[1] * dims[2]
    body = data[68:]
    if len(body) != 8 * n:
        raise GridFormatError(f"{path}: expected {n} values, found {len(body) // 8}")
    values = np.frombuffer(body, "<f8").reshape(dims, order="F")
    return SdfGrid(values.astype(float), bounds[:3], bounds[3:])
