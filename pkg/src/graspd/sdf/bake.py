"""Bake a watertight triangle mesh into an :class:`SdfGrid`.

Unsigned distance is exact: each node tests the triangles that can be
nearest anywhere in its cell of a coarse bucket grid.  The sign comes from crossing parity along
grid lines in x, y and z with a majority vote per node.
"""
from __future__ import annotations

import math

import numpy as np

from .._accel import USE_NUMBA, njit
from ..mesh import TriMesh
from .grid import DEFAULT_DIMS, DEFAULT_PADDING, SdfGrid

# sub-spacing shift of the parity lines keeps them off mesh vertices/edges
_LINE_JITTER = (0.000123456789, 0.000098765432)


class BakeError(ValueError):
    def __init__(self, message, nodes=None):
        super().__init__(message)
        self.nodes = np.zeros((0, 3), int) if nodes is None else nodes


# ------------------------------------------------------------- point-triangle

@njit
def _closest_sq(p, a, b, c):
    ab0, ab1, ab2 = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    ac0, ac1, ac2 = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    ap0, ap1, ap2 = p[0] - a[0], p[1] - a[1], p[2] - a[2]
    d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
    d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
    if d1 <= 0.0 and d2 <= 0.0:
        return ap0 * ap0 + ap1 * ap1 + ap2 * ap2
    bp0, bp1, bp2 = p[0] - b[0], p[1] - b[1], p[2] - b[2]
    d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
    d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
    if d3 >= 0.0 and d4 <= d3:
        return bp0 * bp0 + bp1 * bp1 + bp2 * bp2
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        q0, q1, q2 = ap0 - v * ab0, ap1 - v * ab1, ap2 - v * ab2
        return q0 * q0 + q1 * q1 + q2 * q2
    cp0, cp1, cp2 = p[0] - c[0], p[1] - c[1], p[2] - c[2]
    d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
    d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
    if d6 >= 0.0 and d5 <= d6:
        return cp0 * cp0 + cp1 * cp1 + cp2 * cp2
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        q0, q1, q2 = ap0 - w * ac0, ap1 - w * ac1, ap2 - w * ac2
        return q0 * q0 + q1 * q1 + q2 * q2
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        q0 = p[0] - (b[0] + w * (c[0] - b[0]))
        q1 = p[1] - (b[1] + w * (c[1] - b[1]))
        q2 = p[2] - (b[2] + w * (c[2] - b[2]))
        return q0 * q0 + q1 * q1 + q2 * q2
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    q0 = ap0 - ab0 * v - ac0 * w
    q1 = ap1 - ab1 * v - ac1 * w
    q2 = ap2 - ab2 * v - ac2 * w
    return q0 * q0 + q1 * q1 + q2 * q2


def _closest_sq_numpy(p, a, b, c):
    """Vectorized closest-point distance: p (N, 3) against triangles (T, 3)."""
    p = p[:, None, :]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = p - b
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = p - c
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v_in, w_in = vb * denom, vc * denom
        q = a + ab * v_in[..., None] + ac * w_in[..., None]
        v_ab = d1 / (d1 - d3)
        q = np.where(((vc <= 0) & (d1 >= 0) & (d3 <= 0))[..., None], a + v_ab[..., None] * ab, q)
        w_ac = d2 / (d2 - d6)
        q = np.where(((vb <= 0) & (d2 >= 0) & (d6 <= 0))[..., None], a + w_ac[..., None] * ac, q)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        q = np.where(((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0))[..., None], b + w_bc[..., None] * (c - b), q)
    # vertex regions take precedence, matching the scalar ordering
    q = np.where(((d6 >= 0) & (d5 <= d6))[..., None], np.broadcast_to(c, q.shape), q)
    q = np.where(((d3 >= 0) & (d4 <= d3))[..., None], np.broadcast_to(b, q.shape), q)
    q = np.where(((d1 <= 0) & (d2 <= 0))[..., None], np.broadcast_to(a, q.shape), q)
    return np.sum((p - q) ** 2, -1)


# ------------------------------------------------------------ unsigned dist

@njit
def _cell_candidates(tris, lo, cell, ncell):
    """Triangles that can be nearest to some point of each cell.

    With ``e`` the cell half-diagonal and ``c`` its center, a triangle at
    distance ``d_t(c)`` can only win inside the cell if
    ``d_t(c) <= min_t d_t(c) + 2e``.  Lists come sorted by ``d_t(c)``.
    """
    ncells = ncell[0] * ncell[1] * ncell[2]
    e = 0.5 * math.sqrt(cell[0] ** 2 + cell[1] ** 2 + cell[2] ** 2)
    ntri = tris.shape[0]
    dist = np.empty(ntri)
    start = np.zeros(ncells + 1, np.int64)
    cap = ncells * 8
    items = np.empty(cap, np.int64)
    keys = np.empty(cap)
    c = np.empty(3)
    for i in range(ncell[0]):
        for j in range(ncell[1]):
            for k in range(ncell[2]):
                c[0] = lo[0] + (i + 0.5) * cell[0]
                c[1] = lo[1] + (j + 0.5) * cell[1]
                c[2] = lo[2] + (k + 0.5) * cell[2]
                best = 1e300
                for t in range(ntri):
                    d = math.sqrt(_closest_sq(c, tris[t, 0], tris[t, 1], tris[t, 2]))
                    dist[t] = d
                    if d < best:
                        best = d
                q = (i * ncell[1] + j) * ncell[2] + k
                limit = best + 2.0 * e + 1e-12
                sel = np.nonzero(dist <= limit)[0]
                sel = sel[np.argsort(dist[sel])]
                s0 = start[q]
                if s0 + sel.size > cap:
                    cap = max(2 * cap, s0 + sel.size)
                    items2 = np.empty(cap, np.int64)
                    items2[:s0] = items[:s0]
                    keys2 = np.empty(cap)
                    keys2[:s0] = keys[:s0]
                    items, keys = items2, keys2
                for n in range(sel.size):
                    items[s0 + n] = sel[n]
                    keys[s0 + n] = dist[sel[n]]
                start[q + 1] = s0 + sel.size
    return start, items[:start[-1]].copy(), keys[:start[-1]].copy()


@njit
def _unsigned_numba(nodes, tris, lo, cell, ncell, start, items, keys):
    n = nodes.shape[0]
    out = np.empty(n)
    for p in range(n):
        x = nodes[p]
        ci = min(max(int((x[0] - lo[0]) / cell[0]), 0), ncell[0] - 1)
        cj = min(max(int((x[1] - lo[1]) / cell[1]), 0), ncell[1] - 1)
        ck = min(max(int((x[2] - lo[2]) / cell[2]), 0), ncell[2] - 1)
        q = (ci * ncell[1] + cj) * ncell[2] + ck
        # distance from the node to its cell center bounds d_t(x) from below
        r0 = x[0] - (lo[0] + (ci + 0.5) * cell[0])
        r1 = x[1] - (lo[1] + (cj + 0.5) * cell[1])
        r2 = x[2] - (lo[2] + (ck + 0.5) * cell[2])
        rc = math.sqrt(r0 * r0 + r1 * r1 + r2 * r2)
        best = 1e300
        for s in range(start[q], start[q + 1]):
            lb = keys[s] - rc
            if lb > 0.0 and lb * lb >= best:
                break
            t = items[s]
            d = _closest_sq(x, tris[t, 0], tris[t, 1], tris[t, 2])
            if d < best:
                best = d
        out[p] = math.sqrt(best)
    return out


def _unsigned_numpy(nodes, tris, chunk=2048):
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    out = np.empty(len(nodes))
    for s in range(0, len(nodes), chunk):
        out[s:s + chunk] = np.sqrt(_closest_sq_numpy(nodes[s:s + chunk], a, b, c).min(axis=1))
    return out


# --------------------------------------------------------------------- parity

@njit
def _line_hits_numba(tris, axis, u0, du, nu, v0, dv, nv):
    """Crossing coordinates of every (u, v) grid line parallel to ``axis``."""
    ua = (axis + 1) % 3
    va = (axis + 2) % 3
    counts = np.zeros(nu * nv, np.int64)
    for pass_ in range(2):
        if pass_ == 1:
            start = np.zeros(nu * nv + 1, np.int64)
            for q in range(nu * nv):
                start[q + 1] = start[q] + counts[q]
            hits = np.empty(start[-1])
            fill = start[:-1].copy()
        for t in range(tris.shape[0]):
            A = tris[t, 0]
            B = tris[t, 1]
            C = tris[t, 2]
            umin = min(A[ua], min(B[ua], C[ua]))
            umax = max(A[ua], max(B[ua], C[ua]))
            vmin = min(A[va], min(B[va], C[va]))
            vmax = max(A[va], max(B[va], C[va]))
            i0 = max(0, int(math.ceil((umin - u0) / du)))
            i1 = min(nu - 1, int(math.floor((umax - u0) / du)))
            j0 = max(0, int(math.ceil((vmin - v0) / dv)))
            j1 = min(nv - 1, int(math.floor((vmax - v0) / dv)))
            e1u, e1v = B[ua] - A[ua], B[va] - A[va]
            e2u, e2v = C[ua] - A[ua], C[va] - A[va]
            det = e1u * e2v - e1v * e2u
            if det == 0.0:
                continue
            for i in range(i0, i1 + 1):
                pu = u0 + i * du - A[ua]
                for j in range(j0, j1 + 1):
                    pv = v0 + j * dv - A[va]
                    s = (pu * e2v - pv * e2u) / det
                    r = (e1u * pv - e1v * pu) / det
                    if s < 0.0 or r < 0.0 or s + r > 1.0:
                        continue
                    q = i * nv + j
                    if pass_ == 0:
                        counts[q] += 1
                    else:
                        hits[fill[q]] = A[axis] + s * (B[axis] - A[axis]) + r * (C[axis] - A[axis])
                        fill[q] += 1
    return start, hits


def _line_hits_numpy(tris, axis, u0, du, nu, v0, dv, nv):
    ua, va = (axis + 1) % 3, (axis + 2) % 3
    per_line = [[] for _ in range(nu * nv)]
    for A, B, C in tris:
        us = np.array([A[ua], B[ua], C[ua]])
        vs = np.array([A[va], B[va], C[va]])
        i = np.arange(max(0, math.ceil((us.min() - u0) / du)), min(nu - 1, math.floor((us.max() - u0) / du)) + 1)
        j = np.arange(max(0, math.ceil((vs.min() - v0) / dv)), min(nv - 1, math.floor((vs.max() - v0) / dv)) + 1)
        if not len(i) or not len(j):
            continue
        e1u, e1v = B[ua] - A[ua], B[va] - A[va]
        e2u, e2v = C[ua] - A[ua], C[va] - A[va]
        det = e1u * e2v - e1v * e2u
        if det == 0.0:
            continue
        I, J = np.meshgrid(i, j, indexing="ij")
        pu = u0 + I * du - A[ua]
        pv = v0 + J * dv - A[va]
        s = (pu * e2v - pv * e2u) / det
        r = (e1u * pv - e1v * pu) / det
        ok = (s >= 0) & (r >= 0) & (s + r <= 1)
        x = A[axis] + s * (B[axis] - A[axis]) + r * (C[axis] - A[axis])
        for q, h in zip((I * nv + J)[ok], x[ok]):
            per_line[q].append(h)
    start = np.zeros(nu * nv + 1, np.int64)
    start[1:] = np.cumsum([len(l) for l in per_line])
    hits = np.array([h for l in per_line for h in l], dtype=float)
    return start, hits


def _axis_votes(tris, axes_coords, axis, use_numba):
    """Inside votes and odd-line flags for every node along one axis."""
    ua, va = (axis + 1) % 3, (axis + 2) % 3
    cu, cv = axes_coords[ua], axes_coords[va]
    du = cu[1] - cu[0]
    dv = cv[1] - cv[0]
    u0 = cu[0] + _LINE_JITTER[0] * du
    v0 = cv[0] + _LINE_JITTER[1] * dv
    fn = _line_hits_numba if use_numba else _line_hits_numpy
    start, hits = fn(tris, axis, u0, du, len(cu), v0, dv, len(cv))
    ca = axes_coords[axis]
    inside = np.zeros((len(cu), len(cv), len(ca)), bool)
    odd = np.zeros((len(cu), len(cv)), bool)
    for q in range(len(cu) * len(cv)):
        h = np.sort(hits[start[q]:start[q + 1]])
        i, j = divmod(q, len(cv))
        odd[i, j] = len(h) % 2 == 1
        if len(h):
            beyond = len(h) - np.searchsorted(h, ca, side="right")
            inside[i, j] = beyond % 2 == 1
    # reorder to (x, y, z) node indexing
    order = np.argsort([ua, va, axis])
    inside = np.transpose(inside, order)
    odd = np.broadcast_to(odd[:, :, None], (len(cu), len(cv), len(ca)))
    odd = np.transpose(odd, order)
    return inside, odd


def bake(mesh: TriMesh, dims=DEFAULT_DIMS, padding: float = DEFAULT_PADDING, use_numba=None) -> SdfGrid:
    """Signed distance grid over the mesh bounding box padded by ``padding``."""
    if use_numba is None:
        use_numba = USE_NUMBA
    dims = (int(dims),) * 3 if np.isscalar(dims) else tuple(int(d) for d in dims)
    if min(dims) < 2:
        raise ValueError(f"dims must be >= 2 per axis, got {dims}")
    if padding < 0:
        raise ValueError("padding must be nonnegative")
    vmin, vmax = mesh.bounds
    lo, hi = vmin - padding, vmax + padding
    axes = [np.linspace(lo[a], hi[a], dims[a]) for a in range(3)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    tris = np.ascontiguousarray(mesh.triangles())

    if use_numba:
        ncell = np.maximum(1, np.array(dims) // 6).astype(np.int64)
        cell = (hi - lo) / ncell
        start, items, keys = _cell_candidates(tris, lo, cell, ncell)
        dist = _unsigned_numba(nodes, tris, lo, cell, ncell, start, items, keys)
    else:
        dist = _unsigned_numpy(nodes, tris)
    dist = dist.reshape(dims)

    votes = np.zeros(dims, np.int64)
    odd = np.zeros(dims, np.int64)
    for axis in range(3):
        ins, o = _axis_votes(tris, axes, axis, use_numba)
        votes += ins
        odd += o
    bad = np.argwhere(odd >= 2)
    if len(bad):
        raise BakeError(
            f"mesh is not watertight: {len(bad)} nodes have inconsistent crossing parity "
            f"(first: {bad[:5].tolist()})", bad)
    sign = np.where(votes >= 2, -1.0, 1.0)
    return SdfGrid(sign * dist, lo, hi)
