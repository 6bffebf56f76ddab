"""Trilinear SDF evaluation kernels (numba loop + numpy fallback).

Both paths return the value, the exact gradient of the clamped-extension
interpolant and its Hessian for points given in grid-local coordinates.
"""
import math

import numpy as np

from .._accel import USE_NUMBA, njit


# cell coordinates this close to an integer are treated as lying on the node,
# so queries at node positions return the stored value exactly
SNAP = 8 * np.finfo(float).eps


@njit(inline="always")
def _snap(u):
    r = round(u)
    return r if abs(u - r) <= SNAP * max(1.0, r) else u


@njit
def _trilinear_numba(values, lo, spacing, pts, want_hess):
    n = pts.shape[0]
    nx, ny, nz = values.shape
    dims = (nx, ny, nz)
    phi = np.empty(n)
    grad = np.zeros((n, 3))
    hess = np.zeros((n, 3, 3)) if want_hess else np.zeros((1, 3, 3))
    idx = np.empty(3, np.int64)
    frac = np.empty(3)
    delta = np.empty(3)
    clamped = np.zeros(3, np.bool_)
    for p in range(n):
        for a in range(3):
            hi = lo[a] + spacing[a] * (dims[a] - 1)
            x = pts[p, a]
            xc = min(max(x, lo[a]), hi)
            delta[a] = x - xc
            clamped[a] = x != xc
            u = _snap((xc - lo[a]) / spacing[a])
            i = int(math.ceil(u)) - 1
            if i < 0:
                i = 0
            if i > dims[a] - 2:
                i = dims[a] - 2
            idx[a] = i
            frac[a] = u - i
        i, j, k = idx[0], idx[1], idx[2]
        fx, fy, fz = frac[0], frac[1], frac[2]
        c000 = values[i, j, k]
        c100 = values[i + 1, j, k]
        c010 = values[i, j + 1, k]
        c110 = values[i + 1, j + 1, k]
        c001 = values[i, j, k + 1]
        c101 = values[i + 1, j, k + 1]
        c011 = values[i, j + 1, k + 1]
        c111 = values[i + 1, j + 1, k + 1]
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        val = (gx * gy * gz * c000 + fx * gy * gz * c100 + gx * fy * gz * c010 + fx * fy * gz * c110
               + gx * gy * fz * c001 + fx * gy * fz * c101 + gx * fy * fz * c011 + fx * fy * fz * c111)
        dx = (gy * gz * (c100 - c000) + fy * gz * (c110 - c010)
              + gy * fz * (c101 - c001) + fy * fz * (c111 - c011)) / spacing[0]
        dy = (gx * gz * (c010 - c000) + fx * gz * (c110 - c100)
              + gx * fz * (c011 - c001) + fx * fz * (c111 - c101)) / spacing[1]
        dz = (gx * gy * (c001 - c000) + fx * gy * (c101 - c100)
              + gx * fy * (c011 - c010) + fx * fy * (c111 - c110)) / spacing[2]
        dist = math.sqrt(delta[0] ** 2 + delta[1] ** 2 + delta[2] ** 2)
        phi[p] = val + dist
        d = (dx, dy, dz)
        for a in range(3):
            if clamped[a]:
                grad[p, a] = delta[a] / dist if dist > 1e-300 else 0.0
            else:
                grad[p, a] = d[a]
        if want_hess:
            hxy = (gz * (c110 - c100 - c010 + c000) + fz * (c111 - c101 - c011 + c001)) / (spacing[0] * spacing[1])
            hxz = (gy * (c101 - c100 - c001 + c000) + fy * (c111 - c110 - c011 + c010)) / (spacing[0] * spacing[2])
            hyz = (gx * (c011 - c010 - c001 + c000) + fx * (c111 - c110 - c101 + c100)) / (spacing[1] * spacing[2])
            if not clamped[0] and not clamped[1]:
                hess[p, 0, 1] = hxy
                hess[p, 1, 0] = hxy
            if not clamped[0] and not clamped[2]:
                hess[p, 0, 2] = hxz
                hess[p, 2, 0] = hxz
            if not clamped[1] and not clamped[2]:
                hess[p, 1, 2] = hyz
                hess[p, 2, 1] = hyz
            if dist > 1e-300:
                for a in range(3):
                    if not clamped[a]:
                        continue
                    for b in range(3):
                        if not clamped[b]:
                            continue
                        e = (1.0 if a == b else 0.0) - delta[a] * delta[b] / (dist * dist)
                        hess[p, a, b] += e / dist
    return phi, grad, hess


def _trilinear_numpy(values, lo, spacing, pts, want_hess):
    dims = np.array(values.shape)
    hi = lo + spacing * (dims - 1)
    xc = np.clip(pts, lo, hi)
    delta = pts - xc
    clamped = pts != xc
    u = (xc - lo) / spacing
    r = np.round(u)
    u = np.where(np.abs(u - r) <= SNAP * np.maximum(1.0, r), r, u)
    idx = np.clip(np.ceil(u).astype(np.int64) - 1, 0, dims - 2)
    f = u - idx
    g = 1.0 - f
    i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
    c = {}
    for a in (0, 1):
        for b in (0, 1):
            for e in (0, 1):
                c[a, b, e] = values[i + a, j + b, k + e]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    gx, gy, gz = g[:, 0], g[:, 1], g[:, 2]
    wx = (gx, fx)
    wy = (gy, fy)
    wz = (gz, fz)
    val = sum(wx[a] * wy[b] * wz[e] * c[a, b, e] for a in (0, 1) for b in (0, 1) for e in (0, 1))
    dx = sum(wy[b] * wz[e] * (c[1, b, e] - c[0, b, e]) for b in (0, 1) for e in (0, 1)) / spacing[0]
    dy = sum(wx[a] * wz[e] * (c[a, 1, e] - c[a, 0, e]) for a in (0, 1) for e in (0, 1)) / spacing[1]
    dz = sum(wx[a] * wy[b] * (c[a, b, 1] - c[a, b, 0]) for a in (0, 1) for b in (0, 1)) / spacing[2]
    dist = np.sqrt(np.sum(delta * delta, axis=1))
    safe = np.where(dist > 1e-300, dist, 1.0)
    unit = np.where((dist > 1e-300)[:, None], delta / safe[:, None], 0.0)
    interp = np.stack([dx, dy, dz], axis=1)
    grad = np.where(clamped, unit, interp)
    hess = np.zeros((len(pts), 3, 3)) if want_hess else np.zeros((1, 3, 3))
    if want_hess:
        hxy = (gz * (c[1, 1, 0] - c[1, 0, 0] - c[0, 1, 0] + c[0, 0, 0])
               + fz * (c[1, 1, 1] - c[1, 0, 1] - c[0, 1, 1] + c[0, 0, 1])) / (spacing[0] * spacing[1])
        hxz = (gy * (c[1, 0, 1] - c[1, 0, 0] - c[0, 0, 1] + c[0, 0, 0])
               + fy * (c[1, 1, 1] - c[1, 1, 0] - c[0, 1, 1] + c[0, 1, 0])) / (spacing[0] * spacing[2])
        hyz = (gx * (c[0, 1, 1] - c[0, 1, 0] - c[0, 0, 1] + c[0, 0, 0])
               + fx * (c[1, 1, 1] - c[1, 1, 0] - c[1, 0, 1] + c[1, 0, 0])) / (spacing[1] * spacing[2])
        free = ~clamped
        for (a, b, h) in ((0, 1, hxy), (0, 2, hxz), (1, 2, hyz)):
            m = free[:, a] & free[:, b]
            hess[:, a, b] = np.where(m, h, 0.0)
            hess[:, b, a] = hess[:, a, b]
        proj = (np.eye(3)[None] - unit[:, :, None] * unit[:, None, :]) / safe[:, None, None]
        mask = clamped[:, :, None] & clamped[:, None, :] & (dist > 1e-300)[:, None, None]
        hess += np.where(mask, proj, 0.0)
    return val + dist, grad, hess


def trilinear(values, lo, spacing, pts, want_hess=False, use_numba=None):
    """Evaluate (phi, grad, hess) at local points ``pts`` of shape (N, 3)."""
    pts = np.ascontiguousarray(pts, dtype=float).reshape(-1, 3)
    if use_numba is None:
        use_numba = USE_NUMBA
    fn = _trilinear_numba if use_numba else _trilinear_numpy
    return fn(values, np.asarray(lo, float), np.asarray(spacing, float), pts, bool(want_hess))


@njit(inline="always")
def _axis(x, lo, h, n):
    hi = lo + h * (n - 1)
    xc = min(max(x, lo), hi)
    u = _snap((xc - lo) / h)
    i = min(max(int(math.ceil(u)) - 1, 0), n - 2)
    return i, u - i, x - xc


@njit
def trilinear_point(values, lo, spacing, x, y, z):
    """Scalar (phi, gx, gy, gz) for one local point; same rules as the batched kernels."""
    nx, ny, nz = values.shape
    i, fx, ex = _axis(x, lo[0], spacing[0], nx)
    j, fy, ey = _axis(y, lo[1], spacing[1], ny)
    k, fz, ez = _axis(z, lo[2], spacing[2], nz)
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    c000 = values[i, j, k]
    c100 = values[i + 1, j, k]
    c010 = values[i, j + 1, k]
    c110 = values[i + 1, j + 1, k]
    c001 = values[i, j, k + 1]
    c101 = values[i + 1, j, k + 1]
    c011 = values[i, j + 1, k + 1]
    c111 = values[i + 1, j + 1, k + 1]
    val = (gx * gy * gz * c000 + fx * gy * gz * c100 + gx * fy * gz * c010 + fx * fy * gz * c110
           + gx * gy * fz * c001 + fx * gy * fz * c101 + gx * fy * fz * c011 + fx * fy * fz * c111)
    d0 = (gy * gz * (c100 - c000) + fy * gz * (c110 - c010)
          + gy * fz * (c101 - c001) + fy * fz * (c111 - c011)) / spacing[0]
    d1 = (gx * gz * (c010 - c000) + fx * gz * (c110 - c100)
          + gx * fz * (c011 - c001) + fx * fz * (c111 - c101)) / spacing[1]
    d2 = (gx * gy * (c001 - c000) + fx * gy * (c101 - c100)
          + gx * fy * (c011 - c010) + fx * fy * (c111 - c110)) / spacing[2]
    dist = math.sqrt(ex * ex + ey * ey + ez * ez)
    if dist > 0.0:
        if ex != 0.0:
            d0 = ex / dist
        if ey != 0.0:
            d1 = ey / dist
        if ez != 0.0:
            d2 = ez / dist
    return val + dist, d0, d1, d2
