"""Closed-form signed distance functions (sphere, box, capsule).

Every primitive is centered at its own origin; capsules run along local z.
``evaluate`` works on numpy arrays, ``evaluate_var`` records the same
formula on a tape (value and gradient both differentiable).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc


class PrimitiveError(ValueError):
    pass


def _check_positive(**params):
    for name, v in params.items():
        if np.any(np.asarray(v) <= 0):
            raise PrimitiveError(f"{name} must be positive, got {v}")


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        _check_positive(radius=self.radius)

    def evaluate(self, p):
        p = np.asarray(p, float)
        n = np.linalg.norm(p, axis=-1)
        safe = np.where(n > 0, n, 1.0)[..., None]
        g = np.where(n[..., None] > 0, p / safe, np.array([0.0, 0.0, 1.0]))
        return n - self.radius, g

    def evaluate_var(self, p):
        n = dc.rownorm(p)
        return n - self.radius, p / dc.maximum(n, 1e-12)[..., None]

    def query(self, p):
        return self.evaluate(p)[0]

    def grad(self, p):
        return self.evaluate(p)[1]

    def bounding_radius(self):
        return self.radius


@dataclass(frozen=True)
class Capsule:
    radius: float
    half_length: float

    def __post_init__(self):
        _check_positive(radius=self.radius, half_length=self.half_length)

    def _offset(self, p):
        p = np.asarray(p, float)
        q = p.copy()
        q[..., 2] -= np.clip(p[..., 2], -self.half_length, self.half_length)
        return q

    def evaluate(self, p):
        return Sphere(self.radius).evaluate(self._offset(p))

    def evaluate_var(self, p):
        z = dc.clip(p[..., 2], -self.half_length, self.half_length)
        zero = np.zeros(np.shape(dc._val(z)))
        q = p - dc.stack([zero, zero, z], -1)
        return Sphere(self.radius).evaluate_var(q)

    def query(self, p):
        return self.evaluate(p)[0]

    def grad(self, p):
        return self.evaluate(p)[1]

    def bounding_radius(self):
        return self.radius + self.half_length


@dataclass(frozen=True)
class Box:
    half_extents: tuple

    def __post_init__(self):
        object.__setattr__(self, "half_extents", tuple(float(h) for h in self.half_extents))
        if len(self.half_extents) != 3:
            raise PrimitiveError("box needs three half extents")
        _check_positive(half_extents=self.half_extents)

    def evaluate(self, p):
        p = np.asarray(p, float)
        h = np.array(self.half_extents)
        q = np.abs(p) - h
        outside = np.maximum(q, 0.0)
        on = np.linalg.norm(outside, axis=-1)
        inner = np.minimum(q.max(axis=-1), 0.0)
        phi = on + inner
        sgn = np.where(p >= 0, 1.0, -1.0)
        safe = np.where(on > 0, on, 1.0)[..., None]
        g_out = sgn * outside / safe
        g_in = sgn * (np.arange(3) == np.argmax(q, axis=-1)[..., None])
        g = np.where(on[..., None] > 0, g_out, g_in)
        return phi, g

    def evaluate_var(self, p):
        h = np.array(self.half_extents)
        pv = dc._val(p)
        sgn = np.where(pv >= 0, 1.0, -1.0)
        q = dc.absolute(p) - h
        outside = dc.relu(q)
        on = dc.rownorm(outside)
        phi = on + dc.minimum(dc.vmax(q, -1), 0.0)
        _, g = self.evaluate(pv)
        # inside the face normal is piecewise constant; outside it is the
        # normalized excess, differentiable away from edges
        on_v = dc._val(on)
        g_var = dc.where((on_v > 0)[..., None], outside * sgn / dc.maximum(on, 1e-12)[..., None], g)
        return phi, g_var

    def query(self, p):
        return self.evaluate(p)[0]

    def grad(self, p):
        return self.evaluate(p)[1]

    def bounding_radius(self):
        return float(np.linalg.norm(self.half_extents))


def analytic_primitive(kind: str, *params):
    kinds = {"sphere": Sphere, "capsule": Capsule, "box": Box}
    if kind not in kinds:
        raise PrimitiveError(f"unknown primitive {kind!r}")
    if kind == "box" and len(params) == 1:
        return Box(tuple(params[0]))
    if kind == "box":
        return Box(tuple(params))
    return kinds[kind](*params)
