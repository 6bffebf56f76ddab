"""Independent reference computations used by the tests."""
import numpy as np
from scipy.spatial import ConvexHull, QhullError


def pyramid_wrenches(points, normals, mu, com, rho=1.0, edges=8):
    """Grasp wrench generators built directly from the friction pyramid definition."""
    out = []
    for p, n in zip(points, normals):
        n = np.asarray(n, float) / np.linalg.norm(n)
        # any orthonormal tangent pair spans the same pyramid up to a rotation about n
        u, s, vt = np.linalg.svd(n[None])
        t1, t2 = vt[1], vt[2]
        for k in range(edges):
            th = 2 * np.pi * k / edges
            f = n + mu * (np.cos(th) * t1 + np.sin(th) * t2)
            out.append(np.concatenate([f, np.cross(np.asarray(p) - com, f) / rho]))
    return np.array(out)


def epsilon_qhull(W):
    """Exact radius of the largest origin ball inside conv(W); 0 when flat or not enclosing."""
    if len(W) == 0 or np.linalg.matrix_rank(W - W.mean(0), tol=1e-9) < W.shape[1]:
        return 0.0
    try:
        hull = ConvexHull(W)
    except QhullError:
        return 0.0
    # facets satisfy a.x + b <= 0 inside, |a| = 1
    eps = float(np.min(-hull.equations[:, -1]))
    # qhull reports ~1e-16 when the origin lies on a facet
    return eps if eps > 1e-12 else 0.0


def epsilon_dense(W, n=100_000, seed=0):
    """Support-function minimum over ``n`` random unit directions (no refinement)."""
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(n, W.shape[1]))
    D /= np.linalg.norm(D, axis=1)[:, None]
    h = np.empty(n)
    for s in range(0, n, 20_000):
        h[s:s + 20_000] = np.max(D[s:s + 20_000] @ W.T, axis=1)
    return max(0.0, float(h.min()))
