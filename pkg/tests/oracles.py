"""Slow, independent reference implementations used by the tests."""
import numpy as np


def closest_point_on_triangle(p, a, b, c):
    """Closest point on triangle abc to p (Voronoi-region case analysis)."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return a
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        return a + d1 / (d1 - d3) * ab
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        return a + d2 / (d2 - d6) * ac
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b)
    denom = 1.0 / (va + vb + vc)
    return a + ab * (vb * denom) + ac * (vc * denom)


def ray_hits(origin, direction, a, b, c, eps=1e-12):
    """Moller-Trumbore: does the ray origin + t*direction (t > 0) cross triangle abc."""
    e1, e2 = b - a, c - a
    h = np.cross(direction, e2)
    det = e1 @ h
    if abs(det) < eps:
        return False
    f = 1.0 / det
    s = origin - a
    u = f * (s @ h)
    if u < 0 or u > 1:
        return False
    q = np.cross(s, e1)
    v = f * (direction @ q)
    if v < 0 or u + v > 1:
        return False
    return f * (e2 @ q) > eps


RAY = np.array([0.5477, 0.4472, 0.7071])
RAY = RAY / np.linalg.norm(RAY)


def brute_force_sdf(points, tris):
    """Unsigned point-triangle distance with odd ray parity meaning free space (+)."""
    out = np.empty(len(points))
    for n, p in enumerate(points):
        d = min(np.linalg.norm(p - closest_point_on_triangle(p, *t)) for t in tris)
        hits = sum(ray_hits(p, RAY, *t) for t in tris)
        out[n] = d if hits % 2 == 1 else -d
    return out


def box_shell_sdf(points, lo, hi):
    """Signed distance to an axis-aligned room shell: + inside the room, - outside."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    inside = np.all((points > lo) & (points < hi), axis=1)
    d_in = np.minimum(points - lo, hi - points).min(axis=1)
    q = np.maximum(np.maximum(lo - points, points - hi), 0.0)
    d_out = np.linalg.norm(q, axis=1)
    return np.where(inside, d_in, -d_out)
