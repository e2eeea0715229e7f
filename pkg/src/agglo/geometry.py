"""Planar geometry on pixel sets: convex hulls, enclosing circles, calipers.

Pixel ``(row, col)`` is the unit square centred on ``(x, y) = (col, row)``.
"""
from __future__ import annotations

import math

import numpy as np

_EPS = 1e-9


def pixel_corner_points(pixels: np.ndarray) -> np.ndarray:
    """Corner points sufficient for the hull of the union of pixel squares.

    Only the leftmost and rightmost pixel of each row contribute; interior
    corners are convex combinations of these.
    """
    rows = pixels[:, 0]
    cols = pixels[:, 1]
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
    ends = np.r_[starts[1:], len(rows)] - 1
    r = rows[starts].astype(float)
    cmin = cols[starts].astype(float) - 0.5
    cmax = cols[ends].astype(float) + 0.5
    xs = np.concatenate([cmin, cmin, cmax, cmax])
    ys = np.concatenate([r - 0.5, r + 0.5, r - 0.5, r + 0.5])
    return np.column_stack([xs, ys])


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns CCW vertices without repetition."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def polygon_area(hull: np.ndarray) -> float:
    x, y = hull[:, 0], hull[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def count_lattice_points(hull: np.ndarray) -> int:
    """Number of integer points inside or on a convex polygon."""
    ys = hull[:, 1]
    r_lo = math.ceil(ys.min() - _EPS)
    r_hi = math.floor(ys.max() + _EPS)
    rows = np.arange(r_lo, r_hi + 1, dtype=float)
    left = np.full(len(rows), np.inf)
    right = np.full(len(rows), -np.inf)
    n = len(hull)
    for i in range(n):
        (x1, y1), (x2, y2) = hull[i], hull[(i + 1) % n]
        lo, hi = min(y1, y2), max(y1, y2)
        sel = (rows >= lo - _EPS) & (rows <= hi + _EPS)
        if not sel.any():
            continue
        if abs(y2 - y1) < _EPS:
            xa = np.full(sel.sum(), min(x1, x2))
            xb = np.full(sel.sum(), max(x1, x2))
        else:
            t = (rows[sel] - y1) / (y2 - y1)
            xa = xb = x1 + t * (x2 - x1)
        left[sel] = np.minimum(left[sel], xa)
        right[sel] = np.maximum(right[sel], xb)
    ok = np.isfinite(left)
    counts = np.floor(right[ok] + _EPS) - np.ceil(left[ok] - _EPS) + 1
    return int(np.clip(counts, 0, None).sum())


def _circle_two(a, b):
    c = (a + b) / 2.0
    return c, float(np.hypot(*(a - c)))


def _circle_three(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) < 1e-14:
        # collinear: widest pair
        pairs = [(a, b), (a, c), (b, c)]
        return max((_circle_two(p, q) for p, q in pairs), key=lambda t: t[1])
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    center = np.array([ux, uy])
    return center, float(np.hypot(*(a - center)))


def min_enclosing_circle(points: np.ndarray, seed: int = 0) -> tuple[np.ndarray, float]:
    """Exact smallest enclosing circle (randomized incremental, Welzl style).

    The shuffle uses a fixed seed so the result is deterministic. Callers
    should pass hull vertices; the circle of a set equals that of its hull.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) == 1:
        return pts[0].copy(), 0.0
    pts = pts[np.random.default_rng(seed).permutation(len(pts))]
    scale = max(1.0, float(np.abs(pts).max()))
    tol = 1e-10 * scale

    def inside(c, r, p):
        return math.hypot(p[0] - c[0], p[1] - c[1]) <= r + tol

    c, r = pts[0].copy(), 0.0
    for i in range(1, len(pts)):
        if inside(c, r, pts[i]):
            continue
        c, r = pts[i].copy(), 0.0
        for j in range(i):
            if inside(c, r, pts[j]):
                continue
            c, r = _circle_two(pts[i], pts[j])
            for k in range(j):
                if not inside(c, r, pts[k]):
                    c, r = _circle_three(pts[i], pts[j], pts[k])
    return c, r


def max_pairwise_distance(points: np.ndarray) -> float:
    """Diameter of a point set; on hull vertices this is the largest Feret width."""
    p = np.asarray(points, dtype=float)
    if len(p) < 2:
        return 0.0
    diff = p[:, None, :] - p[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())
