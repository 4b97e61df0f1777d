"""Incremental Bowyer-Watson Delaunay triangulation in the plane."""
from __future__ import annotations

import numpy as np


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _in_circumcircle(a, b, c, p) -> bool:
    """True if ``p`` lies strictly inside the circumcircle of ccw triangle abc."""
    adx, ady = a[0] - p[0], a[1] - p[1]
    bdx, bdy = b[0] - p[0], b[1] - p[1]
    cdx, cdy = c[0] - p[0], c[1] - p[1]
    det = ((adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
           - (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady)
           + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady))
    return det > 1e-12


def bowyer_watson(points: np.ndarray) -> np.ndarray:
    """Delaunay triangles of ``points`` (n, 2) as a (T, 3) int array.

    Vertices of every triangle are in counter-clockwise order; triangles are
    sorted lexicographically so the output is independent of insertion
    bookkeeping. Points are inserted in index order.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < 3:
        raise ValueError("triangulation needs at least 3 points")
    center = pts.mean(axis=0)
    span = max(float(np.ptp(pts, axis=0).max()), 1e-9)
    big = 1e4 * span
    supers = np.array([
        center + [-2 * big, -big],
        center + [2 * big, -big],
        center + [0.0, 2 * big],
    ])
    allpts = np.vstack([pts, supers])
    tris: list[tuple[int, int, int]] = [(n, n + 1, n + 2)]

    for i in range(n):
        p = allpts[i]
        bad = [t for t in tris if _in_circumcircle(allpts[t[0]], allpts[t[1]], allpts[t[2]], p)]
        if not bad:
            # point on a circumcircle boundary of its containing triangle
            bad = [t for t in tris if _contains(allpts, t, p)][:1]
        edge_count: dict[tuple[int, int], int] = {}
        directed = []
        for t in bad:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = (min(e), max(e))
                edge_count[key] = edge_count.get(key, 0) + 1
                directed.append(e)
        bad_set = set(bad)
        tris = [t for t in tris if t not in bad_set]
        for a, b in directed:
            if edge_count[(min(a, b), max(a, b))] == 1:
                tris.append((a, b, i))

    out = []
    for t in tris:
        if max(t) >= n:
            continue
        a, b, c = t
        area = _orient(pts[a], pts[b], pts[c])
        if abs(area) <= 1e-14:
            continue
        if area < 0:
            b, c = c, b
        # rotate so the smallest index comes first, keeping orientation
        k = int(np.argmin((a, b, c)))
        out.append(tuple(np.roll((a, b, c), -k)))
    out.sort()
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def _contains(allpts, t, p) -> bool:
    a, b, c = (allpts[k] for k in t)
    d1, d2, d3 = _orient(a, b, p), _orient(b, c, p), _orient(c, a, p)
    return (d1 >= 0 and d2 >= 0 and d3 >= 0) or (d1 <= 0 and d2 <= 0 and d3 <= 0)


def circumcircle_violations(points: np.ndarray, triangles: np.ndarray, tol: float = 1e-9) -> int:
    """Number of (triangle, point) pairs breaking the empty-circumcircle rule."""
    pts = np.asarray(points, dtype=np.float64)
    bad = 0
    for t in triangles:
        a, b, c = pts[t]
        if _orient(a, b, c) < 0:
            b, c = c, b
        for j in range(len(pts)):
            if j in t:
                continue
            p = pts[j]
            adx, ady = a[0] - p[0], a[1] - p[1]
            bdx, bdy = b[0] - p[0], b[1] - p[1]
            cdx, cdy = c[0] - p[0], c[1] - p[1]
            det = ((adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
                   - (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady)
                   + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady))
            if det > tol:
                bad += 1
    return bad
