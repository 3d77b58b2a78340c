"""Planar orientation predicates and the monotone-chain hull."""

from __future__ import annotations


def cross(o, a, b):
    """Twice the signed area of triangle ``o, a, b``; positive for a left turn."""
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_indices(points):
    """Strict convex hull of ``points`` as indices, counterclockwise.

    Starts at the lexicographically smallest ``(x, y)`` point. Collinear
    boundary points are dropped. Uses exact arithmetic only if the inputs
    are exact (callers quantize coordinates).
    """
    order = sorted(range(len(points)), key=lambda i: (points[i][0], points[i][1]))
    if len(order) <= 2:
        return order

    def half(seq):
        chain = []
        for i in seq:
            while len(chain) >= 2 and cross(points[chain[-2]], points[chain[-1]], points[i]) <= 0:
                chain.pop()
            chain.append(i)
        return chain

    lower = half(order)
    upper = half(reversed(order))
    hull = lower[:-1] + upper[:-1]
    return hull if len(hull) > 1 else lower


def strictly_inside(polygon, point):
    """True if ``point`` is strictly inside a counterclockwise convex polygon."""
    n = len(polygon)
    if n < 3:
        return False
    return all(cross(polygon[i], polygon[(i + 1) % n], point) > 0 for i in range(n))
