"""Quadrature rules on triangles, segments and clipped polygons.

The volume rule is exact for polynomials of degree 4, which covers every
integrand appearing in the piecewise-linear system (the cubic reaction term
times a linear test function is degree 4).  The edge rule is 3-point Gauss,
exact for degree 5.
"""

import numpy as np

# Dunavant 6-point rule, degree 4.  Barycentric coordinates and weights
# (weights sum to 1; multiply by the triangle area).
_A1 = 0.445948490915965
_A2 = 0.091576213509771
_W1 = 0.223381589678011
_W2 = 0.109951743655322

TRI_BARY = np.array(
    [
        [_A1, _A1, 1.0 - 2.0 * _A1],
        [_A1, 1.0 - 2.0 * _A1, _A1],
        [1.0 - 2.0 * _A1, _A1, _A1],
        [_A2, _A2, 1.0 - 2.0 * _A2],
        [_A2, 1.0 - 2.0 * _A2, _A2],
        [1.0 - 2.0 * _A2, _A2, _A2],
    ]
)
TRI_WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])

# 3-point Gauss-Legendre on [-1, 1].
_G = np.sqrt(3.0 / 5.0)
EDGE_POINTS = np.array([-_G, 0.0, _G])
EDGE_WEIGHTS = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


def triangle_points(verts):
    """Physical quadrature points for a triangle.

    Parameters
    ----------
    verts : (3, 2) array
        Triangle vertex coordinates.

    Returns
    -------
    (6, 2) array of quadrature point coordinates.  Pair with
    ``TRI_WEIGHTS * area`` to integrate.
    """
    return TRI_BARY @ np.asarray(verts)


def edge_points(a, b):
    """Quadrature points and weights on the segment from ``a`` to ``b``.

    Returns
    -------
    points : (3, 2) array
    weights : (3,) array, already scaled by the segment length.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = mid[None, :] + EDGE_POINTS[:, None] * half[None, :]
    length = np.hypot(*(b - a))
    return pts, EDGE_WEIGHTS * (length / 2.0)


def polygon_area(poly):
    """Signed area of a polygon given as an (n, 2) vertex array."""
    x = poly[:, 0]
    y = poly[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def clip_polygon_halfplane(poly, axis, value, keep_below):
    """Clip a convex polygon against ``x[axis] <= value`` or ``>= value``.

    Sutherland-Hodgman with a single half-plane.  Returns an (m, 2) array,
    possibly empty.
    """
    if len(poly) == 0:
        return poly
    sign = 1.0 if keep_below else -1.0
    dist = sign * (np.asarray(poly)[:, axis] - value)
    out = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        pi, pj = poly[i], poly[j]
        di, dj = dist[i], dist[j]
        if di <= 0.0:
            out.append(pi)
            if dj > 0.0:
                t = di / (di - dj)
                out.append(pi + t * (pj - pi))
        elif dj <= 0.0:
            t = di / (di - dj)
            out.append(pi + t * (pj - pi))
    return np.array(out) if out else np.empty((0, 2))


def fan_triangles(poly):
    """Fan-triangulate a convex polygon; yields (3, 2) vertex arrays."""
    for i in range(1, len(poly) - 1):
        yield np.array([poly[0], poly[i], poly[i + 1]])


def triangle_pieces(verts, breaks_x):
    """Split a triangle along vertical lines ``x1 = b`` for b in breaks_x.

    Returns a list of sub-triangles covering the original triangle such that
    no piece straddles any break line.  Used to integrate fields that are
    discontinuous across vertical lines exactly.
    """
    verts = np.asarray(verts, dtype=float)
    xs = sorted(breaks_x)
    bounds = [-np.inf] + xs + [np.inf]
    pieces = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        poly = verts
        if np.isfinite(lo):
            poly = clip_polygon_halfplane(poly, 0, lo, keep_below=False)
        if len(poly) and np.isfinite(hi):
            poly = clip_polygon_halfplane(poly, 0, hi, keep_below=True)
        if len(poly) < 3:
            continue
        for tri in fan_triangles(poly):
            if abs(polygon_area(tri)) > 1e-14:
                pieces.append(tri)
    return pieces
