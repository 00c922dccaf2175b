"""Planar geometry helpers: winding numbers, oriented boxes, distances.

Everything is vectorized over leading batch dimensions and works on plain
float64 arrays. Angles are radians, headings point along the box length axis.
"""
from __future__ import annotations

import numpy as np


def winding_number(points, polygon):
    """Winding number of each query point with respect to a closed polygon.

    points : [..., 2] query positions
    polygon : [N, 2] vertices, closed implicitly (last connects to first)

    Returns an int array of shape [...]; nonzero means inside.
    """
    points = np.asarray(points, dtype=np.float64)
    poly = np.asarray(polygon, dtype=np.float64)
    assert poly.ndim == 2 and poly.shape[1] == 2 and poly.shape[0] >= 3
    p0 = poly  # [N,2]
    p1 = np.roll(poly, -1, axis=0)  # [N,2]

    q = points[..., None, :]  # [...,1,2]
    # is_left > 0: q left of the directed edge p0 -> p1
    is_left = (p1[:, 0] - p0[:, 0]) * (q[..., 1] - p0[:, 1]) - (
        q[..., 0] - p0[:, 0]
    ) * (p1[:, 1] - p0[:, 1])  # [...,N]

    up = (p0[:, 1] <= q[..., 1]) & (p1[:, 1] > q[..., 1]) & (is_left > 0)
    down = (p0[:, 1] > q[..., 1]) & (p1[:, 1] <= q[..., 1]) & (is_left < 0)
    return (up.astype(np.int64) - down.astype(np.int64)).sum(axis=-1)


def in_any_polygon(points, polygons):
    """True where a point is inside at least one of the closed polygons."""
    points = np.asarray(points, dtype=np.float64)
    inside = np.zeros(points.shape[:-1], dtype=bool)
    for poly in polygons:
        inside |= winding_number(points, poly) != 0
    return inside


def box_corners(cx, cy, heading, length, width):
    """Corners of oriented rectangles, CCW order.

    All inputs broadcast against each other; result is [..., 4, 2].
    length extends along the heading, width across it.
    """
    cx, cy, heading, length, width = np.broadcast_arrays(
        *(np.asarray(a, dtype=np.float64) for a in (cx, cy, heading, length, width))
    )
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    # local corner offsets (l, w): (+,+), (-,+), (-,-), (+,-)
    lx = np.stack([hl, -hl, -hl, hl], axis=-1)  # [...,4]
    wy = np.stack([hw, hw, -hw, -hw], axis=-1)
    x = cx[..., None] + lx * c[..., None] - wy * s[..., None]
    y = cy[..., None] + lx * s[..., None] + wy * c[..., None]
    return np.stack([x, y], axis=-1)


def _box_axes(corners):
    # two unique edge normals of a rectangle, unit length -> [...,2,2]
    e0 = corners[..., 1, :] - corners[..., 0, :]
    e1 = corners[..., 2, :] - corners[..., 1, :]
    axes = np.stack([e0, e1], axis=-2)  # [...,2,2]
    n = np.linalg.norm(axes, axis=-1, keepdims=True)
    axes = axes / np.maximum(n, 1e-12)
    # rotate 90 degrees to get normals
    return np.stack([-axes[..., 1], axes[..., 0]], axis=-1)


def _axis_overlaps(ca, cb):
    # overlap extent of the two boxes' projections on all 4 axes -> [...,4]
    axes = np.concatenate([_box_axes(ca), _box_axes(cb)], axis=-2)  # [...,4,2]
    pa = np.matmul(ca, np.swapaxes(axes, -1, -2))  # [...,4corners,4axes]
    pb = np.matmul(cb, np.swapaxes(axes, -1, -2))
    lo = np.maximum(pa.min(axis=-2), pb.min(axis=-2))
    hi = np.minimum(pa.max(axis=-2), pb.max(axis=-2))
    return hi - lo


def boxes_overlap(ca, cb):
    """Separating-axis test for oriented rectangles given as [...,4,2] corners."""
    return (_axis_overlaps(ca, cb) > 0.0).all(axis=-1)


def point_segment_distance(p, a, b):
    """Distance from points p to segments a->b; all [...,2], broadcast."""
    p, a, b = (np.asarray(v, dtype=np.float64) for v in (p, a, b))
    ab = b - a
    denom = (ab * ab).sum(axis=-1)
    t = ((p - a) * ab).sum(axis=-1) / np.maximum(denom, 1e-300)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(p - proj, axis=-1)


def _poly_min_distance(ca, cb):
    # min vertex-to-edge distance between two convex polygons [...,4,2]
    def verts_to_edges(v, e):
        a = e  # [...,4,2]
        b = np.roll(e, -1, axis=-2)
        d = point_segment_distance(
            v[..., :, None, :], a[..., None, :, :], b[..., None, :, :]
        )  # [...,4,4]
        return d.min(axis=(-1, -2))

    return np.minimum(verts_to_edges(ca, cb), verts_to_edges(cb, ca))


def box_signed_distance(ca, cb):
    """Signed distance between oriented rectangles: positive when separated
    (min polygon distance), negative when overlapping (SAT penetration depth).
    """
    ov = _axis_overlaps(ca, cb)
    overlapping = (ov > 0.0).all(axis=-1)
    pen = ov.min(axis=-1)
    sep = _poly_min_distance(ca, cb)
    return np.where(overlapping, -pen, sep)


def point_to_polyline_distance(points, polyline):
    """Distance from each point to an open polyline, plus the nearest point.

    points : [..., 2]; polyline : [N, 2] with N >= 2
    Returns (dist [...], nearest [..., 2]).
    """
    points = np.asarray(points, dtype=np.float64)
    poly = np.asarray(polyline, dtype=np.float64)
    a = poly[:-1]  # [M,2]
    b = poly[1:]
    p = points[..., None, :]
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=-1), 1e-300)
    t = np.clip(((p - a) * ab).sum(axis=-1) / denom, 0.0, 1.0)  # [...,M]
    proj = a + t[..., None] * ab  # [...,M,2]
    d = np.linalg.norm(p - proj, axis=-1)
    idx = d.argmin(axis=-1)
    dist = np.take_along_axis(d, idx[..., None], axis=-1)[..., 0]
    nearest = np.take_along_axis(proj, idx[..., None, None], axis=-2)[..., 0, :]
    return dist, nearest


def point_to_ring_distance(points, polygon):
    """Distance to the boundary of a closed polygon (treated as a ring)."""
    ring = np.concatenate([polygon, polygon[:1]], axis=0)
    return point_to_polyline_distance(points, ring)
