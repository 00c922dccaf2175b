"""Static SVG rendering of scenes: road geometry plus per-agent trajectories
with a time gradient.

Color ramps by agent role, early step -> late step:

    environment agents   green -> blue
    the AV (type "av")   orange -> yellow
    injected agents      red -> purple

Output is a plain SVG string with fixed-precision coordinates, so the same
scene renders to identical bytes every time.
"""
from __future__ import annotations

import numpy as np

from . import geometry
from .scene_tensor import AGENT_TYPES, SceneTensor, denormalize_scene

_RAMPS = {
    "env": ((0x2E, 0x7D, 0x32), (0x15, 0x65, 0xC0)),
    "av": ((0xEF, 0x6C, 0x00), (0xFD, 0xD8, 0x35)),
    "injected": ((0xC6, 0x28, 0x28), (0x6A, 0x1B, 0x9A)),
}

ROAD_FILL = "#ececec"
ROAD_EDGE = "#9e9e9e"
LANE_STROKE = "#bdbdbd"


def _lerp_color(ramp, u: float) -> str:
    (r0, g0, b0), (r1, g1, b1) = ramp
    r = round(r0 + (r1 - r0) * u)
    g = round(g0 + (g1 - g0) * u)
    b = round(b0 + (b1 - b0) * u)
    return f"#{r:02x}{g:02x}{b:02x}"


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    """Maps world coordinates (meters, y up) onto the SVG pixel grid."""

    def __init__(self, bounds, width=900.0, margin=20.0):
        minx, miny, maxx, maxy = bounds
        span_x = max(maxx - minx, 1e-6)
        span_y = max(maxy - miny, 1e-6)
        self.scale = (width - 2 * margin) / span_x
        self.width = width
        self.height = span_y * self.scale + 2 * margin
        self.minx, self.maxy, self.margin = minx, maxy, margin

    def pt(self, x, y):
        sx = (x - self.minx) * self.scale + self.margin
        sy = (self.maxy - y) * self.scale + self.margin
        return _f(sx), _f(sy)

    def path(self, xs, ys):
        return " ".join(",".join(self.pt(x, y)) for x, y in zip(xs, ys))


def _bounds(raw, validity, roadgraph):
    xs, ys = [], []
    if roadgraph is not None:
        for poly in roadgraph.boundaries:
            xs.append(np.asarray(poly)[:, 0])
            ys.append(np.asarray(poly)[:, 1])
        for lane in roadgraph.lanes:
            xs.append(np.asarray(lane.points)[:, 0])
            ys.append(np.asarray(lane.points)[:, 1])
    if validity.any():
        xs.append(raw.x[validity])
        ys.append(raw.y[validity])
    xs = np.concatenate(xs) if xs else np.zeros(1)
    ys = np.concatenate(ys) if ys else np.zeros(1)
    return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())


def _agent_ramp(type_idx: int, agent: int, injected) -> tuple:
    if agent in injected:
        return _RAMPS["injected"]
    if AGENT_TYPES[type_idx] == "av":
        return _RAMPS["av"]
    return _RAMPS["env"]


def render_scene(scene: SceneTensor, validity, roadgraph=None, injected=(),
                 path=None, title=None):
    """Render one scene to an SVG string; optionally write it to `path`."""
    validity = np.asarray(validity, dtype=bool)
    raw = denormalize_scene(scene)
    A, T = validity.shape
    canvas = _Canvas(_bounds(raw, validity, roadgraph))
    injected = set(int(a) for a in injected)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(canvas.width)}" '
        f'height="{_f(canvas.height)}" viewBox="0 0 {_f(canvas.width)} {_f(canvas.height)}">',
        f'<rect width="{_f(canvas.width)}" height="{_f(canvas.height)}" fill="#ffffff"/>',
    ]
    if title:
        parts.append(
            f'<text x="10" y="16" font-family="monospace" font-size="12" '
            f'fill="#424242">{title}</text>'
        )

    if roadgraph is not None:
        for poly in roadgraph.boundaries:
            poly = np.asarray(poly)
            parts.append(
                f'<polygon points="{canvas.path(poly[:, 0], poly[:, 1])}" '
                f'fill="{ROAD_FILL}" stroke="{ROAD_EDGE}" stroke-width="1.5"/>'
            )
        for lane in roadgraph.lanes:
            pts = np.asarray(lane.points)
            parts.append(
                f'<polyline points="{canvas.path(pts[:, 0], pts[:, 1])}" '
                f'fill="none" stroke="{LANE_STROKE}" stroke-width="1" '
                f'stroke-dasharray="6,5"/>'
            )

    denom = max(T - 1, 1)
    current = min(max(scene.history_len - 1, 0), T - 1)
    for a in range(A):
        if not validity[a].any():
            continue
        ramp = _agent_ramp(int(raw.type_idx[a]), a, injected)
        for i in range(T - 1):
            if not (validity[a, i] and validity[a, i + 1]):
                continue
            color = _lerp_color(ramp, i / denom)
            x0, y0 = canvas.pt(raw.x[a, i], raw.y[a, i])
            x1, y1 = canvas.pt(raw.x[a, i + 1], raw.y[a, i + 1])
            parts.append(
                f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" '
                f'stroke="{color}" stroke-width="2" stroke-linecap="round"/>'
            )
        if validity[a, current]:
            corners = geometry.box_corners(
                raw.x[a, current], raw.y[a, current], raw.heading[a, current],
                raw.length[a, current], raw.width[a, current],
            )  # [4,2]
            color = _lerp_color(ramp, current / denom)
            parts.append(
                f'<polygon points="{canvas.path(corners[:, 0], corners[:, 1])}" '
                f'fill="none" stroke="{color}" stroke-width="2"/>'
            )

    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg
