"""Deterministic SVG rendering of recorded episodes.

The image shows the workspace, obstacles, enemy view wedges at sampled
timestamps, the trajectory colored by the per-step exposure flag, subgoal
markers, and the goal. Identical inputs produce byte-identical files.
"""

from __future__ import annotations

import math

from ..world import EpisodeRecord
from .episodes import RecordError, load_record

COLOR_TRAJ = "#1a73e8"
COLOR_EXPOSED = "#d93025"
COLOR_OBSTACLE = "#9aa0a6"
COLOR_OBSTACLE_EDGE = "#5f6368"
COLOR_ENEMY = "#c5221f"
COLOR_GOAL = "#188038"
COLOR_SUBGOAL = "#f29900"


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, bounds, width=900, pad=20):
        x0, y0, x1, y1 = bounds
        self.x0, self.y0, self.x1, self.y1 = x0, y0, x1, y1
        self.scale = (width - 2 * pad) / (x1 - x0)
        self.pad = pad
        self.w = width
        self.h = int(round((y1 - y0) * self.scale)) + 2 * pad

    def px(self, x: float) -> float:
        return self.pad + (x - self.x0) * self.scale

    def py(self, y: float) -> float:
        return self.pad + (self.y1 - y) * self.scale


def _wedge_path(c: _Canvas, x: float, y: float, heading: float, aperture: float,
                radius: float) -> str:
    a0 = heading - 0.5 * aperture
    a1 = heading + 0.5 * aperture
    p1x, p1y = x + radius * math.cos(a0), y + radius * math.sin(a0)
    p2x, p2y = x + radius * math.cos(a1), y + radius * math.sin(a1)
    r_px = radius * c.scale
    large = 1 if aperture > math.pi else 0
    return (f"M {_f(c.px(x))} {_f(c.py(y))} "
            f"L {_f(c.px(p1x))} {_f(c.py(p1y))} "
            f"A {_f(r_px)} {_f(r_px)} 0 {large} 0 {_f(c.px(p2x))} {_f(c.py(p2y))} Z")


def render_episode(record: EpisodeRecord, scene: dict, out_path,
                   width: int = 900, n_enemy_samples: int = 6) -> None:
    cfg = scene["config"]
    c = _Canvas(tuple(cfg["bounds"]), width=width)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{c.w}" height="{c.h}" '
        f'viewBox="0 0 {c.w} {c.h}">',
        f'<rect x="0" y="0" width="{c.w}" height="{c.h}" fill="#ffffff"/>',
        f'<rect x="{_f(c.px(c.x0))}" y="{_f(c.py(c.y1))}" '
        f'width="{_f((c.x1 - c.x0) * c.scale)}" height="{_f((c.y1 - c.y0) * c.scale)}" '
        f'fill="none" stroke="#202124" stroke-width="1.5"/>',
    ]

    for verts in scene["obstacles"]:
        pts = " ".join(f"{_f(c.px(x))},{_f(c.py(y))}" for x, y in verts)
        parts.append(f'<polygon points="{pts}" fill="{COLOR_OBSTACLE}" '
                     f'stroke="{COLOR_OBSTACLE_EDGE}" stroke-width="1"/>')

    steps = record.steps
    if steps:
        n = len(steps)
        sample_idx = sorted({int(round(i * (n - 1) / max(1, n_enemy_samples - 1)))
                             for i in range(n_enemy_samples)})
        ap = cfg["fov_aperture"]
        rng_ = cfg["fov_range"]
        ring = cfg["ring_range"]
        for si in sample_idx:
            for ex, ey, eh in steps[si].enemies:
                parts.append(f'<path d="{_wedge_path(c, ex, ey, eh, ap, rng_)}" '
                             f'fill="{COLOR_ENEMY}" fill-opacity="0.08" stroke="none"/>')
                parts.append(f'<circle cx="{_f(c.px(ex))}" cy="{_f(c.py(ey))}" '
                             f'r="{_f(ring * c.scale)}" fill="{COLOR_ENEMY}" '
                             f'fill-opacity="0.05" stroke="none"/>')
                parts.append(f'<circle cx="{_f(c.px(ex))}" cy="{_f(c.py(ey))}" '
                             f'r="3" fill="{COLOR_ENEMY}"/>')

    gx, gy = cfg["goal"]
    gr = cfg["goal_radius"] * c.scale
    parts.append(f'<rect x="{_f(c.px(gx) - gr)}" y="{_f(c.py(gy) - gr)}" '
                 f'width="{_f(2 * gr)}" height="{_f(2 * gr)}" fill="{COLOR_GOAL}" '
                 f'fill-opacity="0.8"/>')

    if steps:
        parts.append(f'<circle cx="{_f(c.px(steps[0].x))}" cy="{_f(c.py(steps[0].y))}" '
                     f'r="4" fill="{COLOR_TRAJ}" fill-opacity="0.9"/>')
    for a, b in zip(steps, steps[1:]):
        color = COLOR_EXPOSED if b.exposed else COLOR_TRAJ
        parts.append(f'<line x1="{_f(c.px(a.x))}" y1="{_f(c.py(a.y))}" '
                     f'x2="{_f(c.px(b.x))}" y2="{_f(c.py(b.y))}" '
                     f'stroke="{color}" stroke-width="2"/>')

    for ev in record.subgoal_events:
        _, sx, sy = ev[0], ev[1], ev[2]
        x, y = c.px(sx), c.py(sy)
        parts.append(f'<path d="M {_f(x - 4)} {_f(y - 4)} L {_f(x + 4)} {_f(y + 4)} '
                     f'M {_f(x - 4)} {_f(y + 4)} L {_f(x + 4)} {_f(y - 4)}" '
                     f'stroke="{COLOR_SUBGOAL}" stroke-width="2"/>')

    parts.append("</svg>")
    with open(out_path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def render_record_file(record_path, out_path, width: int = 900) -> None:
    rec, scene = load_record(record_path)
    if not rec.steps:
        raise RecordError(f"{record_path}: record has no steps")
    render_episode(rec, scene, out_path, width=width)
