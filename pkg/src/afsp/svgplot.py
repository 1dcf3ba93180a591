"""Minimal SVG rendering of maps and closed-loop runs.

Hand-rolled on purpose: the plots are simple enough (circles, polylines,
labels) that a plotting dependency buys nothing.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

PX_WIDTH = 840.0
MARGIN_M = 3.0

_STYLE = {
    "centerline": 'stroke="#9aa0a6" stroke-width="1.5" stroke-dasharray="7,5" fill="none"',
    "static": 'fill="#5f6368" fill-opacity="0.55" stroke="#3c4043" stroke-width="1"',
    "dynamic": 'fill="#e8710a" fill-opacity="0.55" stroke="#b3560a" stroke-width="1"',
    "local": 'stroke="#1a73e8" stroke-width="2" fill="none"',
    "cloud": 'stroke="#d93025" stroke-width="2" fill="none"',
    "start": 'fill="#188038"',
    "goal": 'fill="none" stroke="#188038" stroke-width="2" stroke-dasharray="3,3"',
    "marker": 'stroke="#7b1fa2" stroke-width="2" fill="none"',
}


class SvgCanvas:
    """World-coordinate drawing surface; y points up, output pixels flip it."""

    def __init__(self, x_min: float, y_min: float, x_max: float, y_max: float):
        x_min -= MARGIN_M
        y_min -= MARGIN_M
        x_max += MARGIN_M
        y_max += MARGIN_M
        self._x0 = x_min
        self._y1 = y_max
        self._scale = PX_WIDTH / max(1e-9, x_max - x_min)
        self.width = PX_WIDTH
        self.height = max(1.0, (y_max - y_min) * self._scale)
        self._parts: list[str] = []

    def _px(self, x: float, y: float) -> tuple[float, float]:
        return (x - self._x0) * self._scale, (self._y1 - y) * self._scale

    def circle(self, x: float, y: float, r_world: float, style: str) -> None:
        cx, cy = self._px(x, y)
        self._parts.append(
            f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="{r_world * self._scale:.1f}" {style}/>'
        )

    def polyline(self, points: Sequence[tuple[float, float]], style: str) -> None:
        if len(points) < 2:
            return
        coords = " ".join(
            "{:.1f},{:.1f}".format(*self._px(px, py)) for px, py in points
        )
        self._parts.append(f'<polyline points="{coords}" {style}/>')

    def cross(self, x: float, y: float, half_px: float, style: str) -> None:
        cx, cy = self._px(x, y)
        self._parts.append(
            f'<path d="M {cx - half_px:.1f} {cy - half_px:.1f} L {cx + half_px:.1f} '
            f'{cy + half_px:.1f} M {cx - half_px:.1f} {cy + half_px:.1f} L '
            f'{cx + half_px:.1f} {cy - half_px:.1f}" {style}/>'
        )

    def text(self, x: float, y: float, label: str, size_px: float = 13.0) -> None:
        cx, cy = self._px(x, y)
        safe = label.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        self._parts.append(
            f'<text x="{cx:.1f}" y="{cy:.1f}" font-size="{size_px:.0f}" '
            f'font-family="sans-serif" fill="#202124">{safe}</text>'
        )

    def render(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width:.0f}" '
            f'height="{self.height:.0f}" viewBox="0 0 {self.width:.0f} {self.height:.0f}">'
        )
        bg = f'<rect width="{self.width:.0f}" height="{self.height:.0f}" fill="#ffffff"/>'
        return "\n".join([head, bg, *self._parts, "</svg>"])


def render_run(
    centerline: Sequence[tuple[float, float]],
    obstacles,
    xs: Sequence[float],
    ys: Sequence[float],
    zs: Optional[Sequence[int]] = None,
    goal: Optional[tuple[float, float]] = None,
    goal_radius: float = 2.0,
    title: str = "",
    markers: Optional[Sequence[tuple[float, float]]] = None,
) -> str:
    """One run as an SVG string: map, driven path (colored by the active
    reference), start marker, goal capture disc, and optional cross markers
    (directive trigger locations)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    all_x = list(xs) + [p[0] for p in centerline] + [o.x for o in obstacles]
    all_y = list(ys) + [p[1] for p in centerline] + [o.y for o in obstacles]
    if goal is not None:
        all_x.append(goal[0])
        all_y.append(goal[1])
    if not all_x:
        all_x, all_y = [0.0], [0.0]
    canvas = SvgCanvas(min(all_x), min(all_y), max(all_x), max(all_y))

    canvas.polyline(list(centerline), _STYLE["centerline"])
    for obs in obstacles:
        style = _STYLE["dynamic"] if obs.dynamic else _STYLE["static"]
        canvas.circle(obs.x, obs.y, obs.radius, style)
    if goal is not None:
        canvas.circle(goal[0], goal[1], goal_radius, _STYLE["goal"])

    if zs is None:
        zs = [0] * len(xs)
    # split the trace into constant-z segments so switches are visible
    seg: list[tuple[float, float]] = []
    seg_z = None
    for x, y, z in zip(xs, ys, zs):
        if seg_z is None or z == seg_z:
            seg.append((x, y))
            seg_z = z
        else:
            canvas.polyline(seg, _STYLE["cloud" if seg_z else "local"])
            seg = [seg[-1], (x, y)]
            seg_z = z
    if seg:
        canvas.polyline(seg, _STYLE["cloud" if seg_z else "local"])

    for mx, my in markers or ():
        canvas.cross(mx, my, 5.0, _STYLE["marker"])
    if len(xs):
        canvas.circle(float(xs[0]), float(ys[0]), 0.45, _STYLE["start"])
    if title:
        canvas.text(min(all_x), max(all_y) + MARGIN_M * 0.45, title)
    return canvas.render()


def save_run_svg(path: str, *args, **kwargs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_run(*args, **kwargs))
        fh.write("\n")
