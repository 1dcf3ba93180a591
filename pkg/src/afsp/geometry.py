"""Small planar-geometry helpers shared across the stack."""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    theta = math.fmod(theta, TWO_PI)
    if theta > math.pi:
        theta -= TWO_PI
    elif theta <= -math.pi:
        theta += TWO_PI
    return theta


def quantize(value: float, step: float) -> float:
    """Round to the nearest multiple of step, canonicalized to the float
    nearest that decimal value so quantized numbers survive a round-trip
    through their short decimal text form."""
    return round(round(value / step) * step, 12)


def is_quantized(value: float, step: float, tol: float = 1e-9) -> bool:
    return abs(value - quantize(value, step)) <= tol


def rotate_into_frame(dx: float, dy: float, yaw: float) -> tuple[float, float]:
    """Rotate a world-frame offset into the frame of a pose with heading yaw."""
    c = math.cos(yaw)
    s = math.sin(yaw)
    return c * dx + s * dy, -s * dx + c * dy


def disc_intersects_rect(cx, cy, r, x0, y0, x1, y1) -> bool:
    """True when the disc at (cx, cy) with radius r touches the axis-aligned
    rectangle [x0, x1] x [y0, y1]."""
    px = min(max(cx, x0), x1)
    py = min(max(cy, y0), y1)
    return (cx - px) ** 2 + (cy - py) ** 2 <= r * r


def point_segment_distance(px, py, ax, ay, bx, by) -> float:
    abx = bx - ax
    aby = by - ay
    denom = abx * abx + aby * aby
    if denom <= 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * abx + (py - ay) * aby) / denom
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * abx), py - (ay + t * aby))


def point_polyline_distance(px: float, py: float, pts: np.ndarray) -> float:
    """Unsigned distance from a point to a polyline given as an (N, 2) array."""
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("polyline must be a non-empty (N, 2) array")
    if pts.shape[0] == 1:
        return math.hypot(px - pts[0, 0], py - pts[0, 1])
    a = pts[:-1]
    b = pts[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom <= 0.0, 1.0, denom)
    ap = np.array([px, py]) - a
    t = np.clip(np.einsum("ij,ij->i", ap, ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = np.hypot(px - proj[:, 0], py - proj[:, 1])
    return float(d.min())


def polyline_arc_position(px: float, py: float, pts: np.ndarray) -> float:
    """Arc-length coordinate of the closest point on the polyline."""
    pts = np.asarray(pts, dtype=float)
    if pts.shape[0] == 1:
        return 0.0
    a = pts[:-1]
    b = pts[1:]
    ab = b - a
    seg_len = np.hypot(ab[:, 0], ab[:, 1])
    denom = np.where(seg_len <= 0.0, 1.0, seg_len**2)
    ap = np.array([px, py]) - a
    t = np.clip(np.einsum("ij,ij->i", ap, ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d2 = (px - proj[:, 0]) ** 2 + (py - proj[:, 1]) ** 2
    k = int(np.argmin(d2))
    prefix = float(seg_len[:k].sum())
    return prefix + float(t[k] * seg_len[k])


def polyline_point_at(pts: np.ndarray, s: float) -> tuple[float, float, float]:
    """Point and tangent heading at arc length s, clamped to the polyline ends."""
    pts = np.asarray(pts, dtype=float)
    if pts.shape[0] == 1:
        return float(pts[0, 0]), float(pts[0, 1]), 0.0
    ab = pts[1:] - pts[:-1]
    seg_len = np.hypot(ab[:, 0], ab[:, 1])
    total = float(seg_len.sum())
    s = min(max(s, 0.0), total)
    acc = 0.0
    for k in range(len(seg_len)):
        L = float(seg_len[k])
        if s <= acc + L or k == len(seg_len) - 1:
            t = 0.0 if L <= 0.0 else (s - acc) / L
            t = min(1.0, max(0.0, t))
            x = pts[k, 0] + t * ab[k, 0]
            y = pts[k, 1] + t * ab[k, 1]
            heading = math.atan2(ab[k, 1], ab[k, 0]) if L > 0.0 else 0.0
            return float(x), float(y), heading
        acc += L
    return float(pts[-1, 0]), float(pts[-1, 1]), 0.0


def polyline_length(pts: np.ndarray) -> float:
    pts = np.asarray(pts, dtype=float)
    if pts.shape[0] < 2:
        return 0.0
    ab = pts[1:] - pts[:-1]
    return float(np.hypot(ab[:, 0], ab[:, 1]).sum())
