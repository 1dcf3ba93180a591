"""World model: obstacles, occupancy grid, ego-frame topology text.

The planner and controller consume three views of the same scene: inflated
disc obstacles in world coordinates, a coarse occupancy grid derived from
them, and a line-oriented text rendering of the scene relative to the ego
pose (one node per obstacle, nearest first) that decision makers parse and
emit.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    disc_intersects_rect,
    is_quantized,
    normalize_angle,
    point_polyline_distance,
    quantize,
    rotate_into_frame,
)

log = logging.getLogger(__name__)

DIST_STEP = 0.1
ORIENT_STEP = 0.5

_NODE_RE = re.compile(
    r"^<ref>([^<>]+)</ref>"
    r"<box>(-|[^<>]+)</box>"
    r" dist=(-?\d+\.\d)"
    r" orient=(-?\d+\.\d)$"
)


class TopologyParseError(ValueError):
    """Raised when topology text does not follow the node grammar."""


@dataclass(frozen=True)
class Obstacle:
    """A disc obstacle in world coordinates.

    category is a free label ("vehicle", "barrier", ...); dynamic marks
    obstacles that get per-seed placement perturbation in the simulator.
    """

    x: float
    y: float
    radius: float
    category: str = "obstacle"
    dynamic: bool = False

    def __post_init__(self):
        if not (self.radius > 0.0):
            raise ValueError("obstacle radius must be positive")
        if not self.category:
            raise ValueError("obstacle category must be non-empty")

    def distance_to(self, x: float, y: float) -> float:
        """Boundary distance from a point (negative inside the disc)."""
        return math.hypot(x - self.x, y - self.y) - self.radius


@dataclass(frozen=True)
class EgoPose:
    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))


@dataclass(frozen=True)
class TopologyNode:
    """One obstacle as seen from the ego: category, optional image-plane
    box, and quantized polar coordinates (meters / degrees)."""

    category: str
    distance: float
    orientation: float
    bbox: Optional[tuple[int, int, int, int]] = None

    def __post_init__(self):
        if not self.category or "<" in self.category or ">" in self.category:
            raise ValueError("category must be non-empty without angle brackets")
        if not is_quantized(self.distance, DIST_STEP):
            raise ValueError("distance must sit on the 0.1 m grid")
        if not is_quantized(self.orientation, ORIENT_STEP):
            raise ValueError("orientation must sit on the 0.5 degree grid")
        if not (-180.0 <= self.orientation < 180.0):
            raise ValueError("orientation must lie in [-180, 180)")
        if self.distance < 0.0:
            raise ValueError("distance must be non-negative")


@dataclass(frozen=True)
class TopologyGraph:
    """Scene topology: nodes sorted by (distance, orientation).

    The ego snapshot is carried for provenance but excluded from equality;
    the text form holds node content only.
    """

    nodes: tuple[TopologyNode, ...]
    ego: EgoPose = field(default=EgoPose(0.0, 0.0, 0.0), compare=False)

    def __post_init__(self):
        order = [(n.distance, n.orientation) for n in self.nodes]
        if order != sorted(order):
            raise ValueError("nodes must be sorted by (distance, orientation)")


def ego_polar(position: tuple[float, float], ego: EgoPose) -> tuple[float, float]:
    """Quantized polar coordinates of a world point relative to the ego.

    The offset is rotated into the ego frame (0 degrees along the forward
    axis, positive counterclockwise), then distance snaps to 0.1 m and
    orientation to 0.5 degrees in [-180, 180).
    """
    vx, vy = rotate_into_frame(position[0] - ego.x, position[1] - ego.y, ego.yaw)
    dist = quantize(math.hypot(vx, vy), DIST_STEP)
    if vx == 0.0 and vy == 0.0:
        return 0.0, 0.0
    orient = quantize(math.degrees(math.atan2(vy, vx)), ORIENT_STEP)
    if orient >= 180.0:
        orient -= 360.0
    if orient == -0.0:
        orient = 0.0
    return abs(dist), orient


def inflate(
    obstacles: Sequence[Obstacle],
    vehicle_factor: float = 1.1,
    static_extra: float = 0.1,
) -> list[Obstacle]:
    """Safety-inflate radii: dynamic discs scale by vehicle_factor, static
    discs grow by static_extra meters. Positions and labels are unchanged."""
    out = []
    for ob in obstacles:
        r = ob.radius * vehicle_factor if ob.dynamic else ob.radius + static_extra
        out.append(Obstacle(ob.x, ob.y, r, ob.category, ob.dynamic))
    return out


@dataclass(frozen=True)
class GridMap:
    """Coarse occupancy grid over a rectangular world region.

    blocked[i, j] covers the cell whose world rectangle is
    [origin_x + i*cs, origin_x + (i+1)*cs] x [origin_y + j*cs, ...]; a cell
    is blocked when any inflated obstacle disc touches that rectangle.
    Start/goal anchors are optional world points that shift with the map.
    """

    origin: tuple[float, float]
    cell_size: float
    width: int
    height: int
    blocked: np.ndarray
    centerline: np.ndarray
    obstacles: tuple[Obstacle, ...] = ()
    start: Optional[EgoPose] = None
    goal: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.cell_size <= 0.0:
            raise ValueError("cell_size must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1x1")
        if self.blocked.shape != (self.width, self.height):
            raise ValueError("blocked mask shape must be (width, height)")
        self.blocked.setflags(write=False)

    @classmethod
    def build(
        cls,
        origin: tuple[float, float],
        cell_size: float,
        width: int,
        height: int,
        centerline,
        obstacles: Sequence[Obstacle] = (),
        footprint_pad: float = 0.0,
        start: Optional[EgoPose] = None,
        goal: Optional[tuple[float, float]] = None,
    ) -> "GridMap":
        """Construct the grid and its blocked mask from inflated obstacles.

        footprint_pad widens blocking (not the stored discs) so grid paths
        keep room for the vehicle body.
        """
        blocked = np.zeros((width, height), dtype=bool)
        ox, oy = origin
        for ob in obstacles:
            r = ob.radius + footprint_pad
            # ceil-1 on the low side so a disc exactly tangent to a cell's
            # far edge still lists that cell as a candidate (floor would
            # skip it while the closed intersection test counts it)
            i_lo = max(0, int(math.ceil((ob.x - r - ox) / cell_size)) - 1)
            i_hi = min(width - 1, int(math.floor((ob.x + r - ox) / cell_size)))
            j_lo = max(0, int(math.ceil((ob.y - r - oy) / cell_size)) - 1)
            j_hi = min(height - 1, int(math.floor((ob.y + r - oy) / cell_size)))
            for i in range(i_lo, i_hi + 1):
                for j in range(j_lo, j_hi + 1):
                    if blocked[i, j]:
                        continue
                    x0 = ox + i * cell_size
                    y0 = oy + j * cell_size
                    if disc_intersects_rect(
                        ob.x, ob.y, r, x0, y0, x0 + cell_size, y0 + cell_size
                    ):
                        blocked[i, j] = True
        return cls(
            origin=(float(ox), float(oy)),
            cell_size=float(cell_size),
            width=width,
            height=height,
            blocked=blocked,
            centerline=np.asarray(centerline, dtype=float).reshape(-1, 2),
            obstacles=tuple(obstacles),
            start=start,
            goal=goal,
        )

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def is_blocked(self, cell: tuple[int, int]) -> bool:
        return bool(self.blocked[cell[0], cell[1]])

    def cell_center(self, cell: tuple[int, int]) -> tuple[float, float]:
        return (
            self.origin[0] + (cell[0] + 0.5) * self.cell_size,
            self.origin[1] + (cell[1] + 0.5) * self.cell_size,
        )

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        i = int(math.floor((x - self.origin[0]) / self.cell_size))
        j = int(math.floor((y - self.origin[1]) / self.cell_size))
        return i, j

    def snap_cell(
        self, point: tuple[float, float], toward: Optional[tuple[float, float]] = None
    ) -> tuple[int, int]:
        """Nearest unblocked cell to a world point; distance ties break
        toward the given reference point (typically the goal)."""
        best = None
        px, py = point
        for i in range(self.width):
            for j in range(self.height):
                if self.blocked[i, j]:
                    continue
                cx, cy = self.cell_center((i, j))
                d = (cx - px) ** 2 + (cy - py) ** 2
                t = (
                    (cx - toward[0]) ** 2 + (cy - toward[1]) ** 2
                    if toward is not None
                    else 0.0
                )
                # a corner tie that survives both distances leans forward:
                # +i is the travel axis, so prefer the larger cell indices
                key = (round(d, 9), round(t, 9), -i, -j)
                if best is None or key < best[0]:
                    best = (key, (i, j))
        if best is None:
            raise ValueError("grid has no unblocked cell")
        return best[1]


def shift_map(grid: GridMap, dx: float, dy: float) -> GridMap:
    """Translate the grid frame (origin, start, goal) by (dx, dy) while
    obstacles stay fixed in world coordinates; the blocked mask is
    recomputed against the moved cell rectangles."""
    start = None
    if grid.start is not None:
        start = EgoPose(grid.start.x + dx, grid.start.y + dy, grid.start.yaw)
    goal = None
    if grid.goal is not None:
        goal = (grid.goal[0] + dx, grid.goal[1] + dy)
    centerline = grid.centerline + np.array([dx, dy])
    return GridMap.build(
        origin=(grid.origin[0] + dx, grid.origin[1] + dy),
        cell_size=grid.cell_size,
        width=grid.width,
        height=grid.height,
        centerline=centerline,
        obstacles=grid.obstacles,
        start=start,
        goal=goal,
    )


def topology_from_obstacles(
    obstacles: Sequence[Obstacle], ego: EgoPose
) -> TopologyGraph:
    """Render a scene as a topology graph around the ego pose."""
    nodes = []
    for ob in obstacles:
        dist, orient = ego_polar((ob.x, ob.y), ego)
        nodes.append(TopologyNode(ob.category, dist, orient))
    nodes.sort(key=lambda n: (n.distance, n.orientation))
    return TopologyGraph(tuple(nodes), ego=ego)


def serialize_topology(graph: TopologyGraph) -> str:
    """Text form, one node per line:

        <ref>CATEGORY</ref><box>x1,y1,x2,y2</box> dist=D orient=O

    D and O carry one decimal; a missing box renders as <box>-</box>.
    """
    lines = []
    for n in graph.nodes:
        box = "-" if n.bbox is None else ",".join(str(int(v)) for v in n.bbox)
        lines.append(
            f"<ref>{n.category}</ref><box>{box}</box>"
            f" dist={n.distance:.1f} orient={n.orientation:.1f}"
        )
    return "\n".join(lines)


def parse_topology(text: str) -> TopologyGraph:
    """Inverse of serialize_topology. Raises TopologyParseError naming the
    first offending line (1-based)."""
    nodes = []
    if text == "":
        return TopologyGraph(())
    for lineno, line in enumerate(text.split("\n"), start=1):
        m = _NODE_RE.match(line)
        if m is None:
            raise TopologyParseError(f"line {lineno}: malformed topology node: {line!r}")
        category, box_text, dist_text, orient_text = m.groups()
        bbox = None
        if box_text != "-":
            parts = box_text.split(",")
            if len(parts) != 4:
                raise TopologyParseError(
                    f"line {lineno}: box must have four coordinates: {box_text!r}"
                )
            try:
                bbox = tuple(int(p) for p in parts)
            except ValueError as exc:
                raise TopologyParseError(
                    f"line {lineno}: box coordinates must be integers: {box_text!r}"
                ) from exc
        try:
            node = TopologyNode(
                category=category,
                distance=float(dist_text),
                orientation=float(orient_text),
                bbox=bbox,
            )
        except ValueError as exc:
            raise TopologyParseError(f"line {lineno}: {exc}") from exc
        nodes.append(node)
    try:
        return TopologyGraph(tuple(nodes))
    except ValueError as exc:
        raise TopologyParseError(str(exc)) from exc


def mean_centerline_distance(obstacles: Sequence[Obstacle], centerline) -> float:
    """Mean distance from obstacle centers to the centerline polyline."""
    obstacles = list(obstacles)
    if not obstacles:
        return 0.0
    pts = np.asarray(centerline, dtype=float).reshape(-1, 2)
    return float(
        np.mean([point_polyline_distance(ob.x, ob.y, pts) for ob in obstacles])
    )
