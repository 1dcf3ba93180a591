"""Scenario documents: schema, loading, and the bundled fixtures.

A scenario is a JSON object with a coarse map frame, a lane centerline,
disc obstacles, a start pose, and a goal point; optional keys tune capture
radius, target speed, inflation margins, planner knobs, and a map shift. A
`shift` key displaces the map frame (grid origin, centerline, start, goal)
at load while the obstacles stay where they are, so a shifted scenario's
prior lane no longer matches reality.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .planner import PlannerConfig
from .worldmodel import EgoPose, GridMap, Obstacle, inflate

def _data_root():
    return resources.files("afsp") / "data"


@dataclass(frozen=True)
class Scenario:
    name: str
    origin: tuple[float, float]
    cell_size: float
    width: int
    height: int
    centerline: tuple[tuple[float, float], ...]
    obstacles: tuple[Obstacle, ...]
    start: EgoPose
    goal: tuple[float, float]
    goal_capture: float = 2.0
    target_speed: float = 4.2
    shift: tuple[float, float] = (0.0, 0.0)
    shifts: tuple[tuple[float, float], ...] = ()
    vehicle_factor: float = 1.1
    static_extra: float = 0.1
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    seed: int = 0

    def inflated_obstacles(
        self, obstacles: Optional[Sequence[Obstacle]] = None
    ) -> tuple[Obstacle, ...]:
        src = self.obstacles if obstacles is None else obstacles
        return tuple(inflate(src, self.vehicle_factor, self.static_extra))

    def build_grid(
        self,
        footprint_pad: float = 0.0,
        obstacles: Optional[Sequence[Obstacle]] = None,
    ) -> GridMap:
        """Occupancy grid over the scenario frame from the inflated discs.
        footprint_pad reserves body room in the blocked mask (closed-loop
        use); zero keeps the mask at the inflated discs (planning studies)."""
        return GridMap.build(
            origin=self.origin,
            cell_size=self.cell_size,
            width=self.width,
            height=self.height,
            centerline=np.asarray(self.centerline, dtype=float),
            obstacles=self.inflated_obstacles(obstacles),
            footprint_pad=footprint_pad,
            start=self.start,
            goal=self.goal,
        )


def _shift_frame(scn: Scenario, dx: float, dy: float) -> Scenario:
    if dx == 0.0 and dy == 0.0:
        return scn
    return replace(
        scn,
        origin=(scn.origin[0] + dx, scn.origin[1] + dy),
        centerline=tuple((x + dx, y + dy) for x, y in scn.centerline),
        start=EgoPose(scn.start.x + dx, scn.start.y + dy, scn.start.yaw),
        goal=(scn.goal[0] + dx, scn.goal[1] + dy),
    )


def with_shift(scn: Scenario, dx: float, dy: float) -> Scenario:
    """Scenario with the map frame displaced by (dx, dy); obstacles keep
    their world positions. Used by the shift-suite experiments."""
    shifted = _shift_frame(scn, dx, dy)
    return replace(shifted, shift=(scn.shift[0] + dx, scn.shift[1] + dy))


def scenario_from_dict(doc: dict, name: str = "scenario") -> Scenario:
    try:
        m = doc["map"]
        origin = (float(m["origin"][0]), float(m["origin"][1]))
        cell_size = float(m["cell_size"])
        width = int(m["width"])
        height = int(m["height"])
        centerline = tuple((float(p[0]), float(p[1])) for p in doc["centerline"])
        obstacles = tuple(
            Obstacle(
                float(o["x"]),
                float(o["y"]),
                float(o["radius"]),
                str(o.get("category", "obstacle")),
                bool(o.get("dynamic", False)),
            )
            for o in doc["obstacles"]
        )
        start = EgoPose(
            float(doc["start"]["x"]),
            float(doc["start"]["y"]),
            float(doc["start"].get("yaw", 0.0)),
        )
        goal = (float(doc["goal"]["x"]), float(doc["goal"]["y"]))
        shifts = tuple(
            (float(s[0]), float(s[1])) for s in doc.get("shifts", [])
        )
        inflation = doc.get("inflation", {})
        pl = doc.get("planner", {})
        planner = PlannerConfig(
            epsilon=float(pl.get("epsilon", PlannerConfig().epsilon)),
            n_keep=int(pl.get("n_keep", PlannerConfig().n_keep)),
            w_rep=float(pl.get("w_rep", PlannerConfig().w_rep)),
            d_infl_cells=float(pl.get("d_infl_cells", PlannerConfig().d_infl_cells)),
        )
        scn = Scenario(
            name=str(doc.get("name", name)),
            origin=origin,
            cell_size=cell_size,
            width=width,
            height=height,
            centerline=centerline,
            obstacles=obstacles,
            start=start,
            goal=goal,
            goal_capture=float(doc.get("goal_capture", 2.0)),
            target_speed=float(doc.get("target_speed", 4.2)),
            shifts=shifts,
            vehicle_factor=float(inflation.get("vehicle_factor", 1.1)),
            static_extra=float(inflation.get("static_extra", 0.1)),
            planner=planner,
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ValueError(f"bad scenario document: {exc}") from exc
    shift = doc.get("shift", [0.0, 0.0])
    scn = _shift_frame(scn, float(shift[0]), float(shift[1]))
    return replace(scn, shift=(float(shift[0]), float(shift[1])))


def scenario_to_dict(scn: Scenario) -> dict:
    return {
        "name": scn.name,
        "map": {
            "origin": list(scn.origin),
            "cell_size": scn.cell_size,
            "width": scn.width,
            "height": scn.height,
        },
        "centerline": [list(p) for p in scn.centerline],
        "obstacles": [
            {
                "x": o.x,
                "y": o.y,
                "radius": o.radius,
                "category": o.category,
                "dynamic": o.dynamic,
            }
            for o in scn.obstacles
        ],
        "start": {"x": scn.start.x, "y": scn.start.y, "yaw": scn.start.yaw},
        "goal": {"x": scn.goal[0], "y": scn.goal[1]},
        "goal_capture": scn.goal_capture,
        "target_speed": scn.target_speed,
        # the frame is stored post-shift; keep the provenance under a key
        # the loader does not re-apply
        "applied_shift": list(scn.shift),
        "shifts": [list(s) for s in scn.shifts],
        "inflation": {
            "vehicle_factor": scn.vehicle_factor,
            "static_extra": scn.static_extra,
        },
        "planner": {
            "epsilon": scn.planner.epsilon,
            "n_keep": scn.planner.n_keep,
            "w_rep": scn.planner.w_rep,
            "d_infl_cells": scn.planner.d_infl_cells,
        },
        "seed": scn.seed,
    }


def list_bundled() -> list[str]:
    names = []
    for entry in _data_root().iterdir():
        if entry.name.endswith(".json"):
            names.append(entry.name[: -len(".json")])
    return sorted(names)


def load_scenario(ref: str) -> Scenario:
    """Load from a file path, or by bundled fixture name when no such file
    exists (`scenario1`, `case_study`, ...)."""
    if os.path.exists(ref):
        with open(ref, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        name = os.path.splitext(os.path.basename(ref))[0]
        return scenario_from_dict(doc, name)
    stem = ref[: -len(".json")] if ref.endswith(".json") else ref
    candidate = _data_root() / (stem + ".json")
    if candidate.is_file():
        doc = json.loads(candidate.read_text(encoding="utf-8"))
        return scenario_from_dict(doc, stem)
    raise FileNotFoundError(
        f"scenario {ref!r} is neither a file nor a bundled fixture "
        f"(bundled: {', '.join(list_bundled())})"
    )


def save_scenario(scn: Scenario, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scn), fh, indent=2)
        fh.write("\n")
