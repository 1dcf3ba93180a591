"""Closed-loop scenario harness.

Runs one of three schemes at 10 Hz until goal capture, collision, or
timeout: `mpc` tracks the lane centerline only, `astar_mpc` switches to a
classical shortest grid path once the (simulated) cloud delivers it, and
`afsp` runs the full stack: topology -> directives -> refined guided path
as the cloud reference behind the hysteresis switch. All schemes share one
controller configuration; only the reference differs.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .control import (
    MpcConfig,
    ReferencePair,
    SwitchingGate,
    VehicleState,
    reference_window,
    select_reference,
    solve_mpc,
    step_dynamics,
)
from .decision import decide, style_velocity
from .geometry import point_polyline_distance
from .planner import SemanticCosts, plan
from .refinement import InMemoryStore, run_refinement
from .scenarios import Scenario
from .svgplot import render_run
from .worldmodel import Obstacle, ego_polar, topology_from_obstacles

log = logging.getLogger(__name__)

SCHEMES = ("mpc", "astar_mpc", "afsp")
TRACE_COLUMNS = (
    "t",
    "x",
    "y",
    "yaw",
    "v_cmd",
    "omega_cmd",
    "z",
    "min_clearance",
    "lat_dev",
    "solve_iters",
)
DT_CTRL = 0.1
TIMEOUT_S = 60.0
CLOUD_LATENCY_S = 0.5
DYNAMIC_JITTER_M = 0.3
NO_OBSTACLE_CLEARANCE = 1e18


@dataclass(frozen=True)
class ScenarioMetrics:
    finish_time: float
    traj_length: float
    avg_lat_dev: float
    speed_var: float
    max_lat_dev: float
    success: bool


@dataclass(frozen=True)
class RunResult:
    scenario: str
    scheme: str
    seed: int
    rows: tuple[tuple, ...]
    metrics: ScenarioMetrics
    reason: str  # capture | collision | timeout
    info: dict
    obstacles: tuple[Obstacle, ...]  # perturbed, raw radii


def _run_rng(name: str, seed: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{name}:{seed}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def perturb_obstacles(
    obstacles: Sequence[Obstacle], rng: np.random.Generator, jitter: float = DYNAMIC_JITTER_M
) -> tuple[Obstacle, ...]:
    """Seeded placement noise on the dynamic-class discs only."""
    out = []
    for ob in obstacles:
        if ob.dynamic:
            dx, dy = rng.uniform(-jitter, jitter, size=2)
            out.append(Obstacle(ob.x + dx, ob.y + dy, ob.radius, ob.category, True))
        else:
            out.append(ob)
    return tuple(out)


def _discs(obstacles: Sequence[Obstacle]) -> np.ndarray:
    if not obstacles:
        return np.zeros((0, 3))
    return np.array([[ob.x, ob.y, ob.radius] for ob in obstacles], dtype=float)


def footprint_clearance(x: float, y: float, discs: np.ndarray, r_v: float) -> float:
    if discs.shape[0] == 0:
        return NO_OBSTACLE_CLEARANCE
    out = np.empty(1)
    kernels.DEFAULT.clearance_sweep(np.array([[x, y]], dtype=float), discs, r_v, out)
    return float(out[0])


def _with_runway(path: np.ndarray, length: float) -> np.ndarray:
    """Extend a polyline past its end along the final tangent. Grid paths
    stop at the goal cell; the reference window needs room beyond capture
    so the commanded speed does not taper before the goal is reached."""
    path = np.asarray(path, dtype=float)
    if path.shape[0] < 2 or length <= 0.0:
        return path
    d = path[-1] - path[-2]
    norm = math.hypot(d[0], d[1])
    if norm < 1e-9:
        return path
    return np.vstack([path, path[-1] + d / norm * length])


def simulate_tracking(
    start: VehicleState,
    local_path: np.ndarray,
    cloud_path: Optional[np.ndarray],
    z_source: Callable[[float, int, VehicleState, np.ndarray], int],
    obstacles: Sequence[Obstacle],
    goal: tuple[float, float],
    capture: float,
    v_target: float,
    centerline: np.ndarray,
    cfg: MpcConfig = MpcConfig(),
    dt_ctrl: float = DT_CTRL,
    timeout: float = TIMEOUT_S,
) -> tuple[list[tuple], bool, str]:
    """Drive the controller against the selected reference until capture,
    collision, or timeout. Every row carries the command solved at that
    state, so the trace ends on a real solve. Obstacles here are the
    inflated discs used for constraints and the clearance column alike."""
    discs = _discs(obstacles)
    centerline = np.asarray(centerline, dtype=float)
    local_path = np.asarray(local_path, dtype=float)
    cloud = None if cloud_path is None else np.asarray(cloud_path, dtype=float)
    rows: list[tuple] = []
    state = start
    u_warm = None
    success = False
    reason = "timeout"
    for tick in range(int(round(timeout / dt_ctrl)) + 1):
        t = tick * dt_ctrl
        clear = footprint_clearance(state.x, state.y, discs, cfg.r_v)
        lat = point_polyline_distance(state.x, state.y, centerline)
        local_win = reference_window(local_path, (state.x, state.y), v_target, cfg)
        if cloud is None:
            z = 0
            selected = local_win
        else:
            z = int(z_source(t, tick, state, local_win))
            cloud_win = reference_window(cloud, (state.x, state.y), v_target, cfg)
            selected = select_reference(
                ReferencePair(local_win, cloud_win, np.full(cfg.horizon + 1, z, dtype=int))
            )
        u, _predicted, info = solve_mpc(state, selected, obstacles, cfg, u_warm)
        u_warm = info.warm_start
        rows.append(
            (t, state.x, state.y, state.yaw, u.v, u.omega, z, clear, lat, int(info.iterations))
        )
        if math.hypot(state.x - goal[0], state.y - goal[1]) <= capture:
            success = True
            reason = "capture"
            break
        if clear < 0.0:
            success = False
            reason = "collision"
            break
        state = step_dynamics(state, u, dt_ctrl)
    return rows, success, reason


def compute_metrics(
    rows: Sequence[tuple],
    centerline,
    goal: tuple[float, float],
    capture: float = 2.0,
) -> ScenarioMetrics:
    """Path metrics over a trace: finish time at first capture, summed step
    length, mean/max unsigned centerline deviation, and commanded-speed
    range. Success means captured without an earlier negative clearance."""
    if not rows:
        raise ValueError("trace is empty")
    centerline = np.asarray(centerline, dtype=float)
    t = np.array([r[0] for r in rows], dtype=float)
    x = np.array([r[1] for r in rows], dtype=float)
    y = np.array([r[2] for r in rows], dtype=float)
    v = np.array([r[4] for r in rows], dtype=float)
    clear = np.array([r[7] for r in rows], dtype=float)
    within = np.hypot(x - goal[0], y - goal[1]) <= capture
    captured = bool(within.any())
    end = int(np.argmax(within)) if captured else len(rows) - 1
    collided = bool((clear[:end] < 0.0).any()) if captured else bool((clear < 0.0).any())
    sl = slice(0, end + 1)
    tlen = float(np.hypot(np.diff(x[sl]), np.diff(y[sl])).sum())
    lat = np.array(
        [point_polyline_distance(xi, yi, centerline) for xi, yi in zip(x[sl], y[sl])]
    )
    return ScenarioMetrics(
        finish_time=float(t[end]),
        traj_length=tlen,
        avg_lat_dev=float(lat.mean()),
        speed_var=float(v[sl].max() - v[sl].min()),
        max_lat_dev=float(lat.max()),
        success=captured and not collided,
    )


def run_scenario(
    scn: Scenario,
    scheme: str,
    seed: int = 0,
    mpc_cfg: Optional[MpcConfig] = None,
    memory=None,
    decision_endpoint: Optional[str] = None,
    max_retries: int = 6,
) -> RunResult:
    """One closed-loop run. The seed perturbs dynamic obstacles; everything
    downstream is deterministic. Without an explicit memory store the
    refinement uses a fresh in-memory one so repeated runs are identical."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    cfg = mpc_cfg if mpc_cfg is not None else MpcConfig()
    rng = _run_rng(scn.name, seed)
    obstacles = perturb_obstacles(scn.obstacles, rng)
    inflated = scn.inflated_obstacles(obstacles)
    centerline = np.asarray(scn.centerline, dtype=float)
    info: dict = {}
    v_target = scn.target_speed
    cloud_path = None
    z_source = None

    if scheme in ("astar_mpc", "afsp"):
        grid = scn.build_grid(footprint_pad=cfg.r_v, obstacles=obstacles)
        goal_cell = grid.snap_cell(scn.goal, toward=scn.goal)
        start_cell = grid.snap_cell((scn.start.x, scn.start.y), toward=scn.goal)

    if scheme == "astar_mpc":
        result = plan(
            grid,
            start_cell,
            goal_cell,
            None,
            costs=SemanticCosts.zero(),
            config=replace(scn.planner, w_rep=0.0),
        )
        if not result.success:
            log.warning("%s: grid path search failed; tracking its best partial", scn.name)
        cloud_path = np.asarray(result.world_path, dtype=float)
        cloud_path = _with_runway(
            cloud_path, cfg.horizon * cfg.dt * v_target + scn.goal_capture
        )
        info["expanded"] = result.expanded

        def z_source(t, tick, state, local_win):
            return 1 if t >= CLOUD_LATENCY_S else 0

    elif scheme == "afsp":
        topology = topology_from_obstacles(inflated, scn.start)
        bearing = ego_polar(scn.goal, scn.start)[1]
        dplan = decide(topology, bearing, endpoint=decision_endpoint)
        v_target = style_velocity(dplan.style, scn.target_speed)
        store = memory if memory is not None else InMemoryStore()
        outcome = run_refinement(
            grid, dplan, k_max=max_retries, store=store, config=scn.planner
        )
        if not outcome.accepted:
            log.warning(
                "%s: refinement unaccepted after %d trials; using its last path",
                scn.name,
                outcome.trials_used,
            )
        cloud_path = np.asarray(outcome.result.world_path, dtype=float)
        cloud_path = _with_runway(
            cloud_path, cfg.horizon * cfg.dt * v_target + scn.goal_capture
        )
        gate = SwitchingGate(cfg)

        def z_source(t, tick, state, local_win):
            return gate.step(state, local_win, inflated, t >= CLOUD_LATENCY_S)

        info.update(
            directives=dplan.tokens(),
            style=dplan.style.value,
            trials=outcome.trials_used,
            accepted=outcome.accepted,
        )

    rows, _success, reason = simulate_tracking(
        VehicleState(scn.start.x, scn.start.y, scn.start.yaw),
        centerline,
        cloud_path,
        z_source,
        inflated,
        scn.goal,
        scn.goal_capture,
        v_target,
        centerline,
        cfg,
    )
    metrics = compute_metrics(rows, centerline, scn.goal, scn.goal_capture)
    return RunResult(
        scn.name, scheme, seed, tuple(rows), metrics, reason, info, obstacles
    )


def trace_csv_text(rows: Sequence[tuple]) -> str:
    """Trace serialization used for all on-disk traces: header plus one
    line per row, floats via repr so equal runs give equal bytes."""
    lines = [",".join(TRACE_COLUMNS)]
    for row in rows:
        cells = []
        for name, value in zip(TRACE_COLUMNS, row):
            if name in ("z", "solve_iters"):
                cells.append(str(int(value)))
            else:
                cells.append(repr(float(value)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_trace(path: str, rows: Sequence[tuple]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(trace_csv_text(rows))


def run_svg(result: RunResult, scn: Scenario) -> str:
    xs = [r[1] for r in result.rows]
    ys = [r[2] for r in result.rows]
    zs = [r[6] for r in result.rows]
    title = (
        f"{scn.name} / {result.scheme} / seed {result.seed}: {result.reason}, "
        f"FTime {result.metrics.finish_time:.1f} s, MLat {result.metrics.max_lat_dev:.2f} m"
    )
    return render_run(
        list(scn.centerline),
        result.obstacles,
        xs,
        ys,
        zs,
        goal=scn.goal,
        goal_radius=scn.goal_capture,
        title=title,
    )


METRIC_FIELDS = (
    ("FTime", "finish_time"),
    ("TLen", "traj_length"),
    ("AvgLD", "avg_lat_dev"),
    ("SVar", "speed_var"),
    ("MLat", "max_lat_dev"),
)


def aggregate(results: Sequence[RunResult]) -> list[dict]:
    """Per (scenario, scheme) means over the successful runs, in first-seen
    order; a cell with no successes carries None for every metric."""
    order: list[tuple[str, str]] = []
    buckets: dict[tuple[str, str], list[RunResult]] = {}
    for res in results:
        key = (res.scenario, res.scheme)
        if key not in buckets:
            order.append(key)
            buckets[key] = []
        buckets[key].append(res)
    table = []
    for key in order:
        runs = buckets[key]
        good = [r.metrics for r in runs if r.metrics.success]
        row = {
            "scenario": key[0],
            "scheme": key[1],
            "n_runs": len(runs),
            "n_success": len(good),
        }
        for label, attr in METRIC_FIELDS:
            row[label] = (
                float(np.mean([getattr(m, attr) for m in good])) if good else None
            )
        table.append(row)
    return table


def table_csv_text(table: Sequence[dict]) -> str:
    header = ["scenario", "scheme", "n_runs", "n_success"] + [f for f, _ in METRIC_FIELDS]
    lines = [",".join(header)]
    for row in table:
        cells = []
        for col in header:
            value = row[col]
            if value is None:
                cells.append("n/a")
            elif isinstance(value, float):
                cells.append(repr(value))
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def run_benchmark(
    scenarios: Sequence[Scenario],
    schemes: Sequence[str] = SCHEMES,
    n_seeds: int = 10,
    out_dir: Optional[str] = None,
    mpc_cfg: Optional[MpcConfig] = None,
    max_retries: int = 6,
    seeds: Optional[Sequence[int]] = None,
) -> tuple[list[dict], list[RunResult]]:
    """Full grid of (scenario, scheme, seed) runs plus the aggregate table.
    `seeds` overrides the default range(n_seeds). With out_dir set, writes
    benchmark.csv, one trace CSV per run, and one SVG per run."""
    seed_list = list(seeds) if seeds is not None else list(range(n_seeds))
    if not seed_list:
        raise ValueError("at least one seed is required")
    results: list[RunResult] = []
    if out_dir:
        os.makedirs(os.path.join(out_dir, "traces"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "plots"), exist_ok=True)
    for scn in scenarios:
        for scheme in schemes:
            for seed in seed_list:
                res = run_scenario(
                    scn, scheme, seed=seed, mpc_cfg=mpc_cfg, max_retries=max_retries
                )
                results.append(res)
                if out_dir:
                    stem = f"{scn.name}_{scheme}_seed{seed}"
                    write_trace(
                        os.path.join(out_dir, "traces", stem + ".csv"), res.rows
                    )
                    with open(
                        os.path.join(out_dir, "plots", stem + ".svg"),
                        "w",
                        encoding="utf-8",
                    ) as fh:
                        fh.write(run_svg(res, scn))
                        fh.write("\n")
    table = aggregate(results)
    if out_dir:
        with open(os.path.join(out_dir, "benchmark.csv"), "w", encoding="utf-8") as fh:
            fh.write(table_csv_text(table))
    return table, results
