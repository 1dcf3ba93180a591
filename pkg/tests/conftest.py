"""Shared fixtures and independent oracle helpers for the test suite."""

from __future__ import annotations

import heapq
import itertools
import math

import numpy as np
import pytest

from afsp.worldmodel import EgoPose, GridMap

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Independent oracles. These deliberately re-derive behavior from first
# principles (no imports of the functions under test) so agreement is
# evidence, not tautology.
# ---------------------------------------------------------------------------


def oracle_polar(dx: float, dy: float, yaw: float) -> tuple[float, float]:
    """Rotate-then-polar via complex arithmetic, unquantized."""
    z = complex(dx, dy) * complex(math.cos(-yaw), math.sin(-yaw))
    return abs(z), math.degrees(math.atan2(z.imag, z.real))


def oracle_semantic_step(prev, curr, directive, theta, keep_run, last_completed, n_keep):
    """Re-derivation of the per-move alignment table.

    Returns (cost, completed, category_name, next_keep_run).
    """
    c_corr, c_delay, c_wrong, c_over = theta
    is_lat = curr in ("FL", "FR")
    if directive is None:
        if not is_lat:
            return 0.0, False, "NEUTRAL", 0
        repeat = (curr == "FL" and last_completed == "left") or (
            curr == "FR" and last_completed == "right"
        )
        return (c_over, False, "OVERACT", 0) if repeat else (c_wrong, False, "WRONG", 0)
    if directive == "left":
        if curr == "FL":
            return c_corr, True, "CORRECT", 0
        if curr == "F":
            return c_delay, False, "DELAY", 0
        return c_wrong, False, "WRONG", 0
    if directive == "right":
        if curr == "FR":
            return c_corr, True, "CORRECT", 0
        if curr == "F":
            return c_delay, False, "DELAY", 0
        return c_wrong, False, "WRONG", 0
    # keep
    if curr == "F":
        run = keep_run + 1
        if run >= n_keep:
            return c_corr, True, "CORRECT", 0
        return c_delay, False, "DELAY", run
    match = (curr == "FL" and last_completed == "left") or (
        curr == "FR" and last_completed == "right"
    )
    return (c_over, False, "OVERACT", 0) if match else (c_wrong, False, "WRONG", 0)


def oracle_path_cost(moves, directives, theta, n_keep=2, epsilon=0.01):
    """Accumulated clamped cost of a move sequence against a directive list.

    Returns (total_cost, realized_count). Moves are 'F'/'FL'/'FR' strings;
    directives are 'left'/'right'/'keep' strings.
    """
    total = 0.0
    k = 0
    keep_run = 0
    for mv in moves:
        pending = directives[k] if k < len(directives) else None
        last = directives[k - 1] if k >= 1 else None
        cost, done, _cat, keep_run = oracle_semantic_step(
            None, mv, pending, theta, keep_run, last, n_keep
        )
        geom = 1.0 if mv == "F" else SQRT2
        total += max(geom + cost, epsilon)
        if done:
            k += 1
    return total, k


def oracle_dijkstra(blocked: np.ndarray, start, goal) -> float | None:
    """Plain shortest path over the F/FL/FR template (axis +i), costs
    1 / sqrt(2). Returns None when the goal is unreachable."""
    w, h = blocked.shape
    dist = {tuple(start): 0.0}
    heap = [(0.0, tuple(start))]
    moves = ((1, 0, 1.0), (1, 1, SQRT2), (1, -1, SQRT2))
    while heap:
        d, cell = heapq.heappop(heap)
        if d > dist.get(cell, math.inf):
            continue
        if cell == tuple(goal):
            return d
        for di, dj, c in moves:
            nxt = (cell[0] + di, cell[1] + dj)
            if not (0 <= nxt[0] < w and 0 <= nxt[1] < h) or blocked[nxt]:
                continue
            nd = d + c
            if nd < dist.get(nxt, math.inf):
                dist[nxt] = nd
                heapq.heappush(heap, (nd, nxt))
    return None


def oracle_best_assignment(sim: np.ndarray) -> float:
    """Exhaustive maximum total similarity over injective row-column maps."""
    sim = np.asarray(sim, dtype=float)
    m, n = sim.shape
    if m <= n:
        return max(
            sum(sim[i, c] for i, c in enumerate(cols))
            for cols in itertools.permutations(range(n), m)
        )
    return oracle_best_assignment(sim.T)


def random_grid(rng: np.random.Generator, width=15, height=15, density=0.18,
                start=(0, 7), goal=(14, 7)) -> GridMap:
    """Random occupancy map with unblocked start/goal and a straight
    centerline along +x (travel axis +i)."""
    blocked = rng.random((width, height)) < density
    blocked[start] = False
    blocked[goal] = False
    return GridMap(
        origin=(0.0, 0.0),
        cell_size=1.0,
        width=width,
        height=height,
        blocked=blocked,
        centerline=np.array([[0.0, height / 2], [float(width), height / 2]]),
        start=EgoPose(start[0] + 0.5, start[1] + 0.5, 0.0),
        goal=(goal[0] + 0.5, goal[1] + 0.5),
    )


def empty_grid(width: int, height: int, cell_size: float = 1.0, obstacles=()) -> GridMap:
    return GridMap.build(
        origin=(0.0, 0.0),
        cell_size=cell_size,
        width=width,
        height=height,
        centerline=np.array([[0.0, height * cell_size / 2], [width * cell_size, height * cell_size / 2]]),
        obstacles=obstacles,
    )


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20260816)
