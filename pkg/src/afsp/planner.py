"""Directive-guided grid search.

The search runs over an extended state (cell, previous move, directive
index, keep counter). Each expansion is scored geometrically (1 straight,
sqrt(2) diagonal) plus an alignment cost that rewards moves realizing the
pending directive and penalizes postponement, contradiction, and
repetition. Per-step increments are clamped below by a small epsilon so
accumulated cost stays increasing; a plan succeeds only when the goal cell
is reached with every directive realized.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import NamedTuple, Optional, Sequence

from .decision import Directive, DirectivePlan
from .worldmodel import GridMap

SQRT2 = math.sqrt(2.0)

EPSILON = 0.01
DEFAULT_N_KEEP = 2
DEFAULT_W_REP = 2.0
DEFAULT_D_INFL_CELLS = 2.0


class Move(IntEnum):
    F = 0
    FL = 1
    FR = 2


class AlignmentCategory(Enum):
    CORRECT = "correct"
    DELAY = "delay"
    WRONG = "wrong"
    OVERACT = "overact"
    NEUTRAL = "neutral"


@dataclass(frozen=True)
class SemanticCosts:
    """Alignment cost tuple theta = (c_corr, c_delay, c_wrong, c_over).

    Tuned values satisfy c_corr < 0 and c_wrong > 0 (see validate); the
    constructor stays permissive so classical all-zero runs are expressible.
    """

    c_corr: float = -5.0
    c_delay: float = 1.0
    c_wrong: float = 5.0
    c_over: float = 0.8

    def validate(self) -> "SemanticCosts":
        if not (self.c_corr < 0.0):
            raise ValueError("c_corr must be negative")
        if not (self.c_wrong > 0.0):
            raise ValueError("c_wrong must be positive")
        if self.c_delay < 0.0 or self.c_over < 0.0:
            raise ValueError("c_delay and c_over must be non-negative")
        return self

    @classmethod
    def zero(cls) -> "SemanticCosts":
        return cls(0.0, 0.0, 0.0, 0.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.c_corr, self.c_delay, self.c_wrong, self.c_over)


@dataclass(frozen=True)
class PlannerConfig:
    epsilon: float = EPSILON
    n_keep: int = DEFAULT_N_KEEP
    w_rep: float = DEFAULT_W_REP
    d_infl_cells: float = DEFAULT_D_INFL_CELLS

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.n_keep < 1:
            raise ValueError("n_keep must be at least 1")


class SearchState(NamedTuple):
    cell: tuple[int, int]
    prev_move: Move
    k: int
    keep_run: int


class SemanticStep(NamedTuple):
    cost: float
    completed: bool
    category: AlignmentCategory
    keep_run: int


@dataclass(frozen=True)
class PlanEvent:
    """One non-neutral alignment event along the returned path."""

    trial_index: int
    category: AlignmentCategory
    world_location: tuple[float, float]
    nearest_obstacle_distance: float
    directive_index: int


@dataclass(frozen=True)
class PlanResult:
    cells: tuple[tuple[int, int], ...]
    world_path: tuple[tuple[float, float], ...]
    moves: tuple[Move, ...]
    events: tuple[PlanEvent, ...]
    realized: tuple[Directive, ...]
    total_cost: float
    success: bool
    requested: tuple[Directive, ...] = ()
    expanded: int = 0


class PlanningError(RuntimeError):
    """Preconditions for a search are not met (blocked or off-grid cells)."""


def route_axis(grid: GridMap) -> tuple[int, int]:
    """Cell-step direction of travel, from the centerline's dominant
    displacement. One of (+-1, 0) or (0, +-1)."""
    pts = grid.centerline
    if pts.shape[0] < 2:
        return (1, 0)
    dx = float(pts[-1, 0] - pts[0, 0])
    dy = float(pts[-1, 1] - pts[0, 1])
    if abs(dx) >= abs(dy):
        return (1 if dx >= 0 else -1, 0)
    return (0, 1 if dy >= 0 else -1)


def move_deltas(axis: tuple[int, int]) -> dict[Move, tuple[int, int]]:
    """Cell deltas for F/FL/FR given the travel axis. Left is the axis
    rotated 90 degrees counterclockwise; no reverse or pure-lateral steps."""
    fx, fy = axis
    lx, ly = -fy, fx
    return {
        Move.F: (fx, fy),
        Move.FL: (fx + lx, fy + ly),
        Move.FR: (fx - lx, fy - ly),
    }


def move_label(
    from_cell: tuple[int, int],
    to_cell: tuple[int, int],
    axis: tuple[int, int] = (1, 0),
) -> Move:
    """Classify a cell step as F/FL/FR for the given axis; anything else is
    outside the motion template."""
    delta = (to_cell[0] - from_cell[0], to_cell[1] - from_cell[1])
    for move, d in move_deltas(axis).items():
        if d == delta:
            return move
    raise ValueError(f"step {delta} is not in the motion template for axis {axis}")


def geometric_cost(move: Move) -> float:
    return 1.0 if move == Move.F else SQRT2


def semantic_step_cost(
    prev: Move,
    curr: Move,
    directive: Optional[Directive],
    costs: SemanticCosts,
    keep_run: int = 0,
    last_completed: Optional[Directive] = None,
    n_keep: int = DEFAULT_N_KEEP,
) -> SemanticStep:
    """Alignment cost of one move against the pending directive.

    directive None means the plan is exhausted (all directives realized).
    Returns the cost, whether the pending directive completed, the category,
    and the keep counter to carry forward.
    """
    if directive is None:
        if curr == Move.F:
            return SemanticStep(0.0, False, AlignmentCategory.NEUTRAL, 0)
        repeating = (curr == Move.FL and last_completed == Directive.LEFT) or (
            curr == Move.FR and last_completed == Directive.RIGHT
        )
        if repeating:
            return SemanticStep(costs.c_over, False, AlignmentCategory.OVERACT, 0)
        return SemanticStep(costs.c_wrong, False, AlignmentCategory.WRONG, 0)

    if directive == Directive.LEFT:
        if curr == Move.FL:
            return SemanticStep(costs.c_corr, True, AlignmentCategory.CORRECT, 0)
        if curr == Move.F:
            return SemanticStep(costs.c_delay, False, AlignmentCategory.DELAY, 0)
        return SemanticStep(costs.c_wrong, False, AlignmentCategory.WRONG, 0)

    if directive == Directive.RIGHT:
        if curr == Move.FR:
            return SemanticStep(costs.c_corr, True, AlignmentCategory.CORRECT, 0)
        if curr == Move.F:
            return SemanticStep(costs.c_delay, False, AlignmentCategory.DELAY, 0)
        return SemanticStep(costs.c_wrong, False, AlignmentCategory.WRONG, 0)

    # keep: forward cells accumulate; the run completes at n_keep
    if curr == Move.F:
        run = keep_run + 1
        if run >= n_keep:
            return SemanticStep(costs.c_corr, True, AlignmentCategory.CORRECT, 0)
        return SemanticStep(costs.c_delay, False, AlignmentCategory.DELAY, run)
    matching = (curr == Move.FL and last_completed == Directive.LEFT) or (
        curr == Move.FR and last_completed == Directive.RIGHT
    )
    if matching:
        return SemanticStep(costs.c_over, False, AlignmentCategory.OVERACT, 0)
    return SemanticStep(costs.c_wrong, False, AlignmentCategory.WRONG, 0)


def heuristic(
    cell: tuple[int, int],
    goal_cell: tuple[int, int],
    grid: GridMap,
    config: PlannerConfig = PlannerConfig(),
) -> float:
    """Octile distance plus a repulsive bump near inflated obstacles.

    The repulsive term can overestimate; no optimality claim is made when
    it is active (w_rep > 0).
    """
    di = abs(goal_cell[0] - cell[0])
    dj = abs(goal_cell[1] - cell[1])
    h = max(di, dj) + (SQRT2 - 1.0) * min(di, dj)
    if config.w_rep > 0.0 and grid.obstacles:
        cx, cy = grid.cell_center(cell)
        for ob in grid.obstacles:
            d_cells = max(0.0, ob.distance_to(cx, cy)) / grid.cell_size
            if d_cells < config.d_infl_cells:
                h += config.w_rep * (1.0 - d_cells / config.d_infl_cells)
    return h


def _directives_of(directives) -> tuple[Directive, ...]:
    if directives is None:
        return ()
    if isinstance(directives, DirectivePlan):
        return directives.directives
    return tuple(Directive(d) for d in directives)


def _nearest_obstacle_distance(grid: GridMap, x: float, y: float) -> float:
    if not grid.obstacles:
        return math.inf
    return min(ob.distance_to(x, y) for ob in grid.obstacles)


def plan(
    grid: GridMap,
    start_cell: tuple[int, int],
    goal_cell: tuple[int, int],
    directives=None,
    costs: SemanticCosts = SemanticCosts(),
    config: PlannerConfig = PlannerConfig(),
    trial_index: int = 1,
) -> PlanResult:
    """Best-first search for a goal-reaching path that realizes every
    directive in order.

    Ties on f break toward larger g, then larger directive progress, then
    lexicographic (i, j, move). Failure (no state with all directives
    realized at the goal) returns the deepest partial result instead of
    raising.
    """
    requested = _directives_of(directives)
    for name, cell in (("start", start_cell), ("goal", goal_cell)):
        if not grid.in_bounds(cell):
            raise PlanningError(f"{name} cell {cell} is outside the grid")
        if grid.is_blocked(cell):
            raise PlanningError(f"{name} cell {cell} is blocked")

    T = len(requested)
    n_keep = config.n_keep
    deltas = move_deltas(route_axis(grid))
    start = SearchState(tuple(start_cell), Move.F, 0, 0)

    g_best: dict[SearchState, float] = {start: 0.0}
    parent: dict[SearchState, tuple[Optional[SearchState], Optional[Move], AlignmentCategory]] = {
        start: (None, None, AlignmentCategory.NEUTRAL)
    }
    h0 = heuristic(start.cell, goal_cell, grid, config)
    open_heap: list[tuple] = []
    seq = 0
    heapq.heappush(
        open_heap, (h0, 0.0, 0, start.cell[0], start.cell[1], int(start.prev_move), seq, start)
    )
    expanded = 0
    best_partial: Optional[tuple[tuple, SearchState]] = None
    goal_state: Optional[SearchState] = None

    while open_heap:
        f, neg_g, neg_k, _, _, _, _, state = heapq.heappop(open_heap)
        g = -neg_g
        if g > g_best.get(state, math.inf):
            continue
        expanded += 1

        at_goal = state.cell == tuple(goal_cell)
        partial_key = (-state.k, 0 if at_goal else 1, f)
        if best_partial is None or partial_key < best_partial[0]:
            best_partial = (partial_key, state)
        if at_goal and state.k == T:
            goal_state = state
            break

        pending = requested[state.k] if state.k < T else None
        last_completed = requested[state.k - 1] if state.k >= 1 else None
        for move in (Move.F, Move.FL, Move.FR):
            di, dj = deltas[move]
            nxt_cell = (state.cell[0] + di, state.cell[1] + dj)
            if not grid.in_bounds(nxt_cell) or grid.is_blocked(nxt_cell):
                continue
            step = semantic_step_cost(
                state.prev_move,
                move,
                pending,
                costs,
                keep_run=state.keep_run,
                last_completed=last_completed,
                n_keep=n_keep,
            )
            increment = max(geometric_cost(move) + step.cost, config.epsilon)
            nxt = SearchState(
                nxt_cell,
                move,
                state.k + 1 if step.completed else state.k,
                step.keep_run,
            )
            ng = g + increment
            if ng >= g_best.get(nxt, math.inf):
                continue
            g_best[nxt] = ng
            parent[nxt] = (state, move, step.category)
            nf = ng + heuristic(nxt_cell, goal_cell, grid, config)
            seq += 1
            heapq.heappush(
                open_heap,
                (nf, -ng, -nxt.k, nxt_cell[0], nxt_cell[1], int(move), seq, nxt),
            )

    success = goal_state is not None
    final = goal_state if success else (best_partial[1] if best_partial else start)

    chain: list[SearchState] = []
    node: Optional[SearchState] = final
    while node is not None:
        chain.append(node)
        node = parent[node][0]
    chain.reverse()

    cells = tuple(s.cell for s in chain)
    world_path = tuple(grid.cell_center(c) for c in cells)
    moves = []
    events = []
    for s in chain[1:]:
        _, move, category = parent[s]
        moves.append(move)
        if category != AlignmentCategory.NEUTRAL:
            x, y = grid.cell_center(s.cell)
            prev_k = parent[s][0].k if parent[s][0] is not None else 0
            events.append(
                PlanEvent(
                    trial_index=trial_index,
                    category=category,
                    world_location=(x, y),
                    nearest_obstacle_distance=_nearest_obstacle_distance(grid, x, y),
                    directive_index=prev_k,
                )
            )
    realized = requested[: final.k]
    return PlanResult(
        cells=cells,
        world_path=world_path,
        moves=tuple(moves),
        events=tuple(events),
        realized=realized,
        total_cost=g_best[final],
        success=success,
        requested=requested,
        expanded=expanded,
    )


def realized_sequence(result: PlanResult) -> list[Directive]:
    """Directives completed along the path, in completion order."""
    return list(result.realized)


def path_pattern(moves: Sequence[Move], n_keep: int = DEFAULT_N_KEEP) -> list[Directive]:
    """Directive-like shape of a raw move sequence: each lateral move maps
    to left/right, and a run of at least n_keep forward moves between
    laterals maps to keep. Used to compare unguided paths against guides."""
    seq: list[Directive] = []
    run_f = 0
    for m in moves:
        if m == Move.F:
            run_f += 1
            continue
        if seq and run_f >= n_keep:
            seq.append(Directive.KEEP)
        run_f = 0
        seq.append(Directive.LEFT if m == Move.FL else Directive.RIGHT)
    return seq
