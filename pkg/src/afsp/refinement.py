"""Iterative tuning of alignment costs from planner feedback.

Each trial plans with the current cost tuple, summarizes how the path
realized the guidance (trigger placement, contradictions, repetition,
oscillation), and either accepts and persists the configuration or applies
one deterministic repair rule and retries. Previously accepted scenes warm
start similar ones through an append-only JSON-lines store keyed by a
scene signature.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional, Sequence

import numpy as np
import requests
from filelock import FileLock

from .decision import Directive, DirectivePlan
from .planner import (
    AlignmentCategory,
    Move,
    PlanResult,
    PlannerConfig,
    SemanticCosts,
    plan,
)
from .worldmodel import GridMap, mean_centerline_distance

log = logging.getLogger(__name__)

DEFAULT_THETA = SemanticCosts(-5.0, 1.0, 5.0, 0.8)
DELAY_SCHEDULE = (0.5, 0.2, 0.1)
DELAY_FLOOR = 0.1
LATE_DELAY_BUMP = 0.5
WRONG_BUMP = 2.0
OVERACT_BUMP = 0.4
OSCILLATION_WINDOW = 4


@dataclass(frozen=True)
class FeedbackThresholds:
    d_min: float = 1.0
    d_max: float = 6.0


@dataclass(frozen=True)
class TriggerEvent:
    world_location: tuple[float, float]
    nearest_obstacle_distance: float
    directive_index: int


@dataclass(frozen=True)
class PlannerFeedback:
    """Per-trial summary the repair rules consume."""

    trial_index: int
    trigger_events: tuple[TriggerEvent, ...]
    wrong_count: int
    overact_count: int
    realized_ok: bool
    oscillation: bool


class RefinementServiceError(RuntimeError):
    """Remote refiner failure; carries the raw reply when one was read."""

    def __init__(self, message: str, raw_reply: Optional[str] = None):
        super().__init__(message)
        self.raw_reply = raw_reply


def guide_hash(tokens: Sequence[str]) -> float:
    """Stable 48-bit hash of a directive token sequence (exact in a float)."""
    digest = hashlib.sha256(",".join(tokens).encode("utf-8")).digest()
    return float(int.from_bytes(digest[:6], "big"))


def scene_signature(grid: GridMap, guidance) -> np.ndarray:
    """Five-feature scene key: grid width, grid height, obstacle count,
    mean obstacle distance to the centerline, guidance token hash."""
    tokens = _tokens(guidance)
    return np.array(
        [
            float(grid.width),
            float(grid.height),
            float(len(grid.obstacles)),
            mean_centerline_distance(grid.obstacles, grid.centerline),
            guide_hash(tokens),
        ]
    )


def _tokens(guidance) -> list[str]:
    if isinstance(guidance, DirectivePlan):
        return guidance.tokens()
    return [d.value if isinstance(d, Directive) else str(d) for d in guidance]


class InMemoryStore:
    """Volatile store with the JSONL store's interface."""

    def __init__(self):
        self._records: list[dict] = []

    def append(self, record: dict) -> None:
        self._records.append(json.loads(json.dumps(record)))

    def snapshot(self) -> list[dict]:
        return [dict(r) for r in self._records]


class JsonlStore:
    """Append-only JSON-lines scene memory.

    Writes serialize through an exclusive lock next to the file; reads
    parse a snapshot without locking and skip corrupt records.
    """

    def __init__(self, path: str):
        self.path = str(path)
        self._lock = FileLock(self.path + ".lock")

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def snapshot(self) -> list[dict]:
        if not os.path.exists(self.path):
            return []
        records = []
        with open(self.path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError:
                    log.warning("%s:%d: skipping corrupt store record", self.path, lineno)
        return records


def _record_theta(record: dict) -> SemanticCosts:
    theta = record["theta"]
    if not isinstance(theta, list) or len(theta) != 4:
        raise ValueError("theta must be a list of four numbers")
    return SemanticCosts(*(float(v) for v in theta)).validate()


def select_ref_hyperparams(signature: np.ndarray, store) -> SemanticCosts:
    """Warm-start costs from the nearest stored scene.

    Candidates with the same guidance hash are preferred when any exist;
    distance is Euclidean over the four numeric features min-max normalized
    across the candidate set plus the query. Equal distances resolve to the
    newer record. An empty (or fully corrupt) store yields the defaults.
    """
    signature = np.asarray(signature, dtype=float)
    rows = []
    for idx, record in enumerate(store.snapshot() if store is not None else []):
        try:
            sig = np.asarray([float(v) for v in record["signature"]], dtype=float)
            if sig.shape != (5,):
                raise ValueError("signature must have five entries")
            theta = _record_theta(record)
            ts = str(record.get("ts", ""))
        except (KeyError, TypeError, ValueError) as exc:
            log.warning("skipping corrupt store record %d: %s", idx, exc)
            continue
        rows.append((sig, theta, ts, idx))
    if not rows:
        return DEFAULT_THETA

    matching = [r for r in rows if r[0][4] == signature[4]]
    if matching:
        rows = matching
    feats = np.array([r[0][:4] for r in rows])
    stack = np.vstack([feats, signature[:4]])
    lo = stack.min(axis=0)
    span = stack.max(axis=0) - lo
    span[span <= 0.0] = 1.0
    normed = (feats - lo) / span
    query = (signature[:4] - lo) / span
    dists = np.sqrt(((normed - query) ** 2).sum(axis=1))
    best = None
    for dist, (sig, theta, ts, idx) in zip(dists, rows):
        key = (round(float(dist), 12), _ts_rank(ts), -idx)
        if best is None or key < best[0]:
            best = (key, theta)
    return best[1]


def _ts_rank(ts: str) -> float:
    # newer timestamps sort first (negated epoch); unparsable ones last
    try:
        return -datetime.fromisoformat(ts).timestamp()
    except ValueError:
        return math.inf


def moves_oscillate(moves: Sequence[Move], window: int = OSCILLATION_WINDOW) -> bool:
    """True when any `window` consecutive moves contain two or more
    alternations between the two lateral moves."""
    moves = list(moves)
    for start in range(max(1, len(moves) - window + 1)):
        laterals = [m for m in moves[start : start + window] if m != Move.F]
        flips = sum(1 for a, b in zip(laterals, laterals[1:]) if a != b)
        if flips >= 2:
            return True
    return False


def feedback_from_result(result: PlanResult, trial_index: int) -> PlannerFeedback:
    """Summarize a plan for the repair rules. Trigger events are the
    directive realizations; their obstacle distance is what the timing
    rules threshold."""
    triggers = tuple(
        TriggerEvent(e.world_location, e.nearest_obstacle_distance, e.directive_index)
        for e in result.events
        if e.category == AlignmentCategory.CORRECT
    )
    wrong = sum(1 for e in result.events if e.category == AlignmentCategory.WRONG)
    over = sum(1 for e in result.events if e.category == AlignmentCategory.OVERACT)
    realized_ok = bool(result.success and result.realized == result.requested)
    return PlannerFeedback(
        trial_index=trial_index,
        trigger_events=triggers,
        wrong_count=wrong,
        overact_count=over,
        realized_ok=realized_ok,
        oscillation=moves_oscillate(result.moves),
    )


def astar_path_generate(
    grid: GridMap,
    guidance,
    theta: SemanticCosts,
    trial_index: int,
    config: PlannerConfig = PlannerConfig(),
    start_cell: Optional[tuple[int, int]] = None,
    goal_cell: Optional[tuple[int, int]] = None,
) -> tuple[PlanResult, PlannerFeedback]:
    """One guided planning trial plus its feedback summary. Start/goal
    default to the map anchors snapped onto the grid."""
    if start_cell is None or goal_cell is None:
        if grid.start is None or grid.goal is None:
            raise ValueError("grid carries no start/goal anchors; pass cells explicitly")
        goal_cell = goal_cell or grid.snap_cell(grid.goal, toward=grid.goal)
        start_cell = start_cell or grid.snap_cell((grid.start.x, grid.start.y), toward=grid.goal)
    result = plan(
        grid,
        start_cell,
        goal_cell,
        guidance,
        costs=theta,
        config=config,
        trial_index=trial_index,
    )
    return result, feedback_from_result(result, trial_index)


def acceptable(feedback: PlannerFeedback, thresholds: FeedbackThresholds = FeedbackThresholds()) -> bool:
    """A trial passes when the guidance was realized exactly, nothing was
    contradicted or repeated, no oscillation appears, and every trigger
    fired inside the obstacle-distance band."""
    if not feedback.realized_ok:
        return False
    if feedback.wrong_count > 0 or feedback.overact_count > 0:
        return False
    if feedback.oscillation:
        return False
    for ev in feedback.trigger_events:
        if not (thresholds.d_min <= ev.nearest_obstacle_distance <= thresholds.d_max):
            return False
    return True


def refine(
    theta: SemanticCosts,
    feedback: PlannerFeedback,
    thresholds: FeedbackThresholds = FeedbackThresholds(),
) -> SemanticCosts:
    """One deterministic repair step. Rule precedence: trigger timing
    first (premature, then late/missed), contradictions next, repetition
    and oscillation last. Exactly one rule fires per call."""
    premature = any(
        ev.nearest_obstacle_distance > thresholds.d_max for ev in feedback.trigger_events
    )
    late = (not feedback.realized_ok) or any(
        ev.nearest_obstacle_distance < thresholds.d_min for ev in feedback.trigger_events
    )
    if premature:
        step = _delay_schedule_step(theta.c_delay)
        new = SemanticCosts(
            theta.c_corr,
            max(DELAY_FLOOR, theta.c_delay - step),
            theta.c_wrong,
            theta.c_over,
        )
    elif late:
        new = SemanticCosts(
            theta.c_corr, theta.c_delay + LATE_DELAY_BUMP, theta.c_wrong, theta.c_over
        )
    elif feedback.wrong_count > 0:
        new = SemanticCosts(
            theta.c_corr, theta.c_delay, theta.c_wrong + WRONG_BUMP, theta.c_over
        )
    elif feedback.oscillation or feedback.overact_count > 0:
        new = SemanticCosts(
            theta.c_corr, theta.c_delay, theta.c_wrong, theta.c_over + OVERACT_BUMP
        )
    else:
        return theta.validate()
    return new.validate()


def _delay_schedule_step(c_delay: float) -> float:
    """Reduction size keyed to the current postponement cost so the
    sequence walks the schedule without loop-external state."""
    if c_delay > DELAY_SCHEDULE[0]:
        return DELAY_SCHEDULE[0]
    if c_delay > DELAY_SCHEDULE[0] - DELAY_SCHEDULE[1]:
        return DELAY_SCHEDULE[1]
    return DELAY_SCHEDULE[2]


def remote_refine(
    theta: SemanticCosts,
    feedback: PlannerFeedback,
    endpoint: str,
    timeout: float = 10.0,
) -> SemanticCosts:
    """POST the trial summary to <endpoint>/refine; the reply must carry a
    four-number theta. Shares the decision service's transport contract."""
    url = endpoint.rstrip("/") + "/refine"
    payload = {
        "theta": list(theta.as_tuple()),
        "feedback": {
            "trial_index": feedback.trial_index,
            "wrong_count": feedback.wrong_count,
            "overact_count": feedback.overact_count,
            "realized_ok": feedback.realized_ok,
            "oscillation": feedback.oscillation,
            "trigger_distances": [
                ev.nearest_obstacle_distance for ev in feedback.trigger_events
            ],
        },
    }
    try:
        resp = requests.post(url, json=payload, timeout=timeout)
    except requests.exceptions.RequestException as exc:
        raise RefinementServiceError(f"refiner unreachable: {exc}") from exc
    raw = resp.text
    if resp.status_code != 200:
        raise RefinementServiceError(
            f"refiner returned HTTP {resp.status_code}", raw_reply=raw
        )
    try:
        body = json.loads(raw)
        values = body["theta"]
        if not isinstance(values, list) or len(values) != 4:
            raise TypeError("theta must be a list of four numbers")
        return SemanticCosts(*(float(v) for v in values)).validate()
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise RefinementServiceError(f"malformed refiner reply: {exc}", raw_reply=raw) from exc


def save_scene(
    store,
    signature: np.ndarray,
    guidance,
    theta: SemanticCosts,
    metrics: dict,
) -> Optional[str]:
    """Append an accepted scene record. A write failure is surfaced as the
    returned error string; the in-memory outcome is unaffected."""
    record = {
        "signature": [float(v) for v in np.asarray(signature, dtype=float)],
        "guidance": _tokens(guidance),
        "theta": [float(v) for v in theta.as_tuple()],
        "metrics": metrics,
        "ts": datetime.now(timezone.utc).isoformat(),
    }
    try:
        store.append(record)
    except OSError as exc:
        log.error("scene store append failed: %s", exc)
        return str(exc)
    return None


@dataclass(frozen=True)
class RefinementTrial:
    trial_index: int
    theta: SemanticCosts
    feedback: PlannerFeedback
    accepted: bool


@dataclass(frozen=True)
class RefinementOutcome:
    theta: SemanticCosts
    result: PlanResult
    trials_used: int
    accepted: bool
    history: tuple[RefinementTrial, ...]
    store_error: Optional[str] = None


def run_refinement(
    grid: GridMap,
    guidance,
    k_max: int = 6,
    store=None,
    thresholds: FeedbackThresholds = FeedbackThresholds(),
    config: PlannerConfig = PlannerConfig(),
    refine_endpoint: Optional[str] = None,
) -> RefinementOutcome:
    """Warm start, then plan/score/repair until a trial is acceptable or
    the budget runs out. The accepted configuration is persisted; an
    exhausted budget returns the last trial flagged unaccepted."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    signature = scene_signature(grid, guidance)
    theta = select_ref_hyperparams(signature, store)
    history: list[RefinementTrial] = []
    result = None
    feedback = None
    store_error = None
    for trial in range(1, k_max + 1):
        result, feedback = astar_path_generate(grid, guidance, theta, trial, config=config)
        ok = acceptable(feedback, thresholds)
        history.append(RefinementTrial(trial, theta, feedback, ok))
        if ok:
            if store is not None:
                store_error = save_scene(
                    store,
                    signature,
                    guidance,
                    theta,
                    metrics={
                        "trials": trial,
                        "total_cost": result.total_cost,
                        "wrong_count": feedback.wrong_count,
                        "overact_count": feedback.overact_count,
                        "oscillation": feedback.oscillation,
                        "trigger_distances": [
                            ev.nearest_obstacle_distance for ev in feedback.trigger_events
                        ],
                    },
                )
            return RefinementOutcome(theta, result, trial, True, tuple(history), store_error)
        if trial == k_max:
            break
        if refine_endpoint:
            try:
                theta = remote_refine(theta, feedback, refine_endpoint)
                continue
            except RefinementServiceError as exc:
                log.warning("remote refine failed (%s); using rule engine", exc)
        theta = refine(theta, feedback, thresholds)
    return RefinementOutcome(theta, result, k_max, False, tuple(history), store_error)
