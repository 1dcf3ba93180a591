"""Semantic decision layer: directive plans from scene topology.

A decision is a short sequence of lane-level directives (left/right/keep)
plus a drive style. The built-in rule engine works from the topology graph;
an optional HTTP service can replace it, with the rule engine as fallback.
Sequence agreement is scored by optimal token assignment.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
import requests

from .assignment import max_similarity_assignment
from .worldmodel import TopologyGraph, serialize_topology

log = logging.getLogger(__name__)

DECISION_URL_ENV = "AFSP_DECISION_URL"

LOOKAHEAD_M = 30.0
CORRIDOR_HALF_WIDTH_M = 2.0
CAUTION_DISTANCE_M = 8.0
REALIGN_BEARING_DEG = 10.0

V_TARGET = 4.2
STYLE_FACTORS = {"cautious": 0.7, "normal": 1.0, "aggressive": 1.15}


class Directive(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    KEEP = "keep"

    def __str__(self) -> str:
        return self.value


class DriveStyle(str, Enum):
    CAUTIOUS = "cautious"
    NORMAL = "normal"
    AGGRESSIVE = "aggressive"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class DirectivePlan:
    """Reasoning text, ordered directives, and a drive style."""

    reasoning: str
    directives: tuple[Directive, ...]
    style: DriveStyle = DriveStyle.NORMAL

    def tokens(self) -> list[str]:
        return [d.value for d in self.directives]


@dataclass(frozen=True)
class ActionSequence:
    """A plain token sequence with its provenance."""

    actions: tuple[str, ...]
    source: str = "other"  # vlm | llm | rule | other


class DecisionServiceError(RuntimeError):
    """Remote decision failure; carries the raw reply when one was read."""

    def __init__(self, message: str, raw_reply: Optional[str] = None):
        super().__init__(message)
        self.raw_reply = raw_reply


def parse_directives(tokens: Sequence[str]) -> tuple[Directive, ...]:
    out = []
    for tok in tokens:
        tok = tok.strip().lower()
        try:
            out.append(Directive(tok))
        except ValueError as exc:
            raise ValueError(f"unknown directive token: {tok!r}") from exc
    return tuple(out)


def rule_decide(graph: TopologyGraph, goal_bearing_deg: float = 0.0) -> DirectivePlan:
    """Deterministic directive plan from the scene topology.

    Obstacles ahead within the lookahead and inside the forward corridor
    each contribute an avoidance directive (steer away from the obstacle's
    bearing sign) followed by keep; the plan ends with a directive that
    re-aligns toward the goal bearing. Style is cautious when a corridor
    obstacle is near or anything at all is close, normal otherwise.
    """
    hits = []
    nearest = math.inf
    for node in graph.nodes:
        nearest = min(nearest, node.distance)
        if node.distance > LOOKAHEAD_M:
            continue
        phi = math.radians(node.orientation)
        if math.cos(phi) <= 0.0:
            continue
        lateral = node.distance * math.sin(phi)
        if abs(lateral) <= CORRIDOR_HALF_WIDTH_M:
            hits.append(node)
    hits.sort(key=lambda n: (n.distance, n.orientation))

    directives: list[Directive] = []
    net = 0
    for node in hits:
        if node.orientation < 0.0:
            directives.append(Directive.LEFT)
            net += 1
        else:
            directives.append(Directive.RIGHT)
            net -= 1
        directives.append(Directive.KEEP)

    if net > 0:
        directives.append(Directive.RIGHT)
    elif net < 0:
        directives.append(Directive.LEFT)
    elif abs(goal_bearing_deg) >= REALIGN_BEARING_DEG:
        directives.append(
            Directive.LEFT if goal_bearing_deg > 0.0 else Directive.RIGHT
        )
    else:
        directives.append(Directive.KEEP)

    near_hit = any(n.distance <= LOOKAHEAD_M / 2.0 for n in hits)
    cautious = near_hit or nearest < CAUTION_DISTANCE_M
    style = DriveStyle.CAUTIOUS if cautious else DriveStyle.NORMAL
    if hits:
        reasoning = (
            f"{len(hits)} obstacle(s) inside the forward corridor, nearest "
            f"{hits[0].distance:.1f} m at {hits[0].orientation:.1f} deg; "
            f"steering around them, then re-aligning to the goal"
        )
    else:
        reasoning = "corridor clear; holding course toward the goal"
    return DirectivePlan(reasoning, tuple(directives), style)


def style_velocity(style: Union[DriveStyle, str], v_target: float = V_TARGET) -> float:
    """Target speed scaled by drive style (0.7x / 1.0x / 1.15x)."""
    key = style.value if isinstance(style, DriveStyle) else str(style).lower()
    if key not in STYLE_FACTORS:
        raise ValueError(f"unknown drive style: {style!r}")
    return STYLE_FACTORS[key] * v_target


def remote_decide(
    graph: TopologyGraph,
    endpoint: str,
    goal_bearing_deg: float = 0.0,
    timeout: float = 10.0,
) -> DirectivePlan:
    """POST the serialized topology to <endpoint>/decide and parse the reply.

    Reply schema: {"Reasoning": str, "Drive Plan": [tokens], "Drive Style": str}.
    Raises DecisionServiceError (carrying the raw reply when available) on
    timeouts, transport errors, or schema violations.
    """
    url = endpoint.rstrip("/") + "/decide"
    payload = {
        "topology": serialize_topology(graph),
        "goal_bearing_deg": float(goal_bearing_deg),
    }
    try:
        resp = requests.post(url, json=payload, timeout=timeout)
    except requests.exceptions.RequestException as exc:
        raise DecisionServiceError(f"decision service unreachable: {exc}") from exc
    raw = resp.text
    if resp.status_code != 200:
        raise DecisionServiceError(
            f"decision service returned HTTP {resp.status_code}", raw_reply=raw
        )
    try:
        body = json.loads(raw)
        reasoning = body["Reasoning"]
        tokens = body["Drive Plan"]
        style_text = body["Drive Style"]
        if not isinstance(reasoning, str) or not isinstance(tokens, list):
            raise TypeError("bad field types")
        directives = parse_directives(tokens)
        style = DriveStyle(str(style_text).lower())
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DecisionServiceError(
            f"malformed decision reply: {exc}", raw_reply=raw
        ) from exc
    return DirectivePlan(reasoning, directives, style)


def decide(
    graph: TopologyGraph,
    goal_bearing_deg: float = 0.0,
    endpoint: Optional[str] = None,
    timeout: float = 10.0,
) -> DirectivePlan:
    """Remote decision when an endpoint is configured (argument or the
    AFSP_DECISION_URL env var), falling back to the rule engine on any
    service failure."""
    url = endpoint or os.environ.get(DECISION_URL_ENV)
    if url:
        try:
            return remote_decide(graph, url, goal_bearing_deg, timeout)
        except DecisionServiceError as exc:
            log.warning("remote decision failed (%s); using rule engine", exc)
    return rule_decide(graph, goal_bearing_deg)


def pair_similarity(a: str, b: str) -> float:
    """Binary token kernel: 1.0 for identical tokens, else 0.0."""
    return 1.0 if a == b else 0.0


def _tokens(seq) -> list[str]:
    if isinstance(seq, ActionSequence):
        return list(seq.actions)
    if isinstance(seq, DirectivePlan):
        return seq.tokens()
    return [str(t) for t in seq]


def consistency_score(seq_a, seq_b) -> float:
    """Agreement between two action sequences in [0, 1].

    The pairwise similarity matrix is solved for its best injective
    assignment and the total is normalized by min(M, N). Empty sequences
    are an error.
    """
    a = _tokens(seq_a)
    b = _tokens(seq_b)
    if not a or not b:
        raise ValueError("consistency_score requires non-empty sequences")
    sim = np.array([[pair_similarity(x, y) for y in b] for x in a], dtype=float)
    total, _ = max_similarity_assignment(sim)
    return total / min(len(a), len(b))
