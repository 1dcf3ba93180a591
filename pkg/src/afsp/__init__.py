"""Fast-slow planning and control for a 2D ground vehicle.

A slow semantic layer turns a scene topology into coarse directives, a
guided grid search realizes them as a path, an iterative refiner tunes the
guidance costs from planner feedback, and a fast linearized MPC tracks the
result with a local/cloud reference switch. A small closed-loop simulator
ties the layers together for benchmarking.
"""

__version__ = "0.1.0"

from .control import MpcConfig, SwitchingGate, solve_mpc, step_dynamics
from .decision import Directive, DirectivePlan, DriveStyle, decide, rule_decide
from .planner import Move, PlannerConfig, SemanticCosts, plan
from .refinement import (
    FeedbackThresholds,
    InMemoryStore,
    JsonlStore,
    run_refinement,
)
from .worldmodel import (
    EgoPose,
    GridMap,
    Obstacle,
    TopologyGraph,
    TopologyNode,
    parse_topology,
    serialize_topology,
)

__all__ = [
    "Directive",
    "DirectivePlan",
    "DriveStyle",
    "EgoPose",
    "FeedbackThresholds",
    "GridMap",
    "InMemoryStore",
    "JsonlStore",
    "Move",
    "MpcConfig",
    "Obstacle",
    "PlannerConfig",
    "SemanticCosts",
    "SwitchingGate",
    "TopologyGraph",
    "TopologyNode",
    "decide",
    "parse_topology",
    "plan",
    "rule_decide",
    "run_refinement",
    "serialize_topology",
    "solve_mpc",
    "step_dynamics",
    "__version__",
]
