"""Command-line entry points: plan, tune, simulate, score, benchmark.

Values resolve flag > config file > built-in default; the config file is a
JSON object whose keys mirror the flag names plus optional `costs`,
`thresholds`, and `mpc` override sections. Exit codes: 0 success, 1 bad
configuration, 2 planning failure, 3 refinement not accepted.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Optional

import numpy as np

from . import __version__
from .control import MpcConfig
from .decision import consistency_score, decide, parse_directives
from .planner import AlignmentCategory, PlannerConfig, PlanningError, SemanticCosts, plan
from .refinement import FeedbackThresholds, InMemoryStore, JsonlStore, run_refinement
from .scenarios import Scenario, list_bundled, load_scenario
from .sim import SCHEMES, run_benchmark, run_scenario, run_svg, write_trace
from .svgplot import save_run_svg
from .worldmodel import ego_polar, topology_from_obstacles

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PLANNING = 2
EXIT_UNACCEPTED = 3


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the contract reserves 2 for
    # planning failures, so remap
    def exit(self, status: int = 0, message: Optional[str] = None):
        if message:
            self._print_message(message, sys.stderr)
        raise SystemExit(EXIT_OK if status == 0 else EXIT_CONFIG)


def _build_parser() -> _Parser:
    parser = _Parser(prog="afsp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"afsp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario file path or bundled name")
    common.add_argument("--guide", help="comma-separated directives, e.g. left,keep,right")
    common.add_argument("--scheme", help=f"one of {', '.join(SCHEMES)}")
    common.add_argument("--seeds", help="comma-separated integer seeds")
    common.add_argument("--max-retries", type=int, dest="max_retries")
    common.add_argument("--memory", help="JSONL scene-memory path")
    common.add_argument("--decision-url", dest="decision_url", help="remote decision endpoint")
    common.add_argument("--out", help="output directory (default afsp_out)")
    common.add_argument("--config", help="JSON config file; flags take precedence")

    p = sub.add_parser("plan", parents=[common], help="guided grid planning for one scenario")
    p.set_defaults(func=cmd_plan)
    p = sub.add_parser("tune", parents=[common], help="iterative cost refinement on one scenario")
    p.set_defaults(func=cmd_tune)
    p = sub.add_parser("simulate", parents=[common], help="closed-loop run of one scheme")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("benchmark", parents=[common], help="scenario x scheme x seed sweep")
    p.set_defaults(func=cmd_benchmark)
    p = sub.add_parser("score", parents=[common], help="sequence agreement between two token files")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.set_defaults(func=cmd_score)
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return doc


def _eff(ns: argparse.Namespace, doc: dict, key: str, default=None):
    value = getattr(ns, key, None)
    if value is not None:
        return value
    if key in doc and doc[key] is not None:
        return doc[key]
    return default


def _seed_list(raw, default: list[int]) -> list[int]:
    if raw is None:
        return list(default)
    if isinstance(raw, (list, tuple)):
        items = raw
    else:
        items = str(raw).split(",")
    try:
        seeds = [int(s) for s in items]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad seed list {raw!r}") from exc
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def _scenario(ns, doc) -> Scenario:
    ref = _eff(ns, doc, "scenario")
    if not ref:
        raise ConfigError(
            f"a scenario is required (bundled: {', '.join(list_bundled())})"
        )
    try:
        return load_scenario(str(ref))
    except (FileNotFoundError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _out_dir(ns, doc) -> str:
    out = str(_eff(ns, doc, "out", "afsp_out"))
    os.makedirs(out, exist_ok=True)
    return out


def _costs_override(doc: dict) -> Optional[SemanticCosts]:
    section = doc.get("costs")
    if not section:
        return None
    base = SemanticCosts()
    try:
        return SemanticCosts(
            float(section.get("c_corr", base.c_corr)),
            float(section.get("c_delay", base.c_delay)),
            float(section.get("c_wrong", base.c_wrong)),
            float(section.get("c_over", base.c_over)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad costs section: {exc}") from exc


def _thresholds(doc: dict) -> FeedbackThresholds:
    section = doc.get("thresholds", {})
    try:
        return FeedbackThresholds(
            d_min=float(section.get("d_min", 1.0)),
            d_max=float(section.get("d_max", 6.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad thresholds section: {exc}") from exc


def _planner_config(doc: dict, base: PlannerConfig) -> PlannerConfig:
    section = doc.get("thresholds", {})
    kwargs = {}
    for key in ("epsilon", "w_rep", "d_infl_cells"):
        if key in section:
            kwargs[key] = float(section[key])
    if "n_keep" in section:
        kwargs["n_keep"] = int(section["n_keep"])
    try:
        return replace(base, **kwargs) if kwargs else base
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad planner thresholds: {exc}") from exc


def _mpc_config(doc: dict) -> Optional[MpcConfig]:
    section = doc.get("mpc")
    if not section:
        return None
    valid = {f for f in MpcConfig.__dataclass_fields__}
    unknown = set(section) - valid
    if unknown:
        raise ConfigError(f"unknown mpc keys: {', '.join(sorted(unknown))}")
    try:
        return replace(MpcConfig(), **{k: type(getattr(MpcConfig(), k))(v) for k, v in section.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad mpc section: {exc}") from exc


def _directives(ns, doc, scn: Scenario, endpoint: Optional[str]):
    """Guide tokens from the flag/config, or from the decision layer when
    absent."""
    raw = _eff(ns, doc, "guide")
    if raw:
        tokens = [t for t in str(raw).split(",") if t.strip()]
        try:
            return parse_directives(tokens), "given"
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    topology = topology_from_obstacles(scn.inflated_obstacles(), scn.start)
    bearing = ego_polar(scn.goal, scn.start)[1]
    dplan = decide(topology, bearing, endpoint=endpoint)
    return dplan.directives, f"decided ({dplan.style.value})"


def _anchor_cells(grid):
    goal_cell = grid.snap_cell(grid.goal, toward=grid.goal)
    start_cell = grid.snap_cell((grid.start.x, grid.start.y), toward=grid.goal)
    return start_cell, goal_cell


def cmd_plan(ns, doc) -> int:
    scn = _scenario(ns, doc)
    out = _out_dir(ns, doc)
    endpoint = _eff(ns, doc, "decision_url")
    directives, origin = _directives(ns, doc, scn, endpoint)
    costs = _costs_override(doc) or SemanticCosts()
    pconfig = _planner_config(doc, scn.planner)
    grid = scn.build_grid(0.0)
    try:
        start_cell, goal_cell = _anchor_cells(grid)
        result = plan(grid, start_cell, goal_cell, directives, costs=costs, config=pconfig)
    except (PlanningError, ValueError) as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return EXIT_PLANNING

    dump = {
        "scenario": scn.name,
        "guide": [d.value for d in directives],
        "guide_origin": origin,
        "realized": [d.value for d in result.realized],
        "success": result.success,
        "total_cost": result.total_cost,
        "expanded": result.expanded,
        "cells": [list(c) for c in result.cells],
        "world_path": [list(p) for p in result.world_path],
        "moves": [m.name for m in result.moves],
        "events": [
            {
                "category": e.category.name,
                "world_location": list(e.world_location),
                "nearest_obstacle_distance": e.nearest_obstacle_distance,
                "directive_index": e.directive_index,
            }
            for e in result.events
        ],
    }
    dump_path = os.path.join(out, f"plan_{scn.name}.json")
    with open(dump_path, "w", encoding="utf-8") as fh:
        json.dump(dump, fh, indent=2)
        fh.write("\n")
    markers = [
        e.world_location for e in result.events if e.category == AlignmentCategory.CORRECT
    ]
    save_run_svg(
        os.path.join(out, f"plan_{scn.name}.svg"),
        list(scn.centerline),
        scn.inflated_obstacles(),
        [p[0] for p in result.world_path],
        [p[1] for p in result.world_path],
        goal=scn.goal,
        goal_radius=scn.goal_capture,
        title=f"{scn.name}: guide {','.join(d.value for d in directives)} ({origin})",
        markers=markers,
    )
    status = "realized" if result.success else "NOT realized"
    print(
        f"{scn.name}: guide [{','.join(d.value for d in directives)}] {status}; "
        f"cost {result.total_cost:.3f}, {len(result.cells)} cells, dump {dump_path}"
    )
    return EXIT_OK if result.success else EXIT_PLANNING


def cmd_tune(ns, doc) -> int:
    scn = _scenario(ns, doc)
    out = _out_dir(ns, doc)
    endpoint = _eff(ns, doc, "decision_url")
    directives, origin = _directives(ns, doc, scn, endpoint)
    memory = _eff(ns, doc, "memory")
    store = JsonlStore(str(memory)) if memory else InMemoryStore()
    if not memory:
        print("note: no --memory path; accepted scenes are not persisted")
    k_max = int(_eff(ns, doc, "max_retries", 6))
    outcome = run_refinement(
        scn.build_grid(0.0),
        directives,
        k_max=k_max,
        store=store,
        thresholds=_thresholds(doc),
        config=_planner_config(doc, scn.planner),
    )
    for trial in outcome.history:
        fb = trial.feedback
        triggers = ",".join(f"{e.nearest_obstacle_distance:.2f}" for e in fb.trigger_events)
        print(
            f"trial {trial.trial_index}: theta=({trial.theta.c_corr:g}, "
            f"{trial.theta.c_delay:g}, {trial.theta.c_wrong:g}, {trial.theta.c_over:g}) "
            f"realized={fb.realized_ok} wrong={fb.wrong_count} overact={fb.overact_count} "
            f"osc={fb.oscillation} triggers=[{triggers}] -> "
            f"{'accepted' if trial.accepted else 'refine'}"
        )
    report = {
        "scenario": scn.name,
        "guide": [d.value for d in directives],
        "guide_origin": origin,
        "accepted": outcome.accepted,
        "trials_used": outcome.trials_used,
        "theta": list(outcome.theta.as_tuple()),
        "store_error": outcome.store_error,
    }
    with open(os.path.join(out, f"tune_{scn.name}.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    if outcome.store_error:
        print(f"warning: scene store write failed: {outcome.store_error}", file=sys.stderr)
    if not outcome.accepted:
        print(f"not accepted after {outcome.trials_used} trials", file=sys.stderr)
        return EXIT_UNACCEPTED
    print(f"accepted in {outcome.trials_used} trial(s); theta={report['theta']}")
    return EXIT_OK


def _scheme(ns, doc, default: Optional[str] = "afsp"):
    scheme = _eff(ns, doc, "scheme", default)
    if scheme is not None and scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")
    return scheme


def cmd_simulate(ns, doc) -> int:
    scn = _scenario(ns, doc)
    out = _out_dir(ns, doc)
    scheme = _scheme(ns, doc)
    seeds = _seed_list(_eff(ns, doc, "seeds"), [scn.seed])
    memory = _eff(ns, doc, "memory")
    store = JsonlStore(str(memory)) if memory else None
    mpc_cfg = _mpc_config(doc)
    for seed in seeds:
        res = run_scenario(
            scn,
            scheme,
            seed=seed,
            mpc_cfg=mpc_cfg,
            memory=store,
            decision_endpoint=_eff(ns, doc, "decision_url"),
            max_retries=int(_eff(ns, doc, "max_retries", 6)),
        )
        stem = f"{scn.name}_{scheme}_seed{seed}"
        write_trace(os.path.join(out, stem + ".csv"), res.rows)
        with open(os.path.join(out, stem + ".svg"), "w", encoding="utf-8") as fh:
            fh.write(run_svg(res, scn))
            fh.write("\n")
        m = res.metrics
        print(
            f"{stem}: {res.reason}; FTime {m.finish_time:.2f} s, TLen {m.traj_length:.2f} m, "
            f"AvgLD {m.avg_lat_dev:.3f} m, SVar {m.speed_var:.3f} m/s, MLat {m.max_lat_dev:.3f} m"
        )
    return EXIT_OK


def cmd_benchmark(ns, doc) -> int:
    ref = _eff(ns, doc, "scenario", "scenario1,scenario2,scenario3")
    try:
        scenarios = [load_scenario(r.strip()) for r in str(ref).split(",") if r.strip()]
    except (FileNotFoundError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if not scenarios:
        raise ConfigError("no scenarios given")
    out = _out_dir(ns, doc)
    one_scheme = _scheme(ns, doc, default=None)
    schemes = (one_scheme,) if one_scheme else SCHEMES
    seeds = _seed_list(_eff(ns, doc, "seeds"), list(range(10)))
    table, _results = run_benchmark(
        scenarios,
        schemes,
        out_dir=out,
        mpc_cfg=_mpc_config(doc),
        max_retries=int(_eff(ns, doc, "max_retries", 6)),
        seeds=seeds,
    )
    header = f"{'scenario':<14}{'scheme':<11}{'ok':>5}  {'FTime':>7} {'TLen':>8} {'AvgLD':>7} {'SVar':>7} {'MLat':>7}"
    print(header)
    for row in table:
        cells = [f"{row['scenario']:<14}", f"{row['scheme']:<11}",
                 f"{row['n_success']}/{row['n_runs']:<3}".rjust(5), " "]
        for label, width in (("FTime", 7), ("TLen", 8), ("AvgLD", 7), ("SVar", 7), ("MLat", 7)):
            value = row[label]
            cells.append(("n/a".rjust(width) if value is None else f"{value:{width}.2f}"))
        print(" ".join(cells))
    print(f"artifacts under {out}/ (benchmark.csv, traces/, plots/)")
    return EXIT_OK


def cmd_score(ns, doc) -> int:
    def read(path: str) -> list[list[str]]:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise ConfigError(str(exc)) from exc
        rows = []
        for idx, line in enumerate(lines, start=1):
            tokens = [t.strip() for t in line.split(",") if t.strip()]
            if not tokens:
                raise ConfigError(f"{path}:{idx}: empty sequence")
            rows.append(tokens)
        if not rows:
            raise ConfigError(f"{path}: no sequences")
        return rows

    rows_a = read(ns.file_a)
    rows_b = read(ns.file_b)
    if len(rows_a) != len(rows_b):
        raise ConfigError(
            f"line counts differ: {ns.file_a} has {len(rows_a)}, {ns.file_b} has {len(rows_b)}"
        )
    scores = []
    for idx, (a, b) in enumerate(zip(rows_a, rows_b), start=1):
        s = consistency_score(a, b)
        scores.append(s)
        print(f"line {idx}: {s:.4f}")
    print(f"mean: {float(np.mean(scores)):.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    doc = {}
    config_path = getattr(ns, "config", None)
    try:
        if config_path:
            doc = _load_config(config_path)
        return ns.func(ns, doc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
