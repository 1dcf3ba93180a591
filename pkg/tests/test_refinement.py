import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from afsp.planner import Move, SemanticCosts, plan
from afsp.refinement import (
    DEFAULT_THETA,
    FeedbackThresholds,
    InMemoryStore,
    JsonlStore,
    PlannerFeedback,
    RefinementServiceError,
    TriggerEvent,
    acceptable,
    astar_path_generate,
    feedback_from_result,
    guide_hash,
    moves_oscillate,
    refine,
    remote_refine,
    run_refinement,
    save_scene,
    scene_signature,
    select_ref_hyperparams,
)
from afsp.scenarios import load_scenario
from afsp.worldmodel import GridMap, Obstacle
from conftest import empty_grid

THETA0 = SemanticCosts(-5.0, 1.0, 5.0, 0.8)


def fb(
    triggers=(),
    wrong=0,
    over=0,
    realized=True,
    osc=False,
    trial=1,
):
    events = tuple(
        TriggerEvent((0.0, 0.0), d, i) for i, d in enumerate(triggers)
    )
    return PlannerFeedback(trial, events, wrong, over, realized, osc)


# ---------------------------------------------------------------------------
# signatures and memory
# ---------------------------------------------------------------------------


def test_guide_hash_stable_and_distinct(rng):
    assert guide_hash(["left", "keep"]) == guide_hash(["left", "keep"])
    assert guide_hash(["left", "keep"]) != guide_hash(["left"])
    assert guide_hash([]) == guide_hash([])
    # 48-bit values are exactly representable floats
    h = guide_hash(["right"])
    assert h == int(h) and 0 <= h < 2**48
    tokens = np.array(["left", "right", "keep"])
    seen = set()
    for _ in range(10_000):
        seq = tuple(rng.choice(tokens, size=int(rng.integers(0, 7))))
        seen.add((seq, guide_hash(list(seq))))
    by_seq = {}
    for seq, h in seen:
        assert by_seq.setdefault(seq, h) == h  # deterministic
    values = list(by_seq.values())
    assert len(set(values)) == len(values)  # no collisions across sequences


def test_scene_signature_features():
    g1 = empty_grid(10, 6, obstacles=[Obstacle(4.0, 1.0, 0.5)])
    g2 = empty_grid(10, 6, obstacles=[Obstacle(4.0, 0.5, 0.5)])
    s1 = scene_signature(g1, ["left"])
    s2 = scene_signature(g2, ["left"])
    s3 = scene_signature(g1, ["right"])
    assert s1.shape == (5,)
    assert list(s1[:3]) == [10.0, 6.0, 1.0]
    assert np.array_equal(s1, scene_signature(g1, ["left"]))
    # moved obstacle changes only the centerline-distance feature
    assert s1[3] != s2[3] and s1[4] == s2[4]
    # different guidance changes only the hash feature
    assert s1[4] != s3[4] and np.array_equal(s1[:4], s3[:4])


def signature(w, h, n, dist, guide):
    return np.array([float(w), float(h), float(n), float(dist), guide_hash(guide)])


def record(sig, theta, ts="2026-08-01T00:00:00+00:00", **extra):
    rec = {
        "signature": [float(v) for v in sig],
        "guidance": ["left"],
        "theta": list(theta),
        "metrics": {},
        "ts": ts,
    }
    rec.update(extra)
    return rec


def test_select_ref_hyperparams_empty_store():
    assert select_ref_hyperparams(signature(5, 5, 1, 2.0, ["left"]), None) == DEFAULT_THETA
    assert select_ref_hyperparams(signature(5, 5, 1, 2.0, ["left"]), InMemoryStore()) == DEFAULT_THETA


def test_select_ref_hyperparams_exact_match():
    store = InMemoryStore()
    sig = signature(10, 6, 2, 3.0, ["left"])
    store.append(record(sig, [-5.0, 0.3, 5.0, 0.8]))
    store.append(record(signature(30, 9, 8, 1.0, ["left"]), [-5.0, 2.0, 7.0, 0.8]))
    got = select_ref_hyperparams(sig, store)
    assert got == SemanticCosts(-5.0, 0.3, 5.0, 0.8)


def test_select_ref_hyperparams_prefers_matching_guide_hash():
    store = InMemoryStore()
    query = signature(10, 6, 2, 3.0, ["left"])
    # same numeric features, different guidance
    store.append(record(signature(10, 6, 2, 3.0, ["right"]), [-5.0, 9.0, 9.0, 9.0]))
    # distant numeric features, same guidance
    store.append(record(signature(40, 12, 9, 8.0, ["left"]), [-5.0, 0.2, 5.0, 0.8]))
    assert select_ref_hyperparams(query, store) == SemanticCosts(-5.0, 0.2, 5.0, 0.8)


def test_select_ref_hyperparams_tie_resolves_to_newer():
    store = InMemoryStore()
    sig = signature(10, 6, 2, 3.0, ["left"])
    store.append(record(sig, [-5.0, 1.0, 5.0, 0.8], ts="2026-08-01T00:00:00+00:00"))
    store.append(record(sig, [-5.0, 0.3, 5.0, 0.8], ts="2026-08-02T00:00:00+00:00"))
    store.append(record(sig, [-5.0, 0.7, 5.0, 0.8], ts="2026-07-01T00:00:00+00:00"))
    assert select_ref_hyperparams(sig, store).c_delay == 0.3


def test_select_ref_hyperparams_skips_corrupt_records():
    store = InMemoryStore()
    sig = signature(10, 6, 2, 3.0, ["left"])
    store.append({"theta": [-5.0, 9.0, 5.0, 0.8]})  # no signature
    store.append(record(sig, [-5.0, 9.0, 5.0], ts="x"))  # three-number theta
    store.append(record(sig, [5.0, 1.0, 5.0, 0.8]))  # invalid (c_corr must be < 0)
    store.append(record(sig, [-5.0, 0.4, 5.0, 0.8]))
    assert select_ref_hyperparams(sig, store).c_delay == 0.4
    only_bad = InMemoryStore()
    only_bad.append({"junk": True})
    assert select_ref_hyperparams(sig, only_bad) == DEFAULT_THETA


def test_jsonl_store_roundtrip(tmp_path):
    path = tmp_path / "mem.jsonl"
    store = JsonlStore(str(path))
    assert store.snapshot() == []  # absent file
    rec = record(signature(5, 5, 1, 2.0, ["left"]), [-5.0, 1.0, 5.0, 0.8])
    store.append(rec)
    store.append(record(signature(6, 5, 1, 2.0, ["left"]), [-5.0, 0.5, 5.0, 0.8]))
    snap = store.snapshot()
    assert len(snap) == 2 and snap[0] == rec
    # corrupt lines are skipped, not fatal
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("{not json\n\n")
    assert len(store.snapshot()) == 2


def test_in_memory_store_isolates_records():
    store = InMemoryStore()
    rec = {"signature": [1.0], "nested": {"a": 1}}
    store.append(rec)
    rec["nested"]["a"] = 999  # caller mutation must not leak in
    snap = store.snapshot()
    assert snap[0]["nested"]["a"] == 1
    snap[0]["extra"] = True  # adding keys to a snapshot must not leak back
    assert "extra" not in store.snapshot()[0]


def test_save_scene_surfaces_write_failures():
    class FailStore:
        def append(self, record):
            raise OSError("disk full")

        def snapshot(self):
            return []

    err = save_scene(FailStore(), signature(5, 5, 0, 0.0, ["left"]), ["left"], THETA0, {})
    assert err == "disk full"
    ok = save_scene(InMemoryStore(), signature(5, 5, 0, 0.0, ["left"]), ["left"], THETA0, {})
    assert ok is None


# ---------------------------------------------------------------------------
# feedback and repair rules
# ---------------------------------------------------------------------------


def test_moves_oscillate():
    F, FL, FR = Move.F, Move.FL, Move.FR
    assert moves_oscillate([FL, FR, FL])  # two flips inside one window
    assert moves_oscillate([F, FL, FR, FL, F])
    assert not moves_oscillate([FL, FR])  # single flip
    assert not moves_oscillate([FL, F, FR, F, FL])  # flips split across windows
    assert not moves_oscillate([F, F, F, F])
    assert not moves_oscillate([FL, FL, FL])
    assert not moves_oscillate([])


def test_acceptable_band():
    assert acceptable(fb(triggers=[3.0, 5.5]))
    assert acceptable(fb(triggers=[1.0]))  # inclusive bounds
    assert acceptable(fb(triggers=[6.0]))
    assert not acceptable(fb(triggers=[0.9]))
    assert not acceptable(fb(triggers=[6.1]))
    assert not acceptable(fb(realized=False))
    assert not acceptable(fb(wrong=1))
    assert not acceptable(fb(over=1))
    assert not acceptable(fb(osc=True))
    assert acceptable(fb(triggers=[]))  # keep-only guides have no triggers
    # widening the band is monotone
    wide = FeedbackThresholds(d_min=0.5, d_max=8.0)
    assert acceptable(fb(triggers=[7.0]), wide)
    assert not acceptable(fb(triggers=[7.0]))


def test_refine_rule_precedence_and_values():
    # premature beats everything else
    out = refine(THETA0, fb(triggers=[44.0], wrong=3, over=2, realized=False, osc=True))
    assert out == SemanticCosts(-5.0, 0.5, 5.0, 0.8)
    # late: unrealized guide or triggers inside d_min
    out = refine(THETA0, fb(realized=False))
    assert out == SemanticCosts(-5.0, 1.5, 5.0, 0.8)
    out = refine(THETA0, fb(triggers=[0.5], wrong=2))
    assert out == SemanticCosts(-5.0, 1.5, 5.0, 0.8)
    # wrong before overact/oscillation
    out = refine(THETA0, fb(wrong=2, over=1, osc=True))
    assert out == SemanticCosts(-5.0, 1.0, 7.0, 0.8)
    out = refine(THETA0, fb(over=1))
    assert out == SemanticCosts(-5.0, 1.0, 5.0, 0.8 + 0.4)
    out = refine(THETA0, fb(osc=True))
    assert out == SemanticCosts(-5.0, 1.0, 5.0, 0.8 + 0.4)
    # nothing to repair: unchanged
    assert refine(THETA0, fb(triggers=[3.0])) == THETA0


def test_refine_delay_schedule_walks_down():
    theta = THETA0
    seen = []
    for _ in range(5):
        seen.append(theta.c_delay)
        theta = refine(theta, fb(triggers=[44.0]))
    assert seen[:3] == [1.0, 0.5, 0.3]  # the exact values the loop sees
    assert seen == pytest.approx([1.0, 0.5, 0.3, 0.2, 0.1])
    assert theta.c_delay == 0.1  # floor holds exactly from here on
    assert refine(theta, fb(triggers=[44.0])).c_delay == 0.1

def test_refine_is_deterministic():
    feedback = fb(triggers=[44.0, 2.0], wrong=1)
    assert refine(THETA0, feedback) == refine(THETA0, feedback)


def test_feedback_from_result_unreachable_goal():
    mask = np.zeros((5, 3), dtype=bool)
    mask[1, :] = True
    g = GridMap((0.0, 0.0), 1.0, 5, 3, mask, np.array([[0.0, 1.5], [5.0, 1.5]]))
    result = plan(g, (0, 1), (4, 1), ["left"], costs=THETA0)
    feedback = feedback_from_result(result, trial_index=2)
    assert feedback.trial_index == 2
    assert not feedback.realized_ok
    assert feedback.trigger_events == ()
    assert not feedback.oscillation


def test_feedback_from_result_triggers_are_correct_events():
    g = empty_grid(7, 7, obstacles=[Obstacle(3.5, 3.5, 0.4)])
    result = plan(g, (0, 3), (6, 3), ["left"], costs=THETA0)
    feedback = feedback_from_result(result, 1)
    assert feedback.realized_ok
    assert len(feedback.trigger_events) == 1
    assert feedback.trigger_events[0].directive_index == 0
    # the return to the centerline after the guide is spent is a contradiction
    assert feedback.wrong_count == 1


# ---------------------------------------------------------------------------
# the refinement loop on the bundled case fixture
# ---------------------------------------------------------------------------


@pytest.fixture()
def case_grid():
    scn = load_scenario("case_study")
    return scn.build_grid(0.0), scn.planner


def test_case_fixture_accepts_in_three_trials(case_grid):
    grid, pconfig = case_grid
    store = InMemoryStore()
    outcome = run_refinement(grid, ["left"], k_max=6, store=store, config=pconfig)
    assert outcome.accepted
    assert outcome.trials_used == 3
    assert [t.theta.c_delay for t in outcome.history] == [1.0, 0.5, 0.3]
    assert [t.accepted for t in outcome.history] == [False, False, True]
    assert outcome.theta == SemanticCosts(-5.0, 0.3, 5.0, 0.8)
    assert outcome.store_error is None
    # exactly one scene record, written on acceptance
    snap = store.snapshot()
    assert len(snap) == 1
    assert snap[0]["theta"] == [-5.0, 0.3, 5.0, 0.8]
    assert snap[0]["guidance"] == ["left"]
    assert snap[0]["metrics"]["trials"] == 3
    # the first trial triggered far too early in front of the first obstacle
    first = outcome.history[0].feedback
    assert [e.nearest_obstacle_distance for e in first.trigger_events] == [44.0]


def test_case_fixture_rerun_warm_starts_from_memory(case_grid):
    grid, pconfig = case_grid
    store = InMemoryStore()
    run_refinement(grid, ["left"], k_max=6, store=store, config=pconfig)
    again = run_refinement(grid, ["left"], k_max=6, store=store, config=pconfig)
    assert again.accepted
    assert again.trials_used == 1
    assert again.theta.c_delay == 0.3
    assert len(store.snapshot()) == 2  # the rerun appends its own record


def test_unsatisfiable_band_exhausts_budget(case_grid):
    grid, pconfig = case_grid
    store = InMemoryStore()
    bad = FeedbackThresholds(d_min=7.0, d_max=6.0)  # empty acceptance band
    outcome = run_refinement(
        grid, ["left"], k_max=3, store=store, thresholds=bad, config=pconfig
    )
    assert not outcome.accepted
    assert outcome.trials_used == 3
    assert len(outcome.history) == 3
    assert store.snapshot() == []  # nothing persisted without acceptance
    assert outcome.result is not None  # last path still returned


def test_run_refinement_k_max_one(case_grid):
    grid, pconfig = case_grid
    outcome = run_refinement(grid, ["left"], k_max=1, store=InMemoryStore(), config=pconfig)
    assert not outcome.accepted and outcome.trials_used == 1
    with pytest.raises(ValueError):
        run_refinement(grid, ["left"], k_max=0)


def test_run_refinement_reports_store_failure(case_grid):
    grid, pconfig = case_grid

    class FailStore:
        def append(self, record):
            raise OSError("read-only store")

        def snapshot(self):
            return []

    outcome = run_refinement(grid, ["left"], k_max=6, store=FailStore(), config=pconfig)
    assert outcome.accepted  # acceptance is unaffected
    assert outcome.store_error == "read-only store"


def test_astar_path_generate_uses_grid_anchors(case_grid):
    grid, pconfig = case_grid
    result, feedback = astar_path_generate(grid, ["left"], THETA0, 1, config=pconfig)
    assert result.success
    assert feedback.trial_index == 1
    bare = empty_grid(5, 5)  # no anchors
    with pytest.raises(ValueError, match="anchors"):
        astar_path_generate(bare, ["left"], THETA0, 1)


# ---------------------------------------------------------------------------
# remote refiner
# ---------------------------------------------------------------------------


class _Refiner:
    def __init__(self, reply, status=200):
        self.reply = reply
        self.status = status
        self.last_body = None
        service = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                service.last_body = json.loads(self.rfile.read(length))
                data = json.dumps(service.reply).encode()
                self.send_response(service.status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        threading.Thread(target=self.server.serve_forever, daemon=True).start()
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


def test_remote_refine_valid_reply():
    svc = _Refiner({"theta": [-4.0, 0.5, 6.0, 1.0]})
    try:
        out = remote_refine(THETA0, fb(triggers=[44.0]), svc.url)
    finally:
        svc.close()
    assert out == SemanticCosts(-4.0, 0.5, 6.0, 1.0)
    assert svc.last_body["theta"] == [-5.0, 1.0, 5.0, 0.8]
    assert svc.last_body["feedback"]["trigger_distances"] == [44.0]


def test_remote_refine_schema_violations():
    for reply in ({"theta": [1, 2, 3]}, {"theta": "x"}, {"nope": 1}, {"theta": [1.0, 1, 5, 1]}):
        svc = _Refiner(reply)
        try:
            with pytest.raises(RefinementServiceError):
                remote_refine(THETA0, fb(), svc.url)
        finally:
            svc.close()


def test_remote_refine_unreachable():
    with pytest.raises(RefinementServiceError):
        remote_refine(THETA0, fb(), "http://127.0.0.1:9", timeout=0.5)


def test_run_refinement_remote_endpoint_then_fallback(case_grid):
    grid, pconfig = case_grid
    # remote refiner that jumps straight to the accepted delay cost
    svc = _Refiner({"theta": [-5.0, 0.3, 5.0, 0.8]})
    try:
        outcome = run_refinement(
            grid, ["left"], k_max=6, store=InMemoryStore(), config=pconfig,
            refine_endpoint=svc.url,
        )
    finally:
        svc.close()
    assert outcome.accepted and outcome.trials_used == 2
    assert [t.theta.c_delay for t in outcome.history] == [1.0, 0.3]
    # dead endpoint falls back to the local rules: same path as no endpoint
    dead = run_refinement(
        grid, ["left"], k_max=6, store=InMemoryStore(), config=pconfig,
        refine_endpoint="http://127.0.0.1:9",
    )
    assert dead.accepted and dead.trials_used == 3
    assert [t.theta.c_delay for t in dead.history] == [1.0, 0.5, 0.3]
