import math

import numpy as np
import pytest

from afsp.control import (
    OMEGA_MAX,
    V_MAX,
    ControlInput,
    MpcConfig,
    ReferencePair,
    SwitchingGate,
    VehicleState,
    _half_planes,
    linearize,
    reference_inputs,
    reference_window,
    resample_path,
    rollout,
    select_reference,
    solve_mpc,
    step_dynamics,
    switching_policy,
)
from afsp.kernels import get_kernels
from afsp.sim import simulate_tracking
from afsp.worldmodel import Obstacle

CFG = MpcConfig()
LINE = np.array([[0.0, 0.0], [80.0, 0.0]])


# ---------------------------------------------------------------------------
# state, input, and dynamics
# ---------------------------------------------------------------------------


def test_vehicle_state_normalizes_yaw():
    assert VehicleState(0.0, 0.0, 2.0 * math.pi).yaw == pytest.approx(0.0)
    assert abs(VehicleState(0.0, 0.0, 3.5 * math.pi).yaw) <= math.pi
    assert np.array_equal(VehicleState(1.0, 2.0, 0.3).as_array(), [1.0, 2.0, 0.3])


def test_control_input_bounds():
    ControlInput(0.0, 0.0)
    ControlInput(V_MAX, OMEGA_MAX)
    ControlInput(-1e-10, -OMEGA_MAX)  # tiny numerical slop is tolerated
    with pytest.raises(ValueError, match="speed"):
        ControlInput(-0.1, 0.0)
    with pytest.raises(ValueError, match="speed"):
        ControlInput(8.0000001, 0.0)
    with pytest.raises(ValueError, match="turn rate"):
        ControlInput(1.0, 1.1)
    with pytest.raises(ValueError, match="turn rate"):
        ControlInput(1.0, -1.0001)


def test_step_dynamics_straight_segment():
    out = step_dynamics(VehicleState(0.0, 0.0, 0.0), ControlInput(2.0, 0.0), 0.5)
    assert (out.x, out.y, out.yaw) == (1.0, 0.0, 0.0)


def test_step_dynamics_traces_quarter_circle():
    # v = omega = 1 follows the unit circle; fine Euler steps land at (1, 1, pi/2)
    dt = 1e-4
    n = int(round((math.pi / 2) / dt))
    s = VehicleState(0.0, 0.0, 0.0)
    u = ControlInput(1.0, 1.0)
    for _ in range(n):
        s = step_dynamics(s, u, dt)
    assert s.x == pytest.approx(1.0, abs=1e-3)
    assert s.y == pytest.approx(1.0, abs=1e-3)
    assert s.yaw == pytest.approx(math.pi / 2, abs=1e-3)


def test_rollout_returns_all_states():
    out = rollout(VehicleState(0.0, 0.0, 0.0), np.array([[2.0, 0.0], [2.0, 0.0]]), 0.5)
    assert np.array_equal(out, [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])


# ---------------------------------------------------------------------------
# linearization
# ---------------------------------------------------------------------------


def test_linearize_exact_at_expansion_point(rng):
    for _ in range(20):
        s = VehicleState(*rng.uniform(-5.0, 5.0, size=2), rng.uniform(-1.5, 1.5))
        u = ControlInput(rng.uniform(0.0, 8.0), rng.uniform(-1.0, 1.0))
        A, B, c = linearize(s, u, 0.2)
        nxt = step_dynamics(s, u, 0.2)
        recon = A @ s.as_array() + B @ u.as_array() + c
        assert np.allclose(recon, nxt.as_array(), atol=1e-12)


def test_linearize_identity_at_zero_speed():
    A, B, c = linearize(VehicleState(3.0, -2.0, 0.7), ControlInput(0.0, 0.5), 0.2)
    assert np.array_equal(A, np.eye(3))
    assert B[2, 1] == 0.2 and B[0, 1] == 0.0


def test_linearize_accepts_arrays():
    s = VehicleState(1.0, 2.0, 0.4)
    u = ControlInput(3.0, -0.2)
    want = linearize(s, u, 0.2)
    got = linearize(np.array([1.0, 2.0, 0.4]), np.array([3.0, -0.2]), 0.2)
    for w, g in zip(want, got):
        assert np.array_equal(w, g)


def test_linearize_matches_central_differences(rng):
    # the Jacobian accuracy check the controller's correctness rests on
    dt = 0.2
    h = 1e-6

    def f(s_vec, u_vec):
        nxt = step_dynamics(
            VehicleState(*s_vec), ControlInput(u_vec[0], u_vec[1]), dt
        )
        return nxt.as_array()

    for _ in range(100):
        s = np.array([*rng.uniform(-20.0, 20.0, size=2), rng.uniform(-1.5, 1.5)])
        u = np.array([rng.uniform(0.1, 7.9), rng.uniform(-0.9, 0.9)])
        A, B, _ = linearize(s, u, dt)
        A_fd = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            A_fd[:, j] = (f(s + e, u) - f(s - e, u)) / (2 * h)
        B_fd = np.empty((3, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            B_fd[:, j] = (f(s, u + e) - f(s, u - e)) / (2 * h)
        for num, ana in ((A_fd, A), (B_fd, B)):
            rel = np.abs(num - ana).max() / max(1.0, np.abs(ana).max())
            assert rel < 1e-4


# ---------------------------------------------------------------------------
# reference selection and switching
# ---------------------------------------------------------------------------


def test_select_reference_local_only():
    local = np.arange(12, dtype=float).reshape(4, 3)
    out = select_reference(ReferencePair(local, None, np.zeros(4, dtype=int)))
    assert np.array_equal(out, local) and out is not local


def test_select_reference_blend():
    local = np.zeros((4, 3))
    cloud = np.ones((4, 3))
    z = np.array([0, 1, 0, 1])
    out = select_reference(ReferencePair(local, cloud, z))
    assert np.array_equal(out[:, 0], [0.0, 1.0, 0.0, 1.0])
    all_cloud = select_reference(ReferencePair(local, cloud, np.ones(4, dtype=int)))
    assert np.array_equal(all_cloud, cloud)


def test_select_reference_errors():
    local = np.zeros((4, 3))
    with pytest.raises(ValueError, match="length"):
        select_reference(ReferencePair(local, None, np.zeros(3, dtype=int)))
    with pytest.raises(ValueError, match="cloud"):
        select_reference(ReferencePair(local, None, np.ones(4, dtype=int)))
    with pytest.raises(ValueError, match="shape"):
        select_reference(ReferencePair(local, np.zeros((3, 3)), np.zeros(4, dtype=int)))


def straight_ref(n=16):
    out = np.zeros((n, 3))
    out[:, 0] = np.arange(n, dtype=float)
    return out


def test_switching_policy_triggers():
    s = VehicleState(0.0, 0.0, 0.0)
    ref = straight_ref()
    near = [Obstacle(8.0, 1.8, 0.5)]  # boundary clearance 1.3 < 1.5*d0 + r_v = 1.85
    far = [Obstacle(8.0, 4.0, 0.5)]  # clearance 3.5
    assert switching_policy(s, ref, near, cloud_available=True) == 1
    assert switching_policy(s, ref, far, cloud_available=True) == 0
    assert switching_policy(s, ref, near, cloud_available=False) == 0
    # lateral-offset trigger, strict at the threshold
    assert switching_policy(VehicleState(0.0, 1.5, 0.0), ref, [], True) == 1
    assert switching_policy(VehicleState(0.0, 1.0, 0.0), ref, [], True) == 0
    assert switching_policy(s, ref, [], True) == 0


def test_switching_gate_hysteresis():
    gate = SwitchingGate(CFG)
    ref = straight_ref()
    threat = [Obstacle(8.0, 1.8, 0.5)]
    s = VehicleState(0.0, 0.0, 0.0)
    assert gate.step(s, ref, threat, True) == 1  # free to switch at start
    # the threat clears immediately, but the selector is held five steps
    held = [gate.step(s, ref, [], True) for _ in range(6)]
    assert held == [1, 1, 1, 1, 1, 0]


def test_switching_gate_cloud_loss_is_immediate():
    gate = SwitchingGate(CFG)
    ref = straight_ref()
    threat = [Obstacle(8.0, 1.8, 0.5)]
    s = VehicleState(0.0, 0.0, 0.0)
    assert gate.step(s, ref, threat, True) == 1
    assert gate.step(s, ref, threat, False) == 0  # no cloud: local, no holding
    # and the forced drop restarts the hold before cloud use resumes
    back = [gate.step(s, ref, threat, True) for _ in range(6)]
    assert back == [0, 0, 0, 0, 0, 1]


# ---------------------------------------------------------------------------
# reference construction
# ---------------------------------------------------------------------------


def test_reference_inputs_spacing_and_cap():
    ref = np.array([[0.0, 0.0, 0.0], [0.4, 0.0, 0.0], [2.4, 0.0, 0.0]])
    u = reference_inputs(ref, CFG)
    assert np.array_equal(u, [[2.0, 0.0], [8.0, 0.0]])  # 10 m/s capped at v_max


def test_resample_path_l_shape():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0]])
    out = resample_path(pts, 0.5)
    assert out.shape == (10, 3)
    assert np.allclose(out[0], [0.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(out[1], [0.5, 0.0, 0.0], atol=1e-12)
    assert np.allclose(out[5], [2.0, 0.5, math.pi / 2], atol=1e-12)
    assert np.allclose(out[-1], [2.0, 2.0, math.pi / 2], atol=1e-12)
    single = resample_path(np.array([[3.0, 4.0]]), 0.5)
    assert np.array_equal(single, [[3.0, 4.0, 0.0]])
    with pytest.raises(ValueError, match="spacing"):
        resample_path(pts, 0.0)


def test_reference_window_advances_and_clamps():
    path = np.array([[0.0, 0.0], [10.0, 0.0]])
    ref = reference_window(path, (3.0, 0.4), 4.2, CFG)
    assert ref.shape == (CFG.horizon + 1, 3)
    for h in range(CFG.horizon + 1):
        want_x = min(10.0, 3.0 + h * 4.2 * CFG.dt)
        assert ref[h, 0] == pytest.approx(want_x, abs=1e-12)
        assert ref[h, 1] == 0.0 and ref[h, 2] == 0.0
    assert np.array_equal(ref[-1], [10.0, 0.0, 0.0])  # clamped at the path end


def test_half_planes_geometry():
    nominal = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    normals, offsets = _half_planes(nominal, [Obstacle(2.0, 1.0, 0.5)], CFG)
    assert normals.shape == (2, 1, 2) and offsets.shape == (2, 1)
    assert offsets[0, 0] == -1e18  # the current state is never constrained
    assert np.allclose(normals[1, 0], [0.0, -1.0])
    margin = 0.5 + CFG.r_v + CFG.d0 + CFG.clearance_pad
    assert offsets[1, 0] == pytest.approx(-1.0 + margin, abs=1e-12)


# ---------------------------------------------------------------------------
# the solver
# ---------------------------------------------------------------------------


def test_solve_mpc_rejects_bad_reference_shape():
    with pytest.raises(ValueError, match="shape"):
        solve_mpc(VehicleState(0.0, 0.0, 0.0), np.zeros((10, 3)))


def test_solve_mpc_tracks_straight_reference():
    ref = reference_window(LINE, (0.0, 0.0), 4.2, CFG)
    u, predicted, info = solve_mpc(VehicleState(0.0, 0.0, 0.0), ref, (), CFG)
    assert u.v == pytest.approx(4.2, abs=1e-3)
    assert u.omega == pytest.approx(0.0, abs=1e-3)
    assert not info.infeasible
    assert predicted.shape == (CFG.horizon + 1, 3)
    assert np.all(np.isfinite(predicted))
    assert info.warm_start is not None and info.warm_start.shape == (CFG.horizon, 2)


def test_solve_mpc_degrades_to_stop_on_broken_warm_start():
    ref = reference_window(LINE, (0.0, 0.0), 4.2, CFG)
    bad = np.full((CFG.horizon, 2), np.nan)
    u, predicted, info = solve_mpc(VehicleState(0.0, 0.0, 0.0), ref, (), CFG, u_warm=bad)
    assert info.infeasible
    assert (u.v, u.omega) == (0.0, 0.0)
    assert np.all(np.isfinite(predicted))


def test_solver_objective_never_increases_with_iterations():
    kern = get_kernels("numpy")
    state = VehicleState(0.0, 1.0, 0.3)
    sref = reference_window(LINE, (0.0, 1.0), 4.2, CFG)
    uref = reference_inputs(sref, CFG)
    lo = np.array([0.0, -CFG.omega_max])
    hi = np.array([CFG.v_max, CFG.omega_max])
    U0 = np.clip(uref.copy(), lo, hi)
    nominal = rollout(state, U0, CFG.dt)
    H = CFG.horizon
    A = np.empty((H, 3, 3))
    B = np.empty((H, 3, 2))
    c = np.empty((H, 3))
    for h in range(H):
        A[h], B[h], c[h] = linearize(nominal[h], U0[h], CFG.dt)
    normals, offsets = _half_planes(nominal, [Obstacle(12.0, 0.0, 1.0)], CFG)
    objectives = []
    for max_iter in range(1, 11):
        _, _, _, J = kern.pgd_solve(
            A, B, c, state.as_array(), np.ascontiguousarray(sref[:, :2]), uref,
            normals, offsets, CFG.w_s, CFG.w_u, CFG.slack_weight,
            lo, hi, U0.copy(), 0.0, max_iter,
        )
        objectives.append(J)
    assert all(b <= a + 1e-12 for a, b in zip(objectives, objectives[1:]))
    assert objectives[-1] < objectives[0]


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------


def test_closed_loop_straight_line_from_offset():
    rows, success, _reason = simulate_tracking(
        VehicleState(0.0, 1.0, 0.0), LINE, None, lambda *a: 0, (), (70.0, 0.0), 2.0,
        4.2, LINE, CFG, timeout=5.0,
    )
    assert not success  # the goal is 70 m out; five seconds only settles tracking
    assert len(rows) == 51
    last = rows[-1]
    assert last[0] == 5.0
    assert last[8] < 0.05  # lateral deviation regulated away
    assert abs(last[4] - 4.2) < 0.1  # commanded speed at the target
    assert all(r[6] == 0 for r in rows)  # local reference throughout


def test_closed_loop_keeps_clearance_around_blocking_obstacle():
    ob = Obstacle(12.0, 0.0, 1.0)
    avoid = np.array(
        [[0.0, 0.0], [6.0, 0.0], [9.0, 2.2], [15.0, 2.2], [18.0, 0.0], [40.0, 0.0]]
    )
    rows, success, reason = simulate_tracking(
        VehicleState(0.0, 0.0, 0.0), LINE, avoid, lambda *a: 1, [ob], (35.0, 0.0), 2.0,
        4.2, LINE, CFG, timeout=30.0,
    )
    assert success, reason
    min_clear = min(r[7] for r in rows)
    assert min_clear >= CFG.d0 - 1e-3
