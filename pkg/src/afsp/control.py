"""Reference-switching model-predictive tracking for a unicycle.

The controller tracks a blended reference: a local lane reference and an
optional cloud-supplied path, mixed per step by a binary selector that a
hysteresis gate drives from clearance and lateral-error triggers. Each
solve linearizes the unicycle step about the previous iterate, builds
supporting half-planes around inflated obstacle discs, and runs the
projected-gradient kernel a fixed number of outer iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .geometry import (
    normalize_angle,
    point_polyline_distance,
    polyline_arc_position,
    polyline_point_at,
)
from .worldmodel import Obstacle

V_MAX = 8.0
OMEGA_MAX = 1.0


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw], dtype=float)


@dataclass(frozen=True)
class ControlInput:
    v: float
    omega: float

    def __post_init__(self):
        if not (-1e-9 <= self.v <= V_MAX + 1e-9):
            raise ValueError(f"speed {self.v} outside [0, {V_MAX}]")
        if abs(self.omega) > OMEGA_MAX + 1e-9:
            raise ValueError(f"turn rate {self.omega} outside [-{OMEGA_MAX}, {OMEGA_MAX}]")

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega], dtype=float)


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 15
    dt: float = 0.2
    w_s: float = 0.37
    w_u: float = 0.2
    d0: float = 0.3
    r_v: float = 1.4
    v_max: float = V_MAX
    omega_max: float = OMEGA_MAX
    slack_weight: float = 1e3
    outer_iters: int = 3
    qp_tol: float = 1e-6
    qp_max_iters: int = 500
    # extra margin beyond d0 so soft-constraint sag never eats into d0 itself
    clearance_pad: float = 0.2
    switch_clear_factor: float = 1.5
    switch_lat_err: float = 1.0
    hysteresis_steps: int = 5

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0.0:
            raise ValueError("horizon must be >= 1 and dt positive")


@dataclass
class MpcInfo:
    iterations: int = 0
    residual: float = math.inf
    converged: bool = False
    infeasible: bool = False
    objective: float = math.inf
    warm_start: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ReferencePair:
    """Local and cloud reference trajectories plus the per-step selector."""

    local: np.ndarray  # (H+1, 3)
    cloud: Optional[np.ndarray] = None
    z: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def step_dynamics(state: VehicleState, u: ControlInput, dt: float) -> VehicleState:
    """One discrete unicycle step (the map the linearization expands):
    x += v cos(yaw) dt, y += v sin(yaw) dt, yaw += omega dt."""
    return VehicleState(
        state.x + u.v * math.cos(state.yaw) * dt,
        state.y + u.v * math.sin(state.yaw) * dt,
        state.yaw + u.omega * dt,
    )


def linearize(ref_state, ref_input, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First-order expansion of the unicycle step about (ref_state,
    ref_input). Returns (A, B, c) with the affine residual folded into c so
    A s + B u + c reproduces the nonlinear step exactly at the expansion
    point."""
    x, y, yaw = (ref_state.x, ref_state.y, ref_state.yaw) if isinstance(
        ref_state, VehicleState
    ) else (float(ref_state[0]), float(ref_state[1]), float(ref_state[2]))
    v, _omega = (ref_input.v, ref_input.omega) if isinstance(
        ref_input, ControlInput
    ) else (float(ref_input[0]), float(ref_input[1]))
    cos_y = math.cos(yaw)
    sin_y = math.sin(yaw)
    A = np.array(
        [
            [1.0, 0.0, -v * sin_y * dt],
            [0.0, 1.0, v * cos_y * dt],
            [0.0, 0.0, 1.0],
        ]
    )
    B = np.array([[cos_y * dt, 0.0], [sin_y * dt, 0.0], [0.0, dt]])
    s = np.array([x, y, yaw])
    u = np.array([v, _omega])
    f = np.array([x + v * cos_y * dt, y + v * sin_y * dt, yaw + _omega * dt])
    c = f - A @ s - B @ u
    return A, B, c


def select_reference(pair: ReferencePair) -> np.ndarray:
    """Per-step blend (1 - z) * local + z * cloud. Requesting the cloud
    side (any z = 1) without a cloud trajectory is an error."""
    local = np.asarray(pair.local, dtype=float)
    z = np.asarray(pair.z, dtype=float).reshape(-1)
    if z.shape[0] != local.shape[0]:
        raise ValueError("selector length must match the reference length")
    if pair.cloud is None:
        if np.any(z != 0.0):
            raise ValueError("selector requests a cloud reference that does not exist")
        return local.copy()
    cloud = np.asarray(pair.cloud, dtype=float)
    if cloud.shape != local.shape:
        raise ValueError("local and cloud references must share a shape")
    return (1.0 - z)[:, None] * local + z[:, None] * cloud


def switching_policy(
    state: VehicleState,
    local_ref: np.ndarray,
    obstacles: Sequence[Obstacle],
    cloud_available: bool,
    cfg: MpcConfig = MpcConfig(),
) -> int:
    """Single-shot selector decision (no hysteresis): take the cloud side
    only when one exists and the local reference is threatened, either by
    low clearance along the horizon or by a large lateral offset."""
    if not cloud_available:
        return 0
    local_ref = np.asarray(local_ref, dtype=float)
    triggered = False
    if len(obstacles):
        discs = np.array([[ob.x, ob.y, ob.radius] for ob in obstacles], dtype=float)
        out = np.empty(local_ref.shape[0])
        kernels.DEFAULT.clearance_sweep(
            np.ascontiguousarray(local_ref[:, :2]), discs, 0.0, out
        )
        # center-to-boundary clearance against the sized-up footprint band
        if float(out.min()) < cfg.switch_clear_factor * cfg.d0 + cfg.r_v:
            triggered = True
    if not triggered:
        lat = point_polyline_distance(state.x, state.y, local_ref[:, :2])
        if lat > cfg.switch_lat_err:
            triggered = True
    return 1 if triggered else 0


class SwitchingGate:
    """Hysteresis wrapper around switching_policy: each selector value is
    held for a minimum number of control steps, and losing the cloud
    reference forces the local side immediately."""

    def __init__(self, cfg: MpcConfig = MpcConfig()):
        self.cfg = cfg
        self.z = 0
        self._held = cfg.hysteresis_steps  # free to switch at start

    def step(
        self,
        state: VehicleState,
        local_ref: np.ndarray,
        obstacles: Sequence[Obstacle],
        cloud_available: bool,
    ) -> int:
        if not cloud_available:
            if self.z != 0:
                self.z = 0
                self._held = 0
            else:
                self._held += 1
            return self.z
        want = switching_policy(state, local_ref, obstacles, True, self.cfg)
        if want != self.z and self._held >= self.cfg.hysteresis_steps:
            self.z = want
            self._held = 0
        else:
            self._held += 1
        return self.z


def rollout(state: VehicleState, inputs: np.ndarray, dt: float) -> np.ndarray:
    """Nonlinear rollout of an input sequence; returns (H+1, 3) states."""
    H = inputs.shape[0]
    out = np.empty((H + 1, 3))
    s = state
    out[0] = s.as_array()
    for h in range(H):
        s = step_dynamics(s, ControlInput(float(inputs[h, 0]), float(inputs[h, 1])), dt)
        out[h + 1] = s.as_array()
    return out


def reference_inputs(ref: np.ndarray, cfg: MpcConfig) -> np.ndarray:
    """Feedforward inputs implied by reference spacing: v from consecutive
    point distance over dt, omega 0."""
    H = ref.shape[0] - 1
    uref = np.zeros((H, 2))
    for h in range(H):
        d = math.hypot(ref[h + 1, 0] - ref[h, 0], ref[h + 1, 1] - ref[h, 1])
        uref[h, 0] = min(cfg.v_max, d / cfg.dt)
    return uref


def _half_planes(
    nominal: np.ndarray, obstacles: Sequence[Obstacle], cfg: MpcConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Supporting half-planes of the inflated discs at the nominal
    positions: n.p >= n.center + (r + r_v + d0 + pad)."""
    Hp1 = nominal.shape[0]
    M = len(obstacles)
    normals = np.zeros((Hp1, M, 2))
    offsets = np.full((Hp1, M), -1e18)
    margin_base = cfg.r_v + cfg.d0 + cfg.clearance_pad
    for m, ob in enumerate(obstacles):
        for h in range(1, Hp1):
            dx = nominal[h, 0] - ob.x
            dy = nominal[h, 1] - ob.y
            norm = math.hypot(dx, dy)
            if norm < 1e-9:
                dx, dy, norm = 1.0, 0.0, 1.0
            nx, ny = dx / norm, dy / norm
            normals[h, m, 0] = nx
            normals[h, m, 1] = ny
            offsets[h, m] = nx * ob.x + ny * ob.y + ob.radius + margin_base
    return normals, offsets


def solve_mpc(
    state: VehicleState,
    s_star: np.ndarray,
    obstacles: Sequence[Obstacle] = (),
    cfg: MpcConfig = MpcConfig(),
    u_warm: Optional[np.ndarray] = None,
) -> tuple[ControlInput, np.ndarray, MpcInfo]:
    """Track the blended reference from the current state.

    s_star is the (H+1, 3) reference. Runs outer_iters linearize/solve
    rounds, each re-expanding about the nonlinear rollout of the previous
    solution. Returns the first input, the predicted nonlinear trajectory,
    and solver info; a numerically broken solve degrades to a safe stop
    (zero input) with the infeasible flag set.
    """
    s_star = np.asarray(s_star, dtype=float)
    H = cfg.horizon
    if s_star.shape != (H + 1, 3):
        raise ValueError(f"reference must have shape ({H + 1}, 3)")
    kern = kernels.DEFAULT
    pref = np.ascontiguousarray(s_star[:, :2])
    uref = reference_inputs(s_star, cfg)
    lo = np.array([0.0, -cfg.omega_max])
    hi = np.array([cfg.v_max, cfg.omega_max])
    U = u_warm.copy() if u_warm is not None else uref.copy()
    U = np.clip(U, lo, hi)

    info = MpcInfo()
    if not np.all(np.isfinite(U)):
        info.infeasible = True
        return ControlInput(0.0, 0.0), rollout(state, np.zeros((H, 2)), cfg.dt), info
    total_iters = 0
    residual = math.inf
    J = math.inf
    for _ in range(cfg.outer_iters):
        nominal = rollout(state, U, cfg.dt)
        A = np.empty((H, 3, 3))
        B = np.empty((H, 3, 2))
        c = np.empty((H, 3))
        for h in range(H):
            Ah, Bh, ch = linearize(nominal[h], U[h], cfg.dt)
            A[h] = Ah
            B[h] = Bh
            c[h] = ch
        normals, offsets = _half_planes(nominal, obstacles, cfg)
        U, iters, residual, J = kern.pgd_solve(
            A, B, c, state.as_array(), pref, uref, normals, offsets,
            cfg.w_s, cfg.w_u, cfg.slack_weight, lo, hi, U,
            cfg.qp_tol, cfg.qp_max_iters,
        )
        total_iters += int(iters)
        if not np.all(np.isfinite(U)):
            info.infeasible = True
            info.iterations = total_iters
            return ControlInput(0.0, 0.0), rollout(state, np.zeros((H, 2)), cfg.dt), info

    predicted = rollout(state, U, cfg.dt)
    if not np.all(np.isfinite(predicted)):
        info.infeasible = True
        info.iterations = total_iters
        return ControlInput(0.0, 0.0), rollout(state, np.zeros((H, 2)), cfg.dt), info
    info.iterations = total_iters
    info.residual = float(residual)
    info.converged = bool(residual < cfg.qp_tol)
    info.objective = float(J)
    info.warm_start = U  # consumed by the next tick
    u0 = ControlInput(float(U[0, 0]), float(U[0, 1]))
    return u0, predicted, info


def resample_path(points: np.ndarray, spacing: float) -> np.ndarray:
    """Arc-length resampling of a polyline into (N, 3) poses with tangent
    headings; endpoints preserved."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if spacing <= 0.0:
        raise ValueError("spacing must be positive")
    if pts.shape[0] == 1:
        return np.array([[pts[0, 0], pts[0, 1], 0.0]])
    seg = pts[1:] - pts[:-1]
    total = float(np.hypot(seg[:, 0], seg[:, 1]).sum())
    n = max(2, int(math.floor(total / spacing)) + 2)
    out = np.empty((n, 3))
    for i in range(n - 1):
        x, y, heading = polyline_point_at(pts, min(total, i * spacing))
        out[i] = (x, y, heading)
    x, y, heading = polyline_point_at(pts, total)
    out[-1] = (x, y, heading)
    return out


def reference_window(
    path: np.ndarray, position: tuple[float, float], speed: float, cfg: MpcConfig
) -> np.ndarray:
    """(H+1, 3) reference slice starting at the arc position nearest to the
    vehicle and advancing speed * dt per step, clamped at the path end."""
    pts = np.asarray(path, dtype=float)
    xy = pts[:, :2] if pts.shape[1] >= 2 else pts
    s0 = polyline_arc_position(position[0], position[1], xy)
    out = np.empty((cfg.horizon + 1, 3))
    for h in range(cfg.horizon + 1):
        x, y, heading = polyline_point_at(xy, s0 + h * speed * cfg.dt)
        out[h] = (x, y, heading)
    return out
