#!/usr/bin/env python3
"""Timing comparison of the numpy and numba kernel backends.

Builds one condensed tracking instance at realistic scale (horizon 15,
23 obstacle half-planes) plus a dense clearance sweep, then times both
backends on each kernel and prints per-call milliseconds and speedup.
Both backends are checked for exact agreement before timing.

Run:  python benchmarks/bench_kernels.py [--repeats N] [--points N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from afsp.control import (
    MpcConfig,
    VehicleState,
    _half_planes,
    linearize,
    reference_inputs,
    reference_window,
    rollout,
)
from afsp.kernels import get_kernels
from afsp.worldmodel import Obstacle

CFG = MpcConfig()


def build_instance():
    """One condensed projected-gradient solve at benchmark-scenario scale."""
    line = np.array([[0.0, 0.0], [80.0, 0.0]])
    state = VehicleState(0.0, 1.0, 0.3)
    obstacles = [
        Obstacle(6.0 + 3.0 * k, 2.5 if k % 2 else -2.5, 0.5) for k in range(22)
    ]
    obstacles.append(Obstacle(30.0, 0.6, 0.4))
    sref = reference_window(line, (state.x, state.y), 4.2, CFG)
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
    normals, offsets = _half_planes(nominal, obstacles, CFG)
    args = (
        A, B, c, state.as_array(), np.ascontiguousarray(sref[:, :2]), uref,
        normals, offsets, CFG.w_s, CFG.w_u, CFG.slack_weight, lo, hi, U0,
    )
    return args, obstacles


def sweep_instance(obstacles, n_points):
    xs = np.linspace(0.0, 80.0, n_points)
    points = np.ascontiguousarray(np.stack([xs, 1.5 * np.sin(0.3 * xs)], axis=1))
    discs = np.array([[ob.x, ob.y, ob.radius] for ob in obstacles])
    return points, discs


def per_call_ms(fn, repeats):
    fn()  # warm-up (compiles the numba variant on first use)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200, help="timed calls per kernel")
    ap.add_argument("--points", type=int, default=5000, help="clearance sweep size")
    opts = ap.parse_args(argv)

    backends = [get_kernels("numpy")]
    try:
        backends.append(get_kernels("numba"))
    except Exception as exc:  # numba missing or failed to compile
        print(f"numba backend unavailable ({exc}); timing numpy only")

    args, obstacles = build_instance()
    points, discs = sweep_instance(obstacles, opts.points)

    # agreement check before any timing claims; the jit backend may fuse
    # multiply-adds, which can move the last bit or two of a result, so
    # allow a few ulp rather than demanding bit equality across backends
    solves = [k.pgd_solve(*args, CFG.qp_tol, CFG.qp_max_iters) for k in backends]
    sweeps = [
        k.clearance_sweep(points, discs, CFG.r_v, np.empty(len(points)))
        for k in backends
    ]
    for other_solve, other_sweep in zip(solves[1:], sweeps[1:]):
        assert np.allclose(solves[0][0], other_solve[0], rtol=1e-12, atol=1e-14), \
            "backend solves differ"
        assert np.allclose(sweeps[0], other_sweep, rtol=1e-12, atol=1e-14), \
            "backend sweeps differ"
    U, iters, _residual, J = solves[0]
    print(
        f"instance: horizon {CFG.horizon}, {len(obstacles)} obstacles, "
        f"{iters} iterations to J={J:.3f}; sweep: {opts.points} points"
    )

    times: dict[tuple[str, str], float] = {}
    for kern in backends:
        times[("pgd_solve", kern.name)] = per_call_ms(
            lambda: kern.pgd_solve(*args, CFG.qp_tol, CFG.qp_max_iters), opts.repeats
        )
        out = np.empty(len(points))
        times[("clearance_sweep", kern.name)] = per_call_ms(
            lambda: kern.clearance_sweep(points, discs, CFG.r_v, out), opts.repeats
        )

    for kernel in ("pgd_solve", "clearance_sweep"):
        for kern in backends:
            ms = times[(kernel, kern.name)]
            line = f"{kernel:<16} {kern.name:<6} {ms:9.3f} ms/call"
            if kern.name != "numpy":
                line += f"   {times[(kernel, 'numpy')] / ms:6.1f}x vs numpy"
            print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
