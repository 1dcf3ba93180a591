"""Numeric hot kernels with a JIT and a plain-numpy execution path.

The condensed tracking solve (projected gradient on the input sequence) and
the disc-clearance sweep dominate closed-loop runtime. Both are written in
loop form so the same source compiles under numba; the env var
AFSP_BACKEND=numpy|numba picks the default path (numba when importable).
`get_kernels` hands out either implementation explicitly for benchmarks.
"""

from __future__ import annotations

import logging
import os
from types import SimpleNamespace

import numpy as np

log = logging.getLogger(__name__)

BACKEND_ENV = "AFSP_BACKEND"


def _pgd_solve_core(A, B, c, s0, pref, uref, normals, offsets,
                    w_s, w_u, rho, lo, hi, U0, tol, max_iter):
    """Projected-gradient solve of the condensed tracking objective.

    A: (H,3,3), B: (H,3,2), c: (H,3) linearized step maps; s0: (3,) fixed
    initial state; pref: (H+1,2) reference positions; uref: (H,2) reference
    inputs; normals/offsets: (H+1,M,2)/(H+1,M) half-planes n.p >= b applied
    as hinge-squared penalties at weight rho; lo/hi: (2,) input box.
    Returns (U, iterations, residual, objective). The objective never
    increases across iterations (backtracking line search).
    """
    H = B.shape[0]
    M = normals.shape[1]
    S = np.empty((H + 1, 3))
    Sn = np.empty((H + 1, 3))

    def _rollout(U, S):
        S[0, 0] = s0[0]
        S[0, 1] = s0[1]
        S[0, 2] = s0[2]
        for h in range(H):
            for r in range(3):
                acc = c[h, r]
                for q in range(3):
                    acc += A[h, r, q] * S[h, q]
                acc += B[h, r, 0] * U[h, 0] + B[h, r, 1] * U[h, 1]
                S[h + 1, r] = acc

    def _objective(U, S):
        J = 0.0
        for h in range(1, H + 1):
            ex = S[h, 0] - pref[h, 0]
            ey = S[h, 1] - pref[h, 1]
            J += w_s * (ex * ex + ey * ey)
            for m in range(M):
                viol = offsets[h, m] - (
                    normals[h, m, 0] * S[h, 0] + normals[h, m, 1] * S[h, 1]
                )
                if viol > 0.0:
                    J += rho * viol * viol
        for h in range(H):
            du0 = U[h, 0] - uref[h, 0]
            du1 = U[h, 1] - uref[h, 1]
            J += w_u * (du0 * du0 + du1 * du1)
        return J

    def _gradient(U, S, G):
        lam0 = 0.0
        lam1 = 0.0
        lam2 = 0.0
        for h in range(H, 0, -1):
            gx = 2.0 * w_s * (S[h, 0] - pref[h, 0])
            gy = 2.0 * w_s * (S[h, 1] - pref[h, 1])
            for m in range(M):
                viol = offsets[h, m] - (
                    normals[h, m, 0] * S[h, 0] + normals[h, m, 1] * S[h, 1]
                )
                if viol > 0.0:
                    gx -= 2.0 * rho * viol * normals[h, m, 0]
                    gy -= 2.0 * rho * viol * normals[h, m, 1]
            lam0 += gx
            lam1 += gy
            # input gradient at step h-1 uses lambda at state h
            hm = h - 1
            G[hm, 0] = 2.0 * w_u * (U[hm, 0] - uref[hm, 0]) + (
                B[hm, 0, 0] * lam0 + B[hm, 1, 0] * lam1 + B[hm, 2, 0] * lam2
            )
            G[hm, 1] = 2.0 * w_u * (U[hm, 1] - uref[hm, 1]) + (
                B[hm, 0, 1] * lam0 + B[hm, 1, 1] * lam1 + B[hm, 2, 1] * lam2
            )
            if hm > 0:
                n0 = A[hm, 0, 0] * lam0 + A[hm, 1, 0] * lam1 + A[hm, 2, 0] * lam2
                n1 = A[hm, 0, 1] * lam0 + A[hm, 1, 1] * lam1 + A[hm, 2, 1] * lam2
                n2 = A[hm, 0, 2] * lam0 + A[hm, 1, 2] * lam1 + A[hm, 2, 2] * lam2
                lam0 = n0
                lam1 = n1
                lam2 = n2

    U = U0.copy()
    for h in range(H):
        for d in range(2):
            if U[h, d] < lo[d]:
                U[h, d] = lo[d]
            if U[h, d] > hi[d]:
                U[h, d] = hi[d]
    G = np.empty((H, 2))
    Un = np.empty((H, 2))
    _rollout(U, S)
    J = _objective(U, S)
    eta = 0.25
    iters = 0
    residual = np.inf
    for _ in range(max_iter):
        iters += 1
        _gradient(U, S, G)
        accepted = False
        Jn = J
        for _bt in range(40):
            for h in range(H):
                for d in range(2):
                    v = U[h, d] - eta * G[h, d]
                    if v < lo[d]:
                        v = lo[d]
                    if v > hi[d]:
                        v = hi[d]
                    Un[h, d] = v
            _rollout(Un, Sn)
            Jn = _objective(Un, Sn)
            if Jn <= J:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            residual = 0.0
            break
        residual = 0.0
        for h in range(H):
            for d in range(2):
                delta = abs(Un[h, d] - U[h, d])
                if delta > residual:
                    residual = delta
        U[:, :] = Un
        S[:, :] = Sn
        J = Jn
        eta = min(eta * 1.3, 10.0)
        if residual < tol:
            break
    return U, iters, residual, J


def _clearance_sweep_core(points, discs, r_v, out):
    """Footprint clearance at each point: distance to the nearest disc
    boundary minus the vehicle radius. points: (N,2), discs: (M,3) rows
    (x, y, radius), out: (N,). No discs means unbounded clearance."""
    N = points.shape[0]
    M = discs.shape[0]
    for n in range(N):
        best = 1e18
        for m in range(M):
            dx = points[n, 0] - discs[m, 0]
            dy = points[n, 1] - discs[m, 1]
            d = (dx * dx + dy * dy) ** 0.5 - discs[m, 2]
            if d < best:
                best = d
        out[n] = best - r_v if M > 0 else 1e18
    return out


def _build(use_numba: bool) -> SimpleNamespace:
    if use_numba:
        from numba import njit

        pgd = njit(cache=True)(_pgd_solve_core)
        sweep = njit(cache=True)(_clearance_sweep_core)
        name = "numba"
    else:
        pgd = _pgd_solve_core
        sweep = _clearance_sweep_core
        name = "numpy"
    return SimpleNamespace(pgd_solve=pgd, clearance_sweep=sweep, name=name)


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _select_backend() -> str:
    requested = os.environ.get(BACKEND_ENV, "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not _numba_available():
            log.warning("AFSP_BACKEND=numba but numba is not importable; using numpy")
            return "numpy"
        return "numba"
    if requested:
        log.warning("unknown AFSP_BACKEND=%r; using default", requested)
    return "numba" if _numba_available() else "numpy"


_CACHE: dict[str, SimpleNamespace] = {}


def get_kernels(backend: str | None = None) -> SimpleNamespace:
    """Kernel set for the requested backend ('numba' or 'numpy'); the
    default follows AFSP_BACKEND."""
    name = backend or _select_backend()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend: {name!r}")
    if name == "numba" and not _numba_available():
        raise RuntimeError("numba backend requested but numba is not importable")
    if name not in _CACHE:
        _CACHE[name] = _build(name == "numba")
    return _CACHE[name]


DEFAULT = get_kernels()
BACKEND = DEFAULT.name
