"""Optimal injective assignment between two token sequences.

Hungarian algorithm in the potentials (Jonker-Volgenant) form, O(n^3) on a
square cost matrix. Similarity is maximized by negating it into costs;
rectangular inputs are padded with zero similarity.
"""

from __future__ import annotations

import numpy as np


def hungarian_min_cost(cost: np.ndarray) -> list[int]:
    """Column assigned to each row of a square cost matrix, minimizing the
    total cost. Standard shortest-augmenting-path construction with row and
    column potentials."""
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("cost matrix must be square")
    INF = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j (1-based, 0 = free)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = [0] * n
    for j in range(1, n + 1):
        if p[j] != 0:
            row_to_col[p[j] - 1] = j - 1
    return row_to_col


def max_similarity_assignment(sim: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Best injective pairing for an (M, N) similarity matrix.

    Returns the maximal total similarity and the chosen (row, col) pairs
    restricted to the real (unpadded) entries.
    """
    sim = np.asarray(sim, dtype=float)
    if sim.ndim != 2 or sim.size == 0:
        raise ValueError("similarity matrix must be a non-empty 2-D array")
    m, n = sim.shape
    k = max(m, n)
    padded = np.zeros((k, k), dtype=float)
    padded[:m, :n] = sim
    assign = hungarian_min_cost(-padded)
    pairs = [(i, j) for i, j in enumerate(assign) if i < m and j < n]
    total = float(sum(sim[i, j] for i, j in pairs))
    return total, pairs
