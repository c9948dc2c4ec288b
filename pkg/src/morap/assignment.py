"""Linear assignment and Birkhoff-von Neumann decomposition.

Assignments are arrays ``f`` with ``f[j]`` the agent serving task ``j``.
"""
from __future__ import annotations

import numpy as np

from .errors import NonSquare, NoPerfectMatching, NotBistochastic


def _hungarian_min(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest augmenting path Hungarian method on a square cost matrix.

    Returns ``(row_of_col, u, v)`` with reduced costs ``cost - u[:,None] - v`` >= 0.
    """
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[col] = row (1-based), 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = a[i0, 1:] - u[i0] - v[1:]
            free = ~used[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    return p[1:] - 1, u[1:], v[1:]


def _augment(adj: np.ndarray, task_of_agent: np.ndarray, agent_of_task: np.ndarray,
             start_task: int, allowed_t: np.ndarray, allowed_a: np.ndarray) -> bool:
    """Find an augmenting path from a free task; updates the matching in place."""
    n = adj.shape[0]
    parent = {}
    stack = [start_task]
    seen_a = np.zeros(n, bool)
    while stack:
        j = stack.pop()
        for i in np.flatnonzero(adj[:, j] & allowed_a & ~seen_a):
            seen_a[i] = True
            parent[i] = j
            j2 = task_of_agent[i]
            if j2 < 0:
                while True:
                    jj = parent[i]
                    prev = agent_of_task[jj]
                    agent_of_task[jj] = i
                    task_of_agent[i] = jj
                    if jj == start_task:
                        return True
                    i = prev
            if allowed_t[j2]:
                stack.append(j2)
    return False


def perfect_matching(adj: np.ndarray) -> np.ndarray:
    """Perfect matching of a square agent-by-task boolean matrix; returns ``f``."""
    adj = np.asarray(adj, bool)
    n = adj.shape[0]
    task_of_agent = np.full(n, -1)
    agent_of_task = np.full(n, -1)
    ok = np.ones(n, bool)
    for j in range(n):
        if not _augment(adj, task_of_agent, agent_of_task, j, ok, ok):
            raise NoPerfectMatching(f"task {j} cannot be matched")
    return agent_of_task


def _lexmin_matching(adj: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching in ``adj`` given any perfect matching ``f``."""
    n = adj.shape[0]
    agent_of_task = f.copy()
    task_of_agent = np.empty(n, dtype=np.int64)
    task_of_agent[agent_of_task] = np.arange(n)
    fixed_a = np.zeros(n, bool)
    for j in range(n):
        for i in np.flatnonzero(adj[:, j] & ~fixed_a):
            if i >= agent_of_task[j]:
                break
            # swap j onto i, then re-seat i's old task using agents outside the fixed prefix
            old_i, old_j = agent_of_task[j], task_of_agent[i]
            trial_at, trial_ta = agent_of_task.copy(), task_of_agent.copy()
            trial_at[j], trial_ta[i] = i, j
            trial_at[old_j], trial_ta[old_i] = -1, -1
            allowed_t = np.arange(n) > j
            allowed_a = ~fixed_a
            allowed_a[i] = False
            if _augment(adj, trial_ta, trial_at, old_j, allowed_t, allowed_a):
                agent_of_task, task_of_agent = trial_at, trial_ta
                break
        fixed_a[agent_of_task[j]] = True
    return agent_of_task


def max_assignment(c) -> tuple[np.ndarray, float]:
    """Maximum-value assignment of agents (rows) to tasks (columns).

    Among optimal assignments the lexicographically smallest ``f`` is returned.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise NonSquare(f"value matrix must be square, got shape {c.shape}")
    n = c.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    if not np.all(np.isfinite(c)):
        raise ValueError("value matrix must be finite")
    row_of_col, u, v = _hungarian_min(-c)
    reduced = -c - u[:, None] - v[None, :]
    tol = 1e-9 * max(1.0, float(np.max(np.abs(c))))
    f = _lexmin_matching(reduced <= tol, row_of_col)
    return f, float(c[f, np.arange(n)].sum())


def assignment_matrix(f: np.ndarray) -> np.ndarray:
    n = len(f)
    x = np.zeros((n, n))
    x[np.asarray(f), np.arange(n)] = 1.0
    return x


def validate_bistochastic(x, tol: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise NonSquare(f"matrix must be square, got shape {x.shape}")
    if (x < -tol).any():
        raise NotBistochastic("negative entry")
    if x.size and (np.abs(x.sum(0) - 1).max() > tol or np.abs(x.sum(1) - 1).max() > tol):
        raise NotBistochastic("row or column sums differ from 1")
    return x


def bvn_decompose(x, tol: float = 1e-9) -> list[tuple[float, np.ndarray]]:
    """Write a bistochastic matrix as a convex combination of assignments.

    Greedy peeling: each round removes the minimum entry along some perfect
    matching of the positive support, so at most n^2 - 2n + 2 terms appear.
    """
    x = validate_bistochastic(x).copy()
    n = x.shape[0]
    out: list[tuple[float, np.ndarray]] = []
    remaining = 1.0
    while remaining > tol and n:
        support = x > tol
        f = perfect_matching(support)
        theta = float(x[f, np.arange(n)].min())
        out.append((theta, f.copy()))
        x[f, np.arange(n)] -= theta
        remaining -= theta
        if len(out) > n * n:
            raise NoPerfectMatching("decomposition did not terminate")
    total = sum(t for t, _ in out)
    return [(t / total, f) for t, f in out]


def compose(terms: list[tuple[float, np.ndarray]], n: int) -> np.ndarray:
    x = np.zeros((n, n))
    for t, f in terms:
        x[np.asarray(f), np.arange(n)] += t
    return x
