"""Independent ground truth for small instances.

* a frequency-based feasibility LP solved by a dense two-phase simplex,
* exhaustive enumeration of pure schedulers and assignments giving the
  vertices of the achievable set,
* Monte-Carlo execution of a synthesised random assignment.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import CycleGuard, SizeGuard
from .geometry import norm_distance, project_to_lower
from .model import ProductMdp
from .numerics import Scheduler, exact_values

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9


# --- simplex ----------------------------------------------------------------------------

def _pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _bland(T: np.ndarray, basis: list[int], ncols: int, max_iter: int, cost_row: int,
           allowed: np.ndarray) -> str:
    """Minimise the objective stored in row ``cost_row`` (reduced costs, -value in last column)."""
    m = len(basis)
    for _ in range(max_iter):
        red = T[cost_row, :ncols]
        cand = np.flatnonzero((red < -PIVOT_TOL) & allowed)
        if cand.size == 0:
            return "optimal"
        c = int(cand[0])
        col = T[:m, c]
        pos = col > PIVOT_TOL
        if not pos.any():
            return "unbounded"
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * (1 + abs(best)))
        r = int(min(ties, key=lambda k: basis[k]))
        _pivot(T, r, c)
        basis[r] = c
    raise CycleGuard(f"simplex exceeded {max_iter} pivots")


def simplex_solve(c, A, b, max_iter: int = 10**6) -> tuple[str, np.ndarray | None]:
    """Minimise ``c.x`` subject to ``A x = b`` and ``x >= 0``.

    Returns ``(status, x)`` with status ``optimal``, ``infeasible`` or
    ``unbounded``.  Bland's rule prevents cycling.
    """
    A = np.array(A, dtype=np.float64, ndmin=2)
    b = np.array(b, dtype=np.float64).ravel()
    c = np.array(c, dtype=np.float64).ravel()
    m, n = A.shape
    if b.size != m or c.size != n:
        raise ValueError("inconsistent LP dimensions")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        raise ValueError("LP coefficients must be finite")
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    # columns: x (n), artificials (m), rhs ; rows: constraints (m), phase-2 cost, phase-1 cost
    T = np.zeros((m + 2, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = c
    T[m + 1, :n] = -A.sum(0)
    T[m + 1, -1] = -b.sum()
    basis = list(range(n, n + m))
    allowed = np.ones(n + m, bool)
    status = _bland(T, basis, n + m, max_iter, m + 1, allowed)
    scale = 1.0 + np.abs(b).max(initial=0.0)
    if status != "optimal" or -T[m + 1, -1] > FEAS_TOL * scale:
        return "infeasible", None
    # drive artificials out of the basis; drop redundant rows
    r = 0
    while r < len(basis):
        if basis[r] >= n:
            nz = np.flatnonzero(np.abs(T[r, :n]) > PIVOT_TOL)
            if nz.size:
                _pivot(T, r, int(nz[0]))
                basis[r] = int(nz[0])
            else:
                T = np.delete(T, r, axis=0)
                basis.pop(r)
                continue
        r += 1
    m2 = len(basis)
    allowed = np.zeros(n + m, bool)
    allowed[:n] = True
    status = _bland(T, basis, n + m, max_iter, m2, allowed)
    x = np.zeros(n)
    for k, j in enumerate(basis):
        if j < n:
            x[j] = T[k, -1]
    return status, np.maximum(x, 0.0)


# --- feasibility LP -------------------------------------------------------------------------

@dataclass
class FeasibilityLp:
    A: np.ndarray
    b: np.ndarray
    var_names: list[str]
    row_names: list[str]
    assign_vars: np.ndarray  # index of x_ij, shape (n, n)
    state_vars: dict = field(default_factory=dict)  # (i, j) -> choice variable offset

    def to_text(self) -> str:
        lines = ["rows: " + str(len(self.row_names)) + "  cols: " + str(len(self.var_names))]
        for r, name in enumerate(self.row_names):
            terms = " ".join(f"{self.A[r, k]:+g}*{self.var_names[k]}"
                             for k in np.flatnonzero(self.A[r]))
            lines.append(f"{name}: {terms} = {self.b[r]:g}")
        return "\n".join(lines)

    def recover_scheduler(self, x: np.ndarray, inst, i: int, j: int) -> Scheduler:
        """Memoryless scheduler ``mu(s)(a) = x_{s,a} / x_s`` for pair (i, j).

        States with zero frequency take their first action.
        """
        import scipy.sparse as sp
        p = inst.product(i, j)
        m = p.mdp
        off = self.state_vars[(i, j)]
        live_choices = np.flatnonzero(~p.done[m.choice_state])
        rows, cols, vals = [], [], []
        freq = np.zeros(m.num_choices)
        freq[live_choices] = x[off: off + live_choices.size]
        for s in range(m.num_states):
            lo, hi = m.state_ptr[s], m.state_ptr[s + 1]
            tot = freq[lo:hi].sum()
            for cidx in range(lo, hi):
                v = freq[cidx] / tot if tot > 0 else float(cidx == lo)
                if v > 0:
                    rows.append(s)
                    cols.append(cidx)
                    vals.append(v)
        W = sp.csr_matrix((vals, (rows, cols)), shape=(m.num_states, m.num_choices))
        return Scheduler(W)


def build_feasibility_lp(inst, t) -> FeasibilityLp:
    """Frequency LP whose feasibility characterises achievability of ``t``.

    Variables are the assignment probabilities ``x_ij`` and expected
    action frequencies of every non-done choice of every product, plus one
    surplus per finite threshold.
    """
    n = inst.n
    t = np.asarray(t, dtype=np.float64)
    names: list[str] = []
    assign = np.arange(n * n).reshape(n, n)
    names += [f"x[{i},{j}]" for i in range(n) for j in range(n)]
    blocks = {}
    for i in range(n):
        for j in range(n):
            p = inst.product(i, j)
            live = np.flatnonzero(~p.done[p.mdp.choice_state])
            blocks[(i, j)] = (len(names), live)
            names += [f"f[{i},{j}]:s{p.mdp.choice_state[c]}:{p.mdp.action_names[c]}#{c}" for c in live]
    finite = [k for k in range(2 * n) if np.isfinite(t[k])]
    surplus = {k: len(names) + idx for idx, k in enumerate(finite)}
    names += [f"surplus[{k}]" for k in finite]
    rows, rhs, rnames = [], [], []
    nv = len(names)

    for (i, j), (off, live) in blocks.items():
        p = inst.product(i, j)
        m = p.mdp
        col = {int(c): off + k for k, c in enumerate(live)}
        live_states = np.flatnonzero(~p.done)
        sidx = {int(s): k for k, s in enumerate(live_states)}
        block = np.zeros((live_states.size, nv))
        for c in live:
            s = int(m.choice_state[c])
            block[sidx[s], col[int(c)]] += 1.0
            for s2, pr in m.transitions(int(c)):
                if s2 in sidx:
                    block[sidx[s2], col[int(c)]] -= pr
        if m.initial in sidx:
            block[sidx[m.initial], assign[i, j]] -= 1.0
        rows.append(block)
        rhs += [0.0] * live_states.size
        rnames += [f"flow[{i},{j}]:s{s}" for s in live_states]

    for k in finite:
        row = np.zeros(nv)
        if k < n:
            i = k
            for j in range(n):
                off, live = blocks[(i, j)]
                row[off: off + live.size] = inst.product(i, j).cost[live]
            rnames.append(f"cost[{i}]")
        else:
            j = k - n
            for i in range(n):
                off, live = blocks[(i, j)]
                row[off: off + live.size] = inst.product(i, j).success[live]
            rnames.append(f"prob[{j}]")
        row[surplus[k]] = -1.0
        rows.append(row[None, :])
        rhs.append(float(t[k]))

    for i in range(n):
        row = np.zeros(nv)
        row[assign[i, :]] = 1.0
        rows.append(row[None, :])
        rhs.append(1.0)
        rnames.append(f"agent[{i}]")
    for j in range(n):
        row = np.zeros(nv)
        row[assign[:, j]] = 1.0
        rows.append(row[None, :])
        rhs.append(1.0)
        rnames.append(f"task[{j}]")
    A = np.vstack(rows)
    return FeasibilityLp(A, np.array(rhs), names, rnames, assign,
                         {k: v[0] for k, v in blocks.items()})


def solve_lp(lp: FeasibilityLp) -> bool:
    status, _ = simplex_solve(np.zeros(lp.A.shape[1]), lp.A, lp.b)
    return status == "optimal"


def lp_solution(lp: FeasibilityLp) -> np.ndarray | None:
    status, x = simplex_solve(np.zeros(lp.A.shape[1]), lp.A, lp.b)
    return x if status == "optimal" else None


# --- brute-force hull ---------------------------------------------------------------------------

SCHEDULER_LIMIT = 10**4


def pure_scheduler_values(p: ProductMdp, limit: int = SCHEDULER_LIMIT) -> np.ndarray:
    """(cost, success) of every deterministic memoryless scheduler of ``p``."""
    m = p.mdp
    counts = np.diff(m.state_ptr)
    branching = [int(k) if not p.done[s] else 1 for s, k in enumerate(counts)]
    total = int(np.prod(branching, dtype=object))
    if total > limit:
        raise SizeGuard(f"{total} pure schedulers exceed the limit {limit}")
    out = []
    for combo in itertools.product(*[range(k) for k in branching]):
        mu = Scheduler.from_local(m, combo)
        out.append((exact_values(p, mu, p.cost)[m.initial], exact_values(p, mu, p.success)[m.initial]))
    return np.array(out)


def upper_hull_2d(points: np.ndarray) -> np.ndarray:
    """Extreme points of the downward closure of the convex hull of 2-D points."""
    pts = np.unique(np.round(np.asarray(points, dtype=np.float64), 12), axis=0)
    # Pareto filter: sort by first coordinate descending, keep strictly improving second
    order = np.lexsort((-pts[:, 1], -pts[:, 0]))
    front = []
    best = -np.inf
    for k in order:
        if pts[k, 1] > best:
            front.append(pts[k])
            best = pts[k, 1]
    front = np.array(front)[::-1]  # first coordinate ascending, second descending
    hull: list[np.ndarray] = []
    for q in front:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])
            if cross >= -1e-15:
                hull.pop()
            else:
                break
        hull.append(q)
    return np.array(hull)


@dataclass
class AchievableHull:
    vertices: np.ndarray

    def contains(self, point, tol: float = 1e-6, M=None) -> bool:
        return hull_membership(point, self, tol, M)

    def distance(self, point, M=None) -> float:
        x, _ = project_to_lower(point, self.vertices, M)
        return norm_distance(np.asarray(point) - x, M)

    def project(self, point, M=None) -> np.ndarray:
        return project_to_lower(point, self.vertices, M)[0]


def brute_force_hull(inst, limit: int = SCHEDULER_LIMIT, max_agents: int = 3) -> AchievableHull:
    n = inst.n
    if n > max_agents:
        raise SizeGuard(f"brute force limited to {max_agents} agents")
    pair_pts = {(i, j): upper_hull_2d(pure_scheduler_values(inst.product(i, j), limit))
                for i in range(n) for j in range(n)}
    verts = set()
    for perm in itertools.permutations(range(n)):
        choices = [pair_pts[(perm[j], j)] for j in range(n)]
        for combo in itertools.product(*choices):
            r = np.zeros(2 * n)
            for j, (cval, pval) in enumerate(combo):
                r[perm[j]] = cval
                r[n + j] = pval
            verts.add(tuple(np.round(r, 12)))
    return AchievableHull(np.array(sorted(verts)))


def hull_membership(point, hull: AchievableHull, tol: float = 1e-6, M=None) -> bool:
    return hull.distance(point, M) <= tol


# --- Monte Carlo --------------------------------------------------------------------------------

def _simulate_pair(p: ProductMdp, mu: Scheduler, episodes: int, rng: np.random.Generator,
                   max_steps: int = 10**5) -> tuple[np.ndarray, np.ndarray]:
    m = p.mdp
    cum = np.empty_like(m.prob)
    seg_choice = np.repeat(np.arange(m.num_choices), np.diff(m.trans_ptr))
    csum = np.cumsum(m.prob)
    base = np.repeat(csum[m.trans_ptr[:-1]] - m.prob[m.trans_ptr[:-1]], np.diff(m.trans_ptr))
    cum[:] = csum - base
    keys = seg_choice + np.minimum(cum, 1.0)
    W = mu.weights.tocsr()
    state = np.full(episodes, m.initial)
    cost = np.zeros(episodes)
    succ = np.zeros(episodes)
    active = ~p.done[state]
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        s = state[idx]
        if mu.choice is not None:
            ch = mu.choice[s]
        else:
            ch = np.empty(idx.size, dtype=np.int64)
            u = rng.random(idx.size)
            for k, st in enumerate(s):
                lo, hi = W.indptr[st], W.indptr[st + 1]
                cw = np.cumsum(W.data[lo:hi])
                ch[k] = W.indices[lo + min(int(np.searchsorted(cw, u[k] * cw[-1], "right")), hi - lo - 1)]
        cost[idx] += p.cost[ch]
        succ[idx] += p.success[ch]
        u = rng.random(idx.size)
        pos = np.searchsorted(keys, ch + u, side="right")
        pos = np.minimum(pos, m.trans_ptr[ch + 1] - 1)
        state[idx] = m.succ[pos]
        active[idx] = ~p.done[state[idx]]
    else:
        raise RuntimeError("simulation step cap reached")
    return cost, succ


def simulate_synthesis(inst, synthesis, episodes: int = 10**5, seed: int = 0
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of every requirement over sampled episodes."""
    rng = np.random.default_rng(seed)
    n = inst.n
    probs = np.array([v for v, _, _ in synthesis.distribution])
    pick = rng.choice(len(probs), size=episodes, p=probs / probs.sum())
    samples = np.zeros((episodes, 2 * n))
    for k, (_, f, scheds) in enumerate(synthesis.distribution):
        rows = np.flatnonzero(pick == k)
        if rows.size == 0:
            continue
        for j in range(n):
            i = int(f[j])
            cost, succ = _simulate_pair(inst.product(i, j), scheds[(i, j)], rows.size, rng)
            samples[rows, i] = cost
            samples[rows, n + j] = succ
    mean = samples.mean(0)
    se = samples.std(0, ddof=1) / np.sqrt(episodes) if episodes > 1 else np.zeros(2 * n)
    return mean, se
