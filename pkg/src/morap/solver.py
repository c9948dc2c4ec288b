"""Random assignment and planning: supporting points, Pareto queries, synthesis.

Threshold vectors are ordered costs first (one per agent) and then success
probabilities (one per task).  Costs are negative rewards, so a cost
threshold ``c_i`` asks for expected reward at least ``c_i``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .assignment import max_assignment
from .errors import (DegenerateDirection, DimensionMismatch, ModelValidationError,
                     NoCertificate, NotRewardFinite)
from .geometry import norm_distance, project_to_lower, project_to_upper, weight_vector
from .logic import Dfa, Formula, task_dfa
from .model import Mdp, ProductMdp, build_product, mdp_from_json
from .numerics import DEFAULT_EPS, Scheduler
from .engine import InlineEngine, Job

log = logging.getLogger(__name__)

DEFAULT_PARETO_EPS = 0.01
DEFAULT_ITERATION_CAP = 500


class MorapInstance:
    """Agents with cost rewards and co-safe tasks; products are built on demand.

    When there are more agents than tasks, tasks that are accomplished
    immediately are appended so the instance becomes square.
    """

    def __init__(self, agents: Sequence[Mdp], costs: Sequence[np.ndarray],
                 tasks: Sequence[Dfa | Formula | str], deadline: int | None = None):
        if len(agents) != len(costs):
            raise DimensionMismatch("one cost structure per agent required")
        if len(tasks) > len(agents):
            raise ModelValidationError(f"{len(tasks)} tasks but only {len(agents)} agents")
        self.agents = list(agents)
        self.costs = [np.asarray(c, dtype=np.float64) for c in costs]
        self.num_real_tasks = len(tasks)
        self.tasks = [task_dfa(t, deadline) for t in tasks]
        self.tasks += [task_dfa("true") for _ in range(len(agents) - len(tasks))]
        self._products: dict[tuple[int, int], ProductMdp] = {}
        self._by_key: dict[tuple, ProductMdp] = {}

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def dim(self) -> int:
        return 2 * self.n

    def product(self, i: int, j: int) -> ProductMdp:
        p = self._products.get((i, j))
        if p is None:
            key = (self.agents[i].structural_key, self.costs[i].tobytes(), self.tasks[j].structural_key())
            p = self._by_key.get(key)
            if p is None:
                p = build_product(self.agents[i], self.tasks[j], self.costs[i], i, j)
                self._by_key[key] = p
            self._products[(i, j)] = p
        return p

    def products(self):
        return [[self.product(i, j) for j in range(self.n)] for i in range(self.n)]

    def validate(self) -> None:
        for i in range(self.n):
            for j in range(self.n):
                if not self.product(i, j).reward_finite:
                    raise NotRewardFinite(
                        f"agent {i} can avoid finishing task {j} forever; add a deadline")

    def pad_thresholds(self, t: Sequence[float]) -> np.ndarray:
        """Accept thresholds for the real tasks only and pad dummy tasks with 0."""
        t = np.asarray(t, dtype=np.float64)
        if t.size == self.n + self.num_real_tasks:
            t = np.concatenate([t, np.zeros(self.n - self.num_real_tasks)])
        if t.size != self.dim:
            raise DimensionMismatch(f"expected {self.n + self.num_real_tasks} thresholds, got {t.size}")
        if not np.all(np.isfinite(t[: self.n])):
            raise ValueError("cost thresholds must be finite")
        return t

    def total_product_states(self) -> int:
        return sum(self.product(i, j).num_states for i in range(self.n) for j in range(self.n))

    @classmethod
    def from_json(cls, obj: dict, deadline: int | None = None) -> "MorapInstance":
        agents, costs = [], []
        for a in obj["agents"]:
            m, c = mdp_from_json(a)
            agents.append(m)
            costs.append(c)
        tasks = []
        for t in obj["tasks"]:
            if isinstance(t, dict):
                from .logic import dfa_from_json
                tasks.append(dfa_from_json(t))
            else:
                tasks.append(t)
        return cls(agents, costs, tasks, obj.get("deadline", deadline))


@dataclass
class SupportPoint:
    r: np.ndarray
    assignment: np.ndarray
    schedulers: dict
    values: np.ndarray


def _raise_failed(results: dict) -> None:
    bad = {k: v.error for k, v in results.items() if not v.ok}
    if bad:
        k, err = next(iter(bad.items()))
        raise RuntimeError(f"{len(bad)} job(s) failed; first {k}: {err}")


def supporting_point(inst: MorapInstance, w: Sequence[float], engine=None,
                     eps: float = DEFAULT_EPS) -> SupportPoint:
    """Optimise every agent-task pair for ``w``, assign, then evaluate the chosen pairs."""
    w = np.asarray(w, dtype=np.float64)
    n = inst.n
    if w.shape != (2 * n,):
        raise DimensionMismatch(f"weight vector must have {2 * n} entries")
    engine = engine or InlineEngine()
    jobs, owner = {}, {}
    for i in range(n):
        for j in range(n):
            p = inst.product(i, j)
            key = ("opt", p.digest, float(w[i]), float(w[n + j]))
            owner[(i, j)] = key
            if key not in jobs:
                jobs[key] = Job(key, "optimize", p, (float(w[i]), float(w[n + j])), eps=eps)
    res = engine.run_batch(jobs.values())
    _raise_failed(res)
    c = np.array([[res[owner[(i, j)]].value for j in range(n)] for i in range(n)])
    f, _ = max_assignment(c)
    scheds = {(int(f[j]), j): res[owner[(int(f[j]), j)]].scheduler for j in range(n)}

    ev, ev_owner = {}, {}
    for j in range(n):
        i = int(f[j])
        p = inst.product(i, j)
        mu = scheds[(i, j)]
        for k, weights in (("cost", (1.0, 0.0)), ("succ", (0.0, 1.0))):
            key = ("eval", k, owner[(i, j)])
            ev_owner[(j, k)] = key
            if key not in ev:
                ev[key] = Job(key, "evaluate", p, weights, mu, eps)
    res2 = engine.run_batch(ev.values())
    _raise_failed(res2)
    r = np.zeros(2 * n)
    for j in range(n):
        r[int(f[j])] = res2[ev_owner[(j, "cost")]].value
        r[n + j] = res2[ev_owner[(j, "succ")]].value
    return SupportPoint(r, f, scheds, c)


@dataclass
class Iteration:
    w: np.ndarray
    r: np.ndarray
    assignment: np.ndarray | None
    schedulers: dict
    t_up: np.ndarray | None
    t_down: np.ndarray


@dataclass
class ParetoResult:
    feasible: bool
    t: np.ndarray
    t_up: np.ndarray | None
    t_down: np.ndarray
    iterations: list[Iteration]
    eps: float
    M: np.ndarray
    converged: bool = True
    stopped_early: bool = False
    certificate: np.ndarray | None = None

    @property
    def points(self) -> np.ndarray:
        return np.array([it.r for it in self.iterations])

    @property
    def halfspaces(self) -> list:
        return [(it.w, it.r) for it in self.iterations]

    def to_json(self, synthesis: "SynthesisResult | None" = None) -> dict:
        def lst(a):
            return None if a is None else [float(x) for x in a]
        out = {"feasible": bool(self.feasible), "tUp": lst(self.t_up), "tDown": lst(self.t_down),
               "iterations": [{"w": lst(it.w), "r": lst(it.r),
                               "assignment": None if it.assignment is None
                               else [int(a) for a in it.assignment]}
                              for it in self.iterations]}
        out["synthesis"] = [] if synthesis is None else synthesis.to_json()
        out["converged"] = bool(self.converged)
        return out


SupportFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray | None, dict]]


def run_pareto(support: SupportFn, t, M=None, eps: float = DEFAULT_PARETO_EPS,
               max_iter: int = DEFAULT_ITERATION_CAP, verify_only: bool = False,
               tol: float = 1e-9) -> ParetoResult:
    """Point-oriented Pareto loop shared by the decentralised and centralised solvers."""
    t = np.asarray(t, dtype=np.float64)
    d = t.size
    M = np.eye(d) if M is None else np.asarray(M, dtype=np.float64)
    if M.shape != (d, d):
        raise DimensionMismatch("norm matrix does not match the threshold dimension")
    t_up = None
    t_down = t.copy()
    lam = None
    w = np.zeros(d)
    w[0] = 1.0
    iters: list[Iteration] = []
    converged = False
    stopped = False

    def gap():
        return np.inf if t_up is None else norm_distance(t_down - t_up, M)

    while True:
        if gap() <= eps:
            converged = True
            break
        if len(iters) >= max_iter:
            log.warning("iteration cap %d reached; returning best-so-far", max_iter)
            break
        if iters:
            t_up, lam = project_to_lower(t, [it.r for it in iters], M)
            if gap() <= eps:
                converged = True
                break
            try:
                w = weight_vector(t, t_up, M)
            except DegenerateDirection:
                # t is (numerically) inside the inner approximation
                converged = True
                break
        r, f, scheds = support(w)
        iters.append(Iteration(w.copy(), np.asarray(r, dtype=np.float64), f, scheds,
                               None if t_up is None else t_up.copy(), t_down.copy()))
        if w @ r < w @ t_down - tol:
            if verify_only:
                stopped = True
                break
            t_down = project_to_upper(t, [(it.w, it.r) for it in iters], M)
            iters[-1].t_down = t_down.copy()
    if converged and (lam is None or t_up is None):
        t_up, lam = project_to_lower(t, [it.r for it in iters], M)
    feasible = (not stopped) and norm_distance(t_down - t, M) <= eps
    if verify_only:
        feasible = feasible and converged
    return ParetoResult(feasible, t, t_up, t_down, iters, eps, M, converged, stopped, lam)


def pareto_point(inst: MorapInstance, t, M=None, eps: float = DEFAULT_PARETO_EPS, engine=None,
                 max_iter: int = DEFAULT_ITERATION_CAP, vi_eps: float = DEFAULT_EPS,
                 verify_only: bool = False) -> ParetoResult:
    t = inst.pad_thresholds(t)
    inst.validate()
    engine = engine or InlineEngine()

    def support(w):
        sp = supporting_point(inst, w, engine, vi_eps)
        return sp.r, sp.assignment, sp.schedulers

    return run_pareto(support, t, M, eps, max_iter, verify_only)


def verify_only(inst: MorapInstance, t, M=None, eps: float = DEFAULT_PARETO_EPS, engine=None,
                max_iter: int = DEFAULT_ITERATION_CAP, vi_eps: float = DEFAULT_EPS) -> bool:
    return pareto_point(inst, t, M, eps, engine, max_iter, vi_eps, verify_only=True).feasible


@dataclass
class SynthesisResult:
    """Distribution over (probability, assignment, per-pair schedulers)."""

    distribution: list[tuple[float, np.ndarray, dict]]
    expected: np.ndarray

    def marginals(self, n: int | None = None) -> np.ndarray:
        n = n or len(self.distribution[0][1])
        x = np.zeros((n, n))
        for v, f, _ in self.distribution:
            x[np.asarray(f), np.arange(n)] += v
        return x

    def to_json(self) -> list:
        return [{"p": float(v), "assignment": [int(a) for a in f]} for v, f, _ in self.distribution]


def synthesize(result: ParetoResult, slack: float = 1e-9) -> SynthesisResult:
    """Mixture of iteration points whose expectation dominates the inner projection."""
    if not result.iterations:
        raise NoCertificate("no iterations recorded")
    if any(it.assignment is None for it in result.iterations):
        raise NoCertificate("iterations carry no assignments")
    R = result.points
    target = result.t_up if result.t_up is not None else R[0]
    v = result.certificate
    if v is None or v.size != len(R) or np.any(R.T @ v < target - slack):
        v = _mixture_lp(R, target, 1e-6)
    keep = v > 1e-12
    v = np.where(keep, v, 0.0)
    v = v / v.sum()
    dist = [(float(v[k]), result.iterations[k].assignment, result.iterations[k].schedulers)
            for k in np.flatnonzero(keep)]
    return SynthesisResult(dist, R.T @ v)


def _mixture_lp(R: np.ndarray, target: np.ndarray, slack: float) -> np.ndarray:
    from .oracle import simplex_solve
    m, d = R.shape
    # variables v (m) and surplus s (d): R^T v - s = target - slack, sum v = 1
    A = np.zeros((d + 1, m + d))
    A[:d, :m] = R.T
    A[:d, m:] = -np.eye(d)
    A[d, :m] = 1.0
    b = np.concatenate([target - slack, [1.0]])
    status, x = simplex_solve(np.zeros(m + d), A, b)
    if status != "optimal":
        raise NoCertificate("no mixture of iteration points dominates the target")
    return np.maximum(x[:m], 0.0)
