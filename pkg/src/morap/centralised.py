"""Centralised model: tasks are handed out one at a time inside a single MDP.

For task ``j`` the model walks over the unassigned agents (control action
``forward``), picks one (``assign``), runs that agent's product for task
``j`` until it is done and then moves on to task ``j + 1`` (``next``).
After the last task the model is absorbed.

Every reachable (agent, task, assigned set) combination contributes a full
copy of the corresponding product, so the model is assembled blockwise.
Control actions carry zero reward.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import SizeGuard
from .model import Mdp
from .numerics import DEFAULT_EPS, evaluate_scheduler, optimal_scheduler
from .solver import (DEFAULT_ITERATION_CAP, DEFAULT_PARETO_EPS, MorapInstance, ParetoResult,
                     run_pareto)

SIZE_LIMIT = 10**7


@dataclass(frozen=True, eq=False)
class CentralisedMdp:
    mdp: Mdp
    rewards: tuple[np.ndarray, ...]
    done: np.ndarray
    n: int
    # per state: (kind, agent, task, assigned mask, agent state, task location); kind 0 = assign, 1 = work
    descriptor: np.ndarray

    @property
    def num_states(self) -> int:
        return self.mdp.num_states

    def describe(self, k: int) -> tuple:
        kind, i, j, mask, s, q = (int(v) for v in self.descriptor[k])
        assigned = frozenset(a for a in range(self.n) if mask >> a & 1)
        return ("assign" if kind == 0 else "work", i, j, assigned, s, q)


def estimate_size(inst: MorapInstance) -> int:
    n = inst.n
    biggest = max(inst.product(i, j).num_states for i in range(n) for j in range(n))
    return n * 2 ** max(n - 1, 0) * (biggest + 1)


def build_centralised(inst: MorapInstance, limit: int = SIZE_LIMIT) -> CentralisedMdp:
    n = inst.n
    est = estimate_size(inst)
    if est > limit:
        raise SizeGuard(f"centralised model would have about {est} states (limit {limit})")

    # enumerate (task j, mask before, agent i) in a fixed order
    assign_ids: dict[tuple[int, int, int], int] = {}
    blocks: list[tuple[int, int, int]] = []
    for j in range(n):
        for subset in combinations(range(n), j):
            mask = sum(1 << a for a in subset)
            for i in range(n):
                if not mask >> i & 1:
                    assign_ids[(i, j, mask)] = len(assign_ids)
                    blocks.append((i, j, mask))
    n_assign = len(assign_ids)
    offsets = {}
    total = n_assign
    for key in blocks:
        offsets[key] = total
        total += inst.product(key[0], key[1]).num_states

    state_choices = np.zeros(total, dtype=np.int64)
    desc = np.zeros((total, 6), dtype=np.int64)
    ch_succ, ch_prob, ch_ntrans, ch_names, ch_owner = [], [], [], [], []
    rewards_parts: list[list[np.ndarray]] = [[] for _ in range(2 * n)]

    def add_control(owner, target, name):
        ch_owner.append(np.array([owner]))
        ch_succ.append(np.array([target]))
        ch_prob.append(np.array([1.0]))
        ch_ntrans.append(np.array([1]))
        ch_names.append([name])
        for k in range(2 * n):
            rewards_parts[k].append(np.zeros(1))

    # assignment states
    for (i, j, mask), a in assign_ids.items():
        s0 = inst.agents[i].initial
        desc[a] = (0, i, j, mask, s0, inst.tasks[j].initial)
        add_control(a, offsets[(i, j, mask)] + inst.product(i, j).mdp.initial, "assign")
        later = [k for k in range(i + 1, n) if not mask >> k & 1]
        if later:
            add_control(a, assign_ids[(later[0], j, mask)], "forward")

    done = np.zeros(total, bool)
    for (i, j, mask) in blocks:
        p = inst.product(i, j)
        m = p.mdp
        off = offsets[(i, j, mask)]
        new_mask = mask | (1 << i)
        ids = np.arange(m.num_states) + off
        desc[ids] = np.column_stack([np.ones(m.num_states, np.int64), np.full(m.num_states, i),
                                     np.full(m.num_states, j), np.full(m.num_states, new_mask),
                                     p.pairs[:, 0], p.pairs[:, 1]])
        succ = m.succ + off
        names = list(m.action_names)
        if j + 1 < n:
            nxt = assign_ids[(min(a for a in range(n) if not new_mask >> a & 1), j + 1, new_mask)]
            done_choice = np.flatnonzero(p.done[m.choice_state])
            # a done product state has exactly one zero-reward self-loop choice
            succ[m.trans_ptr[done_choice]] = nxt
            for c in done_choice:
                names[c] = "next"
        else:
            done[ids[p.done]] = True
        ch_owner.append(m.choice_state + off)
        ch_succ.append(succ)
        ch_prob.append(m.prob)
        ch_ntrans.append(np.diff(m.trans_ptr))
        ch_names.append(names)
        for k in range(2 * n):
            if k == i:
                rewards_parts[k].append(p.cost)
            elif k == n + j:
                rewards_parts[k].append(p.success)
            else:
                rewards_parts[k].append(np.zeros(m.num_choices))

    owner = np.concatenate(ch_owner)
    order = np.argsort(owner, kind="stable")
    ntrans = np.concatenate(ch_ntrans)
    tptr = np.concatenate([[0], np.cumsum(ntrans)])
    from .model import segment_arange
    tidx = segment_arange(tptr[:-1][order], ntrans[order])
    succ = np.concatenate(ch_succ)[tidx]
    prob = np.concatenate(ch_prob)[tidx]
    trans_ptr = np.concatenate([[0], np.cumsum(ntrans[order])])
    counts = np.bincount(owner, minlength=total)
    state_ptr = np.concatenate([[0], np.cumsum(counts)])
    names = [nm for part in ch_names for nm in part]
    names = tuple(names[k] for k in order)
    labels = tuple(frozenset() for _ in range(total))
    mdp = Mdp(total, 0, state_ptr, trans_ptr, succ, prob, labels, names)
    rewards = tuple(np.concatenate(parts)[order] for parts in rewards_parts)
    return CentralisedMdp(mdp, rewards, done, n, desc)


def centralised_support(c: CentralisedMdp, w, eps: float = DEFAULT_EPS):
    rho = sum(wk * rk for wk, rk in zip(w, c.rewards))
    res = optimal_scheduler(c.mdp, rho, eps=eps, done=c.done)
    r = np.array([evaluate_scheduler(c.mdp, res.scheduler, rk, eps=eps, done=c.done)
                  for rk in c.rewards])
    return r, res


def centralised_pareto_point(c: CentralisedMdp, t, M=None, eps: float = DEFAULT_PARETO_EPS,
                             max_iter: int = DEFAULT_ITERATION_CAP, vi_eps: float = DEFAULT_EPS,
                             verify_only: bool = False) -> ParetoResult:
    def support(w):
        r, res = centralised_support(c, w, vi_eps)
        return r, None, {"scheduler": res.scheduler}

    return run_pareto(support, np.asarray(t, dtype=np.float64), M, eps, max_iter, verify_only)
