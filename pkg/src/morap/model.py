"""Sparse labelled MDPs, reward structures and agent-task products.

Storage is compressed-row keyed by *choices*: choice ``c`` is one enabled
(state, action) pair, the choices of state ``s`` are
``state_ptr[s]:state_ptr[s+1]`` and the transitions of choice ``c`` are
``trans_ptr[c]:trans_ptr[c+1]``.  A reward structure is a float array with
one entry per choice.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidDfa, ModelValidationError
from .logic import Dfa

log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-9
INTERNAL_ACTION = "__presink__"
DONE_ACTION = "__done__"


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


def segment_arange(starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Concatenate ``arange(s, s + l)`` for every (s, l) pair."""
    lengths = np.asarray(lengths, dtype=np.int64)
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    offsets = np.repeat(np.cumsum(lengths) - lengths, lengths)
    return np.repeat(np.asarray(starts, dtype=np.int64), lengths) + np.arange(total) - offsets


@dataclass(frozen=True, eq=False)
class Mdp:
    num_states: int
    initial: int
    state_ptr: np.ndarray
    trans_ptr: np.ndarray
    succ: np.ndarray
    prob: np.ndarray
    labels: tuple[frozenset[str], ...]
    action_names: tuple[str, ...] = ()

    def __post_init__(self):
        for name, dt in (("state_ptr", np.int64), ("trans_ptr", np.int64),
                         ("succ", np.int64), ("prob", np.float64)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dt))
        if len(self.labels) != self.num_states:
            raise ModelValidationError("one label set per state required")
        object.__setattr__(self, "labels", tuple(frozenset(l) for l in self.labels))
        if not self.action_names:
            object.__setattr__(self, "action_names", tuple(f"a{c}" for c in range(self.num_choices)))
        self.validate()

    def validate(self, tol: float = ROW_SUM_TOL) -> None:
        if not 0 <= self.initial < self.num_states:
            raise ModelValidationError("initial state out of range")
        if self.state_ptr.shape != (self.num_states + 1,) or self.state_ptr[0] != 0:
            raise ModelValidationError("malformed state pointer")
        if (np.diff(self.state_ptr) < 1).any():
            bad = int(np.argmax(np.diff(self.state_ptr) < 1))
            raise ModelValidationError(f"state {bad} has no enabled action")
        if self.trans_ptr.shape != (self.num_choices + 1,):
            raise ModelValidationError("malformed transition pointer")
        if (np.diff(self.trans_ptr) < 1).any():
            raise ModelValidationError("choice without successors")
        if self.succ.size and (self.succ.min() < 0 or self.succ.max() >= self.num_states):
            raise ModelValidationError("successor out of range")
        if (self.prob < 0).any():
            raise ModelValidationError("negative probability")
        sums = np.add.reduceat(self.prob, self.trans_ptr[:-1]) if self.num_choices else np.zeros(0)
        dev = np.abs(sums - 1.0)
        if dev.size and dev.max() > tol:
            c = int(np.argmax(dev))
            raise ModelValidationError(
                f"choice {c} ({self.action_names[c]} at state {self.choice_state[c]}) "
                f"probabilities sum to {sums[c]!r}")

    @property
    def num_choices(self) -> int:
        return int(self.state_ptr[-1])

    @cached_property
    def choice_state(self) -> np.ndarray:
        return _frozen(np.repeat(np.arange(self.num_states), np.diff(self.state_ptr)), np.int64)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Choice-by-state transition matrix."""
        m = sp.csr_matrix((self.prob.copy(), self.succ.copy(), self.trans_ptr.copy()),
                          shape=(self.num_choices, self.num_states))
        m.sum_duplicates()
        return m

    def choices(self, s: int) -> range:
        return range(int(self.state_ptr[s]), int(self.state_ptr[s + 1]))

    def transitions(self, c: int) -> list[tuple[int, float]]:
        lo, hi = self.trans_ptr[c], self.trans_ptr[c + 1]
        return list(zip(self.succ[lo:hi].tolist(), self.prob[lo:hi].tolist()))

    @property
    def size(self) -> int:
        return self.num_states + int(self.succ.size)

    @cached_property
    def structural_key(self) -> tuple:
        return (self.num_states, self.initial, self.state_ptr.tobytes(), self.trans_ptr.tobytes(),
                self.succ.tobytes(), self.prob.tobytes(),
                tuple(tuple(sorted(l)) for l in self.labels))

    @classmethod
    def from_choices(cls, num_states: int, initial: int,
                     choices: Iterable[tuple[int, str, Sequence[tuple[int, float]]]],
                     labels: Sequence[Iterable[str]]) -> "Mdp":
        """Build from ``(state, action name, [(successor, probability), ...])`` triples.

        Choices keep their relative order within a state.
        """
        choices = sorted(choices, key=lambda c: c[0])
        counts = np.bincount([c[0] for c in choices], minlength=num_states) if choices else np.zeros(num_states, int)
        state_ptr = np.concatenate([[0], np.cumsum(counts)])
        trans_ptr = np.concatenate([[0], np.cumsum([len(c[2]) for c in choices])]).astype(np.int64)
        succ = [s2 for c in choices for s2, _ in c[2]]
        prob = [p for c in choices for _, p in c[2]]
        return cls(num_states, initial, state_ptr, trans_ptr, np.array(succ, dtype=np.int64),
                   np.array(prob, dtype=np.float64), tuple(frozenset(l) for l in labels),
                   tuple(c[1] for c in choices))


RewardStructure = np.ndarray


def mdp_from_json(obj: dict) -> tuple[Mdp, np.ndarray]:
    """Parse the MDP file format; returns the MDP and its cost reward structure."""
    try:
        n = int(obj["states"])
        labels = [set() for _ in range(n)]
        for sid, atoms in obj.get("labels", {}).items():
            labels[int(sid)] = set(atoms)
        acts = sorted(enumerate(obj["actions"]), key=lambda ia: (int(ia[1]["state"]), ia[0]))
        choices = []
        rewards = []
        for _, a in acts:
            choices.append((int(a["state"]), str(a.get("name", "")),
                            [(int(t["s"]), float(t["p"])) for t in a["to"]]))
            rewards.append(float(a.get("reward", 0.0)))
        mdp = Mdp.from_choices(n, int(obj.get("initial", 0)), choices, labels)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelValidationError(f"malformed MDP description: {exc}") from exc
    return mdp, _frozen(rewards, np.float64)


def mdp_to_json(mdp: Mdp, reward: np.ndarray | None = None) -> dict:
    acts = []
    for c in range(mdp.num_choices):
        acts.append({"state": int(mdp.choice_state[c]), "name": mdp.action_names[c],
                     "to": [{"s": s2, "p": p} for s2, p in mdp.transitions(c)],
                     "reward": 0.0 if reward is None else float(reward[c])})
    return {"states": mdp.num_states, "initial": mdp.initial,
            "labels": {str(s): sorted(l) for s, l in enumerate(mdp.labels) if l},
            "actions": acts}


def load_mdp(path) -> tuple[Mdp, np.ndarray]:
    with open(path) as fh:
        return mdp_from_json(json.load(fh))


# --- product -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProductMdp:
    """Agent-task product with its cost and task-success reward structures.

    ``pairs[k] = (s, q)`` names product state ``k``; state 0 is initial.
    Done states (task accomplished or failed) are absorbing through a single
    zero-reward self-loop.
    """

    mdp: Mdp
    pairs: np.ndarray
    done: np.ndarray
    accept: np.ndarray
    cost: np.ndarray
    success: np.ndarray
    agent_id: int = 0
    task_id: int = 0
    origin: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "pairs", _frozen(self.pairs, np.int64))
        object.__setattr__(self, "done", _frozen(self.done, bool))
        object.__setattr__(self, "accept", _frozen(self.accept, bool))
        object.__setattr__(self, "cost", _frozen(self.cost, np.float64))
        object.__setattr__(self, "success", _frozen(self.success, np.float64))
        if self.origin is not None:
            object.__setattr__(self, "origin", _frozen(self.origin, np.int64))

    @property
    def num_states(self) -> int:
        return self.mdp.num_states

    @property
    def done_states(self) -> np.ndarray:
        return np.flatnonzero(self.done)

    @property
    def accept_states(self) -> np.ndarray:
        return np.flatnonzero(self.accept)

    def state_of(self, s: int, q: int) -> int | None:
        hit = np.flatnonzero((self.pairs[:, 0] == s) & (self.pairs[:, 1] == q))
        return int(hit[0]) if hit.size else None

    @cached_property
    def structural_key(self) -> tuple:
        return (self.mdp.structural_key, self.done.tobytes(), self.cost.tobytes(),
                self.success.tobytes())

    @cached_property
    def digest(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for part in (self.mdp.state_ptr, self.mdp.trans_ptr, self.mdp.succ, self.mdp.prob,
                     self.done, self.cost, self.success):
            h.update(part.tobytes())
        h.update(str(self.mdp.initial).encode())
        return h.hexdigest()

    @cached_property
    def reward_finite(self) -> bool:
        return check_reward_finite(self)


def _check_pre_sinks(dfa: Dfa) -> None:
    if dfa.initial in dfa.accepting:
        raise InvalidDfa("initial location is accepting; insert pre-sinks first")
    for q in range(dfa.num_locations):
        if q in dfa.accepting or q in dfa.pre_sinks:
            continue
        if dfa.successors(q) & dfa.accepting:
            raise InvalidDfa(f"location {q} enters an accepting location without a pre-sink")


def build_product(m: Mdp, dfa: Dfa, costs: np.ndarray, agent_id: int = 0,
                  task_id: int = 0) -> ProductMdp:
    """Reachable product of an agent MDP with a task DFA.

    The product starts in ``(s0, delta(q0, L(s0)))`` (or ``(s0, q0)`` when
    ``q0`` is itself a pre-sink).  Successor locations read the label of the
    successor state.  A pre-sink location takes one internal step to its
    accepting successor with cost 0 and success reward 1; the MDP state does
    not move.
    """
    _check_pre_sinks(dfa)
    costs = np.asarray(costs, dtype=np.float64)
    if costs.shape != (m.num_choices,):
        raise ModelValidationError("cost reward must have one entry per MDP choice")
    extra = set().union(*m.labels) - set(dfa.atoms)
    if extra:
        log.debug("projecting MDP atoms %s outside the task alphabet", sorted(extra))

    nq = dfa.num_locations
    mask = np.array([dfa.letter_mask(l) for l in m.labels], dtype=np.int64)
    delta = dfa.delta
    is_pre = np.zeros(nq, bool)
    is_pre[list(dfa.pre_sinks)] = True
    is_done = np.zeros(nq, bool)
    is_done[list(dfa.accepting | dfa.traps)] = True
    is_acc = np.zeros(nq, bool)
    is_acc[list(dfa.accepting)] = True
    nchoice = np.diff(m.state_ptr)

    def expand(codes):
        """Choices of product states ``codes``: (owner, mdp choice, succ codes, probs, per-choice count)."""
        s, q = codes // nq, codes % nq
        kind_done = is_done[q]
        kind_pre = is_pre[q] & ~kind_done
        kind_mdp = ~(kind_done | kind_pre)
        per_state = np.where(kind_mdp, nchoice[s], 1)
        owner = np.repeat(np.arange(codes.size), per_state)
        first = np.where(kind_mdp, m.state_ptr[s], -1)
        mchoice = segment_arange(np.maximum(first, 0), per_state)
        mchoice = np.where(np.repeat(kind_mdp, per_state), mchoice, -1)
        ntrans = np.where(mchoice >= 0, np.diff(m.trans_ptr)[np.maximum(mchoice, 0)], 1)
        tidx = segment_arange(np.where(mchoice >= 0, m.trans_ptr[np.maximum(mchoice, 0)], 0), ntrans)
        t_owner = np.repeat(owner, ntrans)
        t_is_mdp = np.repeat(mchoice >= 0, ntrans)
        s_own, q_own = s[t_owner], q[t_owner]
        s2 = np.where(t_is_mdp, m.succ[tidx], s_own)
        q2_mdp = delta[q_own, mask[s2]]
        q2_pre = delta[q_own, mask[s_own]]
        q2 = np.where(t_is_mdp, q2_mdp, np.where(is_pre[q_own] & ~is_done[q_own], q2_pre, q_own))
        p = np.where(t_is_mdp, m.prob[tidx], 1.0)
        return owner, mchoice, s2 * nq + q2, p, ntrans

    q_init = dfa.initial if dfa.initial in dfa.pre_sinks else int(delta[dfa.initial, mask[m.initial]])
    init_code = m.initial * nq + q_init
    ids = {}
    order = [np.array([init_code], dtype=np.int64)]
    seen = np.array([init_code], dtype=np.int64)
    frontier = order[0]
    while frontier.size:
        _, _, targets, _, _ = expand(frontier)
        targets = np.unique(targets)
        new = np.setdiff1d(targets, seen, assume_unique=True)
        if new.size:
            seen = np.union1d(seen, new)
            order.append(new)
        frontier = new
    codes = np.concatenate(order)
    lookup = np.full(int(codes.max()) + 1, -1, dtype=np.int64)
    lookup[codes] = np.arange(codes.size)

    owner, mchoice, tcodes, probs, ntrans = expand(codes)
    counts = np.bincount(owner, minlength=codes.size)
    state_ptr = np.concatenate([[0], np.cumsum(counts)])
    trans_ptr = np.concatenate([[0], np.cumsum(ntrans)])
    succ = lookup[tcodes]
    q_all = codes % nq
    owner_q = q_all[owner]
    cost = np.where(mchoice >= 0, costs[np.maximum(mchoice, 0)], 0.0)
    success = np.where((mchoice < 0) & is_pre[owner_q] & ~is_done[owner_q], 1.0, 0.0)
    names = tuple(m.action_names[c] if c >= 0 else
                  (INTERNAL_ACTION if is_pre[q] and not is_done[q] else DONE_ACTION)
                  for c, q in zip(mchoice.tolist(), owner_q.tolist()))
    pairs = np.stack([codes // nq, q_all], axis=1)
    labels = tuple(m.labels[s] for s in pairs[:, 0].tolist())
    pm = Mdp(int(codes.size), 0, state_ptr, trans_ptr, succ, probs, labels, names)
    return ProductMdp(pm, pairs, is_done[q_all], is_acc[q_all], cost, success,
                      agent_id, task_id, origin=mchoice)


def restrict_reachable(p: ProductMdp) -> ProductMdp:
    """Drop product states unreachable from the initial state (order preserved)."""
    m = p.mdp
    reach = np.zeros(m.num_states, bool)
    reach[m.initial] = True
    frontier = np.array([m.initial])
    while frontier.size:
        ch = segment_arange(m.state_ptr[frontier], np.diff(m.state_ptr)[frontier])
        tr = segment_arange(m.trans_ptr[ch], np.diff(m.trans_ptr)[ch])
        nxt = np.unique(m.succ[tr])
        nxt = nxt[~reach[nxt]]
        reach[nxt] = True
        frontier = nxt
    if reach.all():
        return p
    keep = np.flatnonzero(reach)
    remap = np.full(m.num_states, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    ch = segment_arange(m.state_ptr[keep], np.diff(m.state_ptr)[keep])
    tr = segment_arange(m.trans_ptr[ch], np.diff(m.trans_ptr)[ch])
    state_ptr = np.concatenate([[0], np.cumsum(np.diff(m.state_ptr)[keep])])
    trans_ptr = np.concatenate([[0], np.cumsum(np.diff(m.trans_ptr)[ch])])
    sub = Mdp(int(keep.size), int(remap[m.initial]), state_ptr, trans_ptr, remap[m.succ[tr]],
              m.prob[tr], tuple(m.labels[k] for k in keep.tolist()),
              tuple(m.action_names[c] for c in ch.tolist()))
    return ProductMdp(sub, p.pairs[keep], p.done[keep], p.accept[keep], p.cost[ch],
                      p.success[ch], p.agent_id, p.task_id,
                      None if p.origin is None else p.origin[ch])


def avoiding_states(m: Mdp, done: np.ndarray) -> np.ndarray:
    """States from which some scheduler stays outside ``done`` forever.

    Greatest fixpoint: repeatedly discard states that have no choice whose
    successors all remain in the candidate set.
    """
    alive = ~np.asarray(done, bool)
    if not alive.any():
        return alive
    starts = m.trans_ptr[:-1]
    while True:
        leaks = np.add.reduceat((~alive[m.succ]).astype(np.int64), starts)
        closed = (leaks == 0).astype(np.int64)
        has = np.maximum.reduceat(closed, m.state_ptr[:-1]).astype(bool)
        nxt = alive & has
        if (nxt == alive).all():
            return alive
        alive = nxt


def check_reward_finite(p: ProductMdp) -> bool:
    """True iff ``done`` is reached almost surely under every scheduler."""
    return not avoiding_states(p.mdp, p.done).any()
