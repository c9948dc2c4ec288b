"""Expected total reward until absorption: optimisation and evaluation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, NonConvergence, NotRewardFinite, SingularSystem
from .model import Mdp, ProductMdp

DEFAULT_EPS = 1e-6
DEFAULT_SWEEP_CAP = 10**5


@dataclass(frozen=True, eq=False)
class Scheduler:
    """Memoryless scheduler as a state-by-choice probability matrix.

    ``choice`` holds the selected global choice per state when the scheduler
    is deterministic and is ``None`` otherwise.
    """

    weights: sp.csr_matrix
    choice: np.ndarray | None = None

    @classmethod
    def simple(cls, m: Mdp, choice: Sequence[int]) -> "Scheduler":
        choice = np.asarray(choice, dtype=np.int64)
        if choice.shape != (m.num_states,):
            raise DimensionMismatch("one choice per state required")
        if ((choice < m.state_ptr[:-1]) | (choice >= m.state_ptr[1:])).any():
            raise ValueError("scheduler selects a choice not enabled in its state")
        n = m.num_states
        w = sp.csr_matrix((np.ones(n), choice, np.arange(n + 1)), shape=(n, m.num_choices))
        choice.setflags(write=False)
        return cls(w, choice)

    @classmethod
    def from_local(cls, m: Mdp, local: Sequence[int]) -> "Scheduler":
        """Deterministic scheduler from per-state action offsets (0 = first action)."""
        return cls.simple(m, m.state_ptr[:-1] + np.asarray(local, dtype=np.int64))

    @property
    def is_simple(self) -> bool:
        return self.choice is not None

    def local_actions(self, m: Mdp) -> np.ndarray:
        if self.choice is None:
            raise ValueError("randomised scheduler has no single action per state")
        return self.choice - m.state_ptr[:-1]


def weighted_reward(rewards: Sequence[np.ndarray], w: Sequence[float]) -> np.ndarray:
    if len(rewards) != len(w):
        raise DimensionMismatch(f"{len(rewards)} reward structures but {len(w)} weights")
    out = np.zeros_like(np.asarray(rewards[0], dtype=np.float64))
    for r, wk in zip(rewards, w):
        r = np.asarray(r, dtype=np.float64)
        if r.shape != out.shape:
            raise DimensionMismatch("reward structures differ in length")
        out = out + wk * r
    return out


def _target(p: ProductMdp | Mdp, done: np.ndarray | None):
    if isinstance(p, ProductMdp):
        if not p.reward_finite:
            raise NotRewardFinite("some scheduler avoids the done states with positive probability")
        return p.mdp, p.done
    if done is None:
        raise ValueError("done mask required for a plain MDP")
    return p, np.asarray(done, bool)


@dataclass(frozen=True)
class OptimalResult:
    scheduler: Scheduler
    value: float
    values: np.ndarray
    sweeps: int


def optimal_scheduler(p: ProductMdp | Mdp, rho: np.ndarray, eps: float = DEFAULT_EPS,
                      max_sweeps: int = DEFAULT_SWEEP_CAP, done: np.ndarray | None = None
                      ) -> OptimalResult:
    """Greedy scheduler after synchronous Bellman sweeps until the sup-norm change is <= eps.

    Ties pick the lowest-numbered action.  At least one sweep is always run.
    """
    m, done = _target(p, done)
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (m.num_choices,):
        raise DimensionMismatch("reward needs one entry per choice")
    P = m.matrix
    starts = m.state_ptr[:-1]
    x = np.zeros(m.num_states)
    for sweep in range(1, max_sweeps + 1):
        q = rho + P @ x
        y = np.maximum.reduceat(q, starts)
        y[done] = 0.0
        delta = np.max(np.abs(y - x)) if y.size else 0.0
        x = y
        if delta <= eps:
            break
    else:
        raise NonConvergence(f"value iteration did not converge in {max_sweeps} sweeps")
    best = np.repeat(np.maximum.reduceat(q, starts), np.diff(m.state_ptr))
    idx = np.where(q >= best, np.arange(q.size), q.size)
    choice = np.minimum.reduceat(idx, starts)
    return OptimalResult(Scheduler.simple(m, choice), float(x[m.initial]), x, sweep)


def _induced(m: Mdp, mu: Scheduler, rho: np.ndarray):
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (m.num_choices,):
        raise DimensionMismatch("reward needs one entry per choice")
    if mu.weights.shape != (m.num_states, m.num_choices):
        raise DimensionMismatch("scheduler does not match the model")
    return (mu.weights @ m.matrix).tocsr(), mu.weights @ rho


def evaluate_scheduler(p: ProductMdp | Mdp, mu: Scheduler, rho: np.ndarray,
                       eps: float = DEFAULT_EPS, max_sweeps: int = DEFAULT_SWEEP_CAP,
                       done: np.ndarray | None = None) -> float:
    m, done = _target(p, done)
    P, r = _induced(m, mu, rho)
    x = np.zeros(m.num_states)
    for _ in range(max_sweeps):
        y = r + P @ x
        y[done] = 0.0
        delta = np.max(np.abs(y - x)) if y.size else 0.0
        x = y
        if delta <= eps:
            return float(x[m.initial])
    raise NonConvergence(f"evaluation did not converge in {max_sweeps} sweeps")


def exact_values(p: ProductMdp | Mdp, mu: Scheduler, rho: np.ndarray,
                 done: np.ndarray | None = None) -> np.ndarray:
    """Values of all states under ``mu`` from a direct linear solve."""
    m, done = _target(p, done)
    P, r = _induced(m, mu, rho)
    live = np.flatnonzero(~done)
    x = np.zeros(m.num_states)
    if live.size == 0:
        return x
    A = sp.identity(live.size, format="csc") - P[live][:, live].tocsc()
    b = r[live]
    try:
        if live.size <= 2000:
            sol = np.linalg.solve(A.toarray(), b)
        else:
            sol = spla.spsolve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("induced chain does not reach the done states")
    x[live] = sol
    return x


def exact_evaluate(p: ProductMdp | Mdp, mu: Scheduler, rho: np.ndarray,
                   done: np.ndarray | None = None) -> float:
    m = p.mdp if isinstance(p, ProductMdp) else p
    return float(exact_values(p, mu, rho, done)[m.initial])
