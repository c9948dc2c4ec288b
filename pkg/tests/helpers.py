"""Random model generators shared by the test modules."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from morap.errors import SizeGuard
from morap.model import Mdp
from morap.oracle import brute_force_hull
from morap.solver import MorapInstance

DATA = Path(__file__).resolve().parents[1] / "src" / "morap" / "data"

TINY_FORMULAS = ["F a", "F b", "!a U b", "!b U a", "F (a & X b)", "F a & F b",
                 "F (a | b)", "X F a", "F (a & F b)", "a U b", "(F a) | (X X b)"]


def example_instance() -> MorapInstance:
    return MorapInstance.from_json(json.loads((DATA / "small_example.json").read_text()))


def _probs(rng, k):
    if k == 1:
        return [1.0]
    cuts = np.sort(rng.integers(1, 20, size=k - 1))
    parts = np.diff(np.concatenate([[0], cuts, [20]])) / 20.0
    return [float(p) for p in parts if p > 0] if (parts > 0).all() else [1.0]


def random_mdp(rng, nstates: int, atoms=("a", "b"), max_actions: int = 3):
    choices = []
    for s in range(nstates):
        for a in range(int(rng.integers(1, max_actions + 1))):
            k = int(rng.integers(1, min(nstates, 2) + 1))
            succ = rng.choice(nstates, size=k, replace=False)
            ps = _probs(rng, k)
            succ = succ[: len(ps)]
            choices.append((s, f"a{a}", list(zip(succ.tolist(), ps))))
    labels = [{x for x in atoms if rng.random() < 0.4} for _ in range(nstates)]
    mdp = Mdp.from_choices(nstates, 0, choices, labels)
    cost = -np.round(rng.uniform(0.5, 2.0, size=mdp.num_choices), 2)
    return mdp, cost


def random_instance(rng, n: int | None = None, max_states: int = 4, deadline: int | None = None,
                    scheduler_limit: int = 10**4, tries: int = 500,
                    min_vertices: int = 2) -> MorapInstance:
    """Small reward-finite instance whose brute-force hull is cheap to enumerate."""
    for _ in range(tries):
        k = int(rng.integers(1, 3)) if n is None else n
        agents = [random_mdp(rng, int(rng.integers(2, max_states + 1))) for _ in range(k)]
        tasks = [TINY_FORMULAS[int(rng.integers(len(TINY_FORMULAS)))] for _ in range(k)]
        dl = int(rng.integers(2, 5)) if deadline is None else deadline
        inst = MorapInstance([a for a, _ in agents], [c for _, c in agents], tasks, dl)
        try:
            inst.hull = brute_force_hull(inst, limit=scheduler_limit)
        except SizeGuard:
            continue
        if len(inst.hull.vertices) < min_vertices:
            continue
        inst.validate()
        return inst
    raise RuntimeError("could not draw a small instance")


def sample_thresholds(rng, inst, band: float = 1e-4):
    """Threshold inside, outside or near the hull; returns (t, oracle verdict or None if in the band)."""
    V = inst.hull.vertices
    n = inst.n
    lam = rng.dirichlet(np.ones(len(V)))
    base = V.T @ lam
    mode = rng.integers(3)
    if mode == 0:
        t = base - rng.uniform(0, 0.3, size=2 * n)
    elif mode == 1:
        t = base + rng.uniform(0, 0.3, size=2 * n)
    else:
        t = inst.hull.project(base + rng.normal(0, 0.2, size=2 * n)) + rng.normal(0, 1e-3, size=2 * n)
    t[n:] = np.clip(t[n:], 0.0, 1.0)
    d = inst.hull.distance(t)
    if d > band:
        return t, False
    if inst.hull.distance(t + band) <= 1e-9:
        return t, True
    return t, None


def random_absorbing_mdp(rng, nstates: int, max_actions: int = 3, max_stay: float = 0.9):
    """MDP in which every choice moves to a higher-numbered state with positive probability.

    The last state is the absorbing target, so every scheduler reaches it
    almost surely.  Returns ``(mdp, done mask, reward)``.
    """
    choices = []
    for s in range(nstates - 1):
        for a in range(int(rng.integers(1, max_actions + 1))):
            stay = float(rng.uniform(0, max_stay))
            ahead = rng.choice(np.arange(s + 1, nstates), size=min(2, nstates - 1 - s), replace=False)
            w = rng.dirichlet(np.ones(ahead.size)) * (1 - stay)
            back = int(rng.integers(0, s + 1))
            to = [(back, stay)] + list(zip(ahead.tolist(), w.tolist()))
            choices.append((s, f"a{a}", to))
    choices.append((nstates - 1, "stop", [(nstates - 1, 1.0)]))
    mdp = Mdp.from_choices(nstates, 0, choices, [set()] * nstates)
    done = np.zeros(nstates, bool)
    done[-1] = True
    return mdp, done, rng.uniform(-1, 1, size=mdp.num_choices)
