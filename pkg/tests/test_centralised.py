import numpy as np
import pytest

from morap.assignment import max_assignment
from morap.centralised import build_centralised, centralised_pareto_point, centralised_support
from morap.errors import SizeGuard
from morap.solver import pareto_point, supporting_point

from helpers import example_instance, random_instance, sample_thresholds


def test_single_agent_model():
    inst = example_instance()
    c = build_centralised(inst)
    assert c.num_states == 1 + inst.product(0, 0).num_states
    assert c.describe(0)[0] == "assign"
    r, _ = centralised_support(c, [0.0, 1.0])
    np.testing.assert_allclose(r, [-15 / 7, 5 / 7], atol=1e-6)


def test_two_agent_assignment_phase():
    inst = random_instance(np.random.default_rng(3), n=2)
    c = build_centralised(inst)
    kinds = [c.describe(k) for k in range(c.num_states)]
    assign = [k for k in kinds if k[0] == "assign"]
    # task 0: agents 0 and 1 are candidates; task 1: one candidate per mask
    assert len(assign) == 4
    names = [c.mdp.action_names[ch] for ch in c.mdp.choices(0)]
    assert names == ["assign", "forward"]
    m = c.mdp
    for s in np.flatnonzero(c.done):
        (ch,) = m.choices(int(s))
        assert list(m.transitions(ch)) == [(int(s), 1.0)]
        assert all(rk[ch] == 0 for rk in c.rewards)


def test_support_matches_decentralised():
    rng = np.random.default_rng(11)
    for _ in range(8):
        inst = random_instance(rng)
        c = build_centralised(inst)
        for _ in range(3):
            w = rng.dirichlet(np.ones(inst.dim))
            sp = supporting_point(inst, w)
            r, res = centralised_support(c, w)
            assert w @ r == pytest.approx(w @ sp.r, abs=1e-5)
            assert res.value == pytest.approx(max_assignment(sp.values)[1], abs=1e-5)


def test_verdicts_match_decentralised():
    rng = np.random.default_rng(12)
    for _ in range(8):
        inst = random_instance(rng)
        c = build_centralised(inst)
        # the verdict is eps-approximate, so ground truth is only used outside a wider band
        t, truth = sample_thresholds(rng, inst, band=0.02)
        a = pareto_point(inst, t)
        b = centralised_pareto_point(c, t)
        assert a.feasible == b.feasible
        if truth is not None:
            assert a.feasible == truth


def test_size_guard():
    with pytest.raises(SizeGuard):
        build_centralised(random_instance(np.random.default_rng(0), n=2), limit=3)
