import json

import numpy as np
import pytest

from helpers import example_instance, random_mdp
from morap.errors import InvalidDfa, ModelValidationError
from morap.logic import formula_to_dfa, parse_cosafe, task_dfa
from morap.model import (Mdp, avoiding_states, build_product, check_reward_finite, mdp_from_json,
                         mdp_to_json, restrict_reachable)


def example_product():
    inst = example_instance()
    return inst.product(0, 0)


def test_example_product_states():
    p = example_product()
    pairs = {tuple(x) for x in p.pairs.tolist()}
    d = example_instance().tasks[0]
    names = {q: d.names[q] for q in range(d.num_locations)}
    assert {(s, names[q]) for s, q in pairs} == {
        (0, "(!x U y)"), (1, "false"), (2, "(!x U y)"), (3, "pre[true]"), (3, "true")}
    done = {(int(s), names[int(q)]) for (s, q), dn in zip(p.pairs, p.done) if dn}
    assert done == {(1, "false"), (3, "true")}


def test_presink_step_is_internal_and_free():
    p = example_product()
    m = p.mdp
    k = next(k for k, (s, q) in enumerate(p.pairs.tolist()) if s == 3 and q in example_instance().tasks[0].pre_sinks)
    (c,) = list(m.choices(k))
    assert m.action_names[c] == "__presink__"
    assert p.cost[c] == 0.0 and p.success[c] == 1.0
    ((succ, prob),) = m.transitions(c)
    assert prob == 1.0 and p.pairs[succ][0] == 3 and p.accept[succ]


def test_example_is_reward_finite():
    assert check_reward_finite(example_product())


def test_done_states_are_absorbing():
    p = example_product()
    m = p.mdp
    for k in p.done_states:
        for c in m.choices(int(k)):
            assert all(p.done[s] for s, _ in m.transitions(c))


def test_row_sum_validation():
    obj = json.loads(json.dumps(mdp_to_json(*random_mdp(np.random.default_rng(1), 3))))
    obj["actions"][0]["to"][0]["p"] += 1e-6
    with pytest.raises(ModelValidationError):
        mdp_from_json(obj)
    obj["actions"][0]["to"][0]["p"] -= 1e-6 - 1e-11
    mdp_from_json(obj)


def test_deadlock_rejected():
    with pytest.raises(ModelValidationError):
        Mdp.from_choices(2, 0, [(0, "a", [(1, 1.0)])], [set(), set()])


def test_json_round_trip():
    m, c = random_mdp(np.random.default_rng(3), 4)
    m2, c2 = mdp_from_json(json.loads(json.dumps(mdp_to_json(m, c))))
    assert m2.structural_key == m.structural_key
    assert np.array_equal(c, c2)


def test_self_loop_without_deadline_is_not_reward_finite():
    m = Mdp.from_choices(2, 0, [(0, "wait", [(0, 1.0)]), (0, "go", [(1, 1.0)]),
                                (1, "stay", [(1, 1.0)])], [set(), {"g"}])
    p = build_product(m, task_dfa("F g"), np.array([-1.0, -1.0, -1.0]))
    assert not check_reward_finite(p)
    assert avoiding_states(p.mdp, p.done)[p.mdp.initial]
    p2 = build_product(m, task_dfa("F g", deadline=3), np.array([-1.0, -1.0, -1.0]))
    assert check_reward_finite(p2)


def test_product_rejects_dfa_without_pre_sinks():
    m, c = random_mdp(np.random.default_rng(0), 2)
    with pytest.raises(InvalidDfa):
        build_product(m, formula_to_dfa(parse_cosafe("F a")), c)


def test_restrict_reachable_is_identity_on_products():
    p = example_product()
    assert restrict_reachable(p) is p


def test_product_successor_reads_successor_label():
    rng = np.random.default_rng(7)
    for _ in range(30):
        m, c = random_mdp(rng, 4)
        d = task_dfa("!a U b")
        p = build_product(m, d, c)
        pm = p.mdp
        for k in range(pm.num_states):
            s, q = p.pairs[k]
            for ch in pm.choices(k):
                for k2, _ in pm.transitions(ch):
                    s2, q2 = p.pairs[k2]
                    if p.done[k]:
                        assert k2 == k
                    elif q in d.pre_sinks:
                        assert s2 == s and q2 == d.step(q, m.labels[s])
                    else:
                        assert q2 == d.step(q, m.labels[s2])
