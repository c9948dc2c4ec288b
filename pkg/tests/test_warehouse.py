import numpy as np
import pytest

from morap.errors import GenerationFailure, InvalidConfig
from morap.warehouse import (WarehouseConfig, decode_state, generate_agent, generate_instance,
                             generate_task, state_index)


def test_state_space_size():
    cfg = WarehouseConfig(W=3, H=3, n=1)
    m, cost = generate_agent(cfg, (0, 0))
    assert m.num_states == 72
    assert (cost == -1).all()
    m.validate()


def test_state_index_round_trip():
    cfg = WarehouseConfig(W=4, H=3, n=2)
    for s in range(cfg.num_states):
        assert state_index(cfg, *decode_state(cfg, s)) == s


def test_forward_into_wall_is_self_loop():
    cfg = WarehouseConfig(W=3, H=3, n=1)
    m, _ = generate_agent(cfg, (0, 0))
    s = state_index(cfg, 0, 2, 0, False)  # top row facing north
    (fwd,) = [c for c in m.choices(s) if m.action_names[c] == "fwd"]
    assert list(m.transitions(fwd)) == [(s, 1.0)]


def test_forward_slips():
    cfg = WarehouseConfig(W=3, H=3, n=1, slip=0.1)
    m, _ = generate_agent(cfg, (0, 0))
    s = state_index(cfg, 0, 0, 0, False)
    (fwd,) = [c for c in m.choices(s) if m.action_names[c] == "fwd"]
    assert dict(m.transitions(fwd)) == pytest.approx({state_index(cfg, 0, 1, 0, False): 0.9, s: 0.1})


def test_rows_are_distributions():
    cfg = WarehouseConfig(W=4, H=4, n=2, slip=0.2)
    m, _ = generate_agent(cfg, (1, 1))
    sums = np.add.reduceat(m.prob, m.trans_ptr[:-1])
    np.testing.assert_allclose(sums, 1.0)


def test_load_only_at_racks():
    cfg = WarehouseConfig(W=3, H=3, n=1)
    m, _ = generate_agent(cfg, (0, 0))
    for c in range(m.num_choices):
        if m.action_names[c] in ("load", "unload"):
            x, y, _, _ = decode_state(cfg, int(m.choice_state[c]))
            assert (x, y) in cfg.racks


def test_generation_is_deterministic():
    a = generate_instance(WarehouseConfig(W=4, H=4, n=2, seed=3))
    b = generate_instance(WarehouseConfig(W=4, H=4, n=2, seed=3))
    assert a.starts == b.starts
    assert a.product(0, 1).digest == b.product(0, 1).digest


def test_default_deadline_makes_instances_reward_finite():
    inst = generate_instance(WarehouseConfig(W=3, H=3, n=1))
    inst.validate()
    with pytest.raises(GenerationFailure):
        generate_instance(WarehouseConfig(W=3, H=3, n=1, deadline=None))


def test_task_formula():
    cfg = WarehouseConfig(W=3, H=3, n=1)
    phi = generate_task(cfg, 0)
    assert "at_rack_0" in str(phi)
    with pytest.raises(InvalidConfig):
        generate_task(cfg, 5)


@pytest.mark.parametrize("kw", [dict(W=0), dict(n=0), dict(slip=1.0), dict(slip=-0.1),
                                dict(racks=((9, 9),)), dict(racks=((0, 0), (0, 0)), n=2),
                                dict(feed=(0, 2), racks=((0, 2),)), dict(deadline=0)])
def test_bad_config(kw):
    with pytest.raises(InvalidConfig):
        WarehouseConfig(**dict(dict(W=3, H=3, n=1), **kw))


def test_unknown_json_key():
    with pytest.raises(InvalidConfig):
        WarehouseConfig.from_json({"W": 3, "colour": "red"})
    cfg = WarehouseConfig(W=3, H=3, n=1)
    back = WarehouseConfig.from_json(cfg.to_json())
    assert back.step_bound == cfg.step_bound and back.racks == cfg.racks and back.feed == cfg.feed
