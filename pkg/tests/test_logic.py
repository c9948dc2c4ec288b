import itertools
import json

import pytest
from hypothesis import given, settings, strategies as st

from morap.errors import ClosureBlowup, InvalidDfa, LtlSyntaxError, NotCoSafe
from morap.logic import (FALSE, TRUE, And, Atom, Bottom, Eventually, Next, Not, Or, Top, Until,
                         classify_locations, dfa_from_json, dfa_to_json, formula_to_dfa,
                         insert_pre_sinks, mk_and, mk_or, parse_cosafe, progress, task_dfa,
                         with_deadline)


def good(f, w, i=0):
    """Does w[i:] contain an informative good prefix for f?"""
    if isinstance(f, Top):
        return True
    if isinstance(f, Bottom):
        return False
    if isinstance(f, Atom):
        return i < len(w) and f.name in w[i]
    if isinstance(f, Not):
        return i < len(w) and f.arg.name not in w[i]
    if isinstance(f, And):
        return all(good(a, w, i) for a in f.args)
    if isinstance(f, Or):
        return any(good(a, w, i) for a in f.args)
    if isinstance(f, Next):
        return i < len(w) and good(f.arg, w, i + 1)
    if isinstance(f, Eventually):
        return any(good(f.arg, w, k) for k in range(i, len(w) + 1))
    if isinstance(f, Until):
        return any(good(f.right, w, k) and all(good(f.left, w, m) for m in range(i, k))
                   for k in range(i, len(w) + 1))
    raise TypeError(f)


atoms = st.sampled_from(["a", "b", "c"])
formula_text = st.recursive(
    st.one_of(atoms, atoms.map(lambda a: "!" + a), st.just("true"), st.just("false")),
    lambda sub: st.one_of(
        st.tuples(sub, sub).map(lambda p: f"({p[0]} & {p[1]})"),
        st.tuples(sub, sub).map(lambda p: f"({p[0]} | {p[1]})"),
        st.tuples(sub, sub).map(lambda p: f"({p[0]} U {p[1]})"),
        sub.map(lambda s: f"X ({s})"),
        sub.map(lambda s: f"F ({s})"),
    ),
    max_leaves=6,
)
letters = st.frozensets(atoms)
words = st.lists(letters, max_size=7)


def test_parse_examples():
    phi = parse_cosafe("!x U y")
    assert isinstance(phi, Until) and phi.left == Not(Atom("x")) and phi.right == Atom("y")
    assert parse_cosafe("F (a & b)") == parse_cosafe("F(b&a)")
    assert parse_cosafe("a | true") == TRUE
    assert parse_cosafe("a & false") == FALSE


def test_negation_pushed_to_atoms():
    assert parse_cosafe("!(a & b)") == mk_or(Not(Atom("a")), Not(Atom("b")))
    assert parse_cosafe("!X a") == Next(Not(Atom("a")))
    assert parse_cosafe("!!a") == Atom("a")


@pytest.mark.parametrize("text", ["G a", "a R b", "!F a", "!(a U b)", "a W b"])
def test_not_cosafe(text):
    with pytest.raises(NotCoSafe):
        parse_cosafe(text)


@pytest.mark.parametrize("text", ["a &", "(a", "a b", "", "a U", "&&"])
def test_syntax_errors(text):
    with pytest.raises(LtlSyntaxError):
        parse_cosafe(text)


def test_until_is_right_associative():
    assert parse_cosafe("a U b U c") == parse_cosafe("a U (b U c)")


def test_progression_examples():
    phi = parse_cosafe("!x U y")
    assert progress(phi, {"y"}) == TRUE
    assert progress(phi, {"x"}) == FALSE
    assert progress(phi, set()) == phi
    assert progress(parse_cosafe("X a"), set()) == Atom("a")


def test_example_dfa_shape():
    dfa = formula_to_dfa(parse_cosafe("!x U y"))
    assert dfa.num_locations == 3
    acc, traps, live = classify_locations(dfa)
    assert len(acc) == 1 and len(traps) == 1 and live == {dfa.initial}
    d = insert_pre_sinks(dfa)
    assert d.num_locations == 4 and len(d.pre_sinks) == 1
    (pre,) = d.pre_sinks
    assert d.step(d.initial, {"y"}) == pre
    assert d.successors(pre) <= d.accepting


def test_eventually_dfa():
    dfa = formula_to_dfa(parse_cosafe("F y"))
    assert dfa.num_locations == 2 and not dfa.traps


def test_true_task_is_presink_initial():
    d = task_dfa("true")
    assert d.initial in d.pre_sinks
    assert d.accepts([set()])


def test_insert_pre_sinks_is_idempotent():
    d = task_dfa("F a & F b")
    again = insert_pre_sinks(d)
    assert again.num_locations == d.num_locations
    assert again.pre_sinks == d.pre_sinks


def test_closure_cap():
    with pytest.raises(ClosureBlowup):
        formula_to_dfa(parse_cosafe("F (a & X X X b)"), cap=3)


def test_warehouse_template_has_four_live_free_locations():
    phi = parse_cosafe("F(at_rack_0 & carrying & F(at_feed & carrying & F(at_rack_0 & !carrying)))")
    dfa = formula_to_dfa(phi)
    assert dfa.num_locations == 4 and not dfa.traps


def test_deadline_adds_single_trap():
    base = task_dfa("F a")
    d = with_deadline(base, 3)
    assert len(d.traps) == 1
    assert d.run([set(), set(), set()]) in d.traps
    assert d.run([set(), {"a"}]) in d.pre_sinks
    with pytest.raises(InvalidDfa):
        with_deadline(base, 0)


def test_json_round_trip():
    d = task_dfa("!x U y")
    back = dfa_from_json(json.loads(json.dumps(dfa_to_json(d))))
    assert (back.delta == d.delta).all()
    assert back.initial == d.initial and back.accepting == d.accepting
    assert back.traps == d.traps and back.pre_sinks == d.pre_sinks


def test_json_rejects_partial_function():
    obj = dfa_to_json(task_dfa("F a"))
    obj["edges"] = obj["edges"][1:]
    with pytest.raises(InvalidDfa):
        dfa_from_json(obj)


@settings(max_examples=300, deadline=None)
@given(formula_text, words)
def test_dfa_accepts_exactly_informative_good_prefixes(text, word):
    phi = parse_cosafe(text)
    dfa = formula_to_dfa(phi)
    assert dfa.accepts(word) == good(phi, word)


@settings(max_examples=200, deadline=None)
@given(formula_text, words)
def test_pre_sinks_delay_acceptance_by_at_most_one_step(text, word):
    phi = parse_cosafe(text)
    d = task_dfa(phi)
    if d.accepts(word):
        assert good(phi, word)
    if good(phi, word):
        assert d.accepts(word + [frozenset()])
    for q2 in range(d.num_locations):
        if q2 in d.pre_sinks:
            assert d.successors(q2) <= d.accepting
        elif q2 not in d.accepting:
            assert not d.successors(q2) & d.accepting


@settings(max_examples=100, deadline=None)
@given(formula_text)
def test_canonical_form_is_order_insensitive(text):
    phi = parse_cosafe(text)
    swapped = parse_cosafe(f"({text}) & a")
    assert swapped == parse_cosafe(f"a & ({text})")
    assert mk_and(phi, phi) == phi


def test_accepting_locations_are_sinks_exhaustively():
    for text in ["F a & F b", "a U (b & X c)", "X X a | F b"]:
        d = task_dfa(text)
        for q in d.accepting:
            assert d.successors(q) == {q}
        for word in itertools.product([set(), {"a"}, {"b"}], repeat=3):
            q = d.run(word)
            assert 0 <= q < d.num_locations


def test_closure_is_finite_for_self_feeding_until():
    # syntactic residuals of this formula grow forever without normalisation
    dfa = formula_to_dfa(parse_cosafe("(X F a) U F X a"), cap=50)
    assert dfa.num_locations < 50
