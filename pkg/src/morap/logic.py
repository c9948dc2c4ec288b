"""Co-safe LTL formulas and their deterministic automata.

Formulas are kept in positive normal form and canonicalised on
construction (flattened, deduplicated, sorted, constants absorbed), so two
residuals that differ only by operand order compare equal.  The automaton of
a formula is the closure of the formula under progression.
"""
from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import ClosureBlowup, InvalidDfa, LtlSyntaxError, NotCoSafe

DEFAULT_CLOSURE_CAP = 10**6


class Formula:
    __slots__ = ("_key", "_hash")

    def _init_key(self, key: str) -> None:
        self._key = key
        self._hash = hash((type(self).__name__, key))

    def __eq__(self, other):
        return type(self) is type(other) and self._key == other._key

    def __hash__(self):
        return self._hash

    def __lt__(self, other):
        return self._key < other._key

    def __str__(self):
        return self._key

    def __repr__(self):
        return f"{type(self).__name__}<{self._key}>"

    def atoms(self) -> frozenset[str]:
        raise NotImplementedError


class Top(Formula):
    __slots__ = ()

    def __init__(self):
        self._init_key("true")

    def atoms(self):
        return frozenset()


class Bottom(Formula):
    __slots__ = ()

    def __init__(self):
        self._init_key("false")

    def atoms(self):
        return frozenset()


TRUE = Top()
FALSE = Bottom()


class Atom(Formula):
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name
        self._init_key(name)

    def atoms(self):
        return frozenset([self.name])


class Not(Formula):
    """Negation; in normalised formulas only ever wraps an :class:`Atom`."""

    __slots__ = ("arg",)

    def __init__(self, arg: Formula):
        if not isinstance(arg, Atom):
            raise NotCoSafe(f"negation above non-atom {arg}")
        self.arg = arg
        self._init_key("!" + arg._key)

    def atoms(self):
        return self.arg.atoms()


class _NAry(Formula):
    __slots__ = ("args",)
    _op = ""

    def __init__(self, args: Sequence[Formula]):
        self.args = tuple(args)
        self._init_key("(" + f" {self._op} ".join(a._key for a in self.args) + ")")

    def atoms(self):
        out = frozenset()
        for a in self.args:
            out |= a.atoms()
        return out


class And(_NAry):
    __slots__ = ()
    _op = "&"


class Or(_NAry):
    __slots__ = ()
    _op = "|"


class Next(Formula):
    __slots__ = ("arg",)

    def __init__(self, arg: Formula):
        self.arg = arg
        self._init_key(f"(X {arg._key})")

    def atoms(self):
        return self.arg.atoms()


class Eventually(Formula):
    __slots__ = ("arg",)

    def __init__(self, arg: Formula):
        self.arg = arg
        self._init_key(f"(F {arg._key})")

    def atoms(self):
        return self.arg.atoms()


class Until(Formula):
    __slots__ = ("left", "right")

    def __init__(self, left: Formula, right: Formula):
        self.left = left
        self.right = right
        self._init_key(f"({left._key} U {right._key})")

    def atoms(self):
        return self.left.atoms() | self.right.atoms()


# --- canonicalising constructors -------------------------------------------

def _junction(cls, unit, zero, args):
    flat: list[Formula] = []
    for a in args:
        if isinstance(a, cls):
            flat.extend(a.args)
        else:
            flat.append(a)
    seen = set()
    kept = []
    for a in flat:
        if a == zero:
            return zero
        if a == unit or a in seen:
            continue
        seen.add(a)
        kept.append(a)
    dual = Or if cls is And else And
    # lattice absorption: x & (x | y) = x, x | (x & y) = x
    kept = [a for a in kept
            if not (isinstance(a, dual) and any(b in seen for b in a.args))]
    if not kept:
        return unit
    if len(kept) == 1:
        return kept[0]
    return cls(sorted(kept))


def mk_and(*args: Formula) -> Formula:
    return _junction(And, TRUE, FALSE, args)


def mk_or(*args: Formula) -> Formula:
    return _junction(Or, FALSE, TRUE, args)


def mk_next(arg: Formula) -> Formula:
    return FALSE if arg == FALSE else Next(arg)


def mk_eventually(arg: Formula) -> Formula:
    if arg == TRUE or arg == FALSE:
        return arg
    return Eventually(arg)


def mk_until(left: Formula, right: Formula) -> Formula:
    if right == TRUE or right == FALSE:
        return right
    if left == FALSE:
        return right
    if left == TRUE:
        return mk_eventually(right)
    return Until(left, right)


# --- parser -----------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|(\S))")
_UNARY = {"X", "F", "G", "!"}
_RESERVED = {"X", "U", "F", "G", "R", "W", "M", "true", "false"}


def _tokenize(text: str) -> list[str]:
    pos = 0
    out = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        tok = m.group(1) or m.group(2)
        if m.group(2) is not None and tok not in "!&|()":
            raise LtlSyntaxError(f"unexpected character {tok!r} at {m.start(2)}")
        out.append(tok)
        pos = m.end()
    return out


class _Parser:
    # raw trees: ("atom", name) | ("const", bool) | (op, *children)

    def __init__(self, tokens):
        self.toks = tokens
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, expected=None):
        tok = self.peek()
        if tok is None or (expected is not None and tok != expected):
            raise LtlSyntaxError(f"expected {expected or 'token'}, got {tok!r}")
        self.i += 1
        return tok

    def parse(self):
        if not self.toks:
            raise LtlSyntaxError("empty formula")
        tree = self.disj()
        if self.peek() is not None:
            raise LtlSyntaxError(f"trailing input at {self.peek()!r}")
        return tree

    def disj(self):
        parts = [self.conj()]
        while self.peek() == "|":
            self.take()
            parts.append(self.conj())
        return parts[0] if len(parts) == 1 else ("or", *parts)

    def conj(self):
        parts = [self.until()]
        while self.peek() == "&":
            self.take()
            parts.append(self.until())
        return parts[0] if len(parts) == 1 else ("and", *parts)

    def until(self):
        left = self.unary()
        if self.peek() in ("U", "R", "W", "M"):
            op = self.take()
            if op != "U":
                raise NotCoSafe(f"operator {op} is outside the co-safe fragment")
            return ("until", left, self.until())
        return left

    def unary(self):
        tok = self.peek()
        if tok in _UNARY:
            self.take()
            return ({"!": "not", "X": "next", "F": "ev", "G": "glob"}[tok], self.unary())
        if tok == "(":
            self.take()
            inner = self.disj()
            self.take(")")
            return inner
        if tok in ("true", "false"):
            self.take()
            return ("const", tok == "true")
        if tok is None or tok in _RESERVED or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok):
            raise LtlSyntaxError(f"unexpected token {tok!r}")
        self.take()
        return ("atom", tok)


def _pnf(tree, negate=False) -> Formula:
    kind = tree[0]
    if kind == "const":
        return TRUE if tree[1] != negate else FALSE
    if kind == "atom":
        a = Atom(tree[1])
        return Not(a) if negate else a
    if kind == "not":
        return _pnf(tree[1], not negate)
    if kind in ("and", "or"):
        parts = [_pnf(t, negate) for t in tree[1:]]
        use_and = (kind == "and") != negate
        return mk_and(*parts) if use_and else mk_or(*parts)
    if kind == "next":
        return mk_next(_pnf(tree[1], negate))
    if kind == "glob":
        raise NotCoSafe("G is outside the co-safe fragment")
    if negate:
        raise NotCoSafe("negation above a temporal operator")
    if kind == "ev":
        return mk_eventually(_pnf(tree[1]))
    if kind == "until":
        return mk_until(_pnf(tree[1]), _pnf(tree[2]))
    raise AssertionError(kind)


def parse_cosafe(text: str) -> Formula:
    """Parse LTL text into a normalised co-safe formula.

    Raises:
        LtlSyntaxError: malformed text.
        NotCoSafe: ``G``/``R``/``W`` operators, or a negation that cannot be
            pushed down to the atoms without creating one.
    """
    return _pnf(_Parser(_tokenize(text)).parse())


# --- progression --------------------------------------------------------------

@lru_cache(maxsize=1 << 18)
def _progress(phi: Formula, letter: frozenset) -> Formula:
    if isinstance(phi, (Top, Bottom)):
        return phi
    if isinstance(phi, Atom):
        return TRUE if phi.name in letter else FALSE
    if isinstance(phi, Not):
        return FALSE if phi.arg.name in letter else TRUE
    if isinstance(phi, And):
        return mk_and(*(_progress(a, letter) for a in phi.args))
    if isinstance(phi, Or):
        return mk_or(*(_progress(a, letter) for a in phi.args))
    if isinstance(phi, Next):
        return phi.arg
    if isinstance(phi, Until):
        return mk_or(_progress(phi.right, letter),
                     mk_and(_progress(phi.left, letter), phi))
    if isinstance(phi, Eventually):
        return mk_or(_progress(phi.arg, letter), phi)
    raise TypeError(phi)


def _minimal(clauses) -> frozenset:
    """Drop contradictory clauses and clauses that contain another clause."""
    ok = []
    for c in clauses:
        names = {x.name for x in c if isinstance(x, Atom)}
        if any(isinstance(x, Not) and x.arg.name in names for x in c):
            continue
        ok.append(c)
    ok.sort(key=len)
    kept: list[frozenset] = []
    for c in ok:
        if not any(k <= c for k in kept):
            kept.append(c)
    return frozenset(kept)


@lru_cache(maxsize=1 << 16)
def _dnf(phi: Formula) -> frozenset:
    if isinstance(phi, Top):
        return frozenset([frozenset()])
    if isinstance(phi, Bottom):
        return frozenset()
    if isinstance(phi, Or):
        return _minimal(set().union(*(_dnf(a) for a in phi.args)))
    if isinstance(phi, And):
        acc = {frozenset()}
        for a in phi.args:
            acc = set(_minimal({x | y for x in acc for y in _dnf(a)}))
        return frozenset(acc)
    return frozenset([frozenset([phi])])


def canonical(phi: Formula) -> Formula:
    """Minimal disjunctive normal form over the temporal subformulas.

    Residuals are positive Boolean combinations of finitely many
    subformulas; the minimal monotone DNF is unique, which keeps the
    progression closure finite.
    """
    return mk_or(*(mk_and(*sorted(c)) for c in sorted(_dnf(phi), key=lambda c: sorted(c))))


def progress(phi: Formula, letter: Iterable[str]) -> Formula:
    """Residual obligation after reading one letter (a set of true atoms)."""
    return canonical(_progress(phi, frozenset(letter) & phi.atoms()))


# --- automata -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dfa:
    """Explicit DFA over the letters ``2^atoms``.

    ``delta[q, mask]`` is the successor of ``q`` on the letter whose bit ``b``
    is set iff ``atoms[b]`` holds.  Accepting locations are sinks.
    """

    atoms: tuple[str, ...]
    delta: np.ndarray
    initial: int
    accepting: frozenset[int]
    traps: frozenset[int] = frozenset()
    pre_sinks: frozenset[int] = frozenset()
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        d = np.ascontiguousarray(self.delta, dtype=np.int64)
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"q{i}" for i in range(d.shape[0])))
        if d.ndim != 2 or d.shape[1] != 1 << len(self.atoms):
            raise InvalidDfa("transition table does not match the alphabet size")
        if d.size and (d.min() < 0 or d.max() >= d.shape[0]):
            raise InvalidDfa("transition target out of range")
        if not 0 <= self.initial < d.shape[0]:
            raise InvalidDfa("initial location out of range")

    @property
    def num_locations(self) -> int:
        return self.delta.shape[0]

    def letter_mask(self, labels: Iterable[str]) -> int:
        labels = set(labels)
        return sum(1 << b for b, a in enumerate(self.atoms) if a in labels)

    def step(self, q: int, labels: Iterable[str]) -> int:
        return int(self.delta[q, self.letter_mask(labels)])

    def successors(self, q: int) -> set[int]:
        return set(self.delta[q].tolist())

    def run(self, word: Iterable[Iterable[str]], start: int | None = None) -> int:
        q = self.initial if start is None else start
        for letter in word:
            q = self.step(q, letter)
        return q

    def accepts(self, word) -> bool:
        return self.run(word) in self.accepting

    @property
    def done_locations(self) -> frozenset[int]:
        return self.accepting | self.traps

    def structural_key(self) -> tuple:
        return (self.atoms, self.delta.tobytes(), self.delta.shape, self.initial,
                tuple(sorted(self.accepting)), tuple(sorted(self.pre_sinks)))


def formula_to_dfa(phi: Formula, cap: int = DEFAULT_CLOSURE_CAP) -> Dfa:
    """Build the progression automaton of a normalised co-safe formula.

    Locations are the distinct residuals reachable from ``phi``; the single
    accepting location is ``true`` (when reachable).
    """
    atoms = tuple(sorted(phi.atoms()))
    letters = [frozenset(a for b, a in enumerate(atoms) if mask >> b & 1)
               for mask in range(1 << len(atoms))]
    phi = canonical(phi)
    index = {phi: 0}
    order = [phi]
    rows = []
    queue = deque([phi])
    while queue:
        cur = queue.popleft()
        row = []
        for letter in letters:
            nxt = canonical(_progress(cur, letter))
            if nxt not in index:
                if len(order) >= cap:
                    raise ClosureBlowup(f"more than {cap} locations")
                index[nxt] = len(order)
                order.append(nxt)
                queue.append(nxt)
            row.append(index[nxt])
        rows.append(row)
    delta = np.array(rows, dtype=np.int64).reshape(len(order), len(letters))
    accepting = frozenset(i for i, f in enumerate(order) if f == TRUE)
    dfa = Dfa(atoms, delta, 0, accepting, names=tuple(str(f) for f in order))
    _, traps, _ = classify_locations(dfa)
    return Dfa(atoms, delta, 0, accepting, traps, frozenset(), dfa.names)


def classify_locations(dfa: Dfa) -> tuple[frozenset[int], frozenset[int], frozenset[int]]:
    """Split locations into (accepting, traps, live) by backward reachability."""
    n = dfa.num_locations
    preds: list[set[int]] = [set() for _ in range(n)]
    for q in range(n):
        for q2 in set(dfa.delta[q].tolist()):
            preds[q2].add(q)
    reach = set(dfa.accepting)
    stack = list(reach)
    while stack:
        q = stack.pop()
        for p in preds[q]:
            if p not in reach:
                reach.add(p)
                stack.append(p)
    traps = frozenset(range(n)) - reach
    live = frozenset(reach) - dfa.accepting
    return frozenset(dfa.accepting), traps, live


def natural_pre_sinks(dfa: Dfa) -> frozenset[int]:
    return frozenset(q for q in range(dfa.num_locations)
                     if q not in dfa.accepting and dfa.successors(q) <= dfa.accepting)


def insert_pre_sinks(dfa: Dfa) -> Dfa:
    """Route every entry into an accepting location through a pre-sink.

    A pre-sink is a non-accepting location all of whose successors are
    accepting.  Edges from other non-accepting locations straight into an
    accepting location ``f`` are redirected to a fresh pre-sink that moves to
    ``f`` on every letter.  An accepting initial location gets a fresh
    pre-sink in front of it.  Acceptance is delayed by exactly one step.
    """
    for q in dfa.accepting:
        if dfa.successors(q) != {q}:
            raise InvalidDfa(f"accepting location {q} is not a sink")
    pre = set(natural_pre_sinks(dfa))
    rows = [list(r) for r in dfa.delta.tolist()]
    names = list(dfa.names)
    fresh: dict[int, int] = {}

    def pre_for(target):
        if target not in fresh:
            fresh[target] = len(rows)
            rows.append([target] * dfa.delta.shape[1])
            names.append(f"pre[{dfa.names[target]}]")
        return fresh[target]

    for q in range(dfa.num_locations):
        if q in dfa.accepting or q in pre:
            continue
        for m, q2 in enumerate(rows[q]):
            if q2 in dfa.accepting:
                rows[q][m] = pre_for(q2)
    initial = dfa.initial
    if initial in dfa.accepting:
        initial = pre_for(initial)
    pre |= set(fresh.values())
    out = Dfa(dfa.atoms, np.array(rows, dtype=np.int64).reshape(len(rows), -1),
              initial, dfa.accepting, frozenset(), frozenset(pre), tuple(names))
    _, traps, _ = classify_locations(out)
    return Dfa(out.atoms, out.delta, initial, out.accepting, traps, out.pre_sinks, out.names)


def with_deadline(dfa: Dfa, steps: int) -> Dfa:
    """Add a step bound: a live location not finished within ``steps`` letters fails.

    Live locations are unrolled into ``(location, letters read)`` pairs;
    accepting locations, pre-sinks and traps stay untimed.  A single fresh
    trap collects the expired runs.
    """
    if steps < 1:
        raise InvalidDfa("deadline must be at least one step")
    final = dfa.accepting | dfa.pre_sinks | dfa.traps
    index: dict[tuple[int, int], int] = {}
    rows: list[list[int]] = []
    names: list[str] = []

    def loc(q, t):
        key = (q, 0) if q in final else (q, t)
        if key not in index:
            index[key] = len(rows)
            rows.append([])
            names.append(dfa.names[q] if q in final else f"{dfa.names[q]}@{t}")
            work.append(key)
        return index[key]

    work: list[tuple[int, int]] = []
    expired = None
    start = loc(dfa.initial, 0)
    while work:
        q, t = work.pop()
        me = index[(q, t)]
        row = []
        for q2 in dfa.delta[q].tolist():
            if q in final or q2 in final:
                row.append(loc(q2, 0))
            elif t + 1 >= steps:
                if expired is None:
                    expired = len(rows)
                    rows.append([])
                    names.append("deadline")
                row.append(expired)
            else:
                row.append(loc(q2, t + 1))
        rows[me] = row
    if expired is not None:
        rows[expired] = [expired] * dfa.delta.shape[1]
    inv = {v: k for k, v in index.items()}
    accepting = frozenset(i for i, (q, _) in inv.items() if q in dfa.accepting)
    pre = frozenset(i for i, (q, _) in inv.items() if q in dfa.pre_sinks)
    out = Dfa(dfa.atoms, np.array(rows, dtype=np.int64), start, accepting,
              frozenset(), pre, tuple(names))
    _, traps, _ = classify_locations(out)
    return Dfa(out.atoms, out.delta, start, accepting, traps, pre, out.names)


def task_dfa(task: Formula | str | Dfa, deadline: int | None = None) -> Dfa:
    """Normalise any task description into a DFA with pre-sinks inserted."""
    if isinstance(task, str):
        task = parse_cosafe(task)
    dfa = task if isinstance(task, Dfa) else formula_to_dfa(task)
    dfa = insert_pre_sinks(dfa)
    if deadline is not None:
        dfa = with_deadline(dfa, deadline)
    return dfa


# --- JSON ---------------------------------------------------------------------

def dfa_to_json(dfa: Dfa) -> dict:
    """Export as ``{locations, initial, accepting, traps, preSinks, edges, atoms}``.

    Each edge guard lists the letters (exact sets of true atoms) that take
    the edge, i.e. a DNF of full minterms.
    """
    edges = []
    for q in range(dfa.num_locations):
        by_target: dict[int, list[list[str]]] = {}
        for m, q2 in enumerate(dfa.delta[q].tolist()):
            letter = [a for b, a in enumerate(dfa.atoms) if m >> b & 1]
            by_target.setdefault(q2, []).append(letter)
        for q2, guard in sorted(by_target.items()):
            edges.append({"from": q, "guard": guard, "to": q2})
    return {
        "atoms": list(dfa.atoms),
        "locations": list(range(dfa.num_locations)),
        "initial": dfa.initial,
        "accepting": sorted(dfa.accepting),
        "traps": sorted(dfa.traps),
        "preSinks": sorted(dfa.pre_sinks),
        "edges": edges,
    }


def dfa_from_json(obj: dict) -> Dfa:
    atoms = obj.get("atoms")
    if atoms is None:
        atoms = sorted({a for e in obj["edges"] for letter in e["guard"] for a in letter})
    atoms = tuple(atoms)
    locs = list(obj["locations"])
    pos = {q: i for i, q in enumerate(locs)}
    delta = np.full((len(locs), 1 << len(atoms)), -1, dtype=np.int64)
    bit = {a: b for b, a in enumerate(atoms)}
    for e in obj["edges"]:
        for letter in e["guard"]:
            try:
                mask = sum(1 << bit[a] for a in set(letter))
            except KeyError as exc:
                raise InvalidDfa(f"guard atom {exc} not in alphabet") from None
            src = pos[e["from"]]
            if delta[src, mask] not in (-1, pos[e["to"]]):
                raise InvalidDfa(f"nondeterministic edge from {e['from']}")
            delta[src, mask] = pos[e["to"]]
    if (delta < 0).any():
        raise InvalidDfa("transition function is not total")
    dfa = Dfa(atoms, delta, pos[obj["initial"]],
              frozenset(pos[q] for q in obj["accepting"]),
              pre_sinks=frozenset(pos[q] for q in obj.get("preSinks", [])))
    _, traps, _ = classify_locations(dfa)
    return Dfa(atoms, delta, dfa.initial, dfa.accepting, traps, dfa.pre_sinks)
