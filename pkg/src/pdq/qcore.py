"""Conjunctive queries with negation and order predicates.

Terms are variables or constants.  Constants carry a rank that fixes the
total order used by ``<``; two constants are equal when their names are.
Queries are immutable, normalized on construction (equalities are
substituted away, ``>`` is flipped to ``<``, duplicate atoms dropped).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union


class QueryError(ValueError):
    """Raised for malformed, unrestricted or unsatisfiable queries."""


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Const:
    name: str
    rank: tuple = field(default=(), compare=False, hash=False)

    def __str__(self) -> str:
        if re.fullmatch(r"-?\d+", self.name):
            return self.name
        return f"'{self.name}'"


Term = Union[Var, Const]


def term_key(t: Term):
    """Sort key placing constants (by rank) before variables (by name)."""
    if isinstance(t, Const):
        return (0, t.rank, t.name)
    return (1, (), t.name)


@dataclass(frozen=True)
class Atom:
    rel: str
    args: Tuple[Term, ...]
    neg: bool = False

    def __str__(self) -> str:
        inner = ",".join(str(a) for a in self.args)
        return f"{'!' if self.neg else ''}{self.rel}({inner})"

    @property
    def vars(self) -> Tuple[Var, ...]:
        seen: Dict[Var, None] = {}
        for a in self.args:
            if isinstance(a, Var):
                seen[a] = None
        return tuple(seen)

    def subst(self, theta: Mapping[Var, Term]) -> "Atom":
        return Atom(self.rel, tuple(theta.get(a, a) if isinstance(a, Var) else a for a in self.args), self.neg)

    @property
    def is_ground(self) -> bool:
        return all(isinstance(a, Const) for a in self.args)


@dataclass(frozen=True)
class Pred:
    """``left op right`` with op in {'!=', '<'}; equalities never survive normalization."""

    op: str
    left: Term
    right: Term

    def __str__(self) -> str:
        return f"{self.left}{self.op}{self.right}"

    def subst(self, theta: Mapping[Var, Term]) -> "Pred":
        l = theta.get(self.left, self.left) if isinstance(self.left, Var) else self.left
        r = theta.get(self.right, self.right) if isinstance(self.right, Var) else self.right
        return make_pred(self.op, l, r)

    @property
    def vars(self) -> Tuple[Var, ...]:
        return tuple(t for t in (self.left, self.right) if isinstance(t, Var))


def make_pred(op: str, left: Term, right: Term) -> Pred:
    if op == ">":
        return Pred("<", right, left)
    if op == "!=" and term_key(right) < term_key(left):
        left, right = right, left
    return Pred(op, left, right)


def const_lt(a: Const, b: Const) -> bool:
    return (a.rank, a.name) < (b.rank, b.name)


# ---------------------------------------------------------------------------
# order constraints


class Constraints:
    """Closure of a set of ``<`` / ``!=`` facts over a dense total order."""

    def __init__(self, preds: Iterable[Pred]):
        self.preds = tuple(preds)
        nodes: Dict[Term, None] = {}
        for p in self.preds:
            nodes[p.left] = None
            nodes[p.right] = None
        self.nodes = list(nodes)
        consts = sorted((t for t in self.nodes if isinstance(t, Const)), key=lambda c: (c.rank, c.name))
        succ: Dict[Term, set] = {t: set() for t in self.nodes}
        for p in self.preds:
            if p.op == "<":
                succ[p.left].add(p.right)
        for a, b in zip(consts, consts[1:]):
            succ[a].add(b)
        # transitive closure; these sets are tiny
        reach: Dict[Term, set] = {}
        for t in self.nodes:
            seen = set()
            stack = list(succ[t])
            while stack:
                u = stack.pop()
                if u in seen:
                    continue
                seen.add(u)
                stack.extend(succ[u])
            reach[t] = seen
        self.reach = reach
        self.neq = {(p.left, p.right) for p in self.preds if p.op == "!="}

    def consistent(self) -> bool:
        for t in self.nodes:
            if t in self.reach[t]:
                return False
        for p in self.preds:
            if p.left == p.right:
                return False
            if isinstance(p.left, Const) and isinstance(p.right, Const):
                if p.op == "<" and not const_lt(p.left, p.right):
                    return False
        return True

    def lt(self, a: Term, b: Term) -> bool:
        if isinstance(a, Const) and isinstance(b, Const):
            return const_lt(a, b)
        return b in self.reach.get(a, ())

    def neq_(self, a: Term, b: Term) -> bool:
        if a == b:
            return False
        if isinstance(a, Const) and isinstance(b, Const):
            return True
        if (a, b) in self.neq or (b, a) in self.neq:
            return True
        return self.lt(a, b) or self.lt(b, a)

    def entails(self, p: Pred) -> bool:
        if p.op == "<":
            return self.lt(p.left, p.right)
        return self.neq_(p.left, p.right)


def preds_satisfiable(preds: Iterable[Pred]) -> bool:
    return Constraints(preds).consistent()


# ---------------------------------------------------------------------------
# queries


class _UnionFind:
    def __init__(self):
        self.parent: Dict[Term, Term] = {}

    def find(self, t: Term) -> Term:
        p = self.parent.get(t, t)
        if p == t:
            return t
        r = self.find(p)
        self.parent[t] = r
        return r

    def union(self, a: Term, b: Term) -> bool:
        """Merge; returns False on a constant clash.  Constants win as representatives."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return True
        if isinstance(ra, Const) and isinstance(rb, Const):
            return False
        if isinstance(ra, Const):
            self.parent[rb] = ra
        elif isinstance(rb, Const):
            self.parent[ra] = rb
        elif rb.name < ra.name:
            self.parent[ra] = rb
        else:
            self.parent[rb] = ra
        return True


class Unsatisfiable(QueryError):
    pass


@dataclass(frozen=True)
class Query:
    atoms: Tuple[Atom, ...]
    preds: frozenset = frozenset()

    # -- construction -------------------------------------------------------

    @staticmethod
    def build(atoms: Iterable[Atom], preds: Iterable[Pred] = (), eqs: Iterable[Tuple[Term, Term]] = ()) -> "Query":
        """Normalize: substitute equalities, drop duplicate atoms and true ground predicates.

        Raises :class:`Unsatisfiable` on a constant clash or inconsistent predicates.
        """
        atoms = list(atoms)
        preds = list(preds)
        uf = _UnionFind()
        for a, b in eqs:
            if not uf.union(a, b):
                raise Unsatisfiable(f"{a} = {b}")
        theta = {}
        for at in atoms:
            for t in at.args:
                if isinstance(t, Var):
                    r = uf.find(t)
                    if r != t:
                        theta[t] = r
        for p in preds:
            for t in p.vars:
                r = uf.find(t)
                if r != t:
                    theta[t] = r
        out_atoms: Dict[Atom, None] = {}
        for at in atoms:
            out_atoms[at.subst(theta)] = None
        out_preds = set()
        for p in preds:
            p2 = p.subst(theta)
            if isinstance(p2.left, Const) and isinstance(p2.right, Const):
                if p2.op == "!=" and p2.left != p2.right:
                    continue
                if p2.op == "<" and const_lt(p2.left, p2.right):
                    continue
                raise Unsatisfiable(str(p2))
            if p2.left == p2.right:
                raise Unsatisfiable(str(p2))
            out_preds.add(p2)
        q = Query(tuple(out_atoms), frozenset(out_preds))
        if not q.constraints.consistent():
            raise Unsatisfiable(str(q))
        positive = {(a.rel, a.args) for a in q.atoms if not a.neg}
        for a in q.atoms:
            if a.neg and (a.rel, a.args) in positive:
                raise Unsatisfiable(f"{a} contradicts its positive copy")
        return q

    @staticmethod
    def try_build(atoms, preds=(), eqs=()) -> Optional["Query"]:
        try:
            return Query.build(atoms, preds, eqs)
        except Unsatisfiable:
            return None

    # -- accessors ----------------------------------------------------------

    @cached_property
    def constraints(self) -> Constraints:
        return Constraints(self.preds)

    @cached_property
    def vars(self) -> Tuple[Var, ...]:
        seen: Dict[Var, None] = {}
        for a in self.atoms:
            for v in a.vars:
                seen[v] = None
        return tuple(seen)

    @cached_property
    def consts(self) -> Tuple[Const, ...]:
        seen: Dict[Const, None] = {}
        for a in self.atoms:
            for t in a.args:
                if isinstance(t, Const):
                    seen[t] = None
        for p in self.preds:
            for t in (p.left, p.right):
                if isinstance(t, Const):
                    seen[t] = None
        return tuple(seen)

    @property
    def positive(self) -> Tuple[Atom, ...]:
        return tuple(a for a in self.atoms if not a.neg)

    @property
    def negative(self) -> Tuple[Atom, ...]:
        return tuple(a for a in self.atoms if a.neg)

    @property
    def is_ground(self) -> bool:
        return not self.vars

    @cached_property
    def relations(self) -> Tuple[str, ...]:
        return tuple(dict.fromkeys(a.rel for a in self.atoms))

    def has_self_join(self) -> bool:
        rels = [a.rel for a in self.atoms]
        return len(rels) != len(set(rels))

    def __str__(self) -> str:
        parts = [str(a) for a in self.atoms]
        parts += sorted(str(p) for p in self.preds)
        return ", ".join(parts)

    def __repr__(self) -> str:
        return f"Query({str(self)!r})"

    # -- transformations ----------------------------------------------------

    def subst(self, theta: Mapping[Var, Term]) -> "Query":
        return Query.build([a.subst(theta) for a in self.atoms], [p.subst(theta) for p in self.preds])

    def with_preds(self, extra: Iterable[Pred]) -> "Query":
        return Query.build(self.atoms, list(self.preds) + list(extra))

    def conjoin(self, other: "Query") -> "Query":
        return Query.build(self.atoms + other.atoms, list(self.preds) + list(other.preds))

    def rename(self, mapping: Mapping[Var, Var]) -> "Query":
        return Query(tuple(a.subst(mapping) for a in self.atoms), frozenset(p.subst(mapping) for p in self.preds))

    def rename_apart(self, taken: Iterable[Var], tag: str = "'") -> "Query":
        """Fresh copy whose variables avoid ``taken``."""
        taken_names = {v.name for v in taken}
        mapping = {}
        for v in self.vars:
            name = v.name
            while name in taken_names:
                name = name + tag
            mapping[v] = Var(name)
            taken_names.add(name)
        return self.rename(mapping)

    def rebind(self, rank: Mapping[str, tuple]) -> "Query":
        """Re-rank constants according to ``rank`` (name -> rank)."""
        def fix(t):
            if isinstance(t, Const):
                return Const(t.name, rank.get(t.name, t.rank))
            return t

        atoms = tuple(Atom(a.rel, tuple(fix(t) for t in a.args), a.neg) for a in self.atoms)
        preds = [Pred(p.op, fix(p.left), fix(p.right)) for p in self.preds]
        return Query.build(atoms, preds)

    def map_consts(self, mapping: Mapping[str, Const]) -> "Query":
        """Replace constants by name; unmapped constants stay."""
        def fix(t):
            return mapping.get(t.name, t) if isinstance(t, Const) else t

        atoms = [Atom(a.rel, tuple(fix(t) for t in a.args), a.neg) for a in self.atoms]
        preds = [make_pred(p.op, fix(p.left), fix(p.right)) for p in self.preds]
        return Query.build(atoms, preds)

    def restrict(self, atoms: Sequence[Atom]) -> "Query":
        """Sub-query on ``atoms`` keeping only predicates over its variables."""
        vs = set()
        for a in atoms:
            vs.update(a.vars)
        preds = [p for p in self.preds if set(p.vars) <= vs]
        return Query(tuple(atoms), frozenset(preds))


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<neq>!=|<>|≠)|(?P<le><=)|(?P<ge>>=)|(?P<op>[(),=<>!])|(?P<num>-?\d+)|(?P<str>'[^']*')"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*'*))"
)


def _tokens(text: str) -> List[Tuple[str, str]]:
    out = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise QueryError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return out


def default_rank(name: str, seen: Dict[str, int]) -> tuple:
    if re.fullmatch(r"-?\d+", name):
        return (0, int(name))
    return (1, seen.setdefault(name, len(seen)))


def strip_comments(text: str) -> str:
    return "\n".join(line.split("#", 1)[0] for line in text.splitlines())


def parse_query(text: str, rank: Optional[Mapping[str, tuple]] = None, check: bool = True) -> Query:
    """Parse ``R(x,y), !S(y,'a'), x<y`` into a normalized :class:`Query`.

    Lowercase identifiers are variables, integers and quoted names constants.
    ``rank`` fixes the order of named constants; by default integers come
    first in numeric order, then names in order of first appearance.
    """
    toks = _tokens(strip_comments(text))
    seen: Dict[str, int] = {}
    i = 0

    def peek(k=0):
        return toks[i + k] if i + k < len(toks) else (None, None)

    def take(kind=None, val=None):
        nonlocal i
        if i >= len(toks):
            raise QueryError("unexpected end of query")
        k, v = toks[i]
        if (kind and k != kind) or (val and v != val):
            raise QueryError(f"expected {val or kind}, got {v!r}")
        i += 1
        return v

    def term():
        k, v = peek()
        if k == "num":
            take()
            return Const(v, (rank or {}).get(v) or default_rank(v, seen))
        if k == "str":
            take()
            name = v[1:-1]
            return Const(name, (rank or {}).get(name) or default_rank(name, seen))
        if k == "ident":
            take()
            if not v[0].islower() and v[0] != "_":
                raise QueryError(f"{v!r} is not a variable (variables start lowercase)")
            return Var(v)
        raise QueryError(f"expected a term, got {v!r}")

    atoms: List[Atom] = []
    preds: List[Pred] = []
    eqs: List[Tuple[Term, Term]] = []
    arity: Dict[str, int] = {}
    if not toks:
        raise QueryError("empty query")
    while True:
        k, v = peek()
        neg = False
        if k == "op" and v == "!":
            take()
            neg = True
            k, v = peek()
        if k == "ident" and peek(1) == ("op", "(") and (v[0].isupper() or neg):
            rel = take()
            take("op", "(")
            args = []
            if peek() != ("op", ")"):
                args.append(term())
                while peek() == ("op", ","):
                    take()
                    args.append(term())
            take("op", ")")
            if arity.setdefault(rel, len(args)) != len(args):
                raise QueryError(f"relation {rel} used with arities {arity[rel]} and {len(args)}")
            atoms.append(Atom(rel, tuple(args), neg))
        elif neg:
            raise QueryError("'!' must precede an atom")
        else:
            left = term()
            k2, op = peek()
            if k2 not in ("op", "neq", "le", "ge") or op not in ("=", "<", ">", "!=", "<>", "≠"):
                raise QueryError(f"expected a comparison after {left}, got {op!r}")
            take()
            right = term()
            if op == "=":
                eqs.append((left, right))
            elif op in ("!=", "<>", "≠"):
                preds.append(make_pred("!=", left, right))
            else:
                preds.append(make_pred(op, left, right))
        if peek() == (None, None):
            break
        take("op", ",")
    if not any(not a.neg for a in atoms):
        raise QueryError("query needs at least one positive atom")
    if check:
        _check_restricted(atoms, preds, eqs)
    try:
        return Query.build(atoms, preds, eqs)
    except Unsatisfiable as e:
        raise QueryError(f"unsatisfiable query: {e}") from None


def _check_restricted(atoms, preds, eqs):
    pos_vars = set()
    for a in atoms:
        if not a.neg:
            pos_vars.update(a.vars)
    for a in atoms:
        for v in a.vars:
            if v not in pos_vars:
                raise QueryError(f"variable {v} is not range-restricted")
    together = set()
    for a in atoms:
        for u in a.vars:
            for w in a.vars:
                together.add((u, w))
    comparisons = [(p.left, p.right) for p in preds] + list(eqs)
    for l, r in comparisons:
        for t in (l, r):
            if isinstance(t, Var) and t not in pos_vars:
                raise QueryError(f"variable {t} in a predicate is not range-restricted")
        if isinstance(l, Var) and isinstance(r, Var) and l != r and (l, r) not in together:
            raise QueryError(f"predicate on {l},{r}: variables never co-occur in a subgoal")


# ---------------------------------------------------------------------------
# unification


@dataclass(frozen=True)
class Unifier:
    theta: Dict[Var, Term]
    strict: bool
    left_vars: Tuple[Var, ...]
    right_vars: Tuple[Var, ...]

    def image(self, t: Term) -> Term:
        return self.theta.get(t, t) if isinstance(t, Var) else t

    @property
    def pairs(self) -> frozenset:
        """Set representation {(x, y) | theta(x) = theta(y)}."""
        return frozenset((x, y) for x in self.left_vars for y in self.right_vars if self.image(x) == self.image(y))


def mgu(g1: Atom, g2: Atom, q1: Optional[Query] = None, q2: Optional[Query] = None) -> Optional[Unifier]:
    """Most general unifier of two atoms with disjoint variables.

    Polarity is ignored.  Returns None on a relation mismatch, a constant
    clash, or when the unified predicates of ``q1`` and ``q2`` conflict.
    """
    if g1.rel != g2.rel or len(g1.args) != len(g2.args):
        return None
    uf = _UnionFind()
    for a, b in zip(g1.args, g2.args):
        if not uf.union(a, b):
            return None
    lv, rv = g1.vars, g2.vars
    theta = {v: uf.find(v) for v in lv + rv}
    preds = []
    for q in (q1, q2):
        if q is not None:
            for p in q.preds:
                p2 = p.subst(theta)
                if p2.left == p2.right:
                    return None
                preds.append(p2)
    if preds and not Constraints(preds).consistent():
        return None
    strict = True
    for side in (lv, rv):
        imgs = [theta[v] for v in side]
        if any(isinstance(t, Const) for t in imgs) or len(set(imgs)) != len(imgs):
            strict = False
    return Unifier(theta, strict, lv, rv)


# ---------------------------------------------------------------------------
# homomorphisms


def homomorphisms(src: Query, dst: Query, fixed: Optional[Mapping[Var, Term]] = None) -> Iterator[Dict[Var, Term]]:
    """All maps h: Vars(src) -> Terms(dst) sending atoms onto atoms of the same polarity.

    Predicates of ``src`` must map to predicates entailed by those of ``dst``.
    """
    by_rel: Dict[Tuple[str, bool], List[Atom]] = {}
    for a in dst.atoms:
        by_rel.setdefault((a.rel, a.neg), []).append(a)
    atoms = sorted(src.atoms, key=lambda a: (len(by_rel.get((a.rel, a.neg), ())), -len(a.vars)))
    if any((a.rel, a.neg) not in by_rel for a in atoms):
        return
    cons = dst.constraints
    src_preds = list(src.preds)

    def check_preds(h) -> bool:
        for p in src_preds:
            l = h.get(p.left, p.left) if isinstance(p.left, Var) else p.left
            r = h.get(p.right, p.right) if isinstance(p.right, Var) else p.right
            if not cons.entails(make_pred(p.op, l, r)):
                return False
        return True

    def extend(idx: int, h: Dict[Var, Term]):
        if idx == len(atoms):
            if check_preds(h):
                yield dict(h)
            return
        g = atoms[idx]
        for cand in by_rel[(g.rel, g.neg)]:
            added = []
            ok = True
            for s, t in zip(g.args, cand.args):
                if isinstance(s, Const):
                    if s != t:
                        ok = False
                        break
                else:
                    cur = h.get(s)
                    if cur is None:
                        h[s] = t
                        added.append(s)
                    elif cur != t:
                        ok = False
                        break
            if ok:
                yield from extend(idx + 1, h)
            for s in added:
                del h[s]

    yield from extend(0, dict(fixed or {}))


def find_homomorphism(src: Query, dst: Query, fixed=None) -> Optional[Dict[Var, Term]]:
    return next(homomorphisms(src, dst, fixed), None)


def contained_in(q1: Query, q2: Query) -> bool:
    """Sound test for q1 => q2: a homomorphism from q2 into q1."""
    return find_homomorphism(q2, q1) is not None


def equivalent(q1: Query, q2: Query) -> bool:
    return contained_in(q1, q2) and contained_in(q2, q1)


def minimize(q: Query, keep: Iterable[Var] = ()) -> Query:
    """Core of ``q``: repeatedly fold onto a proper subset of its atoms.

    Variables in ``keep`` are treated as free and never moved.
    """
    fixed = {v: v for v in keep}
    changed = True
    while changed:
        changed = False
        for g in q.atoms:
            rest = Query(tuple(a for a in q.atoms if a != g), q.preds)
            if any(v not in rest.vars for v in fixed):
                continue
            h = find_homomorphism(q, rest, fixed)
            if h is not None:
                q = Query.build([a.subst(h) for a in q.atoms], [p.subst(h) for p in q.preds])
                changed = True
                break
    return _drop_implied_preds(q)


def _drop_implied_preds(q: Query) -> Query:
    """Remove predicates mentioning vanished variables or implied by the rest."""
    vs = set(q.vars)
    keep = [p for p in q.preds if set(p.vars) <= vs]
    out = list(keep)
    for p in sorted(keep, key=str):
        others = [o for o in out if o != p]
        if Constraints(others).entails(p):
            out = others
    if len(out) == len(q.preds):
        return q
    return Query(q.atoms, frozenset(out))


def components(q: Query) -> List[Query]:
    """Connected components through shared variables; each ground atom stands alone."""
    atoms = list(q.atoms)
    parent = list(range(len(atoms)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: Dict[Var, int] = {}
    for i, a in enumerate(atoms):
        for v in a.vars:
            if v in owner:
                parent[find(i)] = find(owner[v])
            else:
                owner[v] = i
    groups: Dict[int, List[Atom]] = {}
    for i, a in enumerate(atoms):
        groups.setdefault(find(i), []).append(a)
    return [q.restrict(g) for g in groups.values()]


def alpha_key(q: Query) -> tuple:
    """Cheap invariant used to bucket queries before an equivalence test."""
    return (
        tuple(sorted((a.rel, a.neg, len(a.args), sum(isinstance(t, Const) for t in a.args)) for a in q.atoms)),
        tuple(sorted(p.op for p in q.preds)),
        len(q.vars),
    )


def ground_value(q: Query) -> bool:
    """Truth of a variable-free query's predicates."""
    return q.constraints.consistent()


__all__ = [
    "Atom", "Const", "Constraints", "Pred", "Query", "QueryError", "Term", "Unifier", "Unsatisfiable", "Var",
    "alpha_key", "components", "contained_in", "equivalent", "find_homomorphism", "homomorphisms",
    "make_pred", "mgu", "minimize", "parse_query", "preds_satisfiable", "term_key", "strip_comments",
]
