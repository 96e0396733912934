"""Hierarchical joins, closures, erasers and the PTIME / #P-hard classifier."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .hiercov import (
    Coverage, DEFAULT_COVERAGE_CAP, Hierarchy, Inversion, RootFailure, find_inversion, is_hierarchical,
    n_coefficient, n_table, unary_coverage,
)
from .qcore import Query, Var, equivalent, find_homomorphism, mgu, minimize, parse_query

PTIME_NO_SELF_JOIN = "PTIME(no-self-join)"
PTIME_INVERSION_FREE = "PTIME(inversion-free)"
PTIME_ERASER = "PTIME(eraser-general)"
HARD = "SharpPHard"

MAX_CLOSURE = 96


class ClosureTooLarge(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# hierarchical joins over full expansion variables


def _upward_closed(sub: FrozenSet, theta: FrozenSet, h1: Hierarchy, h2: Hierarchy) -> bool:
    for x, y in sub:
        for x2, y2 in theta:
            if (h1.le(x, x2) or h2.le(y, y2)) and (x2, y2) not in sub:
                return False
    return True


def hierarchical_unifier(f1: Query, f2: Query, theta: FrozenSet[Tuple[Var, Var]],
                         x1: Sequence[Var] = (), x2: Sequence[Var] = ()) -> FrozenSet[Tuple[Var, Var]]:
    """θ_u: the maximal subset of θ over expansion variables, upward closed, with a hierarchical join.

    ``f2`` must already be renamed apart from ``f1``.  Expansion variables
    default to all variables.  Candidates are tried largest first; the result
    is asserted unique among maximal candidates.
    """
    x1 = set(x1 or f1.vars)
    x2 = set(x2 or f2.vars)
    h1, h2 = Hierarchy(f1), Hierarchy(f2)
    base = [(a, b) for a, b in theta if a in x1 and b in x2]
    best: List[FrozenSet] = []
    for k in range(len(base), 0, -1):
        for combo in itertools.combinations(base, k):
            sub = frozenset(combo)
            if not _upward_closed(sub, frozenset(theta), h1, h2):
                continue
            jq = join_query(f1, f2, sub)
            if jq is not None and is_hierarchical(jq):
                best.append(sub)
        if best:
            break
    if not best:
        return frozenset()
    assert len(best) == 1 or all(b <= best[0] or best[0] <= b for b in best), "hierarchical unifier not unique"
    return best[0]


def join_query(f1: Query, f2: Query, pairs) -> Optional[Query]:
    """θ^R(f1, f2): both factors with the paired variables equated."""
    return Query.try_build(f1.atoms + f2.atoms, list(f1.preds | f2.preds), list(pairs))


@dataclass
class Join:
    left: int
    right: int
    pairs: FrozenSet[Tuple[Var, Var]]
    query: Query


def hierarchical_joins(f1: Query, f2: Query) -> List[Join]:
    """All distinct hierarchical joins of two factors under full expansion variables."""
    g = f2.rename_apart(f1.vars, "'")
    out: Dict[FrozenSet, Join] = {}
    for a in f1.atoms:
        for b in g.atoms:
            u = mgu(a, b, f1, g)
            if u is None or not u.strict:
                continue
            tu = hierarchical_unifier(f1, g, u.pairs)
            if tu and tu not in out:
                jq = join_query(f1, g, tu)
                if jq is not None:
                    out[tu] = Join(0, 1, tu, minimize(jq))
    return list(out.values())


def hierarchical_closure(cov: Coverage, max_members: int = MAX_CLOSURE) -> Tuple[List[Query], List[FrozenSet[int]]]:
    """Fixed point of hierarchical joins over full expansion variables.

    Returns the member queries and, per member, the set of original factors it joins.
    Members are deduplicated by equivalence after minimization.
    """
    members: List[Query] = list(cov.factors)
    fsets: List[FrozenSet[int]] = [frozenset([i]) for i in range(len(members))]
    done: set = set()
    changed = True
    while changed:
        changed = False
        n = len(members)
        for i in range(n):
            for j in range(i, n):
                if (i, j) in done:
                    continue
                done.add((i, j))
                for jn in hierarchical_joins(members[i], members[j]):
                    q = jn.query
                    if any(equivalent(q, m) for m in members):
                        continue
                    members.append(q)
                    fsets.append(fsets[i] | fsets[j])
                    changed = True
                    if len(members) > max_members:
                        raise ClosureTooLarge(f"closure exceeds {max_members} members")
    return members, fsets


# ---------------------------------------------------------------------------
# root closure (one expansion variable per factor)


@dataclass
class Member:
    query: Query
    root: Optional[Var]
    factors: FrozenSet[int]
    parents: Optional[Tuple[int, int]] = None
    inversion: Optional[Inversion] = None

    @property
    def inversion_free(self) -> bool:
        return self.inversion is None

    def describe(self) -> str:
        r = f" [root {self.root}]" if self.root is not None else ""
        return f"{self.query}{r}"


def _at_root(q: Query, r: Var, target: Var, avoid) -> Query:
    """Copy of ``q`` renamed apart from ``avoid`` with ``r`` renamed to ``target``."""
    g = q.rename_apart(set(avoid) | {target}, "'")
    ren = dict(zip(q.vars, g.vars))
    return g.rename({ren[r]: target})


def root_equivalent(q1: Query, r1: Var, q2: Query, r2: Var) -> bool:
    g = _at_root(q2, r2, r1, q1.vars)
    fixed = {r1: r1}
    return find_homomorphism(q1, g, fixed) is not None and find_homomorphism(g, q1, fixed) is not None


def root_join(a: Member, b: Member) -> Optional[Query]:
    """a(r) ∧ b(r) if some subgoals of the two unify, else None."""
    qa, qb = a.query, b.query
    g = qb.rename_apart(qa.vars, "'")
    if not any(mgu(x, y, qa, g) is not None for x in qa.atoms for y in g.atoms):
        return None
    g = _at_root(qb, b.root, a.root, qa.vars)
    jq = Query.try_build(qa.atoms + g.atoms, list(qa.preds | g.preds))
    if jq is None:
        return None
    return minimize(jq, keep=(a.root,))


@dataclass
class RootClosure:
    coverage: Coverage
    members: List[Member]
    relation: Dict[Tuple[int, int], Tuple[str, Optional[int]]] = field(default_factory=dict)
    fstar: List[int] = field(default_factory=list)

    def status(self, i: int, j: int) -> Tuple[str, Optional[int]]:
        """('indep', None), ('trivial', k) where member k implies the other, or ('join', member)."""
        if i == j:
            return ("trivial", i)
        return self.relation.get((min(i, j), max(i, j)), ("indep", None))

    def up_test(self):
        """UP(C*) membership for index sets over F*, encoded as bitmasks over positions in ``fstar``."""
        covers = [frozenset(c) for c in self.coverage.covers]
        fs = [self.members[k].factors for k in self.fstar]

        def in_up(mask: int) -> bool:
            for c in covers:
                got = set()
                for pos, f in enumerate(fs):
                    if mask >> pos & 1 and f <= c:
                        got |= f
                if got == c:
                    return True
            return False

        return in_up

    def n_star(self) -> List[int]:
        return n_table(len(self.fstar), self.up_test())

    def describe(self) -> dict:
        return {
            "members": [m.describe() for m in self.members],
            "factors_of": [sorted(m.factors) for m in self.members],
            "fstar": self.fstar,
            "joins": {f"{i},{j}": list(v) for (i, j), v in sorted(self.relation.items())},
        }


def root_closure(cov: Coverage, max_members: int = MAX_CLOSURE, check_inversions: bool = True) -> RootClosure:
    """Close a unary coverage under joins at the roots and record pairwise relations."""
    members = [Member(f, xs[0] if xs else None, frozenset([i])) for i, (f, xs) in enumerate(zip(cov.factors, cov.xvars))]
    relation: Dict[Tuple[int, int], Tuple[str, Optional[int]]] = {}
    done: set = set()
    changed = True
    while changed:
        changed = False
        n = len(members)
        for i in range(n):
            for j in range(i + 1, n):
                if (i, j) in done:
                    continue
                done.add((i, j))
                a, b = members[i], members[j]
                if a.root is None or b.root is None:
                    continue
                jq = root_join(a, b)
                if jq is None:
                    continue
                if root_equivalent(jq, a.root, a.query, a.root):
                    relation[(i, j)] = ("trivial", i)
                    continue
                if root_equivalent(jq, a.root, b.query, b.root):
                    relation[(i, j)] = ("trivial", j)
                    continue
                k = next((k for k, m in enumerate(members)
                          if m.root is not None and root_equivalent(jq, a.root, m.query, m.root)), None)
                if k is None:
                    members.append(Member(jq, a.root, a.factors | b.factors, (i, j)))
                    k = len(members) - 1
                    changed = True
                    if len(members) > max_members:
                        raise ClosureTooLarge(f"root closure exceeds {max_members} members")
                relation[(i, j)] = ("join", k)
    nf = len(cov.factors)
    for k, m in enumerate(members):
        if k >= nf and check_inversions:
            m.inversion = find_inversion(m.query)
    fstar = [k for k, m in enumerate(members) if k < nf or m.inversion_free]
    return RootClosure(cov, members, relation, fstar)


# ---------------------------------------------------------------------------
# erasers


def find_eraser(jq: Query, candidates: Sequence[int], cand_queries: Sequence[Query], n_of, base: int,
                nbits: int, root: Optional[Var] = None, cand_roots: Sequence[Optional[Var]] = (),
                max_size: int = 3) -> Optional[List[int]]:
    """Smallest E among ``candidates`` with a homomorphism from each member into ``jq``
    and N(σ ∪ base) = N(σ ∪ base ∪ E) for every σ.

    ``n_of(mask)`` evaluates N on bitmasks over ``nbits`` positions; ``base``
    holds the joined pair.  With ``root`` given, homomorphisms must fix the root.
    """
    ok = []
    for pos, q in zip(candidates, cand_queries):
        fixed = None
        if root is not None and cand_roots and cand_roots[candidates.index(pos)] is not None:
            q = _at_root(q, cand_roots[candidates.index(pos)], root, jq.vars)
            fixed = {root: root}
        if find_homomorphism(q, jq, fixed) is not None:
            ok.append(pos)
    full = (1 << nbits) - 1
    for size in range(1, min(max_size, len(ok)) + 1):
        for combo in itertools.combinations(ok, size):
            emask = sum(1 << p for p in combo)
            if all(n_of(s | base) == n_of(s | base | emask) for s in _all_masks(full)):
                return list(combo)
    return None


def _all_masks(full: int):
    return range(full + 1)


@dataclass
class EraserReport:
    left: str
    right: str
    join: str
    eraser: Optional[List[str]]
    factor_eraser: Optional[List[str]] = None

    def as_dict(self) -> dict:
        return {"join": self.join, "parents": [self.left, self.right], "eraser_factors": self.eraser,
                "factor_level_eraser": self.factor_eraser}


def closure_erasers(rc: RootClosure) -> List[EraserReport]:
    """Check every non-trivial join between F* members that fell out of F*."""
    fpos = {k: p for p, k in enumerate(rc.fstar)}
    nstar = None
    reports = []
    cov = rc.coverage
    nf = len(cov.factors)
    for (i, j), (kind, k) in sorted(rc.relation.items()):
        if kind != "join" or i not in fpos or j not in fpos or k in fpos:
            continue
        if nstar is None:
            nstar = rc.n_star()
        jm = rc.members[k]
        base = (1 << fpos[i]) | (1 << fpos[j])
        cand = [p for p in range(len(rc.fstar)) if not base >> p & 1]
        er = find_eraser(jm.query, cand, [rc.members[rc.fstar[p]].query for p in cand],
                         lambda m: nstar[m], base, len(rc.fstar), root=jm.root,
                         cand_roots=[rc.members[rc.fstar[p]].root for p in cand])
        # factor-level check over the original coverage, reported alongside
        fbase = 0
        for f in rc.members[i].factors | rc.members[j].factors:
            fbase |= 1 << f
        covers = tuple(sum(1 << x for x in c) for c in cov.covers)
        fcand = [f for f in range(nf) if not fbase >> f & 1]
        fer = find_eraser(jm.query, fcand, [cov.factors[f] for f in fcand],
                          lambda m: n_coefficient(covers, m), fbase, nf)
        reports.append(EraserReport(
            rc.members[i].describe(), rc.members[j].describe(), jm.describe(),
            None if er is None else [rc.members[rc.fstar[p]].describe() for p in er],
            None if fer is None else [str(cov.factors[f]) for f in fer],
        ))
    return reports


def closure_covers(factors_of: Sequence[FrozenSet[int]], covers: Sequence[FrozenSet[int]]) -> List[FrozenSet[int]]:
    """C*: sets of closure members whose factor sets union to a cover of C."""
    targets = {frozenset(c) for c in covers}
    out = []
    n = len(factors_of)
    for mask in range(1, 1 << n):
        chosen = [i for i in range(n) if mask >> i & 1]
        u = frozenset().union(*(factors_of[i] for i in chosen))
        if u in targets:
            out.append(frozenset(chosen))
    return out


def make_hk(k: int) -> Query:
    """H_k: R(x),S0(x,y), then S_{i-1}(u_i,v_i),S_i(u_i,v_i) for i=1..k, then S_k(x',y'),T(y')."""
    if k < 0:
        raise ValueError("k must be non-negative")
    lines = ["R(x),S0(x,y)"]
    for i in range(1, k + 1):
        lines.append(f"S{i - 1}(u{i},v{i}),S{i}(u{i},v{i})")
    lines.append(f"S{k}(x',y'),T(y')")
    return parse_query(",".join(lines))


# ---------------------------------------------------------------------------
# classifier


@dataclass
class Verdict:
    cls: str
    method: str
    query: Query
    minimized: Query
    witness: Optional[dict] = None
    erasers: List[EraserReport] = field(default_factory=list)
    coverage: Optional[Coverage] = None
    closure: Optional[RootClosure] = None

    @property
    def ptime(self) -> bool:
        return self.cls != HARD

    def as_dict(self) -> dict:
        return {
            "class": self.cls,
            "method": self.method,
            "query": str(self.query),
            "minimized": str(self.minimized),
            "witness_path": self.witness,
            "erasers": [e.as_dict() for e in self.erasers],
        }


def _inversion_witness(inv: Inversion) -> dict:
    return {"kind": "inversion", "path": inv.describe()}


def classify(q: Query, cap: int = DEFAULT_COVERAGE_CAP) -> Verdict:
    """Decide PTIME versus #P-hard.

    Non-hierarchical queries are hard.  Hierarchical queries without self-joins
    or without inversions are PTIME.  Otherwise the query needs a unary
    coverage whose root closure has an eraser for every join that has an
    inversion; failing either, it is hard.
    """
    m = minimize(q)
    bad = Hierarchy(m).violation()
    if bad is not None:
        return Verdict(HARD, "none", q, m, {"kind": "non-hierarchical", "pair": [bad[0].name, bad[1].name]})
    if not m.has_self_join():
        return Verdict(PTIME_NO_SELF_JOIN, "safeplan", q, m)
    inv = find_inversion(m, cap)
    if inv is None:
        return Verdict(PTIME_INVERSION_FREE, "invfree", q, m)
    witness = _inversion_witness(inv)
    ucov = unary_coverage(m)
    if isinstance(ucov, RootFailure):
        witness["root_failure"] = ucov.describe()
        return Verdict(HARD, "none", q, m, witness, coverage=ucov.coverage)
    rc = root_closure(ucov)
    reports = closure_erasers(rc)
    missing = [r for r in reports if r.eraser is None]
    if missing:
        witness["join_without_eraser"] = missing[0].join
        return Verdict(HARD, "none", q, m, witness, reports, ucov, rc)
    if not reports:
        # inversions exist but none survives into a root join; the evaluator still applies
        return Verdict(PTIME_ERASER, "general", q, m, witness, reports, ucov, rc)
    return Verdict(PTIME_ERASER, "general", q, m, witness, reports, ucov, rc)


__all__ = [
    "ClosureTooLarge", "EraserReport", "HARD", "Join", "Member", "PTIME_ERASER", "PTIME_INVERSION_FREE",
    "PTIME_NO_SELF_JOIN", "RootClosure", "Verdict", "classify", "closure_covers", "closure_erasers", "find_eraser",
    "hierarchical_closure", "hierarchical_joins", "hierarchical_unifier", "join_query", "root_closure",
    "make_hk", "root_equivalent", "root_join",
]
