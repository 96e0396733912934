"""Hierarchies, coverages, N coefficients and the naive expansion evaluator."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple

from .qcore import (
    Atom, Const, Pred, Query, Var, alpha_key, components, contained_in, equivalent,
    make_pred, mgu, minimize,
)

DEFAULT_COVERAGE_CAP = 3 ** 10


class CoverageTooLarge(RuntimeError):
    def __init__(self, m: int, cap: int):
        super().__init__(f"canonical coverage needs 3^{m} = {3 ** m} branches, cap is {cap}")
        self.m = m
        self.cap = cap


# ---------------------------------------------------------------------------
# hierarchy


class Hierarchy:
    """sg(x) = indices of the subgoals containing x (negated subgoals included)."""

    def __init__(self, q: Query):
        self.query = q
        sg: Dict[Var, set] = {v: set() for v in q.vars}
        for i, a in enumerate(q.atoms):
            for v in a.vars:
                sg[v].add(i)
        self.sg: Dict[Var, FrozenSet[int]] = {v: frozenset(s) for v, s in sg.items()}

    def le(self, x: Var, y: Var) -> bool:
        """x ⊑ y"""
        return self.sg[x] <= self.sg[y]

    def lt(self, x: Var, y: Var) -> bool:
        return self.sg[x] < self.sg[y]

    def eq(self, x: Var, y: Var) -> bool:
        return self.sg[x] == self.sg[y]

    def compare(self, x: Var, y: Var) -> str:
        """'>' if x ⊐ y, '<' if x ⊏ y, '=' if x ≡ y, '|' if unrelated."""
        a, b = self.sg[x], self.sg[y]
        if a == b:
            return "="
        if a > b:
            return ">"
        if a < b:
            return "<"
        return "|"

    def violation(self) -> Optional[Tuple[Var, Var]]:
        vs = list(self.sg)
        for x, y in itertools.combinations(vs, 2):
            a, b = self.sg[x], self.sg[y]
            if a & b and not (a <= b or b <= a):
                return (x, y)
        return None

    def root_class(self) -> List[Var]:
        """Variables occurring in every subgoal."""
        n = len(self.query.atoms)
        return [v for v, s in self.sg.items() if len(s) == n]

    def classes(self) -> List[List[Var]]:
        out: Dict[FrozenSet[int], List[Var]] = {}
        for v, s in self.sg.items():
            out.setdefault(s, []).append(v)
        return sorted(out.values(), key=lambda c: -len(self.sg[c[0]]))


def hierarchy(q: Query) -> Hierarchy:
    return Hierarchy(q)


def is_hierarchical(q: Query) -> bool:
    return Hierarchy(q).violation() is None


# ---------------------------------------------------------------------------
# coverages


@dataclass
class Coverage:
    """Factors, covers (sets of factor indices) and expansion variables per factor."""

    factors: List[Query]
    covers: List[FrozenSet[int]]
    xvars: List[Tuple[Var, ...]] = field(default_factory=list)

    def __post_init__(self):
        if not self.xvars:
            self.xvars = [f.vars for f in self.factors]

    @property
    def cover_masks(self) -> List[int]:
        return [sum(1 << i for i in c) for c in self.covers]

    def cover_query(self, c: Iterable[int]) -> Query:
        out: Optional[Query] = None
        taken: set = set()
        for i in sorted(c):
            f = self.factors[i].rename_apart(taken, "_")
            taken.update(f.vars)
            out = f if out is None else Query(out.atoms + f.atoms, out.preds | f.preds)
        return out if out is not None else Query(())

    def unifications(self) -> Iterator[Tuple[int, int, Atom, Atom, "object", Dict[Var, Var]]]:
        """Every MGU between a subgoal of factor i and one of a renamed copy of factor j.

        Yields (i, j, g, g_copy, unifier, back) where ``back`` maps copy variables
        to factor j's own names.
        """
        n = len(self.factors)
        for i in range(n):
            fi = self.factors[i]
            for j in range(n):
                fj = self.factors[j]
                copy = fj.rename_apart(fi.vars, "'")
                back = {cv: v for v, cv in zip(fj.vars, copy.vars)}
                for g in fi.atoms:
                    for h in copy.atoms:
                        u = mgu(g, h, fi, copy)
                        if u is not None:
                            yield i, j, g, h, u, back

    def is_strict(self) -> bool:
        return all(u.strict for *_, u, _b in self.unifications())

    def describe(self) -> dict:
        return {
            "factors": [str(f) for f in self.factors],
            "covers": [sorted(c) for c in self.covers],
            "expansion_vars": [[v.name for v in xs] for xs in self.xvars],
        }


def trivial_coverage(q: Query) -> Coverage:
    fs = components(q)
    return Coverage(fs, [frozenset(range(len(fs)))])


def _assemble(cover_queries: Sequence[Query], group_ground: bool = False) -> Coverage:
    """Minimize covers, drop redundant ones, split into factors and dedupe them."""
    mins: List[Query] = []
    for c in cover_queries:
        m = minimize(c)
        if not any(equivalent(m, o) for o in mins if alpha_key(o) == alpha_key(m)):
            mins.append(m)
    keep = []
    for i, qi in enumerate(mins):
        redundant = False
        for j, qj in enumerate(mins):
            if i != j and contained_in(qi, qj) and not contained_in(qj, qi):
                redundant = True
                break
        if not redundant:
            keep.append(qi)
    factors: List[Query] = []
    buckets: Dict[tuple, List[int]] = {}
    covers: List[FrozenSet[int]] = []

    def intern(f: Query) -> int:
        key = alpha_key(f)
        for k in buckets.get(key, ()):
            if equivalent(factors[k], f):
                return k
        factors.append(f)
        buckets.setdefault(key, []).append(len(factors) - 1)
        return len(factors) - 1

    for c in keep:
        comps = components(c)
        if group_ground:
            ground = [f for f in comps if f.is_ground]
            comps = [f for f in comps if not f.is_ground]
            if ground:
                comps.append(Query(tuple(a for g in ground for a in g.atoms), frozenset()))
        ids = frozenset(intern(f) for f in comps)
        if ids not in covers:
            covers.append(ids)
    return Coverage(factors, covers)


def coverage_pairs(q: Query) -> List[Tuple[Var, object]]:
    """Branching pairs: co-occurring variables, and every variable with every constant."""
    pairs: Dict[Tuple, None] = {}
    for a in q.atoms:
        vs = sorted(a.vars, key=lambda v: v.name)
        for x, y in itertools.combinations(vs, 2):
            pairs[(x, y)] = None
    consts = sorted(q.consts, key=lambda c: (c.rank, c.name))
    for v in sorted(q.vars, key=lambda v: v.name):
        for c in consts:
            pairs[(v, c)] = None
    return list(pairs)


def canonical_coverage(q: Query, cap: int = DEFAULT_COVERAGE_CAP, group_ground: bool = False) -> Coverage:
    """Branch <, =, > on every co-occurring pair and every variable/constant pair.

    Unsatisfiable branches are dropped, covers minimized, strictly contained
    covers removed, then covers are factored and factors deduplicated.
    """
    pairs = coverage_pairs(q)
    m = len(pairs)
    if 3 ** m > cap:
        raise CoverageTooLarge(m, cap)
    out: List[Query] = []

    def go(k: int, preds: List[Pred], eqs: List[Tuple]):
        cur = Query.try_build(q.atoms, list(q.preds) + preds, eqs)
        if cur is None:
            return
        if k == m:
            out.append(cur)
            return
        x, y = pairs[k]
        go(k + 1, preds + [make_pred("<", x, y)], eqs)
        go(k + 1, preds, eqs + [(x, y)])
        go(k + 1, preds + [make_pred("<", y, x)], eqs)

    go(0, [], [])
    return _assemble(out, group_ground)


# -- lazy strict coverage ----------------------------------------------------


def _nonstrict_split(cov: Coverage) -> Optional[Tuple[int, Var, object]]:
    """Find a factor and a pair (var, var-or-const) whose identification breaks strictness."""
    for i, j, g, h, u, back in cov.unifications():
        for side, vs, fid, names in ((0, u.left_vars, i, None), (1, u.right_vars, j, back)):
            seen: Dict[object, Var] = {}
            for v in vs:
                img = u.image(v)
                orig = names[v] if names else v
                if isinstance(img, Const):
                    return fid, orig, img
                if img in seen:
                    return fid, seen[img], orig
                seen[img] = orig
    return None


def _split_factor(cov: Coverage, fid: int, branches: Sequence[Tuple[List[Pred], List[Tuple]]]) -> List[Query]:
    """Replace factor ``fid`` in every cover by each branch; other covers are kept."""
    out = []
    for c in cov.covers:
        if fid not in c:
            out.append(cov.cover_query(c))
            continue
        rest = [k for k in c if k != fid]
        base = cov.cover_query(rest) if rest else Query(())
        f = cov.factors[fid].rename_apart(base.vars, "_")
        ren = dict(zip(cov.factors[fid].vars, f.vars))
        for preds, eqs in branches:
            p2 = [p.subst(ren) for p in preds]
            e2 = [(ren.get(a, a), ren.get(b, b)) for a, b in eqs]
            qq = Query.try_build(base.atoms + f.atoms, list(base.preds | f.preds) + p2, e2)
            if qq is not None:
                out.append(qq)
    return out


def strict_coverage(q: Query, group_ground: bool = False, max_rounds: int = 400) -> Coverage:
    """Refine the trivial coverage only where some MGU is not one-to-one.

    Each round splits one factor on ``x = t`` versus ``x != t`` for the pair
    the offending MGU identifies, then re-minimizes and removes redundant covers.
    """
    cov = _assemble([q], group_ground)
    for _ in range(max_rounds):
        hit = _nonstrict_split(cov)
        if hit is None:
            return cov
        fid, x, t = hit
        cov = _assemble(_split_factor(cov, fid, [([], [(x, t)]), ([make_pred("!=", x, t)], [])]), group_ground)
    raise CoverageTooLarge(max_rounds, max_rounds)


def ordered(f: Query, x: Var, y: Var) -> bool:
    c = f.constraints
    return c.lt(x, y) or c.lt(y, x)


@dataclass
class RootFailure:
    """Why no unary coverage exists: an MGU sending a root to a non-root."""

    left: int
    right: int
    left_atom: str
    right_atom: str
    coverage: Coverage

    def describe(self) -> str:
        if not self.left_atom:
            return "no choice of one root per factor is consistent with every MGU"
        f, g = self.coverage.factors[self.left], self.coverage.factors[self.right]
        return f"MGU of {self.left_atom} in [{f}] with {self.right_atom} in [{g}] does not map root to root"


def root_of(f: Query) -> Optional[Var]:
    """The maximal variable of the root class under the factor's order, if it is totally ordered."""
    rc = Hierarchy(f).root_class()
    if not rc:
        return None
    best = rc[0]
    for v in rc[1:]:
        if f.constraints.lt(best, v):
            best = v
        elif not f.constraints.lt(v, best):
            return None
    return best


def assign_roots(cov: Coverage) -> Optional[List[Optional[Var]]]:
    """Pick one root-class variable per factor so that every MGU maps roots to roots."""
    n = len(cov.factors)
    rc = [sorted(Hierarchy(f).root_class(), key=lambda v: v.name) for f in cov.factors]
    allowed: Dict[Tuple[int, int], set] = {}
    for i, j, g, h, u, back in cov.unifications():
        ok = set()
        for a in rc[i]:
            for b in rc[j]:
                bc = next(cv for cv, v in back.items() if v == b)
                if u.image(a) == u.image(bc):
                    ok.add((a, b))
        key = (i, j)
        allowed[key] = ok if key not in allowed else allowed[key] & ok
    for (i, j), ok in list(allowed.items()):
        if not rc[i] and not rc[j]:
            del allowed[(i, j)]  # two ground factors
        elif not rc[i] or not rc[j]:
            return None
    order = sorted(range(n), key=lambda k: len(rc[k]))
    roots: List[Optional[Var]] = [None] * n

    def consistent(k: int) -> bool:
        for (i, j), ok in allowed.items():
            if k not in (i, j):
                continue
            a, b = roots[i], roots[j]
            if a is None or b is None:
                continue
            if (a, b) not in ok:
                return False
        return True

    def go(t: int) -> bool:
        if t == len(order):
            return True
        k = order[t]
        if not rc[k]:
            return go(t + 1)
        for v in rc[k]:
            roots[k] = v
            if consistent(k) and go(t + 1):
                return True
        roots[k] = None
        return False

    return roots if go(0) else None


def _order_root_classes(cov: Coverage, group_ground: bool, max_rounds: int) -> Coverage:
    for _ in range(max_rounds):
        target = None
        for i, f in enumerate(cov.factors):
            rc = Hierarchy(f).root_class()
            for x, y in itertools.combinations(sorted(rc, key=lambda v: v.name), 2):
                if not ordered(f, x, y):
                    target = (i, x, y)
                    break
            if target:
                break
        if target is None:
            hit = _nonstrict_split(cov)
            if hit is None:
                return cov
            fid, x, t = hit
            cov = _assemble(_split_factor(cov, fid, [([], [(x, t)]), ([make_pred("!=", x, t)], [])]), group_ground)
            continue
        i, x, y = target
        cov = _assemble(
            _split_factor(cov, i, [([make_pred("<", x, y)], []), ([], [(x, y)]), ([make_pred("<", y, x)], [])]),
            group_ground,
        )
    raise CoverageTooLarge(max_rounds, max_rounds)


def _root_failure(cov: Coverage) -> "RootFailure":
    rc = [set(Hierarchy(f).root_class()) for f in cov.factors]
    for i, j, g, h, u, back in cov.unifications():
        imgs_i = {u.image(a) for a in rc[i]}
        imgs_j = {u.image(cv) for cv, v in back.items() if v in rc[j]}
        if not imgs_i & imgs_j:
            return RootFailure(i, j, str(g), str(h), cov)
    return RootFailure(0, 0, "", "", cov)


def unary_coverage(q: Query, group_ground: bool = False, max_rounds: int = 400):
    """A strict coverage with one root per non-ground factor, every MGU mapping roots to roots.

    Roots are searched on the strict coverage first; if no assignment exists,
    root classes are totally ordered by splitting and the search is repeated.
    Returns a :class:`Coverage` on success or a :class:`RootFailure`.
    """
    cov = strict_coverage(q, group_ground)
    roots = assign_roots(cov)
    if roots is None:
        cov = _order_root_classes(cov, group_ground, max_rounds)
        roots = assign_roots(cov)
    if roots is None:
        return _root_failure(cov)
    cov.xvars = [(r,) if r is not None else () for r in roots]
    return cov


def unary_roots(q: Query, group_ground: bool = False) -> Optional[Coverage]:
    out = unary_coverage(q, group_ground)
    return out if isinstance(out, Coverage) else None


# ---------------------------------------------------------------------------
# inversions


@dataclass
class Inversion:
    path: List[Tuple[int, Var, Var]]
    coverage: Coverage

    def describe(self) -> List[dict]:
        return [{"factor": i, "factor_query": str(self.coverage.factors[i]), "x": x.name, "y": y.name}
                for i, x, y in self.path]


def unification_graph(cov: Coverage) -> Dict[Tuple[int, Var, Var], set]:
    adj: Dict[Tuple[int, Var, Var], set] = {}
    for i, j, g, h, u, back in cov.unifications():
        gv, hv = g.vars, h.vars
        for x, y in itertools.permutations(gv, 2):
            for x2, y2 in itertools.permutations(hv, 2):
                if u.image(x) == u.image(x2) and u.image(y) == u.image(y2):
                    a, b = (i, x, y), (j, back[x2], back[y2])
                    adj.setdefault(a, set()).add(b)
                    adj.setdefault(b, set()).add(a)
    return adj


def inversion_in(cov: Coverage) -> Optional[Inversion]:
    """Shortest path from some (f,x,y) with x ⊐ y to some (f',x',y') with x' ⊏ y' through ≡ nodes."""
    hs = [Hierarchy(f) for f in cov.factors]
    adj = unification_graph(cov)

    def kind(node):
        i, x, y = node
        return hs[i].compare(x, y)

    starts = sorted((n for n in adj if kind(n) == ">"), key=lambda n: (n[0], n[1].name, n[2].name))
    prev: Dict[tuple, Optional[tuple]] = {s: None for s in starts}
    frontier = list(starts)
    while frontier:
        nxt = []
        for node in frontier:
            for nb in sorted(adj.get(node, ()), key=lambda n: (n[0], n[1].name, n[2].name)):
                k = kind(nb)
                if k == "<":
                    path = [nb, node]
                    while prev[path[-1]] is not None:
                        path.append(prev[path[-1]])
                    return Inversion(path[::-1], cov)
                if k == "=" and nb not in prev:
                    prev[nb] = node
                    nxt.append(nb)
        frontier = nxt
    return None


def find_inversion(q: Query, cap: int = DEFAULT_COVERAGE_CAP, method: str = "lazy") -> Optional[Inversion]:
    """Inversion of ``q`` on a strict coverage.

    ``method="lazy"`` refines the trivial coverage only where needed;
    ``"canonical"`` uses the canonical coverage and falls back to lazy past ``cap``.
    """
    if method == "canonical":
        try:
            return inversion_in(canonical_coverage(q, cap))
        except CoverageTooLarge:
            pass
    elif method != "lazy":
        raise ValueError(f"unknown coverage method {method!r}")
    return inversion_in(strict_coverage(q))


# ---------------------------------------------------------------------------
# N coefficients


def _popcount(x: int) -> int:
    return bin(x).count("1")


@lru_cache(maxsize=1 << 16)
def _n_covers(covers: Tuple[int, ...], sigma: int) -> int:
    # signed count of cover sets by their union, restricted to covers inside σ
    acc: Dict[int, int] = {0: 1}
    for c in covers:
        if c & ~sigma:
            continue
        nxt = dict(acc)
        for u, v in acc.items():
            nxt[u | c] = nxt.get(u | c, 0) - v
        acc = nxt
    total = acc.get(sigma, 0)
    return -total if _popcount(sigma) % 2 else total


def _as_masks(covers) -> Tuple[int, ...]:
    out = []
    for c in covers:
        out.append(c if isinstance(c, int) else sum(1 << i for i in c))
    return tuple(sorted(set(out)))


def _as_mask(sigma) -> int:
    return sigma if isinstance(sigma, int) else sum(1 << i for i in sigma)


def n_coefficient(covers, sigma) -> int:
    """N(C, σ) = (-1)^|σ| Σ over sets s of covers with ∪s = σ of (-1)^|s|."""
    if isinstance(covers, Coverage):
        covers = covers.covers
    return _n_covers(_as_masks(covers), _as_mask(sigma))


def n_coefficient_alt(covers, sigma) -> int:
    """Σ over σ0 ⊆ σ not in the up-set of C of (-1)^|σ0|."""
    if isinstance(covers, Coverage):
        covers = covers.covers
    cm = _as_masks(covers)
    s = _as_mask(sigma)
    total = 0
    sub = s
    while True:
        if not any(c & ~sub == 0 for c in cm):
            total += -1 if _popcount(sub) % 2 else 1
        if sub == 0:
            break
        sub = (sub - 1) & s
    return total


def n_table(k: int, in_up: Callable[[int], bool]) -> List[int]:
    """N(σ) for every σ ⊆ [k], via the up-set formula and a subset-sum transform."""
    size = 1 << k
    vals = [0 if in_up(r) else (-1 if _popcount(r) % 2 else 1) for r in range(size)]
    for b in range(k):
        bit = 1 << b
        for r in range(size):
            if r & bit:
                vals[r] += vals[r ^ bit]
    return vals


def n_table_direct(k: int, covers) -> List[int]:
    """N(σ) for every σ ⊆ [k] straight from the definition, one cover at a time."""
    import numpy as np

    size = 1 << k
    idx = np.arange(size, dtype=np.int64)
    acc = np.zeros(size, dtype=np.int64)
    acc[0] = 1
    for c in _as_masks(covers):
        nxt = acc.copy()
        np.subtract.at(nxt, idx | c, acc)
        acc = nxt
    parity = np.array([_popcount(r) & 1 for r in range(size)], dtype=bool)
    acc[parity] = -acc[parity]
    return acc.tolist()


def cover_up_test(covers) -> Callable[[int], bool]:
    cm = _as_masks(covers)
    return lambda r: any(c & ~r == 0 for c in cm)


# ---------------------------------------------------------------------------
# naive expansion


def expansion_terms(cov: Coverage, s, max_terms: int = 1 << 20) -> Iterator[Tuple[int, int, List[Tuple[int, tuple]]]]:
    """Enumerate (sig mask, |T̄|, instances) over all T̄ with p(F(T̄)) possibly non-zero."""
    from .pstruct import valuations

    cands: List[List[tuple]] = []
    for f, xs in zip(cov.factors, cov.xvars):
        fb = s.bind(f)
        proj = {tuple(h[x] for x in xs) for h in valuations(fb, s)}
        cands.append(sorted(proj))
    total = 1
    for c in cands:
        total *= 1 << len(c)
        if total > max_terms:
            from .pstruct import CapExceeded
            raise CapExceeded(f"naive expansion would enumerate more than {max_terms} terms")

    def go(i, sig, size, acc):
        if i == len(cands):
            yield sig, size, list(acc)
            return
        c = cands[i]
        for k in range(len(c) + 1):
            for chosen in itertools.combinations(c, k):
                acc.extend((i, t) for t in chosen)
                yield from go(i + 1, sig | (1 << i) if k else sig, size + k, acc)
                if k:
                    del acc[len(acc) - k:]

    yield from go(0, 0, 0, [])


def instance_query(cov: Coverage, inst: Sequence[Tuple[int, tuple]], rank) -> Optional[Query]:
    """Conjunction of f[t/x̄_f] over the chosen instances, non-expansion variables renamed apart."""
    atoms: List[Atom] = []
    preds: List[Pred] = []
    taken: set = set()
    for i, t in inst:
        f = cov.factors[i]
        theta = {x: Const(c, rank.get(c, (1, 0))) for x, c in zip(cov.xvars[i], t)}
        g = f.rename_apart(taken | set(theta), "_") if set(f.vars) - set(theta) else f
        ren = dict(zip(f.vars, g.vars))
        theta2 = {ren[x]: v for x, v in theta.items()}
        taken.update(g.vars)
        atoms.extend(a.subst(theta2) for a in g.atoms)
        preds.extend(p.subst(theta2) for p in g.preds)
    return Query.try_build(atoms, preds)


def ground_prob(q: Query, s) -> Fraction:
    """p of a variable-free conjunction (predicates already checked)."""
    pos = {(a.rel, tuple(c.name for c in a.args)) for a in q.atoms if not a.neg}
    neg = {(a.rel, tuple(c.name for c in a.args)) for a in q.atoms if a.neg}
    if pos & neg:
        return Fraction(0)
    out = Fraction(1)
    for t in pos:
        out *= s.probs.get(t, Fraction(0))
    for t in neg:
        out *= 1 - s.probs.get(t, Fraction(0))
    return out


def expansion_sum(cov: Coverage, s, max_terms: int = 1 << 20) -> Fraction:
    """Σ over all T̄ of N(C, sig T̄) (-1)^|T̄| p(F(T̄)); this equals 1 - p(q)."""
    from .pstruct import oracle_eval

    covers = _as_masks(cov.covers)
    rank = dict(s.rank)
    total = Fraction(0)
    for sig, size, inst in expansion_terms(cov, s, max_terms):
        n = _n_covers(covers, sig)
        if n == 0:
            continue
        conj = instance_query(cov, inst, rank)
        if conj is None:
            continue
        p = ground_prob(conj, s) if conj.is_ground else (oracle_eval(conj, s) if conj.atoms else Fraction(1))
        total += n * (-1 if size % 2 else 1) * p
    return total


def expansion_eval_naive(cov: Coverage, s, max_terms: int = 1 << 20) -> Fraction:
    """p(q) from the expansion over ``cov``: the empty family contributes the leading 1."""
    return 1 - expansion_sum(cov, s, max_terms)


__all__ = [
    "Coverage", "CoverageTooLarge", "DEFAULT_COVERAGE_CAP", "Hierarchy", "Inversion", "RootFailure",
    "canonical_coverage", "cover_up_test", "coverage_pairs", "expansion_eval_naive", "expansion_sum",
    "find_inversion", "ground_prob", "hierarchy", "inversion_in", "is_hierarchical", "n_coefficient",
    "n_coefficient_alt", "n_table", "n_table_direct", "root_of", "strict_coverage", "trivial_coverage", "unary_coverage",
    "unary_roots", "unification_graph",
]
