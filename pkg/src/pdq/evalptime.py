"""Exact polynomial-time evaluators, closed-form set sums and their supporting identities.

Every evaluator builds an arithmetic DAG (:class:`Formula`) whose leaves are
tuple probabilities; values are carried along in exact rationals, so the DAG
size is directly measurable.
"""

from __future__ import annotations

import functools
import itertools
import operator
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .hiercov import Coverage, Hierarchy, RootFailure, cover_up_test, n_table, unary_coverage
from .invclass import (
    HARD, PTIME_ERASER, PTIME_INVERSION_FREE, PTIME_NO_SELF_JOIN, RootClosure, Verdict, classify,
    closure_erasers, root_closure,
)
from .pstruct import ProbStructure, oracle_many
from .qcore import Atom, Const, Query, Unsatisfiable, Var, components, minimize


class Unsupported(ValueError):
    """The requested evaluator does not apply to this query."""


def V(q: Query) -> int:
    """Largest number of distinct variables in one subgoal."""
    return max((len(a.vars) for a in q.atoms), default=0)


# ---------------------------------------------------------------------------
# expression DAG


class Formula:
    """Hash-consed arithmetic DAG over tuple probabilities with constant folding.

    Node kinds: ``const``, ``tuple-prob``, ``add``, ``mul``, ``neg``.  ``add``
    and ``mul`` are n-ary and keyed by their sorted children, so equal
    subterms are shared.
    """

    def __init__(self, numeric: Callable = Fraction):
        self.numeric = numeric
        self.kinds: List[str] = []
        self.args: List[tuple] = []
        self.values: list = []
        self._index: Dict[tuple, int] = {}

    def __len__(self) -> int:
        return len(self.kinds)

    def _node(self, kind: str, args: tuple, value) -> int:
        key = (kind, args)
        i = self._index.get(key)
        if i is None:
            i = len(self.kinds)
            self._index[key] = i
            self.kinds.append(kind)
            self.args.append(args)
            self.values.append(value)
        return i

    def is_const(self, i: int) -> bool:
        return self.kinds[i] == "const"

    def const(self, v) -> int:
        v = self.numeric(v)
        return self._node("const", (v,), v)

    def tuple_prob(self, rel: str, args: Tuple[str, ...], p) -> int:
        if p == 0 or p == 1:
            return self.const(p)
        return self._node("tuple-prob", (rel, tuple(args)), self.numeric(p))

    def add(self, items: Iterable[int]) -> int:
        c = self.numeric(0)
        rest = []
        for i in items:
            if self.kinds[i] == "const":
                c += self.values[i]
            else:
                rest.append(i)
        if not rest:
            return self.const(c)
        if c != 0:
            rest.append(self.const(c))
        if len(rest) == 1:
            return rest[0]
        rest.sort()
        return self._node("add", tuple(rest), sum((self.values[i] for i in rest), self.numeric(0)))

    def mul(self, items: Iterable[int]) -> int:
        c = self.numeric(1)
        rest = []
        for i in items:
            if self.kinds[i] == "const":
                c *= self.values[i]
                if c == 0:
                    return self.const(0)
            else:
                rest.append(i)
        if not rest:
            return self.const(c)
        if c != 1:
            rest.append(self.const(c))
        if len(rest) == 1:
            return rest[0]
        rest.sort()
        v = self.numeric(1)
        for i in rest:
            v *= self.values[i]
        return self._node("mul", tuple(rest), v)

    def neg(self, i: int) -> int:
        if self.kinds[i] == "const":
            return self.const(-self.values[i])
        if self.kinds[i] == "neg":
            return self.args[i][0]
        return self._node("neg", (i,), -self.values[i])

    def sub(self, a: int, b: int) -> int:
        return self.add([a, self.neg(b)])

    def one_minus(self, a: int) -> int:
        return self.sub(self.const(1), a)

    def scale(self, c, a: int) -> int:
        return self.mul([self.const(c), a])

    def reachable(self, root: int) -> List[int]:
        seen = set()
        stack = [root]
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            if self.kinds[i] in ("add", "mul", "neg"):
                stack.extend(self.args[i])
        return sorted(seen)

    def size(self, root: Optional[int] = None) -> int:
        return len(self) if root is None else len(self.reachable(root))

    def to_json(self, root: int) -> dict:
        nodes = []
        for i in self.reachable(root):
            k = self.kinds[i]
            d: dict = {"id": i, "kind": k}
            if k == "const":
                d["value"] = _render(self.values[i])
            elif k == "tuple-prob":
                d["relation"], d["args"] = self.args[i][0], list(self.args[i][1])
                d["value"] = _render(self.values[i])
            else:
                d["children"] = list(self.args[i])
            nodes.append(d)
        kinds: Dict[str, int] = {}
        for n in nodes:
            kinds[n["kind"]] = kinds.get(n["kind"], 0) + 1
        return {"root": root, "size": len(nodes), "by_kind": kinds, "nodes": nodes}


def _render(v) -> str:
    if isinstance(v, Fraction):
        return f"{v.numerator}/{v.denominator}"
    return repr(v)


# ---------------------------------------------------------------------------
# plans


def _abstract(q: Query) -> Tuple[Query, Dict[str, Const]]:
    """Replace constants by rank-ordered placeholders; the plan for the template is reusable."""
    consts = sorted(q.consts, key=lambda c: (c.rank, c.name))
    fwd = {c.name: Const(f"#{i}", (0, i)) for i, c in enumerate(consts)}
    back = {f"#{i}": c for i, c in enumerate(consts)}
    return q.map_consts(fwd), back


@dataclass
class RootedPlan:
    """Analysis of a self-join query: unary coverage, root closure and expansion coefficients."""

    query: Query
    method: str
    coverage: Coverage
    closure: RootClosure
    ground: List[int]
    rooted: List[int]
    reduced: List[Optional[Tuple[int, ...]]]
    coef: Dict[int, Dict[int, int]]
    used: List[int]
    root_atoms: List[List[Tuple[str, int]]]


@dataclass
class SafePlan:
    query: Query


@dataclass
class HardPlan:
    query: Query
    reason: str


MAX_ROOTED = 20
MAX_GROUND = 12
_PLANS: Dict[Query, object] = {}


def clear_plan_cache() -> None:
    _PLANS.clear()


def _plan(template: Query):
    hit = _PLANS.get(template)
    if hit is None:
        hit = _build_plan(template)
        _PLANS[template] = hit
    return hit


def _build_plan(t: Query):
    m = minimize(t)
    bad = Hierarchy(m).violation()
    if bad is not None:
        return HardPlan(m, f"not hierarchical: {bad[0]}, {bad[1]}")
    if not m.has_self_join():
        return SafePlan(m)
    cov = unary_coverage(m)
    if isinstance(cov, RootFailure):
        return HardPlan(m, "no unary coverage: " + cov.describe())
    rc = root_closure(cov)
    reports = closure_erasers(rc)
    missing = [r for r in reports if r.eraser is None]
    if missing:
        return HardPlan(m, "join without eraser: " + missing[0].join)
    members = rc.members
    if len(rc.fstar) == len(members):
        # every join is inversion-free: expand over the original factors and use
        # the closure only to rewrite same-root conjunctions
        universe = list(range(len(cov.factors)))
        table = n_table(len(universe), cover_up_test(cov.covers))
        method = "invfree"
    else:
        universe = list(rc.fstar)
        table = rc.n_star()
        method = "general"
    ground = [k for k in universe if members[k].root is None]
    rooted = [k for k in universe if members[k].root is not None]
    if len(rooted) > MAX_ROOTED or len(ground) > MAX_GROUND:
        raise Unsupported(f"expansion too large ({len(rooted)} rooted, {len(ground)} ground members)")
    upos = {k: p for p, k in enumerate(universe)}
    r = len(rooted)

    def full_mask(gm: int, rm: int) -> int:
        out = 0
        for i, k in enumerate(ground):
            if gm >> i & 1:
                out |= 1 << upos[k]
        for i, k in enumerate(rooted):
            if rm >> i & 1:
                out |= 1 << upos[k]
        return out

    coef: Dict[int, Dict[int, int]] = {}
    for gm in range(1 << len(ground)):
        vals = [table[full_mask(gm, rm)] for rm in range(1 << r)]
        # Möbius over supersets: c(τ) = Σ_{σ ⊇ τ} (-1)^{|σ-τ|} N(σ_g ∪ σ)
        for b in range(r):
            bit = 1 << b
            for rm in range(1 << r):
                if not rm & bit:
                    vals[rm] -= vals[rm | bit]
        nz = {rm: c for rm, c in enumerate(vals) if c}
        if nz:
            coef[gm] = nz

    reduced: List[Optional[Tuple[int, ...]]] = []
    for rm in range(1 << r):
        red = _reduce(rc, [rooted[i] for i in range(r) if rm >> i & 1])
        reduced.append(None if red is None else tuple(red))
    if method == "invfree":
        assert all(x is not None for x in reduced)

    used = sorted({k for red in reduced if red for k in red} | set(rooted))
    root_atoms = []
    for k in used:
        mq, root = members[k].query, members[k].root
        root_atoms.append(sorted({(a.rel, j) for a in mq.positive for j, tt in enumerate(a.args) if tt == root}))
    return RootedPlan(m, method, cov, rc, ground, rooted, reduced, coef, used, root_atoms)


def _reduce(rc: RootClosure, members: List[int]) -> Optional[List[int]]:
    """Rewrite a same-root conjunction of closure members into pairwise independent ones.

    None when some step needs a member outside F*.
    """
    fstar = set(rc.fstar)
    cur = set(members)
    while True:
        step = None
        for i, j in itertools.combinations(sorted(cur), 2):
            kind, k = rc.status(i, j)
            if kind != "indep":
                step = (i, j, kind, k)
                break
        if step is None:
            return sorted(cur)
        i, j, kind, k = step
        if kind == "trivial":
            cur.discard(j if k == i else i)
        else:
            if k not in fstar:
                return None
            cur -= {i, j}
            cur.add(k)


# ---------------------------------------------------------------------------
# engine


class Engine:
    """Builds the formula for p(q) on one structure, memoizing every sub-query."""

    def __init__(self, s: ProbStructure, formula: Optional[Formula] = None, allow_erasers: bool = True,
                 check_recursion: bool = True):
        self.s = s
        self.f = formula or Formula()
        self.allow_erasers = allow_erasers
        self.check_recursion = check_recursion
        self.memo: Dict[Query, int] = {}
        self.methods: set = set()
        self._positions: Dict[Tuple[str, int], set] = {}
        for (rel, args), p in s.probs.items():
            if p != 0:
                for j, c in enumerate(args):
                    self._positions.setdefault((rel, j), set()).add(c)

    def const_of(self, name: str) -> Const:
        return Const(name, self.s.rank.get(name, (1, 0)))

    def candidates(self, spots: Sequence[Tuple[str, int]]) -> List[str]:
        """Domain values occurring at every (relation, position) in ``spots``."""
        out: Optional[set] = None
        for spot in spots:
            vals = self._positions.get(spot, set())
            out = set(vals) if out is None else out & vals
            if not out:
                return []
        return sorted(out or (), key=lambda c: self.s.rank.get(c, (1, 0)))

    def instance(self, q: Query, x: Var, a: str) -> Optional[Query]:
        try:
            sub = q.subst({x: self.const_of(a)})
        except Unsatisfiable:
            return None
        if self.check_recursion:
            assert V(sub) < V(q), f"recursion does not shrink V: {q} -> {sub}"
        return sub

    def prob(self, q: Query) -> int:
        hit = self.memo.get(q)
        if hit is None:
            hit = self._prob(q)
            self.memo[q] = hit
        return hit

    def _prob(self, q: Query) -> int:
        if not q.atoms:
            return self.f.const(1)
        if q.is_ground:
            return self.ground(q)
        if not q.has_self_join():
            return self.safe(q)
        t, back = _abstract(q)
        plan = _plan(t)
        if isinstance(plan, HardPlan):
            raise Unsupported(f"{q}: {plan.reason}")
        if isinstance(plan, SafePlan):
            return self.safe(plan.query.map_consts(back))
        if plan.method == "general" and not self.allow_erasers:
            raise Unsupported(f"{q} needs erasers")
        self.methods.add(plan.method)
        return self.rooted(plan, back)

    def ground(self, q: Query) -> int:
        items = []
        for a in q.atoms:
            args = tuple(c.name for c in a.args)
            node = self.f.tuple_prob(a.rel, args, self.s.prob(a.rel, args))
            items.append(self.f.one_minus(node) if a.neg else node)
        return self.f.mul(items)

    def safe(self, q: Query) -> int:
        """Independent components multiply; a component with root x gives 1 - ∏_a (1 - p(q[a/x]))."""
        comps = components(q)
        if len(comps) > 1:
            return self.f.mul(self.prob(c) for c in comps)
        if q.is_ground:
            return self.ground(q)
        x = next((v for v in q.vars if all(v in a.vars for a in q.atoms)), None)
        if x is None:
            raise Unsupported(f"{q}: no variable occurs in every subgoal")
        spots = [(a.rel, j) for a in q.positive for j, t in enumerate(a.args) if t == x]
        misses = []
        for a in self.candidates(spots):
            sub = self.instance(q, x, a)
            if sub is not None:
                misses.append(self.f.one_minus(self.prob(sub)))
        return self.f.one_minus(self.f.mul(misses))

    def rooted(self, plan: RootedPlan, back: Mapping[str, Const]) -> int:
        f = self.f
        r = len(plan.rooted)
        ms = plan.closure.members
        members = {k: ms[k].query.map_consts(back) for k in plan.used}
        values: set = set()
        for spots in plan.root_atoms:
            values.update(self.candidates(spots))
        needed = sorted({tm for per in plan.coef.values() for tm in per})
        per_tau: Dict[int, List[int]] = {tm: [] for tm in needed}
        for a in sorted(values, key=lambda c: self.s.rank.get(c, (1, 0))):
            pa: Dict[int, int] = {}
            for k in plan.used:
                sub = self.instance(members[k], ms[k].root, a)
                pa[k] = f.const(0) if sub is None else self.prob(sub)
            if all(f.is_const(p) and f.values[p] == 0 for p in pa.values()):
                continue
            # w(ρ) = (-1)^|ρ| p(∧ρ at a); local states needing a member outside F* are dropped
            w = []
            for rm in range(1 << r):
                red = plan.reduced[rm]
                if red is None:
                    w.append(f.const(0))
                    continue
                node = f.mul(pa[k] for k in red)
                w.append(f.neg(node) if bin(rm).count("1") % 2 else node)
            for b in range(r):
                bit = 1 << b
                for rm in range(1 << r):
                    if rm & bit:
                        w[rm] = f.add([w[rm], w[rm ^ bit]])
            for tm in needed:
                per_tau[tm].append(w[tm])
        ptau = {tm: f.mul(items) for tm, items in per_tau.items()}
        gmembers = [ms[k].query.map_consts(back) for k in plan.ground]
        terms = []
        for gm, per in sorted(plan.coef.items()):
            chosen = [gmembers[i] for i in range(len(gmembers)) if gm >> i & 1]
            try:
                gq = Query.build([at for q in chosen for at in q.atoms])
            except Unsatisfiable:
                continue
            gnode = self.prob(gq)
            inner = f.add(f.scale(c, ptau[tm]) for tm, c in sorted(per.items()))
            sign = -1 if bin(gm).count("1") % 2 else 1
            terms.append(f.mul([f.const(sign), gnode, inner]))
        return f.one_minus(f.add(terms))


# ---------------------------------------------------------------------------
# public evaluators


@dataclass
class EvalResult:
    value: Union[Fraction, float]
    method: str
    formula: Optional[Formula] = None
    root: Optional[int] = None
    verdict: Optional[Verdict] = None

    @property
    def formula_size(self) -> int:
        return 0 if self.formula is None else self.formula.size(self.root)

    def formula_json(self) -> dict:
        return self.formula.to_json(self.root)


def _run(q: Query, s: ProbStructure, allow_erasers: bool, numeric=Fraction) -> Tuple[Engine, int]:
    eng = Engine(s, Formula(numeric), allow_erasers=allow_erasers)
    return eng, eng.prob(s.bind(q))


def eval_no_selfjoin(q: Query, s: ProbStructure) -> Fraction:
    """Safe-plan recurrence for hierarchical queries without self-joins."""
    if q.has_self_join():
        raise Unsupported("query has a self-join")
    if not Hierarchy(q).violation() is None:
        raise Unsupported("query is not hierarchical")
    eng = Engine(s)
    root = eng.safe(s.bind(q)) if q.atoms else eng.f.const(1)
    return eng.f.values[root]


def eval_inversion_free(q: Query, s: ProbStructure) -> Fraction:
    """Rooted expansion for inversion-free queries; refuses anything needing erasers."""
    v = classify(q)
    if v.cls not in (PTIME_NO_SELF_JOIN, PTIME_INVERSION_FREE):
        raise Unsupported(f"query is {v.cls}, not inversion-free")
    eng, root = _run(q, s, allow_erasers=False)
    return eng.f.values[root]


def eval_general(q: Query, s: ProbStructure) -> Fraction:
    """Rooted expansion over the root closure, dropping local states cancelled by erasers."""
    v = classify(q)
    if v.cls == HARD:
        raise Unsupported("query is #P-hard")
    eng, root = _run(q, s, allow_erasers=True)
    return eng.f.values[root]


_METHOD_OF = {PTIME_NO_SELF_JOIN: "safeplan", PTIME_INVERSION_FREE: "invfree", PTIME_ERASER: "general"}


def evaluate(q: Query, s: ProbStructure, method: str = "auto", numeric=Fraction) -> EvalResult:
    """Exact p(q) with the requested evaluator; ``auto`` picks by classification."""
    verdict = classify(q)
    if method == "auto":
        if verdict.cls == HARD:
            raise Unsupported("query is #P-hard; use the oracle or Monte Carlo")
        method = _METHOD_OF[verdict.cls]
    if method == "safeplan":
        if q.has_self_join():
            raise Unsupported("safeplan needs a query without self-joins")
        if verdict.cls == HARD:
            raise Unsupported("query is not hierarchical")
        eng = Engine(s, Formula(numeric))
        bq = s.bind(q)
        root = eng.safe(bq) if bq.atoms else eng.f.const(1)
    elif method in ("invfree", "general"):
        if verdict.cls == HARD:
            raise Unsupported("query is #P-hard")
        if method == "invfree" and verdict.cls == PTIME_ERASER:
            raise Unsupported("query needs erasers; use --method general")
        eng, root = _run(q, s, allow_erasers=method == "general", numeric=numeric)
    else:
        raise ValueError(f"unknown exact method {method!r}")
    return EvalResult(eng.f.values[root], method, eng.f, root, verdict)


# ---------------------------------------------------------------------------
# Boolean combinations


@dataclass(frozen=True)
class Prop:
    """Boolean combination of conjunctive queries: op in {'q', 'not', 'and', 'or'}."""

    op: str
    args: tuple = ()
    query: Optional[Query] = None

    @staticmethod
    def atom(q: Query) -> "Prop":
        return Prop("q", (), q)

    def __invert__(self) -> "Prop":
        return Prop("not", (self,))

    def __and__(self, other: "Prop") -> "Prop":
        return Prop("and", (self, other))

    def __or__(self, other: "Prop") -> "Prop":
        return Prop("or", (self, other))

    def queries(self) -> List[Query]:
        if self.op == "q":
            return [self.query]
        out: List[Query] = []
        for a in self.args:
            for q in a.queries():
                if q not in out:
                    out.append(q)
        return out

    def holds(self, truth: Mapping[Query, bool]) -> bool:
        if self.op == "q":
            return truth[self.query]
        if self.op == "not":
            return not self.args[0].holds(truth)
        if self.op == "and":
            return all(a.holds(truth) for a in self.args)
        if self.op == "or":
            return any(a.holds(truth) for a in self.args)
        raise ValueError(self.op)

    def __str__(self) -> str:
        if self.op == "q":
            return f"[{self.query}]"
        if self.op == "not":
            return f"not {self.args[0]}"
        return "(" + f" {self.op} ".join(str(a) for a in self.args) + ")"


def conjoin_apart(qs: Sequence[Query]) -> Query:
    """Conjunction of queries with variables renamed apart."""
    atoms: List[Atom] = []
    preds: list = []
    taken: set = set()
    for q in qs:
        g = q.rename_apart(taken, "_")
        taken.update(g.vars)
        atoms.extend(g.atoms)
        preds.extend(g.preds)
    return Query.build(atoms, preds)


def property_terms(phi: Prop) -> Tuple[List[Query], Dict[int, int]]:
    """p(φ) = Σ_U coef(U) p(∧_{i∈U} q_i) from the truth table of φ."""
    qs = phi.queries()
    m = len(qs)
    coef: Dict[int, int] = {}
    for bits in range(1 << m):
        if not phi.holds({q: bool(bits >> i & 1) for i, q in enumerate(qs)}):
            continue
        # p(∧_T q ∧ ∧_{rest} ¬q) = Σ_{S ⊆ rest} (-1)^|S| p(∧_{T∪S} q)
        rest = ((1 << m) - 1) & ~bits
        sub = rest
        while True:
            u = bits | sub
            coef[u] = coef.get(u, 0) + (-1 if bin(sub).count("1") % 2 else 1)
            if sub == 0:
                break
            sub = (sub - 1) & rest
    return qs, {u: c for u, c in coef.items() if c}


def eval_property(phi: Prop, s: ProbStructure, check: bool = True) -> Fraction:
    """Exact p(φ) by inclusion–exclusion down to conjunctions evaluated by the engine."""
    qs, coef = property_terms(phi)
    if check and qs:
        v = classify(conjoin_apart(qs))
        if v.cls == HARD:
            raise Unsupported(f"conjunction of the property's queries is #P-hard ({v.witness})")
    eng = Engine(s)
    total = Fraction(0)
    for u, c in sorted(coef.items()):
        chosen = [qs[i] for i in range(len(qs)) if u >> i & 1]
        try:
            conj = s.bind(conjoin_apart(chosen)) if chosen else Query(())
        except Unsatisfiable:
            continue
        total += c * eng.f.values[eng.prob(minimize(conj))]
    return total


def _holds_vec(phi: Prop, vec: Mapping[Query, object]):
    if phi.op == "q":
        return vec[phi.query]
    parts = [_holds_vec(a, vec) for a in phi.args]
    if phi.op == "not":
        return ~parts[0]
    if phi.op == "and":
        return functools.reduce(operator.and_, parts)
    if phi.op == "or":
        return functools.reduce(operator.or_, parts)
    raise ValueError(phi.op)


def oracle_property(phi: Prop, s: ProbStructure, cap: int = 24) -> Fraction:
    """Possible-worlds value of φ, combining the queries' satisfaction vectors."""
    qs = phi.queries()
    return oracle_many(qs, lambda flags: _holds_vec(phi, dict(zip(qs, flags))), s, cap)


# ---------------------------------------------------------------------------
# closed-form sums over families of unary sets


SetAtom = Tuple[str, int, int]  # ('disjoint', i, j) or ('subset', i, j): T_i ⊆ T_j; 1-based


def s_phi(phi: Sequence[SetAtom], k: int) -> List[Tuple[int, ...]]:
    """Subsets σ ⊆ [k] allowed at a single element by φ."""
    out = []
    for size in range(k + 1):
        for sigma in itertools.combinations(range(1, k + 1), size):
            ss = set(sigma)
            ok = True
            for kind, i, j in phi:
                if kind == "disjoint" and i in ss and j in ss:
                    ok = False
                elif kind == "subset" and i in ss and j not in ss:
                    ok = False
                elif kind not in ("disjoint", "subset"):
                    raise ValueError(f"unsupported set atom {kind!r}")
            if ok:
                out.append(sigma)
    return out


@dataclass
class ClosedSum:
    value: Fraction
    sets: List[Tuple[int, ...]]
    expression: str
    size: int


def closed_sum(phi: Sequence[SetAtom], g: Sequence[Mapping[str, Fraction]], domain: Sequence[str],
               nonempty: bool = False) -> ClosedSum:
    """⊕_φ ḡ = ∏_a Σ_{σ∈S_φ} ∏_{i∈σ} g_i(a); with ``nonempty`` every T_i must be non-empty.

    ``g[i-1]`` maps domain elements to rationals (missing means 0).  The
    reported size counts symbol occurrences in the per-element factor times |A|.
    """
    k = len(g)
    sets = s_phi(phi, k)
    terms = ["1" if not s else "".join(f"g{i}" for i in s) for s in sets]
    expr = "∏_a (" + " + ".join(terms) + ")(a)"
    size = sum(max(1, len(s)) for s in sets) * len(domain)

    def plain(active: int) -> Fraction:
        total = Fraction(1)
        for a in domain:
            acc = Fraction(0)
            for s in sets:
                if any(not active >> (i - 1) & 1 for i in s):
                    continue
                t = Fraction(1)
                for i in s:
                    t *= Fraction(g[i - 1].get(a, 0))
                acc += t
            total *= acc
        return total

    if not nonempty:
        return ClosedSum(plain((1 << k) - 1), sets, expr, size)
    value = Fraction(0)
    for active in range(1 << k):
        sign = -1 if (k - bin(active).count("1")) % 2 else 1
        value += sign * plain(active)
    return ClosedSum(value, sets, "Σ_σ (-1)^{k-|σ|} " + expr + "|_σ", size * (1 << k))


# ---------------------------------------------------------------------------
# bootstrapping: weighted sums over set families via a synthetic instance


def bootstrap_sum(g: Mapping[str, Mapping[Tuple[str, ...], Fraction]], phi: Prop, domain: Sequence[str],
                  evaluator: Optional[Callable[[Prop, ProbStructure], Fraction]] = None) -> Fraction:
    """Σ over families S̄ satisfying φ of ∏_{ā∈S̄} g(ā).

    Each tuple ā gets probability g(ā)/(1+g(ā)); the sum is p(φ)·∏(1+g(ā)).
    A tuple with g(ā) = -1 is split into its absent and present cases.
    """
    evaluator = evaluator or eval_property
    items = [(rel, tuple(args), Fraction(v)) for rel, tab in g.items() for args, v in tab.items()]
    return _bootstrap(items, [], phi, tuple(domain), evaluator)


def _bootstrap(items, forced, phi, domain, evaluator) -> Fraction:
    for idx, (rel, args, v) in enumerate(items):
        if v == -1:
            rest = items[:idx] + items[idx + 1:]
            absent = _bootstrap(rest, forced, phi, domain, evaluator)
            present = _bootstrap(rest, forced + [(rel, args)], phi, domain, evaluator)
            return absent - present
    probs = {t: Fraction(1) for t in forced}
    scale = Fraction(1)
    for rel, args, v in items:
        if v == 0:
            continue
        probs[(rel, args)] = v / (1 + v)
        scale *= 1 + v
    return evaluator(phi, ProbStructure(domain, probs)) * scale


# ---------------------------------------------------------------------------
# hierarchy trees and the change of basis


@dataclass
class HierTree:
    factor: Query
    nodes: List[Tuple[Var, ...]]
    parent: List[Optional[int]]
    up: List[Tuple[Var, ...]]

    @property
    def root(self) -> int:
        return self.parent.index(None)

    def children(self, i: int) -> List[int]:
        return [j for j, p in enumerate(self.parent) if p == i]

    def describe(self) -> dict:
        return {
            "nodes": [[v.name for v in n] for n in self.nodes],
            "parent": self.parent,
            "up": [[v.name for v in u] for u in self.up],
        }


def hierarchy_tree(f: Query) -> HierTree:
    """Tree over ≡-classes of a connected hierarchical factor; edges follow ⊑ covering pairs."""
    h = Hierarchy(f)
    if h.violation() is not None:
        raise ValueError("factor is not hierarchical")
    classes = [tuple(c) for c in h.classes()]
    rep = [c[0] for c in classes]
    parent: List[Optional[int]] = []
    for i, x in enumerate(rep):
        above = [j for j, y in enumerate(rep) if j != i and h.lt(x, y)]
        # the closest ancestor is the one below all others
        best = None
        for j in above:
            if best is None or h.lt(rep[j], rep[best]):
                best = j
        parent.append(best)
    if sum(p is None for p in parent) != 1:
        raise ValueError("factor is not connected")
    up = []
    for i, x in enumerate(rep):
        vs = [v for v in f.vars if h.le(x, v)]
        up.append(tuple(vs))
    return HierTree(f, classes, parent, up)


def _ground_atoms(f: Query, h: Mapping[Var, str]) -> set:
    return {(a.rel, tuple(h[t] if isinstance(t, Var) else t.name for t in a.args)) for a in f.atoms}


def _prob_of(tuples, s: ProbStructure) -> Fraction:
    out = Fraction(1)
    for t in tuples:
        out *= s.prob(*t)
    return out


def change_of_basis_sides(f: Query, s: ProbStructure) -> Tuple[Fraction, Fraction]:
    """Both sides of the change of basis for one positive factor, by enumeration.

    Left: Σ over sets T of full valuations of (-1)^|T| p(f(T)).  Right: Σ over
    per-node sets S^[x] ⊆ A^⌈x⌉ linked by projection of
    ∏_nodes (-1)^{(children+1)|S^[x]|} · p(f(S̄)).  Exponential; tiny inputs only.
    """
    dom = list(s.domain)
    vs = list(f.vars)
    vals = [dict(zip(vs, t)) for t in itertools.product(dom, repeat=len(vs))]
    left = Fraction(0)
    for k in range(len(vals) + 1):
        for chosen in itertools.combinations(vals, k):
            atoms = set()
            for h in chosen:
                atoms |= _ground_atoms(f, h)
            left += (-1) ** k * _prob_of(atoms, s)
    tree = hierarchy_tree(f)
    n = len(tree.nodes)
    universe = [list(itertools.product(dom, repeat=len(tree.up[i]))) for i in range(n)]
    # atoms attach to the node whose ⌈x⌉ equals their variable set
    attach: List[List[Atom]] = [[] for _ in range(n)]
    for a in f.atoms:
        av = set(a.vars)
        i = next(i for i in range(n) if set(tree.up[i]) == av)
        attach[i].append(a)
    right = Fraction(0)
    for combo in itertools.product(*[
        [frozenset(c) for k in range(len(u) + 1) for c in itertools.combinations(u, k)] for u in universe
    ]):
        ok = True
        for i in range(n):
            p = tree.parent[i]
            if p is None:
                continue
            idx = [tree.up[i].index(v) for v in tree.up[p]]
            if {tuple(t[j] for j in idx) for t in combo[i]} != set(combo[p]):
                ok = False
                break
        if not ok:
            continue
        sign = 1
        atoms = set()
        for i in range(n):
            if (len(tree.children(i)) + 1) * len(combo[i]) % 2:
                sign = -sign
            for t in combo[i]:
                h = dict(zip(tree.up[i], t))
                for a in attach[i]:
                    atoms.add((a.rel, tuple(h[x] if isinstance(x, Var) else x.name for x in a.args)))
        right += sign * _prob_of(atoms, s)
    return left, right


__all__ = [
    "ClosedSum", "Engine", "EvalResult", "Formula", "HierTree", "Prop", "RootedPlan", "Unsupported", "V",
    "bootstrap_sum", "change_of_basis_sides", "clear_plan_cache", "closed_sum", "conjoin_apart",
    "eval_general", "eval_inversion_free", "eval_no_selfjoin", "eval_property", "evaluate", "hierarchy_tree",
    "oracle_property", "property_terms", "s_phi",
]
