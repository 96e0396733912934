"""Tuple-independent probabilistic structures, the world-enumeration oracle and Monte Carlo."""

from __future__ import annotations

import itertools
import math
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .qcore import Const, Query, Var

if os.environ.get("PDQ_PURE"):
    from . import _pykernel as _kernel
    BACKEND = "python"
else:
    try:
        from . import _kernel  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        from . import _pykernel as _kernel
        BACKEND = "python"

DEFAULT_ORACLE_CAP = 24

Tuple_ = Tuple[str, Tuple[str, ...]]


class StructureError(ValueError):
    pass


class CapExceeded(RuntimeError):
    """The oracle was asked to enumerate more worlds than allowed."""


@dataclass
class ProbStructure:
    domain: Tuple[str, ...]
    probs: Dict[Tuple_, Fraction]
    arity: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        known = set(self.domain)
        extra = []
        for (rel, args) in self.probs:
            self.arity.setdefault(rel, len(args))
            for a in args:
                if a not in known:
                    known.add(a)
                    extra.append(a)
        self.domain = tuple(self.domain) + tuple(extra)
        self.rank = {c: (0, i) for i, c in enumerate(self.domain)}

    def prob(self, rel: str, args: Sequence[str]) -> Fraction:
        return self.probs.get((rel, tuple(args)), Fraction(0))

    def rank_for(self, q: Query) -> Dict[str, tuple]:
        """Ranks for every constant of ``q``; unknown ones go after the domain."""
        rank = dict(self.rank)
        k = 0
        for c in q.consts:
            if c.name not in rank:
                rank[c.name] = (1, k)
                k += 1
        return rank

    def bind(self, q: Query) -> Query:
        return q.rebind(self.rank_for(q))

    def tuples_of(self, rel: str) -> List[Tuple[str, ...]]:
        return [args for (r, args) in self.probs if r == rel]

    def __len__(self) -> int:
        return len(self.probs)

    def to_tsv(self) -> str:
        lines = ["@domain " + ",".join(self.domain)]
        for (rel, args), p in self.probs.items():
            lines.append(f"{rel}\t{','.join(args)}\t{p.numerator}/{p.denominator}")
        return "\n".join(lines) + "\n"


def parse_prob(text: str) -> Fraction:
    try:
        p = Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise StructureError(f"bad probability {text!r}") from None
    if not 0 <= p <= 1:
        raise StructureError(f"probability {p} outside [0,1]")
    return p


def load_structure(source: Union[str, Path]) -> ProbStructure:
    """Read ``Rel<TAB>c1,c2<TAB>prob`` lines; ``@domain a,b`` adds constants, ``#`` comments."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and os.path.exists(source)):
        text = Path(source).read_text()
    else:
        text = str(source)
    domain: Dict[str, None] = {}
    probs: Dict[Tuple_, Fraction] = {}
    arity: Dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("@domain"):
            for c in re.split(r"[,\s]+", line[len("@domain"):].strip()):
                if c:
                    domain.setdefault(c, None)
            continue
        fields = [f for f in line.split("\t") if f.strip()]
        if len(fields) != 3:
            fields = line.split()
        if len(fields) != 3:
            raise StructureError(f"line {lineno}: expected 'Rel<TAB>c1,..<TAB>prob'")
        rel, args_s, p_s = (f.strip() for f in fields)
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", rel):
            raise StructureError(f"line {lineno}: bad relation name {rel!r}")
        args = tuple(a.strip().strip("'") for a in args_s.split(",")) if args_s not in ("", "()") else ()
        if arity.setdefault(rel, len(args)) != len(args):
            raise StructureError(f"line {lineno}: {rel} has arity {arity[rel]}, got {len(args)}")
        if (rel, args) in probs:
            raise StructureError(f"line {lineno}: duplicate tuple {rel}({','.join(args)})")
        for a in args:
            domain.setdefault(a, None)
        probs[(rel, args)] = parse_prob(p_s)
    return ProbStructure(tuple(domain), probs, arity)


def make_structure(probs: Mapping[Tuple_, Union[Fraction, float, str]], domain: Iterable[str] = ()) -> ProbStructure:
    dom: Dict[str, None] = dict.fromkeys(domain)
    out = {}
    for (rel, args), p in probs.items():
        args = tuple(str(a) for a in args)
        for a in args:
            dom.setdefault(a, None)
        out[(rel, args)] = p if isinstance(p, Fraction) else parse_prob(str(p))
    return ProbStructure(tuple(dom), out)


def random_structure(q: Query, rng, domain: Sequence[str] = ("a", "b", "c"), max_tuples: int = 14,
                     denom: int = 16, certain_rate: float = 0.1, focus: float = 0.7) -> ProbStructure:
    """Random structure over the relations of ``q`` with at most ``max_tuples`` tuples.

    A ``focus`` share of draws instantiates query atoms under a random
    valuation so the query actually has support; the rest are uniform.
    Probabilities are k/d with d <= ``denom``.
    """
    dom = list(dict.fromkeys(list(domain) + sorted(c.name for c in q.consts)))
    vs = sorted(q.vars, key=lambda v: v.name)
    arity = {g.rel: len(g.args) for g in q.atoms}
    rels = sorted(arity)
    probs: Dict[Tuple_, Fraction] = {}

    def prob() -> Fraction:
        if rng.random() < certain_rate:
            return Fraction(1)
        d = rng.randint(2, denom)
        return Fraction(rng.randint(1, d - 1), d)

    for _ in range(8 * max_tuples):
        if len(probs) >= max_tuples:
            break
        if rng.random() < focus:
            h = {v: rng.choice(dom) for v in vs}
            g = rng.choice(q.atoms)
            t = (g.rel, tuple(a.name if isinstance(a, Const) else h[a] for a in g.args))
        else:
            rel = rng.choice(rels)
            t = (rel, tuple(rng.choice(dom) for _ in range(arity[rel])))
        if t not in probs:
            probs[t] = prob()
    return make_structure(probs, dom)


def full_structure(q: Query, n: int, rng, denom: int = 16) -> ProbStructure:
    """Every tuple over an ``n``-element domain for each relation of ``q``, random probabilities."""
    dom = [f"c{i}" for i in range(n)] + sorted(c.name for c in q.consts)
    arity = {g.rel: len(g.args) for g in q.atoms}
    probs: Dict[Tuple_, Fraction] = {}
    for rel in sorted(arity):
        for args in itertools.product(dom, repeat=arity[rel]):
            d = rng.randint(2, denom)
            probs[(rel, args)] = Fraction(rng.randint(1, d - 1), d)
    return make_structure(probs, dom)


def world_prob(s: ProbStructure, world: Iterable[Tuple_]) -> Fraction:
    """Probability of exactly the tuples in ``world`` being present."""
    world = set(world)
    out = Fraction(1)
    for t, p in s.probs.items():
        out *= p if t in world else 1 - p
    return out


# ---------------------------------------------------------------------------
# lineage


def valuations(q: Query, s: ProbStructure) -> List[Dict[Var, str]]:
    """Assignments of Vars(q) to domain constants mapping positive atoms into tuples of ``s``.

    ``q`` must be bound to the structure's constant order (see :meth:`ProbStructure.bind`).
    Tuples of probability zero are ignored.
    """
    index: Dict[str, List[Tuple[str, ...]]] = {}
    for (rel, args), p in s.probs.items():
        if p > 0:
            index.setdefault(rel, []).append(args)
    pos = sorted(q.positive, key=lambda a: len(index.get(a.rel, ())))
    rank = s.rank_for(q)
    preds = list(q.preds)
    out: List[Dict[Var, str]] = []

    def val(t, h):
        if isinstance(t, Const):
            return t.name
        return h[t]

    def preds_ok(h):
        for p in preds:
            l, r = val(p.left, h), val(p.right, h)
            if p.op == "!=":
                if l == r:
                    return False
            elif not (rank[l], l) < (rank[r], r):
                return False
        return True

    def go(i, h):
        if i == len(pos):
            if preds_ok(h):
                out.append(dict(h))
            return
        g = pos[i]
        for args in index.get(g.rel, ()):
            if len(args) != len(g.args):
                continue
            added = []
            ok = True
            for t, c in zip(g.args, args):
                if isinstance(t, Const):
                    if t.name != c:
                        ok = False
                        break
                elif t in h:
                    if h[t] != c:
                        ok = False
                        break
                else:
                    h[t] = c
                    added.append(t)
            if ok:
                go(i + 1, h)
            for t in added:
                del h[t]

    go(0, {})
    return out


@dataclass
class Lineage:
    """DNF over uncertain tuples: a world satisfies it iff some clause holds."""

    tuples: List[Tuple_]
    clauses: List[Tuple[frozenset, frozenset]]  # (present, absent) as tuple indices
    certain: bool = False  # true in every world

    @property
    def size(self) -> int:
        return len(self.tuples)


def lineage(q: Query, s: ProbStructure, tuple_index: Optional[Dict[Tuple_, int]] = None,
            tuples: Optional[List[Tuple_]] = None) -> Lineage:
    """Ground ``q`` on ``s``.  Tuples with probability 0 or 1 are folded away."""
    q = s.bind(q)
    tuple_index = {} if tuple_index is None else tuple_index
    tuples = [] if tuples is None else tuples

    def tid(t):
        if t not in tuple_index:
            tuple_index[t] = len(tuples)
            tuples.append(t)
        return tuple_index[t]

    clauses = set()
    certain = False
    for h in valuations(q, s):
        present, absent = set(), set()
        dead = False
        for g in q.atoms:
            t = (g.rel, tuple(a.name if isinstance(a, Const) else h[a] for a in g.args))
            p = s.probs.get(t, Fraction(0))
            if not g.neg:
                if p < 1:
                    present.add(tid(t))
            else:
                if p == 1:
                    dead = True
                    break
                if p > 0:
                    absent.add(tid(t))
        if dead or present & absent:
            continue
        if not present and not absent:
            certain = True
        clauses.add((frozenset(present), frozenset(absent)))
    return Lineage(tuples, sorted(clauses, key=lambda c: (len(c[0]) + len(c[1]), sorted(c[0]), sorted(c[1]))), certain)


def _masks(clauses, words: int) -> Tuple[np.ndarray, np.ndarray]:
    pos = np.zeros((max(len(clauses), 1), words), dtype=np.uint64)
    neg = np.zeros_like(pos)
    if not clauses:
        # a clause that can never hold: requires a bit that is also forbidden
        pos[0, 0] = neg[0, 0] = np.uint64(1)
        return pos, neg
    for j, (pr, ab) in enumerate(clauses):
        for i in pr:
            pos[j, i // 64] |= np.uint64(1) << np.uint64(i % 64)
        for i in ab:
            neg[j, i // 64] |= np.uint64(1) << np.uint64(i % 64)
    return pos, neg


def satisfied(lin: Lineage, worlds: np.ndarray) -> np.ndarray:
    """Boolean vector: which of the bitmask ``worlds`` satisfy ``lin``."""
    if lin.certain:
        return np.ones(worlds.shape[0], dtype=bool)
    pos, neg = _masks(lin.clauses, worlds.shape[1])
    return _kernel.eval_worlds(np.ascontiguousarray(worlds), pos, neg).astype(bool)


def weighted_sum(sat: np.ndarray, probs: Sequence[Fraction]) -> Fraction:
    """Exact sum over worlds of the world probability, restricted to ``sat``.

    Folds one tuple at a time with integer numerators over a common denominator.
    """
    m = len(probs)
    v = sat.astype(np.int64)
    den = 1
    use_obj = False
    for i in range(m):
        p = probs[i]
        a, d = p.numerator, p.denominator
        if not use_obj and den * d >= 2 ** 62:
            v = v.astype(object)
            use_obj = True
        v = v.reshape(-1, 2)
        v = v[:, 1] * a + v[:, 0] * (d - a)
        den *= d
    return Fraction(int(v[0]), den)


def oracle_eval(q: Query, s: ProbStructure, cap: int = DEFAULT_ORACLE_CAP) -> Fraction:
    """Exact p(q) by enumerating all worlds over the uncertain tuples ``q`` touches."""
    lin = lineage(q, s)
    return _oracle_from_lineages([lin], lambda bits: bits[0], s, cap)


def _oracle_from_lineages(lins, combine, s, cap) -> Fraction:
    tuples = lins[0].tuples
    m = len(tuples)
    if m > cap:
        raise CapExceeded(f"{m} uncertain tuples exceed the oracle cap of {cap}")
    worlds = _kernel.all_worlds(m)
    bits = [satisfied(lin, worlds) for lin in lins]
    sat = combine(bits)
    return weighted_sum(sat, [s.probs[t] for t in tuples])


def oracle_many(queries: Sequence[Query], combine, s: ProbStructure, cap: int = DEFAULT_ORACLE_CAP) -> Fraction:
    """Probability of a Boolean combination of queries, ``combine`` acting on satisfaction vectors."""
    index: Dict[Tuple_, int] = {}
    tuples: List[Tuple_] = []
    lins = [lineage(q, s, index, tuples) for q in queries]
    for lin in lins:
        lin.tuples = tuples
    return _oracle_from_lineages(lins, combine, s, cap)


def world_count(q: Query, s: ProbStructure) -> int:
    return 1 << lineage(q, s).size


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class MCResult:
    estimate: float
    stderr: float
    samples: int
    seed: int
    hits: int


def mc_eval(q: Query, s: ProbStructure, samples: int = 100_000, seed: int = 0, batch: int = 100_000) -> MCResult:
    """Sample worlds independently per tuple; binomial standard error.

    Deterministic for a fixed seed: draws come from numpy's PCG64 stream
    regardless of which world-checking backend is active.
    """
    if samples <= 0:
        raise ValueError("samples must be positive")
    lin = lineage(q, s)
    rng = np.random.default_rng(seed)
    probs = np.array([float(s.probs[t]) for t in lin.tuples], dtype=float)
    m = len(probs)
    words = max(1, (m + 63) // 64)
    pos, neg = _masks(lin.clauses, words)
    hits = 0
    done = 0
    while done < samples:
        n = min(batch, samples - done)
        draws = rng.random((n, m)) < probs if m else np.zeros((n, 0), dtype=bool)
        if lin.certain:
            hits += n
        else:
            w = np.zeros((n, words), dtype=np.uint64)
            for k in range(m):
                w[:, k // 64] |= draws[:, k].astype(np.uint64) << np.uint64(k % 64)
            hits += int(_kernel.eval_worlds(w, pos, neg).sum())
        done += n
    est = hits / samples
    return MCResult(est, math.sqrt(est * (1 - est) / samples), samples, seed, hits)


__all__ = [
    "BACKEND", "CapExceeded", "DEFAULT_ORACLE_CAP", "Lineage", "MCResult", "ProbStructure", "StructureError",
    "lineage", "load_structure", "make_structure", "mc_eval", "oracle_eval", "oracle_many", "parse_prob", "random_structure", "full_structure",
    "satisfied", "valuations", "weighted_sum", "world_prob",
]
