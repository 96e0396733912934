"""The eight acceptance criteria; each test prints one PASS/FAIL line."""

import random
import time
from fractions import Fraction

import pytest

from pdq.evalptime import Prop, Unsupported, V, closed_sum, eval_property, evaluate, oracle_property, s_phi
from pdq.hiercov import (CoverageTooLarge, canonical_coverage, cover_up_test, expansion_eval_naive, n_coefficient,
                         n_coefficient_alt, n_table, n_table_direct, strict_coverage, trivial_coverage,
                         unary_coverage, Coverage)
from pdq.invclass import HARD, classify
from pdq.pstruct import CapExceeded, full_structure, load_structure, mc_eval, oracle_eval, random_structure
from pdq.qcore import parse_query

RESULTS = {}


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print("\n" + line)


def label(v):
    return "SharpPHard" if v.cls == HARD else "PTIME"


# -- 1 ---------------------------------------------------------------------------------


def test_criterion_1_classification(corpus):
    t0 = time.perf_counter()
    labeled = [e for e in corpus if e["group"] == "labeled"]
    wrong = []
    for e in labeled:
        if label(classify(parse_query(e["query"]))) != e["expect"]:
            wrong.append(e["name"])
    dt = time.perf_counter() - t0
    unexplained = [w for w in wrong if not next(e for e in labeled if e["name"] == w).get("known_conflict")]
    report(1, not wrong and dt < 60,
           f"{len(labeled) - len(wrong)}/{len(labeled)} labels in {dt:.1f}s"
           + (f"; disagrees: {', '.join(wrong)} (see decisions ledger)" if wrong else ""))
    assert not unexplained, unexplained
    assert dt < 60


@pytest.mark.xfail(strict=True, reason="label says hard; the query is inversion-free and evaluates exactly")
def test_criterion_1_recorded_label_for_swapped_triple(corpus_by_name):
    e = corpus_by_name["five_ary_triple_swapped"]
    assert label(classify(parse_query(e["query"]))) == e["expect"]


# -- 2 ---------------------------------------------------------------------------------


def test_criterion_2_oracle_equivalence(corpus):
    t0 = time.perf_counter()
    seen = set()
    checked = bad = 0
    for e in corpus:
        q = parse_query(e["query"])
        if e["query"] in seen or not classify(q).ptime:
            continue
        seen.add(e["query"])
        rng = random.Random(e["name"])
        for _ in range(50):
            dom = ("a", "b", "c", "d")[: rng.randint(2, 4)]
            s = random_structure(q, rng, dom, max_tuples=rng.randint(4, 14))
            checked += 1
            if evaluate(q, s).value != oracle_eval(q, s):
                bad += 1
    dt = time.perf_counter() - t0
    report(2, bad == 0 and dt < 600, f"{checked - bad}/{checked} exact matches over {len(seen)} PTIME queries in {dt:.0f}s")
    assert bad == 0 and dt < 600


# -- 3 ---------------------------------------------------------------------------------


def test_criterion_3_expansion_identity(corpus):
    seen = set()
    checked = bad = 0
    fallback = []
    for e in corpus:
        if e["query"] in seen:
            continue
        seen.add(e["query"])
        q = parse_query(e["query"])
        covs = [trivial_coverage(q)]
        try:
            covs.append(canonical_coverage(q))
        except CoverageTooLarge:
            covs.append(strict_coverage(q))
            fallback.append(e["name"])
        rng = random.Random(e["name"])
        done = 0
        while done < 25:
            s = random_structure(q, rng, ("a", "b"), max_tuples=rng.randint(3, 6))
            try:
                vals = [expansion_eval_naive(c, s, max_terms=1 << 16) for c in covs]
            except CapExceeded:
                continue
            done += 1
            o = oracle_eval(q, s)
            checked += len(vals)
            bad += sum(v != o for v in vals)
    report(3, bad == 0, f"{checked - bad}/{checked} exact; strict coverage stands in for the canonical one "
                        f"past its cap on {len(fallback)} queries")
    assert bad == 0


# -- 4 ---------------------------------------------------------------------------------


def _atoms(k):
    out = [("disjoint", i, j) for i in range(1, k + 1) for j in range(i + 1, k + 1)]
    out += [("subset", i, j) for i in range(1, k + 1) for j in range(1, k + 1) if i != j]
    return out


def _brute_by_shape(k, n, g, nonempty):
    """Σ of ḡ(T̄) for every shape at once: bucket set tuples by the atoms they satisfy, then superset-sum."""
    atoms = _atoms(k)
    na = len(atoms)
    bucket = [Fraction(0)] * (1 << na)
    full = (1 << n) - 1
    weights = [[Fraction(1)] * (1 << n) for _ in range(k)]
    for i in range(k):
        for m in range(1 << n):
            w = Fraction(1)
            for a in range(n):
                if m >> a & 1:
                    w *= g[i][a]
            weights[i][m] = w

    def rec(i, ts, w):
        if i == k:
            sat = 0
            for b, (kind, x, y) in enumerate(atoms):
                tx, ty = ts[x - 1], ts[y - 1]
                if (kind == "disjoint" and not tx & ty) or (kind == "subset" and not tx & ~ty & full):
                    sat |= 1 << b
            bucket[sat] += w
            return
        for m in range(1 << n):
            if nonempty and not m:
                continue
            rec(i + 1, ts + [m], w * weights[i][m])

    rec(0, [], Fraction(1))
    for b in range(na):
        bit = 1 << b
        for m in range(1 << na):
            if not m & bit:
                bucket[m] += bucket[m | bit]
    return atoms, bucket


def test_criterion_4_closed_sums():
    rng = random.Random(4)
    shapes = bad = 0
    for k in (1, 2, 3):
        for n in (1, 2, 3, 4):
            g = [[Fraction(rng.randint(-5, 5), rng.randint(1, 6)) for _ in range(n)] for _ in range(k)]
            dom = [f"a{i}" for i in range(n)]
            gmaps = [dict(zip(dom, gi)) for gi in g]
            for nonempty in (False, True):
                atoms, brute = _brute_by_shape(k, n, g, nonempty)
                for m in range(1 << len(atoms)):
                    phi = [atoms[b] for b in range(len(atoms)) if m >> b & 1]
                    shapes += 1
                    bad += closed_sum(phi, gmaps, dom, nonempty).value != brute[m]
    phi = [("disjoint", 1, 2), ("disjoint", 2, 3), ("subset", 4, 2)]
    sets_ok = sorted(s_phi(phi, 4)) == sorted([(), (1,), (2,), (2, 4), (3,), (1, 3)])
    sizes_ok = all(closed_sum(phi, [{}] * 4, [str(i) for i in range(n)]).size == 8 * n for n in range(1, 20))
    ok = bad == 0 and sets_ok and sizes_ok
    report(4, ok, f"{shapes - bad}/{shapes} shape/size/variant cases exact; four-set example "
                  f"signatures {'match' if sets_ok else 'differ'}, size 8N {'matches' if sizes_ok else 'differs'}")
    assert ok


# -- 5 ---------------------------------------------------------------------------------


PRINTED_TABLE = {(0, 1): 1, (2,): -1, (0, 1, 2): -1}


def _coverages(q):
    out = [trivial_coverage(q), strict_coverage(q)]
    try:
        out.append(canonical_coverage(q))
    except CoverageTooLarge:
        pass
    u = unary_coverage(q)
    if isinstance(u, Coverage):
        out.append(u)
    return out


def _signatures(cov, rng):
    """Every σ when 2^k is small, else all σ with |σ| <= 3 plus unions of random cover sets."""
    k = len(cov.factors)
    if k <= 20:
        return None
    sigs = {0}
    for i in range(k):
        for j in range(i, k):
            for l in range(j, k):
                sigs.add((1 << i) | (1 << j) | (1 << l))
    cm = cov.cover_masks
    for _ in range(400):
        m = 0
        for c in rng.sample(cm, min(len(cm), rng.randint(1, 4))):
            m |= c
        sigs.add(m)
        sigs.add(m | (1 << rng.randrange(k)))
    return sorted(sigs)


def test_criterion_5_n_coefficients(corpus):
    worked = n_coefficient([{0, 1}, {1, 2}, {0, 2}], {0, 1, 2})
    running = [{0, 1}, {2}]
    table_nonzero = {s: n_coefficient(running, s) for s in PRINTED_TABLE}
    others_zero = all(n_coefficient(running, {i for i in range(3) if m >> i & 1}) == 0
                      for m in range(1, 8) if m not in (0b011, 0b100, 0b111))
    literal = table_nonzero == PRINTED_TABLE
    magnitudes = all(abs(table_nonzero[s]) == abs(v) for s, v in PRINTED_TABLE.items())
    rng = random.Random(5)
    covs = sigs = bad = 0
    exhaustive = sampled = 0
    for e in corpus:
        for cov in _coverages(parse_query(e["query"])):
            covs += 1
            k = len(cov.factors)
            chosen = _signatures(cov, rng)
            if chosen is None:
                exhaustive += 1
                direct = n_table_direct(k, cov.covers)
                alt = n_table(k, cover_up_test(cov.covers))
                sigs += len(direct)
                bad += sum(a != b for a, b in zip(direct, alt))
                for m in rng.sample(range(1 << k), min(64, 1 << k)):
                    bad += n_coefficient(cov.covers, m) != n_coefficient_alt(cov.covers, m)
            else:
                sampled += 1
                for m in chosen:
                    sigs += 1
                    bad += n_coefficient(cov.covers, m) != n_coefficient_alt(cov.covers, m)
    ok = worked == -2 and literal and others_zero and bad == 0
    report(5, ok, f"worked value {worked}; three-signature table as printed {'reproduced' if literal else 'NOT reproduced'}"
                  f" (definition gives {[table_nonzero[s] for s in PRINTED_TABLE]}, printed "
                  f"{list(PRINTED_TABLE.values())}, see decisions ledger); alternate formula agrees on "
                  f"{sigs - bad}/{sigs} signatures of {covs} coverages ({exhaustive} exhaustive, {sampled} sampled)")
    assert worked == -2 and magnitudes and others_zero and bad == 0


@pytest.mark.xfail(strict=True, reason="printed signs differ from the definition, which matches the oracle")
def test_criterion_5_printed_table_literal():
    running = [{0, 1}, {2}]
    assert {s: n_coefficient(running, s) for s in PRINTED_TABLE} == PRINTED_TABLE


# -- 6 ---------------------------------------------------------------------------------


def test_criterion_6_scaling():
    details = []
    ok = True
    for text in ("R(x),S(x,y)", "P(x),R(x,y),R(x2,y2),S(x2)"):
        q = parse_query(text)
        rng = random.Random(6)
        sizes = [evaluate(q, full_structure(q, n, rng)).formula_size for n in (2, 4, 8, 16)]
        bound = 2 ** V(q) * 1.1
        ratios = [b / a for a, b in zip(sizes, sizes[1:])]
        ok &= all(r <= bound for r in ratios)
        details.append(f"{text}: sizes {sizes}, ratios {[round(r, 2) for r in ratios]} <= {bound:.1f}")
    report(6, ok, "; ".join(details))
    assert ok


# -- 7 ---------------------------------------------------------------------------------


def test_criterion_7_monte_carlo(corpus):
    seen = set()
    worst = 20
    queries = 0
    for e in corpus:
        if e["query"] in seen:
            continue
        seen.add(e["query"])
        q = parse_query(e["query"])
        s = load_structure(e["structure"])
        if len(s.probs) > 14:
            continue
        queries += 1
        o = float(oracle_eval(q, s))
        inside = 0
        for seed in range(20):
            r = mc_eval(q, s, 100_000, seed)
            inside += abs(r.estimate - o) <= 4 * r.stderr
        worst = min(worst, inside)
    report(7, worst >= 19, f"worst query has {worst}/20 seeds within 4 stderr over {queries} queries")
    assert worst >= 19


# -- 8 ---------------------------------------------------------------------------------


POOL = ["R(x)", "S(x,y)", "R(x),S(x,y)", "S(x,'a')", "T(x)", "S(x,x)", "R('a')", "S(x,y),T(x)",
        "R(x),T(x)", "S('a',y)", "R(x),S(x,y),S(x2,y2),T(x2)", "S(x,y),T(y)"]


def _random_prop(rng, leaves):
    if len(leaves) == 1:
        p = Prop.atom(leaves[0])
        return ~p if rng.random() < 0.4 else p
    cut = rng.randint(1, len(leaves) - 1)
    a, b = _random_prop(rng, leaves[:cut]), _random_prop(rng, leaves[cut:])
    p = a & b if rng.random() < 0.5 else a | b
    return ~p if rng.random() < 0.25 else p


def test_criterion_8_properties():
    rng = random.Random(8)
    checked = bad = rejected = 0
    while checked < 100:
        leaves = [parse_query(t) for t in rng.sample(POOL, rng.randint(1, 3))]
        phi = _random_prop(rng, leaves)
        union = parse_query(",".join(str(x) for x in leaves))
        s = random_structure(union, rng, ("a", "b", "c"), max_tuples=rng.randint(3, 10))
        try:
            got = eval_property(phi, s)
        except Unsupported:
            rejected += 1
            continue
        checked += 1
        bad += got != oracle_property(phi, s)
    report(8, bad == 0, f"{checked - bad}/{checked} exact ({rejected} drawn properties were not inversion-free)")
    assert bad == 0
