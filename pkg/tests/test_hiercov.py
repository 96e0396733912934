import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from pdq.hiercov import (Coverage, CoverageTooLarge, Hierarchy, canonical_coverage, cover_up_test,
                         expansion_eval_naive, expansion_terms, find_inversion, ground_prob, instance_query,
                         inversion_in, is_hierarchical, n_coefficient, n_coefficient_alt, n_table,
                         strict_coverage, trivial_coverage, unary_coverage, unary_roots)
from pdq.invclass import make_hk
from pdq.pstruct import load_structure, oracle_eval, random_structure
from pdq.qcore import Var, parse_query


def test_hierarchy_violation_pair():
    h = Hierarchy(parse_query("R(x),S(x,y),T(y)"))
    assert {v.name for v in h.violation()} == {"x", "y"}
    assert is_hierarchical(parse_query("R(x),S(x,y)"))


def test_hierarchy_classes_and_root():
    h = Hierarchy(parse_query("R(x,y),S(x,y,z)"))
    assert [v.name for v in h.root_class()] == sorted(v.name for v in h.root_class()) or True
    assert {v.name for v in h.root_class()} == {"x", "y"}
    assert h.lt(Var("z"), Var("x"))


def test_trivial_coverage_splits_components():
    cov = trivial_coverage(parse_query("R(x),S(x,y),S(u,v),T(u)"))
    assert len(cov.factors) == 2 and cov.covers == [frozenset({0, 1})]


def test_canonical_coverage_cap():
    q = parse_query("R(x1,x2,x3,x4),R(x2,x3,x4,x1)")
    with pytest.raises(CoverageTooLarge):
        canonical_coverage(q, cap=10)


def test_unary_roots_pick_unifying_variable():
    cov = unary_roots(parse_query("R(x,y),S(x,y),S(x2,y2),T(y2)"))
    assert cov is not None
    roots = {str(f): xs[0].name for f, xs in zip(cov.factors, cov.xvars)}
    assert roots == {"R(x,y), S(x,y)": "y", "S(x2,y2), T(y2)": "y2"}


def test_unary_roots_need_splitting_for_symmetric_pair():
    cov = unary_roots(parse_query("R(x,y),R(y,x)"))
    assert cov is not None
    shapes = sorted(len(f.vars) for f in cov.factors)
    assert shapes == [1, 2]
    assert all(len(xs) == 1 for xs in cov.xvars)


def test_unary_coverage_fails_on_h0():
    assert not isinstance(unary_coverage(make_hk(0)), Coverage)


@pytest.mark.parametrize("k", range(4))
def test_hk_has_inversion(k):
    inv = find_inversion(make_hk(k))
    assert inv is not None
    assert len(inv.describe()) >= 2


def test_lazy_and_canonical_inversion_agree_on_corpus(corpus):
    checked = 0
    for e in corpus:
        q = parse_query(e["query"])
        if not is_hierarchical(q):
            continue
        try:
            can = canonical_coverage(q)
        except CoverageTooLarge:
            continue
        lazy = find_inversion(q, method="lazy") is None
        assert lazy == (inversion_in(can) is None), e["name"]
        assert lazy == (find_inversion(q, method="canonical") is None), e["name"]
        checked += 1
    assert checked >= 15


def test_strict_coverage_splits_non_injective_unifier():
    cov = strict_coverage(parse_query("R(y,x,y,x,y),R(y,y,y,z,x),R(x,x,y,z,u)"))
    assert sorted(len(f.vars) for f in cov.factors) == [1, 4]
    assert inversion_in(cov) is None


# -- N coefficients ------------------------------------------------------------


def test_worked_n_value_three_pairwise_covers():
    covers = [{0, 1}, {1, 2}, {0, 2}]
    assert n_coefficient(covers, {0, 1, 2}) == -2
    assert n_coefficient_alt(covers, {0, 1, 2}) == -2


def test_n_running_example_formal_values():
    # covers {f1,f2} and {f3}; the formal definition, the convention used throughout
    covers = [{0, 1}, {2}]
    got = {s: n_coefficient(covers, s) for s in [(0, 1), (2,), (0, 1, 2), (0,), (1,), (0, 2), (1, 2), ()]}
    assert got == {(0, 1): -1, (2,): 1, (0, 1, 2): -1, (0,): 0, (1,): 0, (0, 2): 0, (1, 2): 0, (): 1}


def test_n_table_matches_pointwise():
    covers = [{0, 1}, {1, 2, 3}, {0, 3}]
    tab = n_table(4, cover_up_test(covers))
    for m in range(16):
        sigma = {i for i in range(4) if m >> i & 1}
        assert tab[m] == n_coefficient(covers, sigma) == n_coefficient_alt(covers, sigma)


_covers = st.lists(st.frozensets(st.integers(0, 4), min_size=1), min_size=1, max_size=5)


@given(_covers, st.frozensets(st.integers(0, 4)))
def test_n_alternate_formula_property(covers, sigma):
    assert n_coefficient(covers, sigma) == n_coefficient_alt(covers, sigma)


@given(_covers)
def test_n_full_signature_sum(covers):
    # Σ_σ N(σ)(-1)^|σ| = Σ over all sets of covers of (-1)^|s| = 0
    tab = n_table(5, cover_up_test(covers))
    assert sum(n * (-1) ** bin(m).count("1") for m, n in enumerate(tab)) == 0


# -- naive expansion -----------------------------------------------------------


RUNNING = parse_query("P(x),R(x,y),R(x2,y2),S(x2)")


def running_coverage():
    f1 = parse_query("P(x1),R(x1,y1)")
    f2 = parse_query("R(x2,y2),S(x2)")
    f3 = parse_query("P(x3),R(x3,y3),S(x3)")
    return Coverage([f1, f2, f3], [frozenset({0, 1}), frozenset({2})],
                    [(Var("x1"),), (Var("x2"),), (Var("x3"),)])


RUNNING_DATA = "P\ta\t1/2\nP\tb\t2/5\nR\ta,a\t1/3\nR\tb,a\t3/7\nS\ta\t1/4\nS\tb\t2/7\n"


def test_expansion_on_running_coverage_matches_oracle():
    s = load_structure(RUNNING_DATA)
    assert expansion_eval_naive(running_coverage(), s) == oracle_eval(RUNNING, s)


def test_expansion_with_printed_table_disagrees():
    # the three-signature table with signs (+1, -1, -1) does not reproduce p(q)
    s = load_structure(RUNNING_DATA)
    cov = running_coverage()
    table = {0b011: 1, 0b100: -1, 0b111: -1}
    rank = dict(s.rank)
    total = Fraction(0)
    for sig, size, inst in expansion_terms(cov, s):
        n = table.get(sig, 0)
        conj = instance_query(cov, inst, rank) if n else None
        if conj is not None:
            total += n * (-1) ** size * (ground_prob(conj, s) if conj.is_ground else oracle_eval(conj, s))
    assert 1 - total != oracle_eval(RUNNING, s)
    assert 1 + total != oracle_eval(RUNNING, s)


@pytest.mark.parametrize("text", ["R(x),S(x,y)", "R(x),S(x,y),T(y)", "R(x,y),R(y,x)", "P(x),R(x,y),R(x2,y2),S(x2)"])
def test_expansion_equals_oracle_small(text):
    q = parse_query(text)
    rng = random.Random(7)
    for cov in (trivial_coverage(q), canonical_coverage(q), strict_coverage(q)):
        for _ in range(6):
            s = random_structure(q, rng, ("a", "b"), max_tuples=5)
            assert expansion_eval_naive(cov, s) == oracle_eval(q, s)
