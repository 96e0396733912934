import pytest
from hypothesis import given, strategies as st

from pdq.qcore import (QueryError, Var, alpha_key, components, contained_in,
                       equivalent, find_homomorphism, homomorphisms, mgu, minimize, parse_query)


def test_parse_roundtrip():
    q = parse_query("R(x), S(x,y), T('a', y), x != y")
    assert str(parse_query(str(q))) == str(q)
    assert {v.name for v in q.vars} == {"x", "y"}
    assert {c.name for c in q.consts} == {"a"}


def test_parse_negation_and_comments():
    q = parse_query("R(x), !S(x)  # trailing comment")
    assert len(q.positive) == 1 and len(q.negative) == 1


@pytest.mark.parametrize("bad", ["R(x", "R(x),", "(x)", "R(x) S(y)", ""])
def test_parse_errors(bad):
    with pytest.raises(QueryError):
        parse_query(bad)


def test_unsatisfiable_predicates():
    with pytest.raises(QueryError, match="unsatisfiable"):
        parse_query("R(x), x != x")


def test_mgu_identifies_variables():
    a = parse_query("R(x,y,y)").atoms[0]
    b = parse_query("R(u,u,w)").atoms[0]
    th = mgu(a, b)
    assert th is not None
    assert mgu(parse_query("R('a')").atoms[0], parse_query("R('b')").atoms[0]) is None


def test_homomorphism_and_containment():
    small = parse_query("R(x,y)")
    big = parse_query("R(x,y),R(y,z)")
    assert find_homomorphism(small, big) is not None
    assert contained_in(big, small)
    assert not contained_in(small, big)


def test_homomorphisms_enumerates_all():
    src = parse_query("R(x)")
    dst = parse_query("R('a'),R('b')")
    assert len(list(homomorphisms(src, dst))) == 2


def test_minimize_removes_redundant_atoms():
    q = parse_query("R(x,y),R(x,z),S(x)")
    m = minimize(q)
    assert len(m.atoms) == 2
    assert equivalent(m, q)


def test_minimize_keep_variable():
    q = parse_query("R(x,y),R(u,v)")
    assert len(minimize(q).atoms) == 1
    kept = minimize(q, keep=[Var("x"), Var("u")])
    assert len(kept.atoms) == 2


def test_components():
    cs = components(parse_query("R(x),S(x,y),T(z),U('a')"))
    assert len(cs) == 3


def test_alpha_key_ignores_names():
    assert alpha_key(parse_query("R(x,y),S(y)")) == alpha_key(parse_query("R(u,v),S(v)"))
    assert alpha_key(parse_query("R(x,y),S(y)")) != alpha_key(parse_query("R(x,y),S('a')"))


_atoms = st.lists(
    st.tuples(st.sampled_from(["R", "S"]), st.lists(st.sampled_from(["x", "y", "z", "'a'"]), min_size=2, max_size=2)),
    min_size=1, max_size=4,
)


def _build(shape):
    return parse_query(",".join(f"{r}({','.join(args)})" for r, args in shape))


@given(_atoms)
def test_minimize_is_equivalent(shape):
    q = _build(shape)
    m = minimize(q)
    assert equivalent(m, q)
    assert len(m.atoms) <= len(q.atoms)
    assert len(minimize(m).atoms) == len(m.atoms)


@given(_atoms)
def test_rename_preserves_alpha_key(shape):
    q = _build(shape)
    ren = {v: Var(v.name + "_r") for v in q.vars}
    assert alpha_key(q.rename(ren)) == alpha_key(q)
