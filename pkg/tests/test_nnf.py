import itertools

from hypothesis import given, strategies as st

from logltn.formula import And, Atom, Exists, Forall, Implies, Not, Or, parse_formula
from logltn.nnf import is_nnf, to_nnf

from reference import PREDS, formulas


def boolean(f, assign, world, n):
    """Classical two-valued evaluation over a domain of ``n`` individuals."""
    if isinstance(f, Atom):
        return world[(f.predicate, tuple(assign[t.name] for t in f.args))]
    if isinstance(f, Not):
        return not boolean(f.child, assign, world, n)
    if isinstance(f, And):
        return all(boolean(c, assign, world, n) for c in f.children)
    if isinstance(f, Or):
        return any(boolean(c, assign, world, n) for c in f.children)
    if isinstance(f, Implies):
        return (not boolean(f.antecedent, assign, world, n)) or boolean(f.consequent, assign, world, n)
    vals = []
    for combo in itertools.product(range(n), repeat=len(f.vars)):
        a = dict(assign)
        a.update(zip(f.vars, combo))
        vals.append(boolean(f.body, a, world, n))
    return all(vals) if isinstance(f, Forall) else any(vals)


def test_quantifier_duality_keeps_guard():
    f = parse_formula("not forall (x | g) P(x)")
    assert to_nnf(f) == Exists(("x",), "g", Not(Atom("P", f.child.body.args)))


def test_implication_is_eliminated():
    f = parse_formula("forall (c, x, y | close) (C(x, c) -> C(y, c))")
    assert to_nnf(f) == parse_formula("forall (c, x, y | close) (not C(x, c) or C(y, c))")


def test_double_negation():
    assert to_nnf(parse_formula("not not P()")) == parse_formula("P()")


@given(formulas())
def test_output_is_nnf_and_idempotent(f):
    g = to_nnf(f)
    assert is_nnf(g)
    assert to_nnf(g) == g


@given(formulas(depth=3), st.integers(0, 2**16))
def test_classically_equivalent(f, bits):
    n = 2
    ground = [(p, args) for p, k in PREDS.items() for args in itertools.product(range(n), repeat=k)]
    world = {a: bool((bits >> i) & 1) for i, a in enumerate(ground)}
    assert boolean(to_nnf(f), {}, world, n) == boolean(f, {}, world, n)


def test_is_nnf_rejects_compound_negation():
    assert not is_nnf(parse_formula("not (P() and Q())"))
    assert not is_nnf(parse_formula("P() -> Q()"))
    assert is_nnf(parse_formula("not P() or Q()"))
