"""Negation normal form: no implications, negations only in front of atoms."""

from __future__ import annotations

from .formula import And, Atom, Exists, Forall, Formula, Implies, Not, Or


def to_nnf(f: Formula) -> Formula:
    """Eliminate ``->`` by material implication and push ``not`` down to atoms.

    Quantifiers are dualised when a negation crosses them; the guard stays on
    the quantifier because it restricts the domain, not the matrix.
    """
    return _pos(f)


def _pos(f):
    if isinstance(f, Atom):
        return f
    if isinstance(f, Not):
        return _neg(f.child)
    if isinstance(f, And):
        return And(tuple(_pos(c) for c in f.children))
    if isinstance(f, Or):
        return Or(tuple(_pos(c) for c in f.children))
    if isinstance(f, Implies):
        return Or((_neg(f.antecedent), _pos(f.consequent)))
    if isinstance(f, Forall):
        return Forall(f.vars, f.guard, _pos(f.body))
    if isinstance(f, Exists):
        return Exists(f.vars, f.guard, _pos(f.body))
    raise TypeError(f"not a formula: {f!r}")


def _neg(f):
    """NNF of ``not f``."""
    if isinstance(f, Atom):
        return Not(f)
    if isinstance(f, Not):
        return _pos(f.child)
    if isinstance(f, And):
        return Or(tuple(_neg(c) for c in f.children))
    if isinstance(f, Or):
        return And(tuple(_neg(c) for c in f.children))
    if isinstance(f, Implies):
        return And((_pos(f.antecedent), _neg(f.consequent)))
    if isinstance(f, Forall):
        return Exists(f.vars, f.guard, _neg(f.body))
    if isinstance(f, Exists):
        return Forall(f.vars, f.guard, _neg(f.body))
    raise TypeError(f"not a formula: {f!r}")


def is_nnf(f: Formula) -> bool:
    if isinstance(f, Atom):
        return True
    if isinstance(f, Not):
        return isinstance(f.child, Atom)
    if isinstance(f, (And, Or)):
        return all(is_nnf(c) for c in f.children)
    if isinstance(f, Implies):
        return False
    return is_nnf(f.body)
