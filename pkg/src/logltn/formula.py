"""First-order formula AST plus a small text DSL.

Grammar of ``.kb`` files::

    kb            := (const_decl | named_formula)+
    named_formula := [identifier ":"] formula ";"
    formula       := quant | implies
    quant         := ("forall"|"exists") "(" var_list ["|" identifier] ")" formula
                   | ("forall"|"exists") identifier formula
    implies       := or ("->" or)?
    or            := and ("or" and)*
    and           := unary ("and" unary)*
    unary         := "not" unary | quant | atom | "(" formula ")"
    atom          := identifier "(" [term ("," term)*] ")"
    term          := identifier | "@" identifier

A bare identifier in argument position is a variable and must be bound by an
enclosing quantifier. Individuals (constants) carry an ``@`` prefix, e.g.
``is_friend(@a, @b)``. ``#`` starts a comment that runs to the end of the line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

from .errors import ParseError, UnboundVariableError

IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
KEYWORDS = frozenset({"forall", "exists", "not", "and", "or"})


def _check_ident(name: str, what: str) -> None:
    if not isinstance(name, str) or not IDENT.match(name):
        raise ValueError(f"invalid {what} name {name!r}")
    if name in KEYWORDS:
        raise ValueError(f"{what} name {name!r} is a reserved keyword")


# ---------------------------------------------------------------------------
# Terms and formulas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariableRef:
    name: str

    def __post_init__(self):
        _check_ident(self.name, "variable")


@dataclass(frozen=True)
class ConstantRef:
    name: str

    def __post_init__(self):
        _check_ident(self.name, "constant")


Term = Union[VariableRef, ConstantRef]


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple = ()

    def __post_init__(self):
        _check_ident(self.predicate, "predicate")
        object.__setattr__(self, "args", tuple(self.args))
        for a in self.args:
            if not isinstance(a, (VariableRef, ConstantRef)):
                raise TypeError(f"atom argument must be a term, got {a!r}")


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("And needs at least two children")


@dataclass(frozen=True)
class Or:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("Or needs at least two children")


@dataclass(frozen=True)
class Implies:
    antecedent: "Formula"
    consequent: "Formula"


@dataclass(frozen=True)
class _Quantifier:
    vars: tuple
    guard: Optional[str]
    body: "Formula"

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(self.vars))
        if not self.vars:
            raise ValueError("quantifier binds no variables")
        if len(set(self.vars)) != len(self.vars):
            raise ValueError(f"duplicate variable in quantifier {self.vars}")
        for v in self.vars:
            _check_ident(v, "variable")
        if self.guard is not None:
            _check_ident(self.guard, "guard")


@dataclass(frozen=True)
class Forall(_Quantifier):
    pass


@dataclass(frozen=True)
class Exists(_Quantifier):
    pass


Formula = Union[Atom, Not, And, Or, Implies, Forall, Exists]


@dataclass(frozen=True)
class Knowledgebase:
    formulas: tuple
    names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "formulas", tuple(self.formulas))
        names = tuple(self.names) if self.names else (None,) * len(self.formulas)
        if len(names) != len(self.formulas):
            raise ValueError("one name (or None) per formula")
        object.__setattr__(self, "names", names)
        if not self.formulas:
            raise ValueError("knowledgebase is empty")
        for f in self.formulas:
            free = free_variables(f)
            if free:
                raise UnboundVariableError(sorted(free)[0])

    def __len__(self):
        return len(self.formulas)

    def labels(self) -> list[str]:
        return [n if n is not None else f"phi{i}" for i, n in enumerate(self.names)]


def free_variables(f: Formula) -> set[str]:
    if isinstance(f, Atom):
        return {a.name for a in f.args if isinstance(a, VariableRef)}
    if isinstance(f, Not):
        return free_variables(f.child)
    if isinstance(f, (And, Or)):
        return set().union(*(free_variables(c) for c in f.children))
    if isinstance(f, Implies):
        return free_variables(f.antecedent) | free_variables(f.consequent)
    if isinstance(f, (Forall, Exists)):
        return free_variables(f.body) - set(f.vars)
    raise TypeError(f"not a formula: {f!r}")


def atoms(f: Formula) -> Iterator[Atom]:
    """Yield every atom of ``f`` in source order."""
    if isinstance(f, Atom):
        yield f
    elif isinstance(f, Not):
        yield from atoms(f.child)
    elif isinstance(f, (And, Or)):
        for c in f.children:
            yield from atoms(c)
    elif isinstance(f, Implies):
        yield from atoms(f.antecedent)
        yield from atoms(f.consequent)
    else:
        yield from atoms(f.body)


def symbols(f: Formula) -> dict[str, set[str]]:
    """Predicates, constants, quantified variables and guards a formula needs."""
    out = {"predicates": set(), "constants": set(), "variables": set(), "guards": set()}

    def walk(g):
        if isinstance(g, Atom):
            out["predicates"].add(g.predicate)
            for a in g.args:
                if isinstance(a, ConstantRef):
                    out["constants"].add(a.name)
        elif isinstance(g, Not):
            walk(g.child)
        elif isinstance(g, (And, Or)):
            for c in g.children:
                walk(c)
        elif isinstance(g, Implies):
            walk(g.antecedent)
            walk(g.consequent)
        else:
            out["variables"].update(g.vars)
            if g.guard is not None:
                out["guards"].add(g.guard)
            walk(g.body)

    walk(f)
    return out


def size(f: Formula) -> int:
    """Number of AST nodes."""
    if isinstance(f, Atom):
        return 1
    if isinstance(f, Not):
        return 1 + size(f.child)
    if isinstance(f, (And, Or)):
        return 1 + sum(size(c) for c in f.children)
    if isinstance(f, Implies):
        return 1 + size(f.antecedent) + size(f.consequent)
    return 1 + size(f.body)


# ---------------------------------------------------------------------------
# Pretty printer
# ---------------------------------------------------------------------------


def _term_str(t: Term) -> str:
    return t.name if isinstance(t, VariableRef) else "@" + t.name


def _operand(f: Formula) -> str:
    # quantifiers extend as far right as possible, so they need parens as operands
    s = pretty_print(f)
    return f"({s})" if isinstance(f, (Forall, Exists)) else s


def pretty_print(f: Formula) -> str:
    if isinstance(f, Atom):
        return f"{f.predicate}({', '.join(_term_str(a) for a in f.args)})"
    if isinstance(f, Not):
        return "not " + _operand(f.child)
    if isinstance(f, And):
        return "(" + " and ".join(_operand(c) for c in f.children) + ")"
    if isinstance(f, Or):
        return "(" + " or ".join(_operand(c) for c in f.children) + ")"
    if isinstance(f, Implies):
        return f"({_operand(f.antecedent)} -> {_operand(f.consequent)})"
    if isinstance(f, (Forall, Exists)):
        kw = "forall" if isinstance(f, Forall) else "exists"
        head = ", ".join(f.vars)
        if f.guard is not None:
            head += f" | {f.guard}"
        body = pretty_print(f.body)
        if isinstance(f.body, (Atom, Not)):
            body = f"({body})"
        return f"{kw} ({head}) {body}"
    raise TypeError(f"not a formula: {f!r}")


def pretty_print_kb(kb: Knowledgebase) -> str:
    lines = []
    for name, f in zip(kb.names, kb.formulas):
        prefix = f"{name}: " if name is not None else ""
        lines.append(f"{prefix}{pretty_print(f)};")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+) |
    (?P<nl>\n) |
    (?P<comment>\#[^\n]*) |
    (?P<arrow>->) |
    (?P<ident>[A-Za-z_][A-Za-z0-9_]*) |
    (?P<sym>[(),|;:@])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str  # "ident", "kw", "sym", "eof"
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "ident":
            toks.append(_Tok("kw" if text in KEYWORDS else "ident", text, line, col))
        elif kind in ("arrow", "sym"):
            toks.append(_Tok("sym", text, line, col))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, k=1) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        return ParseError(f"{msg}, found {found}", tok.line, tok.col)

    def at(self, text) -> bool:
        return self.tok.kind in ("sym", "kw") and self.tok.text == text

    def expect(self, text) -> _Tok:
        if not self.at(text):
            raise self.error(f"expected {text!r}")
        tok = self.tok
        self.i += 1
        return tok

    def ident(self, what="identifier") -> str:
        if self.tok.kind != "ident":
            raise self.error(f"expected {what}")
        name = self.tok.text
        self.i += 1
        return name

    # formula := quant | implies
    def formula(self, bound: frozenset) -> Formula:
        if self.at("forall") or self.at("exists"):
            return self.quant(bound)
        return self.implies(bound)

    def quant(self, bound):
        cls = Forall if self.tok.text == "forall" else Exists
        self.i += 1
        guard = None
        if self.at("("):
            self.i += 1
            names = [self.ident("variable")]
            while self.at(","):
                self.i += 1
                names.append(self.ident("variable"))
            if self.at("|"):
                self.i += 1
                guard = self.ident("guard name")
            self.expect(")")
        else:
            names = [self.ident("variable")]
        if len(set(names)) != len(names):
            raise self.error(f"duplicate variable in {names}")
        body = self.formula(bound | frozenset(names))
        return cls(tuple(names), guard, body)

    def implies(self, bound):
        left = self.disjunction(bound)
        if self.at("->"):
            self.i += 1
            right = self.disjunction(bound)
            if self.at("->"):
                raise self.error("'->' is not associative; add parentheses")
            return Implies(left, right)
        return left

    def disjunction(self, bound):
        items = [self.conjunction(bound)]
        while self.at("or"):
            self.i += 1
            items.append(self.conjunction(bound))
        return items[0] if len(items) == 1 else Or(tuple(items))

    def conjunction(self, bound):
        items = [self.unary(bound)]
        while self.at("and"):
            self.i += 1
            items.append(self.unary(bound))
        return items[0] if len(items) == 1 else And(tuple(items))

    def unary(self, bound):
        if self.at("not"):
            self.i += 1
            return Not(self.unary(bound))
        if self.at("("):
            self.i += 1
            f = self.formula(bound)
            self.expect(")")
            return f
        if self.at("forall") or self.at("exists"):
            # a quantifier in operand position scopes over the rest of the input
            return self.quant(bound)
        if self.tok.kind == "ident":
            return self.atom(bound)
        raise self.error("expected a formula")

    def atom(self, bound):
        pred = self.ident("predicate")
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.term(bound))
            while self.at(","):
                self.i += 1
                args.append(self.term(bound))
        self.expect(")")
        return Atom(pred, tuple(args))

    def term(self, bound):
        if self.at("@"):
            self.i += 1
            return ConstantRef(self.ident("constant"))
        name = self.ident("term")
        if name not in bound:
            raise UnboundVariableError(name)
        return VariableRef(name)

    def kb(self) -> Knowledgebase:
        formulas, names = [], []
        while self.tok.kind != "eof":
            name = None
            if self.tok.kind == "ident" and self.peek().text == ":":
                name = self.ident()
                self.i += 1
            formulas.append(self.formula(frozenset()))
            names.append(name)
            self.expect(";")
        if not formulas:
            raise self.error("knowledgebase contains no formulas")
        return Knowledgebase(tuple(formulas), tuple(names))


def parse_formula(src: str) -> Formula:
    """Parse a single closed formula (an optional trailing ``;`` is accepted)."""
    p = _Parser(src)
    f = p.formula(frozenset())
    if p.at(";"):
        p.i += 1
    if p.tok.kind != "eof":
        raise p.error("unexpected trailing input")
    return f


def parse_kb(src: str) -> Knowledgebase:
    return _Parser(src).kb()


def load_kb(path) -> Knowledgebase:
    return parse_kb(Path(path).read_text(encoding="utf-8"))
