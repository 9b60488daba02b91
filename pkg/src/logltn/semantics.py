"""Operator configurations and the grounding compiler.

``ground`` lowers a formula onto a tape. Truth values travel as
:class:`TruthBatch` objects: a tape node whose axes correspond to the free
variables still in scope, tagged with the space (linear ``[0, 1]`` or log
``(-inf, 0]``) the values live in.

Configurations::

    kind         and    or / exists       forall            Sat
    logltn       +      LogMeanExp        mean              mean
    logltn-sum   +      LogMeanExp        sum               sum
    logltn-max   +      max               mean              mean
    logltn-lse   +      LogSumExp         mean              mean
    prodrl       xy     x+y-xy / pM       sum of logs       sum of logs
    stablerl     xy     x+y-xy / pM       pME               pME

The four log configurations require negation normal form. ``prodrl`` mixes
spaces: its universal quantifier emits log-truths that no linear connective
may consume.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import graph as G
from .errors import GroundingError, NNFError, SpaceMixingError
from .formula import (
    And, Atom, Exists, Forall, Formula, Implies, Not, Or, VariableRef,
    free_variables, pretty_print,
)
from .nnf import is_nnf


class Kind(str, enum.Enum):
    LOGLTN = "logltn"
    LOGLTN_SUM = "logltn-sum"
    LOGLTN_MAX = "logltn-max"
    LOGLTN_LSE = "logltn-lse"
    PRODRL = "prodrl"
    STABLERL = "stablerl"

    @property
    def is_log(self) -> bool:
        return self not in (Kind.PRODRL, Kind.STABLERL)

    @property
    def uses_alpha(self) -> bool:
        return self in (Kind.LOGLTN, Kind.LOGLTN_SUM, Kind.LOGLTN_LSE)

    @property
    def uses_p(self) -> bool:
        return not self.is_log


class Space(enum.Enum):
    LINEAR = "linear"
    LOG = "log"


# ---------------------------------------------------------------------------
# schedules and configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, step: int) -> float:
        return float(self.value)

    def extremes(self):
        return (float(self.value),)


@dataclass(frozen=True)
class Linear:
    """``start`` at step 0, ``end`` at ``total_steps``, held at ``end`` afterwards."""

    start: float
    end: float
    total_steps: int

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")

    def __call__(self, step: int) -> float:
        t = min(max(step, 0), self.total_steps) / self.total_steps
        return float(self.start + (self.end - self.start) * t)

    def extremes(self):
        return (float(self.start), float(self.end))


Schedule = Union[Constant, Linear]


@dataclass(frozen=True)
class SemanticsConfig:
    kind: Kind
    alpha: Schedule = Constant(1.0)
    p: Schedule = Constant(2.0)
    epsilon: float = 1e-7

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if any(a <= 0 for a in self.alpha.extremes()):
            raise ValueError("alpha must stay positive")
        if any(p < 1 for p in self.p.extremes()):
            raise ValueError("p must stay >= 1")
        if not 0 < self.epsilon < 1e-3:
            raise ValueError("epsilon must lie in (0, 1e-3)")

    @classmethod
    def default(cls, kind, steps: int = 1000) -> "SemanticsConfig":
        """Schedules used in the experiments: alpha 1 -> 4, p 1 -> 6, linear over the run."""
        return cls(Kind(kind), alpha=Linear(1.0, 4.0, steps), p=Linear(1.0, 6.0, steps))


# ---------------------------------------------------------------------------
# grounding environment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Guard:
    """Boolean mask over the cross product of ``vars`` (axis i <-> vars[i])."""

    vars: tuple
    mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(self.vars))
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != len(self.vars):
            raise GroundingError(f"guard over {self.vars} needs a {len(self.vars)}-d mask, got {m.ndim}-d")
        object.__setattr__(self, "mask", m)


@dataclass
class GroundingEnv:
    """Symbol table for grounding.

    ``variables`` map to batches (one row per individual; 1-d integer arrays
    for class-index variables), ``constants`` to embedding vectors (or an
    integer class id), ``predicates`` to objects implementing ``truth``,
    ``log_truth`` and ``log_not_truth``.
    """

    constants: dict = field(default_factory=dict)
    variables: dict = field(default_factory=dict)
    guards: dict = field(default_factory=dict)
    predicates: dict = field(default_factory=dict)

    def parameters(self) -> dict:
        out = {}
        for pred in self.predicates.values():
            if hasattr(pred, "parameters"):
                out.update(pred.parameters())
        return out


@dataclass(frozen=True)
class TruthBatch:
    node: G.Node
    space: Space
    free_vars: tuple = ()  # ((name, size), ...) in axis order
    axes: tuple = ()  # internal axis ids, same order

    @property
    def value(self) -> np.ndarray:
        return self.node.value


@dataclass
class Trace:
    """Intermediate recorded while grounding (for diagnostics and tests)."""

    tag: str  # "literal", "forall", "exists", "or"
    formula: Formula
    node: G.Node
    reduce_axes: tuple = ()
    mask: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# aggregation operators (tape level)
# ---------------------------------------------------------------------------


def lme(x: G.Node, alpha: float, axis=-1, mask=None) -> G.Node:
    """LogMeanExp: ``(1/a)(C + log(mean exp(a x - C)))``; never exceeds ``max(x)``."""
    return G.logsumexp(x, axis=axis, alpha=alpha, mask=mask, mean=True)


def lse(x: G.Node, alpha: float, axis=-1, mask=None) -> G.Node:
    """LogSumExp with max shift; may exceed ``max(x)`` by up to ``log(n)/a``."""
    return G.logsumexp(x, axis=axis, alpha=alpha, mask=mask, mean=False)


def squash(x: G.Node, eps: float) -> G.Node:
    """Map [0, 1] affinely onto [eps, 1 - eps] before taking logs or powers."""
    if eps == 0:
        return x
    return G.scale(x, 1.0 - 2.0 * eps) + eps


def pmean(x: G.Node, p: float, axis=-1, mask=None, eps: float = 0.0) -> G.Node:
    """Generalised mean ``(mean x^p)^(1/p)``: a smooth maximum for p > 1."""
    y = G.power(squash(x, eps), p)
    return G.power(G.mean_reduce(y, axis=axis, mask=mask), 1.0 / p)


def pmean_error(x: G.Node, p: float, axis=-1, mask=None, eps: float = 0.0) -> G.Node:
    """``1 - (mean (1 - x)^p)^(1/p)``: a smooth minimum for p > 1."""
    return 1.0 - pmean(1.0 - x, p, axis=axis, mask=mask, eps=eps)


def _stack(nodes):
    """Stack equal-shape nodes along a new leading axis (fast to reduce over)."""
    shape = nodes[0].shape
    return G.concat([G.reshape(n, (1,) + shape) for n in nodes], axis=0)


def sat_aggregate(truths, cfg: SemanticsConfig, step: int = 0) -> TruthBatch:
    """Aggregate closed-formula groundings into the knowledgebase satisfaction."""
    truths = list(truths)
    if not truths:
        raise GroundingError("nothing to aggregate")
    for t in truths:
        if t.axes:
            raise GroundingError("sat_aggregate needs closed (scalar) groundings")
    kind = cfg.kind
    if kind is Kind.PRODRL:
        nodes = [t.node if t.space is Space.LOG else G.log(squash(t.node, cfg.epsilon)) for t in truths]
        node = nodes[0] if len(nodes) == 1 else G.sum_reduce(_stack(nodes), axis=0)
        return TruthBatch(node, Space.LOG)
    spaces = {t.space for t in truths}
    if len(spaces) > 1:
        raise SpaceMixingError("knowledgebase groundings live in different spaces")
    space = spaces.pop()
    if len(truths) == 1:
        return truths[0]
    stacked = _stack([t.node for t in truths])
    if kind is Kind.STABLERL:
        return TruthBatch(pmean_error(stacked, cfg.p(step), axis=0, eps=cfg.epsilon), space)
    if kind is Kind.LOGLTN_SUM:
        return TruthBatch(G.sum_reduce(stacked, axis=0), space)
    return TruthBatch(G.mean_reduce(stacked, axis=0), space)


# ---------------------------------------------------------------------------
# space discipline
# ---------------------------------------------------------------------------


def _require_linear(kind, what, spaces, formula):
    if any(s is Space.LOG for s in spaces):
        raise SpaceMixingError(
            f"{kind.value}: '{what}' expects linear truth degrees but an operand is a "
            f"log-truth produced by a universal quantifier, in {pretty_print(formula)}; "
            f"this formula cannot be grounded as is under {kind.value}"
        )


def infer_space(f: Formula, kind) -> Space:
    """Static space check; raises the same errors ``ground`` would, without data."""
    kind = Kind(kind)
    if kind.is_log:
        if not is_nnf(f):
            raise NNFError(f"{kind.value} requires negation normal form: {pretty_print(f)}")
        return Space.LOG

    def walk(g):
        if isinstance(g, Atom):
            return Space.LINEAR
        if isinstance(g, Not):
            _require_linear(kind, "not", [walk(g.child)], g)
            return Space.LINEAR
        if isinstance(g, (And, Or)):
            _require_linear(kind, "and" if isinstance(g, And) else "or", [walk(c) for c in g.children], g)
            return Space.LINEAR
        if isinstance(g, Implies):
            _require_linear(kind, "->", [walk(g.antecedent), walk(g.consequent)], g)
            return Space.LINEAR
        inner = walk(g.body)
        if isinstance(g, Forall):
            if kind is Kind.PRODRL:
                return Space.LOG
            _require_linear(kind, "forall", [inner], g)
            return Space.LINEAR
        _require_linear(kind, "exists", [inner], g)
        return Space.LINEAR

    return walk(f)


# ---------------------------------------------------------------------------
# compiler
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Axis:
    id: int
    name: str
    data: np.ndarray

    @property
    def size(self):
        return len(self.data)


class _Grounder:
    def __init__(self, env: GroundingEnv, cfg: SemanticsConfig, step: int, tape: G.Tape, record):
        self.env = env
        self.cfg = cfg
        self.kind = cfg.kind
        self.alpha = cfg.alpha(step)
        self.p = cfg.p(step)
        self.tape = tape
        self.record = record
        self._next = 0

    def new_axis(self, name) -> _Axis:
        if name not in self.env.variables:
            raise GroundingError(f"no grounding for variable '{name}'")
        data = np.asarray(self.env.variables[name])
        if data.ndim == 0 or len(data) == 0:
            raise GroundingError(f"variable '{name}' is grounded with an empty batch")
        ax = _Axis(self._next, name, data)
        self._next += 1
        return ax

    def trace(self, *args, **kw):
        if self.record is not None:
            self.record.append(Trace(*args, **kw))

    # -- helpers ----------------------------------------------------------
    @staticmethod
    def batch(node, space, axes):
        return TruthBatch(node, space, tuple((a.name, a.size) for a in axes), tuple(a.id for a in axes))

    def align(self, tb: TruthBatch, union) -> G.Node:
        if tb.axes == tuple(a.id for a in union):
            return tb.node
        ids = [a.id for a in union]
        shape = tuple(a.size for a in union)
        return G.broadcast(tb.node, shape, [ids.index(i) for i in tb.axes])

    @staticmethod
    def union(axis_lists):
        seen = {}
        for axes in axis_lists:
            for a in axes:
                seen[a.id] = a
        return [seen[i] for i in sorted(seen)]

    # -- dispatch ---------------------------------------------------------
    def ground(self, f, scope):
        """Return (TruthBatch, list of _Axis in axis order)."""
        if isinstance(f, Atom):
            return self.literal(f, scope, negated=False)
        if isinstance(f, Not):
            if self.kind.is_log:
                if not isinstance(f.child, Atom):
                    raise NNFError(f"negation of a compound formula: {pretty_print(f)}")
                return self.literal(f.child, scope, negated=True)
            tb, axes = self.ground(f.child, scope)
            _require_linear(self.kind, "not", [tb.space], f)
            return self.batch(1.0 - tb.node, Space.LINEAR, axes), axes
        if isinstance(f, (And, Or)):
            return self.connective(f, scope)
        if isinstance(f, Implies):
            if self.kind.is_log:
                raise NNFError(f"implication outside negation normal form: {pretty_print(f)}")
            a, ax_a = self.ground(f.antecedent, scope)
            b, ax_b = self.ground(f.consequent, scope)
            _require_linear(self.kind, "->", [a.space, b.space], f)
            axes = self.union([ax_a, ax_b])
            na, nb = 1.0 - self.align(a, axes), self.align(b, axes)
            return self.batch(na + nb - na * nb, Space.LINEAR, axes), axes
        if isinstance(f, (Forall, Exists)):
            return self.quantifier(f, scope)
        raise TypeError(f"not a formula: {f!r}")

    def literal(self, atom: Atom, scope, negated: bool):
        env = self.env
        if atom.predicate not in env.predicates:
            raise GroundingError(f"unknown predicate '{atom.predicate}'")
        pred = env.predicates[atom.predicate]
        args = list(atom.args)
        class_term = None
        if getattr(pred, "class_arg", False):
            if not args:
                raise GroundingError(f"'{atom.predicate}' needs a class argument")
            class_term = args.pop()

        axes = []
        for t in atom.args:
            if isinstance(t, VariableRef):
                if scope[t.name] not in axes:
                    axes.append(scope[t.name])
        axes.sort(key=lambda a: a.id)
        shape = tuple(a.size for a in axes)
        rows = int(np.prod(shape)) if shape else 1
        grid = np.indices(shape).reshape(len(shape), rows) if shape else np.zeros((0, 1), dtype=int)
        pos = {a.id: i for i, a in enumerate(axes)}

        feats = []
        for t in args:
            if isinstance(t, VariableRef):
                ax = scope[t.name]
                data = ax.data if ax.data.ndim > 1 else ax.data.reshape(-1, 1)
                feats.append(np.asarray(data, dtype=float)[grid[pos[ax.id]]])
            else:
                c = np.asarray(self.constant(t.name), dtype=float).reshape(1, -1)
                feats.append(np.broadcast_to(c, (rows, c.shape[1])))
        x = np.concatenate(feats, axis=1) if feats else np.zeros((rows, 0))

        cls = None
        if class_term is not None:
            if isinstance(class_term, VariableRef):
                ax = scope[class_term.name]
                cls = np.asarray(ax.data).reshape(-1).astype(np.int64)[grid[pos[ax.id]]]
            else:
                cls = np.full(rows, int(np.asarray(self.constant(class_term.name)).reshape(())))

        if self.kind.is_log:
            node = pred.log_not_truth(self.tape, x, cls) if negated else pred.log_truth(self.tape, x, cls)
            space = Space.LOG
        else:
            node = pred.truth(self.tape, x, cls)
            space = Space.LINEAR
        node = G.reshape(node, shape)
        self.trace("literal", Not(atom) if negated else atom, node)
        return self.batch(node, space, axes), axes

    def constant(self, name):
        if name not in self.env.constants:
            raise GroundingError(f"unknown constant '{name}'")
        return self.env.constants[name]

    def connective(self, f, scope):
        results = [self.ground(c, scope) for c in f.children]
        tbs = [r[0] for r in results]
        axes = self.union([r[1] for r in results])
        is_and = isinstance(f, And)
        if not self.kind.is_log:
            _require_linear(self.kind, "and" if is_and else "or", [t.space for t in tbs], f)
        nodes = [self.align(t, axes) for t in tbs]
        if self.kind.is_log:
            if is_and:
                out = nodes[0]
                for n in nodes[1:]:
                    out = out + n
            else:
                stacked = _stack(nodes)
                self.trace("or", f, stacked, (0,))
                out = self.exists_log(stacked, 0, None)
            return self.batch(out, Space.LOG, axes), axes
        out = nodes[0]
        for n in nodes[1:]:
            out = out * n if is_and else out + n - out * n
        return self.batch(out, Space.LINEAR, axes), axes

    def exists_log(self, node, axis, mask):
        if self.kind is Kind.LOGLTN_MAX:
            return G.max_reduce(node, axis=axis, mask=mask)
        if self.kind is Kind.LOGLTN_LSE:
            return lse(node, self.alpha, axis=axis, mask=mask)
        return lme(node, self.alpha, axis=axis, mask=mask)

    def guard_mask(self, f, scope, union):
        name = f.guard
        if name not in self.env.guards:
            raise GroundingError(f"unknown guard '{name}'")
        guard = self.env.guards[name]
        for v in guard.vars:
            if v not in scope:
                raise GroundingError(f"guard '{name}' refers to '{v}', which is not in scope")
        gaxes = [scope[v] for v in guard.vars]
        expected = tuple(a.size for a in gaxes)
        if guard.mask.shape != expected:
            raise GroundingError(
                f"guard '{name}' mask has shape {guard.mask.shape}, expected {expected} for {guard.vars}"
            )
        order = np.argsort([a.id for a in gaxes], kind="stable")
        mask = guard.mask.transpose(order)
        ids = [a.id for a in union]
        expanded = [1] * len(union)
        for k in order:
            expanded[ids.index(gaxes[k].id)] = gaxes[k].size
        return np.broadcast_to(mask.reshape(expanded), tuple(a.size for a in union))

    def quantifier(self, f, scope):
        new = [self.new_axis(v) for v in f.vars]
        inner = dict(scope)
        inner.update({a.name: a for a in new})
        body, body_axes = self.ground(f.body, inner)
        extra = []
        if f.guard is not None and f.guard in self.env.guards:
            extra = [inner[v] for v in self.env.guards[f.guard].vars if v in inner]
        union = self.union([body_axes, new, extra])
        node = self.align(body, union)
        mask = self.guard_mask(f, inner, union) if f.guard is not None else None
        new_ids = {a.id for a in new}
        red = tuple(i for i, a in enumerate(union) if a.id in new_ids)
        rest = [a for a in union if a.id not in new_ids]
        if mask is not None:
            counts = mask.sum(axis=red)
            if np.any(counts == 0):
                raise GroundingError(f"guard '{f.guard}' selects no individual in {pretty_print(f)}")
        is_forall = isinstance(f, Forall)
        self.trace("forall" if is_forall else "exists", f, node, red, mask)

        kind, space = self.kind, body.space
        if kind.is_log:
            if is_forall:
                out = (G.sum_reduce if kind is Kind.LOGLTN_SUM else G.mean_reduce)(node, axis=red, mask=mask)
            else:
                out = self.exists_log(node, red, mask)
            return self.batch(out, Space.LOG, rest), rest
        eps = self.cfg.epsilon
        if is_forall and kind is Kind.PRODRL:
            if space is Space.LINEAR:
                node = G.log(squash(node, eps))
            return self.batch(G.sum_reduce(node, axis=red, mask=mask), Space.LOG, rest), rest
        _require_linear(kind, "forall" if is_forall else "exists", [space], f)
        agg = pmean_error if is_forall else pmean
        return self.batch(agg(node, self.p, axis=red, mask=mask, eps=eps), Space.LINEAR, rest), rest


def ground(
    f: Formula,
    env: GroundingEnv,
    cfg: SemanticsConfig,
    step: int = 0,
    tape: Optional[G.Tape] = None,
    record: Optional[list] = None,
) -> TruthBatch:
    """Lower ``f`` onto ``tape`` under ``cfg`` with schedules evaluated at ``step``.

    Variables free in ``f`` are grounded from ``env.variables`` and remain as
    axes of the result. Pass a list as ``record`` to collect :class:`Trace`
    entries for literals and quantifier bodies.
    """
    if tape is None:
        tape = G.Tape()
    if cfg.kind.is_log and not is_nnf(f):
        raise NNFError(f"{cfg.kind.value} requires negation normal form: {pretty_print(f)}")
    g = _Grounder(env, cfg, step, tape, record)
    scope = {v: g.new_axis(v) for v in sorted(free_variables(f))}
    tb, _ = g.ground(f, scope)
    return tb
