"""Maximal-satisfiability training: loss, Adam, the loop, and clustering metrics."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import graph as G
from .errors import NonFiniteLossError, ShapeError
from .formula import Knowledgebase
from .nnf import to_nnf
from .semantics import GroundingEnv, SemanticsConfig, Space, TruthBatch, ground, sat_aggregate


@dataclass
class TrainConfig:
    steps: int = 1000
    learning_rate: float = 0.002
    batch_size: Optional[int] = None  # None: full batch
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def ground_kb(kb: Knowledgebase, env, cfg: SemanticsConfig, step: int, tape: G.Tape, record=None):
    """Ground every formula; log configurations see the NNF rewrite."""
    out = []
    for f in kb.formulas:
        if cfg.kind.is_log:
            f = to_nnf(f)
        out.append(ground(f, env, cfg, step, tape, record))
    return out


def loss(kb: Knowledgebase, env, cfg: SemanticsConfig, step: int, tape: G.Tape) -> G.Node:
    """Negated knowledgebase satisfaction."""
    return G.neg(sat_aggregate(ground_kb(kb, env, cfg, step, tape), cfg, step).node)


def as_truth(tb: TruthBatch) -> float:
    v = float(tb.value)
    return math.exp(v) if tb.space is Space.LOG else v


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """Update ``params`` (arrays, modified in place) and ``state``."""
    b1, b2 = betas
    state.t += 1
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {key} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(key)
        v = state.v.get(key)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[key], state.v[key] = m, v
        m_hat = m / (1 - b1 ** state.t)
        v_hat = v / (1 - b2 ** state.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# run record
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass
class RunRecord:
    formula_labels: list
    rows: list = field(default_factory=list)  # (step, loss, sat, alpha, p, *formula sats)
    metrics: dict = field(default_factory=dict)

    @property
    def columns(self):
        return ["step", "loss", "sat", "alpha", "p"] + [f"sat_{l}" for l in self.formula_labels]

    def column(self, name) -> np.ndarray:
        return np.array([r[self.columns.index(name)] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for r in self.rows:
            buf.write(",".join(_fmt(v) for v in r) + "\n")
        return buf.getvalue()

    def metrics_text(self) -> str:
        return "".join(f"{k}={_fmt(v) if not isinstance(v, str) else v}\n" for k, v in sorted(self.metrics.items()))


EnvSource = Union[GroundingEnv, Callable[[int, np.random.Generator], GroundingEnv]]


def train(
    kb: Knowledgebase,
    env: EnvSource,
    sem: SemanticsConfig,
    cfg: TrainConfig,
    on_step: Optional[Callable] = None,
) -> RunRecord:
    """Run Adam on ``-Sat`` for ``cfg.steps`` steps.

    ``env`` is either a fixed environment (full batch) or a callable
    ``env(step, rng)`` returning the environment for that step (minibatches);
    ``rng`` is seeded from ``cfg.seed``. ``on_step(step, tape, truths)`` runs
    after each backward pass, before the update.
    """
    rng = np.random.default_rng(cfg.seed)
    record = RunRecord(kb.labels())
    state = AdamState()
    for step in range(cfg.steps):
        cur = env(step, rng) if callable(env) else env
        tape = G.Tape()
        truths = ground_kb(kb, cur, sem, step, tape)
        sat = sat_aggregate(truths, sem, step)
        root = G.neg(sat.node)
        if not np.isfinite(root.value):
            bad = next((i for i, t in enumerate(truths) if not np.isfinite(t.value)), None)
            label = kb.labels()[bad] if bad is not None else "<aggregate>"
            value = truths[bad].value if bad is not None else root.value
            raise NonFiniteLossError(step, label, float(value))
        grads = G.backward(tape, root)
        if on_step is not None:
            on_step(step, tape, truths)
        params = cur.parameters()
        by_key = {}
        for key, arr in params.items():
            node = tape.param_node(key)
            by_key[key] = grads[node.id] if node is not None else np.zeros_like(arr)
        adam_step(params, by_key, state, cfg.learning_rate, cfg.betas, cfg.adam_eps)
        record.rows.append(
            (step, float(root.value), as_truth(sat), sem.alpha(step), sem.p(step))
            + tuple(as_truth(t) for t in truths)
        )
    return record


# ---------------------------------------------------------------------------
# clustering agreement
# ---------------------------------------------------------------------------


def adjusted_rand_index(pred, truth) -> float:
    """Hubert-Arabie adjusted Rand index from the contingency table."""
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"label vectors differ in length: {pred.size} vs {truth.size}")
    n = pred.size
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1 if n else 0, ti.max() + 1 if n else 0), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)

    def comb2(x):
        x = np.asarray(x, dtype=np.float64)
        return np.sum(x * (x - 1) / 2)

    index = comb2(table)
    a = comb2(table.sum(axis=1))
    b = comb2(table.sum(axis=0))
    total = n * (n - 1) / 2
    expected = a * b / total if total else 0.0
    max_index = (a + b) / 2
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def loss_grad_check(kb: Knowledgebase, env: GroundingEnv, sem: SemanticsConfig, step: int = 0,
                    eps: float = 1e-6) -> float:
    """Central-difference check of ``d loss / d params`` for every trainable entry.

    Parameters are perturbed in place and restored. Returns the maximum of
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    tape = G.Tape()
    root = loss(kb, env, sem, step, tape)
    grads = G.backward(tape, root)
    worst = 0.0
    for key, arr in env.parameters().items():
        node = tape.param_node(key)
        analytic = grads[node.id] if node is not None else np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            up = float(loss(kb, env, sem, step, G.Tape()).value)
            arr[idx] = orig - eps
            down = float(loss(kb, env, sem, step, G.Tape()).value)
            arr[idx] = orig
            numeric = (up - down) / (2 * eps)
            worst = max(worst, abs(analytic[idx] - numeric) / max(1.0, abs(numeric)))
    return worst


def max_gradient_support(tape: G.Tape) -> int:
    """Largest number of entries receiving gradient in one group of any hard-max node.

    Call after :func:`logltn.graph.backward`. A hard maximum passes gradient
    to a single entry per group, so the result is 1 (0 if no max node received
    gradient).
    """
    worst = 0
    for node in tape.nodes:
        if node.op != "max" or node.adjoint is None:
            continue
        parent = node.parents[0]
        if parent.adjoint is None:
            continue
        axes, _ = node.info
        counts = np.count_nonzero(parent.adjoint != 0, axis=axes)
        worst = max(worst, int(np.max(counts)))
    return worst
