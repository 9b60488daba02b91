"""Numerical checks of the log-space operators and of De Morgan gap constants."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import graph as G

# ---------------------------------------------------------------------------
# log(1 - sigmoid) stability
# ---------------------------------------------------------------------------

STABILITY_INPUTS = (0.0, 10.0, 100.0, 1000.0, 10000.0)


@dataclass(frozen=True)
class StabilityRow:
    x: float
    naive_value: float
    naive_grad: float
    fused_value: float
    fused_grad: float


def _eval_elementwise(fn, xs, dtype):
    tape = G.Tape(dtype=dtype)
    x = tape.param(np.asarray(xs, dtype=dtype))
    y = fn(x)
    with np.errstate(all="ignore"):
        grads = G.backward(tape, G.sum_reduce(y))
    return y.value, grads[x.id]


def stability_table(inputs=STABILITY_INPUTS, precision: int = 32) -> list:
    """Value and derivative of ``log(1 - S(x))`` computed two ways.

    The naive route composes sigmoid, subtraction and log; the fused route
    uses ``log S(x) - x``. Non-finite results are reported as they come.
    """
    if precision not in (32, 64):
        raise ValueError("precision must be 32 or 64")
    dtype = np.float32 if precision == 32 else np.float64
    with np.errstate(all="ignore"):
        nv, ng = _eval_elementwise(lambda x: G.log(1.0 - G.sigmoid(x)), inputs, dtype)
        fv, fg = _eval_elementwise(lambda x: G.log_sigmoid(x) - x, inputs, dtype)
    return [
        StabilityRow(float(x), float(a), float(b), float(c), float(d))
        for x, a, b, c, d in zip(inputs, nv, ng, fv, fg)
    ]


def stability_csv(rows) -> str:
    buf = io.StringIO()
    buf.write("x,naive_value,naive_grad,fused_value,fused_grad\n")
    for r in rows:
        buf.write(",".join(repr(float(v)) for v in (r.x, r.naive_value, r.naive_grad, r.fused_value, r.fused_grad)))
        buf.write("\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# De Morgan gaps
# ---------------------------------------------------------------------------


def _unit(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty input")
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise ValueError("truth degrees must lie in [0, 1]")
    return x


def demorgan_gap_and(x) -> np.ndarray:
    """``min(x) - prod(x)`` over the last axis: how far ``not and`` sits above ``or not``."""
    x = _unit(x)
    return np.min(x, axis=-1) - np.prod(x, axis=-1)


def demorgan_gap_or(x) -> np.ndarray:
    """``1 - max(x) - prod(1 - x)`` over the last axis; the mirror image of the ``and`` gap."""
    x = _unit(x)
    return 1.0 - np.max(x, axis=-1) - np.prod(1.0 - x, axis=-1)


@dataclass(frozen=True)
class Peak:
    n: int
    variant: str
    x_star: float
    gap: float
    grid_x_star: float  # argmax on the equal-coordinate slice
    grid_gap: float


def demorgan_peak(n: int, variant: str = "and", grid: int = 100_001) -> Peak:
    """Closed-form maximiser of the gap, checked by a grid search on the diagonal."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if variant not in ("and", "or"):
        raise ValueError("variant is 'and' or 'or'")
    x_and = n ** (-1.0 / (n - 1))
    gap = x_and - x_and**n
    t = np.linspace(0.0, 1.0, grid)
    if variant == "and":
        g = t - t**n
        x_star = x_and
    else:
        g = 1.0 - t - (1.0 - t) ** n
        x_star = 1.0 - x_and
    i = int(np.argmax(g))
    return Peak(n, variant, float(x_star), float(gap), float(t[i]), float(g[i]))


def demorgan_average(
    n: int,
    points_per_axis: int | None = 4000,
    samples: int | None = None,
    seed: int = 0,
    variant: str = "and",
    chunk: int = 1_000_000,
) -> float:
    """Mean gap over ``[0, 1]^n``.

    * ``samples=None``: every point of the lattice ``linspace(0, 1, points_per_axis)^n``;
    * ``samples=m`` with ``points_per_axis``: ``m`` points drawn uniformly from that lattice;
    * ``samples=m`` and ``points_per_axis=None``: ``m`` continuous uniform points.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    gap = demorgan_gap_and if variant == "and" else demorgan_gap_or
    if variant not in ("and", "or"):
        raise ValueError("variant is 'and' or 'or'")
    if samples is None:
        if points_per_axis is None:
            raise ValueError("full lattice needs points_per_axis")
        total = points_per_axis**n
        if total > 10**9:
            raise ValueError("lattice too large to enumerate; pass samples")
        axis = np.linspace(0.0, 1.0, points_per_axis)
        acc = 0.0
        for start in range(0, total, chunk):
            idx = np.arange(start, min(start + chunk, total))
            coords = np.stack(np.unravel_index(idx, (points_per_axis,) * n), axis=-1)
            acc += float(np.sum(gap(axis[coords])))
        return acc / total
    rng = np.random.default_rng(seed)
    acc = 0.0
    left = samples
    while left > 0:
        m = min(left, chunk)
        if points_per_axis is None:
            x = rng.random((m, n))
        else:
            x = rng.integers(0, points_per_axis, size=(m, n)) / (points_per_axis - 1)
        acc += float(np.sum(gap(x)))
        left -= m
    return acc / samples


def lattice_average_and(n: int, points_per_axis: int) -> float:
    """Exact lattice mean of ``min(x) - prod(x)`` from order statistics."""
    v = np.linspace(0.0, 1.0, points_per_axis)
    k = points_per_axis
    # P(min >= v_j) = ((k - j) / k)^n
    surv = ((k - np.arange(k)) / k) ** n
    pmf = surv - np.append(surv[1:], 0.0)
    return float(np.sum(pmf * v) - np.mean(v) ** n)


def demorgan_grid_csv(points_per_axis: int = 101, variant: str = "and") -> str:
    """Gap heatmap for n=2 as ``x1,x2,gap`` rows."""
    t = np.linspace(0.0, 1.0, points_per_axis)
    x1, x2 = np.meshgrid(t, t, indexing="ij")
    g = (demorgan_gap_and if variant == "and" else demorgan_gap_or)(np.stack([x1, x2], axis=-1))
    buf = io.StringIO()
    buf.write("x1,x2,gap\n")
    for a, b, c in zip(x1.ravel(), x2.ravel(), g.ravel()):
        buf.write(f"{a:.6g},{b:.6g},{c:.10g}\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# LogMeanExp bounds
# ---------------------------------------------------------------------------


@dataclass
class BoundsReport:
    trials: int
    upper_violations: int = 0  # LME > max
    lower_violations: int = 0  # LME < max - log(n)/alpha
    max_violation: float = 0.0
    positive_lme: int = 0  # LME > 0 on non-positive input
    lse_overshoot: float = 0.0  # LSE([0, 0]) at alpha = 1
    worst: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.upper_violations == 0 and self.lower_violations == 0 and self.positive_lme == 0

    def summary(self) -> str:
        keys = ("trials", "upper_violations", "lower_violations", "max_violation", "positive_lme", "lse_overshoot")
        return "".join(f"{k}={getattr(self, k)}\n" for k in keys)


def verify_lme_bounds(trials: int = 10_000, n_max: int = 50, alpha_range=(0.1, 10.0),
                      seed: int = 0, tol: float = 1e-9) -> BoundsReport:
    """Sample non-positive log-truth vectors and check ``max - log(n)/a <= LME <= max``."""
    rng = np.random.default_rng(seed)
    rep = BoundsReport(trials)
    lo, hi = alpha_range
    for t in range(trials):
        n = int(rng.integers(1, n_max + 1))
        alpha = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        scale = float(np.exp(rng.uniform(np.log(1e-3), np.log(1e3))))
        x = -scale * rng.random(n)
        if t % 10 == 0:
            x[:] = x[0]  # constant vectors make the upper bound tight
        tape = G.Tape()
        v = float(G.logsumexp(tape.constant(x), alpha=alpha, mean=True).value)
        m = float(np.max(x))
        up = v - m
        low = (m - np.log(n) / alpha) - v
        if up > tol:
            rep.upper_violations += 1
        if low > tol:
            rep.lower_violations += 1
        if v > tol:
            rep.positive_lme += 1
        worst = max(up, low)
        if worst > rep.max_violation:
            rep.max_violation = worst
            rep.worst = {"x": x.tolist(), "alpha": alpha, "lme": v}
    tape = G.Tape()
    rep.lse_overshoot = float(G.logsumexp(tape.constant(np.zeros(2)), alpha=1.0).value)
    return rep
