"""Reverse-mode automatic differentiation on an append-only tape.

Every primitive pushes one :class:`Node` holding its forward value and a
closure mapping the upstream adjoint to adjoints for its parents. ``backward``
walks the tape in decreasing id order, so each node is visited once after all
of its consumers.

The log-sigmoid, log-softmax and shifted log-sum-exp kernels are primitives
with their own gradients rather than compositions of ``exp``/``log``: the
compositions overflow long before the fused versions do.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "Node", "Tape", "backward", "grad_check",
    "add", "sub", "mul", "scale", "neg", "exp", "log", "power", "elu",
    "sigmoid", "log_sigmoid", "log_softmax", "logsumexp",
    "max_reduce", "sum_reduce", "mean_reduce", "matmul",
    "broadcast", "reshape", "concat", "take",
]


class Node:
    __slots__ = ("tape", "id", "op", "parents", "value", "adjoint", "_vjp", "info")

    def __init__(self, tape, id, op, parents, value, vjp, info=None):
        self.tape = tape
        self.id = id
        self.op = op
        self.parents = parents
        self.value = value
        self.adjoint = None
        self._vjp = vjp
        self.info = info

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)


class Tape:
    """Append-only record of a computation.

    ``dtype`` is float64 for training; float32 exists to reproduce precision
    failures. With ``debug=True`` a forward value containing NaN raises.
    """

    def __init__(self, dtype=np.float64, debug=False):
        self.dtype = np.dtype(dtype)
        self.debug = debug
        self.nodes: list[Node] = []
        self.parameters: list[int] = []
        self._param_keys: dict = {}

    def __len__(self):
        return len(self.nodes)

    def push(self, op, parents, value, vjp, info=None) -> Node:
        value = np.asarray(value, dtype=self.dtype)
        if self.debug and np.isnan(value).any():
            raise FloatingPointError(f"NaN produced by {op}")
        node = Node(self, len(self.nodes), op, tuple(parents), value, vjp, info)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self.push("const", (), np.array(value, dtype=self.dtype), None)

    def param(self, value, key=None) -> Node:
        """Leaf registered as trainable. Repeated keys return the same node."""
        if key is not None and key in self._param_keys:
            return self.nodes[self._param_keys[key]]
        node = self.push("param", (), np.array(value, dtype=self.dtype), None, info=key)
        self.parameters.append(node.id)
        if key is not None:
            self._param_keys[key] = node.id
        return node

    def param_node(self, key) -> Optional[Node]:
        idx = self._param_keys.get(key)
        return None if idx is None else self.nodes[idx]


def backward(tape: Tape, root: Node) -> dict[int, np.ndarray]:
    """Accumulate adjoints from a scalar ``root``; return gradients per parameter id.

    Adjoints of every visited node are left in ``node.adjoint`` for inspection.
    """
    if root.tape is not tape:
        raise ValueError("root belongs to a different tape")
    if root.value.size != 1 or root.value.ndim > 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    for n in tape.nodes:
        n.adjoint = None
    root.adjoint = np.ones_like(root.value)
    for n in reversed(tape.nodes[: root.id + 1]):
        if n.adjoint is None or n._vjp is None:
            continue
        grads = n._vjp(n.adjoint)
        for p, g in zip(n.parents, grads):
            if g is None:
                continue
            g = np.asarray(g, dtype=tape.dtype)
            if g.shape != p.value.shape:
                raise ShapeError(
                    f"internal: gradient shape {g.shape} for node of shape {p.shape} in {n.op}"
                )
            p.adjoint = g if p.adjoint is None else p.adjoint + g
    out = {}
    for pid in tape.parameters:
        node = tape.nodes[pid]
        out[pid] = node.adjoint if node.adjoint is not None else np.zeros_like(node.value)
    return out


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _lift(x, like: Node) -> Node:
    if isinstance(x, Node):
        return x
    arr = np.asarray(x, dtype=like.tape.dtype)
    if arr.shape != like.shape:
        arr = np.broadcast_to(arr, like.shape)
    return like.tape.constant(arr)


def _pair(a, b):
    if not isinstance(a, Node) and not isinstance(b, Node):
        raise TypeError("at least one operand must be a Node")
    if not isinstance(a, Node):
        a = _lift(a, b)
    if not isinstance(b, Node):
        b = _lift(b, a)
    if a.tape is not b.tape:
        raise ValueError("operands live on different tapes")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = tuple(sorted(a % ndim for a in axis))
    if len(set(out)) != len(out):
        raise ValueError(f"repeated axis in {axis}")
    return out


def _expand(g, shape, axes):
    """Re-insert reduced ``axes`` into ``g`` and broadcast to ``shape``."""
    return np.broadcast_to(np.expand_dims(g, axes), shape)


def _check_mask(x: Node, mask):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        mask = np.broadcast_to(mask, x.shape)
    return mask


def _counts(mask, axes):
    cnt = mask.sum(axis=axes)
    if np.any(cnt == 0):
        raise ValueError("mask selects no element in some reduction group")
    return cnt


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Node:
    a, b = _pair(a, b)
    return a.tape.push("add", (a, b), a.value + b.value, lambda g: (g, g))


def sub(a, b) -> Node:
    a, b = _pair(a, b)
    return a.tape.push("sub", (a, b), a.value - b.value, lambda g: (g, -g))


def mul(a, b) -> Node:
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    return a.tape.push("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return a.tape.push("scale", (a,), a.value * c, lambda g: (g * c,))


def neg(a: Node) -> Node:
    return a.tape.push("neg", (a,), -a.value, lambda g: (-g,))


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return a.tape.push("exp", (a,), out, lambda g: (g * out,))


def log(a: Node) -> Node:
    v = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(v)
    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g / v,)

    return a.tape.push("log", (a,), out, vjp)


def power(a: Node, p: float) -> Node:
    p = float(p)
    v = a.value
    out = v ** p
    return a.tape.push("power", (a,), out, lambda g: (g * p * v ** (p - 1.0),), info=p)


def elu(a: Node) -> Node:
    v = a.value
    pos = v > 0
    out = np.where(pos, v, np.expm1(np.minimum(v, 0)))
    return a.tape.push("elu", (a,), out, lambda g: (g * np.where(pos, 1.0, out + 1.0),))


def sigmoid(a: Node) -> Node:
    """Plain logistic function, differentiated through its output as y(1-y).

    This is the conventional unfused formulation; it saturates to exactly 1
    in float32 and is used only as the naive reference.
    """
    v = a.value
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-v))

    def vjp(g):
        with np.errstate(invalid="ignore"):
            return (g * out * (1.0 - out),)

    return a.tape.push("sigmoid", (a,), out, vjp)


def _log_sigmoid_np(v):
    return np.minimum(v, 0) - np.log1p(np.exp(-np.abs(v)))


def log_sigmoid(a: Node) -> Node:
    v = a.value
    out = _log_sigmoid_np(v)
    # d/dx log S(x) = 1 - S(x) = S(-x), evaluated without forming S(x)
    return a.tape.push("log_sigmoid", (a,), out, lambda g: (g * np.exp(_log_sigmoid_np(-v)),))


def log_softmax(a: Node, axis: int = -1) -> Node:
    v = a.value
    shifted = v - np.max(v, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * np.sum(g, axis=axis, keepdims=True),)

    return a.tape.push("log_softmax", (a,), out, vjp, info=axis)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def logsumexp(a: Node, axis=None, alpha: float = 1.0, mask=None, mean: bool = False) -> Node:
    """Shifted ``(1/alpha) * log(sum exp(alpha * x))`` over ``axis``.

    With ``mean=True`` the sum becomes a mean (LogMeanExp). Masked-out entries
    are excluded from both the sum and the element count.
    """
    alpha = float(alpha)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    v = a.value
    axes = _axes(axis, v.ndim)
    mask = _check_mask(a, mask)
    z = alpha * v
    if mask is not None:
        cnt = _counts(mask, axes)
        z = np.where(mask, z, -np.inf)
    else:
        cnt = np.prod([v.shape[i] for i in axes]) if axes else 1
        if cnt == 0:
            raise ValueError("logsumexp over an empty axis")
    c = np.max(z, axis=axes, keepdims=True)
    c = np.where(np.isfinite(c), c, 0.0)
    e = np.exp(z - c)
    s = np.sum(e, axis=axes)
    inner = np.log(s) + np.squeeze(c, axis=axes)
    if mean:
        inner = inner - np.log(cnt)
    out = inner / alpha
    weights = e / np.expand_dims(s, axes)

    def vjp(g):
        return (_expand(g, v.shape, axes) * weights,)

    return a.tape.push("logsumexp", (a,), out, vjp, info=(axes, alpha, mean))


def max_reduce(a: Node, axis=None, mask=None) -> Node:
    """Hard maximum. Only the argmax (lowest index on ties) receives gradient."""
    v = a.value
    axes = _axes(axis, v.ndim)
    mask = _check_mask(a, mask)
    if mask is not None:
        _counts(mask, axes)
        v = np.where(mask, v, -np.inf)
    # move reduced axes last and flatten them so argmax sees one group per row
    keep = [i for i in range(v.ndim) if i not in axes]
    moved = np.transpose(v, keep + list(axes))
    kshape = moved.shape[: len(keep)]
    flat = moved.reshape(kshape + (-1,))
    if flat.shape[-1] == 0:
        raise ValueError("max over an empty axis")
    idx = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    onehot_flat = np.zeros(flat.shape, dtype=bool)
    np.put_along_axis(onehot_flat, idx[..., None], True, axis=-1)
    onehot = np.transpose(onehot_flat.reshape(moved.shape), np.argsort(keep + list(axes)))

    def vjp(g):
        return (np.where(onehot, _expand(g, v.shape, axes), 0.0),)

    return a.tape.push("max", (a,), out, vjp, info=(axes, onehot))


def sum_reduce(a: Node, axis=None, mask=None) -> Node:
    v = a.value
    axes = _axes(axis, v.ndim)
    mask = _check_mask(a, mask)
    if mask is not None:
        _counts(mask, axes)
        out = np.sum(np.where(mask, v, 0.0), axis=axes)

        def vjp(g):
            return (np.where(mask, _expand(g, v.shape, axes), 0.0),)
    else:
        out = np.sum(v, axis=axes)

        def vjp(g):
            return (np.array(_expand(g, v.shape, axes)),)

    return a.tape.push("sum", (a,), out, vjp, info=axes)


def mean_reduce(a: Node, axis=None, mask=None) -> Node:
    v = a.value
    axes = _axes(axis, v.ndim)
    mask = _check_mask(a, mask)
    if mask is not None:
        cnt = _counts(mask, axes)
        out = np.sum(np.where(mask, v, 0.0), axis=axes) / cnt
        w = np.where(mask, 1.0, 0.0) / np.expand_dims(cnt, axes)
    else:
        cnt = int(np.prod([v.shape[i] for i in axes])) if axes else 1
        if cnt == 0:
            raise ValueError("mean over an empty axis")
        out = np.sum(v, axis=axes) / cnt
        w = 1.0 / cnt

    def vjp(g):
        return (_expand(g, v.shape, axes) * w,)

    return a.tape.push("mean", (a,), out, vjp, info=axes)


# ---------------------------------------------------------------------------
# linear algebra and layout
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return a.tape.push("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def broadcast(a: Node, shape, axes: Optional[Sequence[int]] = None) -> Node:
    """Broadcast ``a`` to ``shape``; input dim ``i`` lands on output axis ``axes[i]``.

    Without ``axes`` the usual right-aligned numpy rule applies. ``axes`` must
    be increasing (no transposition).
    """
    shape = tuple(int(s) for s in shape)
    v = a.value
    if axes is None:
        axes = tuple(range(len(shape) - v.ndim, len(shape)))
    axes = tuple(axes)
    if len(axes) != v.ndim or list(axes) != sorted(set(axes)) or (axes and axes[-1] >= len(shape)):
        raise ShapeError(f"cannot place shape {v.shape} on axes {axes} of {shape}")
    expanded = [1] * len(shape)
    for d, ax in zip(v.shape, axes):
        if d not in (1, shape[ax]):
            raise ShapeError(f"cannot broadcast {v.shape} to {shape}")
        expanded[ax] = d
    out = np.broadcast_to(v.reshape(expanded), shape)
    summed = tuple(i for i in range(len(shape)) if expanded[i] != shape[i])

    def vjp(g):
        r = np.sum(g, axis=summed, keepdims=True) if summed else g
        return (r.reshape(v.shape),)

    return a.tape.push("broadcast", (a,), out, vjp, info=(shape, axes))


def reshape(a: Node, shape) -> Node:
    v = a.value
    try:
        out = v.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {v.shape} to {tuple(shape)}") from None
    return a.tape.push("reshape", (a,), out, lambda g: (g.reshape(v.shape),))


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    nodes = list(nodes)
    if not nodes:
        raise ValueError("concat of nothing")
    tape = nodes[0].tape
    ref = nodes[0].shape
    ax = axis % len(ref)
    for n in nodes[1:]:
        s = n.shape
        if len(s) != len(ref) or any(s[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat shape mismatch: {ref} vs {s}")
    out = np.concatenate([n.value for n in nodes], axis=ax)
    bounds = np.cumsum([0] + [n.shape[ax] for n in nodes])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(nodes))
        )

    return tape.push("concat", nodes, out, vjp, info=ax)


def take(a: Node, index) -> Node:
    """Basic or advanced numpy indexing (slices, integer arrays). Gradients scatter-add."""
    v = a.value
    out = v[index]

    def vjp(g):
        r = np.zeros_like(v)
        np.add.at(r, index, g)
        return (r,)

    return a.tape.push("take", (a,), np.array(out), vjp)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def grad_check(
    fn: Callable[[Tape, list], Node],
    point: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Compare tape gradients against central differences.

    ``fn(tape, params)`` builds a scalar on ``tape`` from parameter nodes.
    Returns ``max |analytic - numeric| / max(1, |numeric|)`` over all
    parameter entries.
    """
    point = [np.array(p, dtype=np.float64) for p in point]
    tape = Tape()
    nodes = [tape.param(p) for p in point]
    root = fn(tape, nodes)
    grads = backward(tape, root)
    analytic = [grads[n.id] for n in nodes]

    def value(vals):
        t = Tape()
        return float(fn(t, [t.param(v) for v in vals]).value)

    worst = 0.0
    for k, p in enumerate(point):
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in point]
            minus = [q.copy() for q in point]
            plus[k][idx] += eps
            minus[k][idx] -= eps
            numeric = (value(plus) - value(minus)) / (2 * eps)
            err = abs(analytic[k][idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
