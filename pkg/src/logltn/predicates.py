"""Neural predicates with sigmoid or softmax heads.

A predicate exposes three groundings of its output on a tape: the linear
truth, the log-truth, and the log-truth of its negation. For the neural
heads the log forms never take the log of a probability:

* sigmoid head, pre-activation ``x``: ``log S(x)`` via the fused kernel and
  ``log(1 - S(x)) = log S(x) - x``;
* softmax head, logits ``z``, class ``i``: ``log softmax(z)_i`` via the fused
  kernel and ``log(1 - softmax(z)_i) = log softmax(z)_i + LSE_{j != i}(z_j) - z_i``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import graph as G
from .errors import GroundingError, ShapeError


@dataclass(frozen=True)
class Sigmoid:
    pass


@dataclass(frozen=True)
class Softmax:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("softmax head needs at least one class")


Head = Union[Sigmoid, Softmax]


@dataclass
class Dense:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str = "elu"  # "elu" or "identity"

    def __post_init__(self):
        if self.activation not in ("elu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"dense layer shapes {self.weight.shape} / {self.bias.shape}")


@dataclass
class PredicateModel:
    """Feed-forward network: ``elu`` hidden layers, linear last layer, then the head."""

    name: str
    layers: list
    head: Head = field(default_factory=Sigmoid)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model has no layers")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ShapeError(
                    f"layer dims do not conform: {a.weight.shape} then {b.weight.shape}"
                )
        out = self.layers[-1].weight.shape[1]
        if isinstance(self.head, Softmax) and out != self.head.k:
            raise ShapeError(f"softmax head over {self.head.k} classes but last layer has {out}")
        if isinstance(self.head, Sigmoid) and out != 1:
            raise ShapeError(f"sigmoid head needs one output unit, got {out}")

    @property
    def class_arg(self) -> bool:
        return isinstance(self.head, Softmax)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].weight.shape[0]] + [l.weight.shape[1] for l in self.layers]

    def parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out[(self.name, f"layer{i}.weight")] = layer.weight
            out[(self.name, f"layer{i}.bias")] = layer.bias
        return out

    # Predicate protocol --------------------------------------------------
    def log_truth(self, tape, x, class_index=None):
        return log_forward(tape, self, x, class_index)

    def log_not_truth(self, tape, x, class_index=None):
        return log_not_forward(tape, self, x, class_index)

    def truth(self, tape, x, class_index=None):
        return G.exp(log_forward(tape, self, x, class_index))


def init_model(sizes, head: Head = Sigmoid(), seed: int = 0, name: str = "model") -> PredicateModel:
    """Glorot-uniform weights, zero biases. ``sizes`` includes the input width."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ShapeError(f"invalid layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_in, n_out))
        act = "identity" if i == len(sizes) - 2 else "elu"
        layers.append(Dense(w, np.zeros(n_out), act))
    return PredicateModel(name, layers, head)


def _as_node(tape, x):
    return x if isinstance(x, G.Node) else tape.constant(np.atleast_2d(np.asarray(x, dtype=float)))


def logits(tape, model: PredicateModel, x) -> G.Node:
    h = _as_node(tape, x)
    if h.value.ndim != 2 or h.shape[1] != model.sizes[0]:
        raise ShapeError(f"model {model.name} expects (rows, {model.sizes[0]}) input, got {h.shape}")
    rows = h.shape[0]
    for i, layer in enumerate(model.layers):
        w = tape.param(layer.weight, key=(model.name, f"layer{i}.weight"))
        b = tape.param(layer.bias, key=(model.name, f"layer{i}.bias"))
        h = G.matmul(h, w) + G.broadcast(b, (rows, layer.bias.shape[0]))
        if layer.activation == "elu":
            h = G.elu(h)
    return h


def _class_rows(model, class_index, rows):
    if isinstance(model.head, Sigmoid):
        if class_index is not None:
            raise GroundingError(f"predicate {model.name} has a sigmoid head; no class index")
        return None
    if class_index is None:
        raise GroundingError(f"predicate {model.name} has a softmax head; class index required")
    idx = np.broadcast_to(np.asarray(class_index, dtype=np.int64), (rows,))
    if idx.min() < 0 or idx.max() >= model.head.k:
        raise GroundingError(f"class index out of range for {model.head.k} classes")
    return idx


def log_forward(tape, model: PredicateModel, x, class_index=None) -> G.Node:
    z = logits(tape, model, x)
    rows = z.shape[0]
    cls = _class_rows(model, class_index, rows)
    if cls is None:
        return G.log_sigmoid(G.take(z, (slice(None), 0)))
    return G.take(G.log_softmax(z, axis=1), (np.arange(rows), cls))


def log_not_forward(tape, model: PredicateModel, x, class_index=None) -> G.Node:
    z = logits(tape, model, x)
    rows = z.shape[0]
    cls = _class_rows(model, class_index, rows)
    if cls is None:
        pre = G.take(z, (slice(None), 0))
        return G.log_sigmoid(pre) - pre
    if model.head.k == 1:
        raise GroundingError("negation of a single-class softmax is undefined")
    picked = (np.arange(rows), cls)
    others = np.ones(z.shape, dtype=bool)
    others[picked] = False
    log_p = G.take(G.log_softmax(z, axis=1), picked)
    rest = G.logsumexp(z, axis=1, mask=others)
    return log_p + rest - G.take(z, picked)


def forward(tape, model: PredicateModel, x, class_index=None) -> G.Node:
    return G.exp(log_forward(tape, model, x, class_index))


def predict_proba(model: PredicateModel, x) -> np.ndarray:
    """Head output as a plain array: (rows,) for sigmoid, (rows, K) for softmax."""
    tape = G.Tape()
    z = logits(tape, model, x)
    if isinstance(model.head, Sigmoid):
        return np.exp(G.log_sigmoid(G.take(z, (slice(None), 0))).value)
    return np.exp(G.log_softmax(z, axis=1).value)


class ProjectedPredicate:
    """View of another predicate that only sees some input columns.

    Lets several atoms share one network while reading different slices of a
    sample's features (e.g. the four digit images of one addition sample).
    """

    def __init__(self, base, columns):
        self.base = base
        self.columns = columns

    @property
    def class_arg(self):
        return self.base.class_arg

    def parameters(self):
        return self.base.parameters()

    def _project(self, x):
        return np.atleast_2d(np.asarray(x, dtype=float))[:, self.columns]

    def log_truth(self, tape, x, class_index=None):
        return self.base.log_truth(tape, self._project(x), class_index)

    def log_not_truth(self, tape, x, class_index=None):
        return self.base.log_not_truth(tape, self._project(x), class_index)

    def truth(self, tape, x, class_index=None):
        return self.base.truth(tape, self._project(x), class_index)


class TablePredicate:
    """Predicate with a truth degree stored per input row.

    Rows of the grounded input are looked up by value, so individuals are
    usually embedded as integer ids. With ``trainable=True`` the truth
    degrees become tape parameters, which is how gradients with respect to an
    atom's truth are measured. Log forms take the plain log of the stored
    value; keep values inside (0, 1) when grounding in log space.
    """

    class_arg = False

    def __init__(self, table: dict, trainable: bool = False, name: str = "table"):
        self.name = name
        self.keys = [tuple(float(v) for v in np.atleast_1d(k)) for k in table]
        self.index = {k: i for i, k in enumerate(self.keys)}
        self.values = np.array([float(v) for v in table.values()])
        if np.any((self.values < 0) | (self.values > 1)):
            raise ValueError("truth degrees must lie in [0, 1]")
        self.trainable = trainable

    def parameters(self):
        return {(self.name, "truths"): self.values} if self.trainable else {}

    def _rows(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        try:
            return np.array([self.index[tuple(r.tolist())] for r in x], dtype=np.int64)
        except KeyError as e:
            raise GroundingError(f"{self.name}: no truth value for input {e.args[0]}") from None

    def truth(self, tape, x, class_index=None):
        if class_index is not None:
            raise GroundingError(f"{self.name} takes no class index")
        if self.trainable:
            vals = tape.param(self.values, key=(self.name, "truths"))
        else:
            vals = tape.constant(self.values)
        return G.take(vals, self._rows(x))

    def log_truth(self, tape, x, class_index=None):
        return G.log(self.truth(tape, x, class_index))

    def log_not_truth(self, tape, x, class_index=None):
        return G.log(1.0 - self.truth(tape, x, class_index))


def cosine_predicate(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(x @ y / (nx * ny))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_model(model: PredicateModel, path) -> None:
    """Write an ``.npz`` holding a JSON header and ``model.layer{i}.weight|bias`` arrays."""
    head = {"type": "sigmoid"} if isinstance(model.head, Sigmoid) else {"type": "softmax", "k": model.head.k}
    header = {
        "name": model.name,
        "sizes": model.sizes,
        "activations": [l.activation for l in model.layers],
        "head": head,
    }
    arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
    for i, layer in enumerate(model.layers):
        arrays[f"model.layer{i}.weight"] = np.ascontiguousarray(layer.weight, dtype=np.float64)
        arrays[f"model.layer{i}.bias"] = np.ascontiguousarray(layer.bias, dtype=np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> PredicateModel:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        layers = []
        for i, act in enumerate(header["activations"]):
            layers.append(
                Dense(
                    np.array(data[f"model.layer{i}.weight"]),
                    np.array(data[f"model.layer{i}.bias"]),
                    act,
                )
            )
    h = header["head"]
    head = Sigmoid() if h["type"] == "sigmoid" else Softmax(int(h["k"]))
    model = PredicateModel(header["name"], layers, head)
    if model.sizes != header["sizes"]:
        raise ShapeError(f"checkpoint header sizes {header['sizes']} disagree with arrays")
    return model
