"""Synthetic clustering and two-digit addition tasks.

Both tasks stand in for real datasets: Gaussian blobs for the clustering
problem and Gaussian "digit images" (one cluster per class in feature space)
for the addition problem. The knowledgebases are the real ones; only the
perception inputs are synthetic.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .formula import Knowledgebase, parse_kb
from .predicates import PredicateModel, ProjectedPredicate, Softmax, init_model, predict_proba
from .semantics import Constant, Guard, GroundingEnv, Kind, Linear, SemanticsConfig
from .training import TrainConfig, adjusted_rand_index, train

CLUSTER_KB = """
forall x (exists c C(x, c));
forall c (exists x C(x, c));
forall (c, x, y | close) (C(x, c) -> C(y, c));
"""

DIGITADD_KB = """
forall s (exists (d1, d2, d3, d4 | sums)
    (D1(s, d1) and D2(s, d2) and D3(s, d3) and D4(s, d4)));
"""


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------


@dataclass
class ClusterConfig:
    n_points: int = 200
    dim: int = 2
    n_clusters: int = 5
    spread: float = 1.0  # per-blob standard deviation
    box: float = 10.0  # centres drawn uniformly from [-box, box]^dim
    min_separation: float = 6.0  # minimum centre distance, in units of spread
    percentile: float = 2.5
    hidden: tuple = (16, 16)


@dataclass
class ClusterTask:
    points: np.ndarray
    labels: np.ndarray
    threshold: float
    n_clusters: int
    config: ClusterConfig = field(default_factory=ClusterConfig)

    @classmethod
    def generate(cls, config: Optional[ClusterConfig] = None, seed: int = 0) -> "ClusterTask":
        cfg = config or ClusterConfig()
        rng = np.random.default_rng(seed)
        centres = _separated_centres(rng, cfg.n_clusters, cfg.dim, cfg.box, cfg.min_separation * cfg.spread)
        labels = np.arange(cfg.n_points) % cfg.n_clusters
        rng.shuffle(labels)
        points = centres[labels] + cfg.spread * rng.standard_normal((cfg.n_points, cfg.dim))
        threshold = pair_threshold(points, cfg.percentile)
        return cls(points, labels, threshold, cfg.n_clusters, cfg)

    def close_mask(self) -> np.ndarray:
        d = pairwise_distances(self.points)
        mask = d < self.threshold
        np.fill_diagonal(mask, False)
        return mask

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join([f"x{i}" for i in range(self.points.shape[1])] + ["label"]) + "\n")
        for p, l in zip(self.points, self.labels):
            buf.write(",".join(format(v, ".17g") for v in p) + f",{int(l)}\n")
        return buf.getvalue()


def _separated_centres(rng, k, dim, box, min_dist, tries=10_000):
    for _ in range(tries):
        c = rng.uniform(-box, box, size=(k, dim))
        if k < 2 or pairwise_distances(c)[np.triu_indices(k, 1)].min() >= min_dist:
            return c
    raise ValueError(f"could not place {k} centres {min_dist} apart inside the box")


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def pair_threshold(points: np.ndarray, percentile: float = 2.5) -> float:
    """Percentile of the euclidean distances between distinct pairs."""
    d = pairwise_distances(points)
    off = d[~np.eye(len(points), dtype=bool)]
    th = float(np.percentile(off, percentile))
    if th <= 0:
        raise ValueError("degenerate data: closeness threshold is zero")
    return th


def build_cluster_kb(task: ClusterTask, model: Optional[PredicateModel] = None, seed: int = 0):
    """Knowledgebase and environment for the three clustering constraints."""
    if model is None:
        sizes = [task.points.shape[1], *task.config.hidden, task.n_clusters]
        model = init_model(sizes, Softmax(task.n_clusters), seed=seed, name="C")
    mask = task.close_mask()
    if not mask.any():
        raise ValueError("closeness guard selects no pair")
    # guard is over (c, x, y): the closeness relation does not depend on c
    guard = np.broadcast_to(mask, (task.n_clusters,) + mask.shape)
    env = GroundingEnv(
        variables={"x": task.points, "y": task.points, "c": np.arange(task.n_clusters)},
        guards={"close": Guard(("c", "x", "y"), guard)},
        predicates={"C": model},
    )
    return parse_kb(CLUSTER_KB), env


def evaluate_cluster(model: PredicateModel, task: ClusterTask) -> float:
    """ARI of argmax cluster assignments against the generating labels."""
    pred = np.argmax(predict_proba(model, task.points), axis=1)
    return adjusted_rand_index(pred, task.labels)


# ---------------------------------------------------------------------------
# two-digit addition
# ---------------------------------------------------------------------------


@dataclass
class DigitAddConfig:
    dim: int = 8
    spread: float = 1.0
    box: float = 6.0
    min_separation: float = 6.0  # in units of spread
    hidden: tuple = (100, 84)
    batch_size: int = 32


def _sums_table() -> np.ndarray:
    """``10*d1 + d2 + 10*d3 + d4`` over all digit quadruples, shape (10, 10, 10, 10)."""
    d = np.arange(10)
    return (10 * d[:, None, None, None] + d[None, :, None, None]
            + 10 * d[None, None, :, None] + d[None, None, None, :])


@lru_cache(maxsize=None)
def valid_combos(n: int) -> tuple:
    """All (d1, d2, d3, d4) digits with 10*d1 + d2 + 10*d3 + d4 == n."""
    if not 0 <= n <= 198:
        raise ValueError(f"sum {n} outside [0, 198]")
    return tuple(tuple(int(v) for v in c) for c in np.argwhere(_sums_table() == n))


@dataclass
class DigitAddTask:
    centres: np.ndarray  # (10, dim)
    config: DigitAddConfig = field(default_factory=DigitAddConfig)

    @classmethod
    def generate(cls, config: Optional[DigitAddConfig] = None, seed: int = 0) -> "DigitAddTask":
        cfg = config or DigitAddConfig()
        rng = np.random.default_rng(seed)
        centres = _separated_centres(rng, 10, cfg.dim, cfg.box, cfg.min_separation * cfg.spread)
        return cls(centres, cfg)

    def images(self, digits, rng) -> np.ndarray:
        digits = np.asarray(digits)
        noise = self.config.spread * rng.standard_normal(digits.shape + (self.config.dim,))
        return self.centres[digits] + noise

    def samples(self, m: int, rng):
        """``m`` samples: features (m, 4*dim), digits (m, 4) and sums (m,)."""
        digits = rng.integers(0, 10, size=(m, 4))
        feats = self.images(digits, rng).reshape(m, 4 * self.config.dim)
        sums = 10 * digits[:, 0] + digits[:, 1] + 10 * digits[:, 2] + digits[:, 3]
        return feats, digits, sums

    def to_csv(self, m: int, seed: int = 0) -> str:
        feats, digits, sums = self.samples(m, np.random.default_rng(seed))
        d = self.config.dim
        cols = [f"{w}{i}" for w in ("x1_", "x2_", "y1_", "y2_") for i in range(d)]
        buf = io.StringIO()
        buf.write(",".join(cols + ["d1", "d2", "d3", "d4", "n"]) + "\n")
        for f, dg, n in zip(feats, digits, sums):
            buf.write(",".join(format(v, ".17g") for v in f))
            buf.write("," + ",".join(str(int(v)) for v in dg) + f",{int(n)}\n")
        return buf.getvalue()


def digit_model(task: DigitAddTask, seed: int = 0) -> PredicateModel:
    sizes = [task.config.dim, *task.config.hidden, 10]
    return init_model(sizes, Softmax(10), seed=seed, name="is_digit")


def build_digitadd_kb(features: np.ndarray, sums: np.ndarray, model: PredicateModel):
    """Knowledgebase and environment for one batch of addition samples."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    sums = np.asarray(sums, dtype=np.int64).reshape(-1)
    if len(sums) == 0:
        raise ValueError("empty sample batch")
    if len(sums) != len(features):
        raise ValueError(f"{len(features)} samples but {len(sums)} sums")
    if sums.min() < 0 or sums.max() > 198:
        raise ValueError("sums must lie in [0, 198]")
    dim = model.sizes[0]
    if features.shape[1] != 4 * dim:
        raise ValueError(f"expected {4 * dim} features per sample, got {features.shape[1]}")
    views = {
        f"D{i + 1}": ProjectedPredicate(model, np.arange(i * dim, (i + 1) * dim)) for i in range(4)
    }
    mask = _sums_table()[None] == sums[:, None, None, None, None]
    digits = np.arange(10)
    env = GroundingEnv(
        variables={"s": features, "d1": digits, "d2": digits, "d3": digits, "d4": digits},
        guards={"sums": Guard(("s", "d1", "d2", "d3", "d4"), mask)},
        predicates=views,
    )
    return parse_kb(DIGITADD_KB), env


def digitadd_batches(task: DigitAddTask, model: PredicateModel, batch_size: Optional[int] = None):
    """Environment factory ``env(step, rng)`` drawing a fresh minibatch each step."""
    m = batch_size or task.config.batch_size

    def env(step, rng):
        feats, _, sums = task.samples(m, rng)
        return build_digitadd_kb(feats, sums, model)[1]

    return env


def evaluate_digitadd(model: PredicateModel, task: DigitAddTask, m: int = 1000, seed: int = 12345):
    """(digit accuracy, sum accuracy) on freshly drawn held-out samples."""
    rng = np.random.default_rng(seed)
    feats, digits, sums = task.samples(m, rng)
    dim = task.config.dim
    flat = feats.reshape(m * 4, dim)
    pred = np.argmax(predict_proba(model, flat), axis=1).reshape(m, 4)
    digit_acc = float(np.mean(pred == digits))
    psum = 10 * pred[:, 0] + pred[:, 1] + 10 * pred[:, 2] + pred[:, 3]
    sum_acc = float(np.mean(psum == sums))
    return digit_acc, sum_acc


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

DEFAULT_STEPS = {"clustering": 1000, "digitadd": 500}
DEFAULT_LR = {"clustering": 0.002, "digitadd": 0.001}
# With alpha >= 1 the synthetic addition task often settles in a state where
# every digit is read as one of its neighbours (errors cancel in a quarter of
# the sums). A small alpha keeps LME close to the mean log-truth of the valid
# combinations, which penalises giving the true digits zero mass.
DIGITADD_ALPHA = 0.5


def task_semantics(task: str, kind, steps: int) -> SemanticsConfig:
    """Operator schedules used for a task: alpha 1 -> 4 and p 1 -> 6 unless overridden."""
    kind = Kind(kind)
    if task == "digitadd":
        return SemanticsConfig(kind, alpha=Constant(DIGITADD_ALPHA), p=Linear(1.0, 6.0, steps))
    return SemanticsConfig.default(kind, steps)


def run_clustering_seed(kind, seed: int, steps: Optional[int] = None,
                        config: Optional[ClusterConfig] = None) -> float:
    """Train the clustering predicate from scratch with the task presets; return the ARI."""
    steps = steps or DEFAULT_STEPS["clustering"]
    task = ClusterTask.generate(config, seed=seed)
    kb, env = build_cluster_kb(task, seed=seed)
    train(kb, env, task_semantics("clustering", kind, steps),
          TrainConfig(steps=steps, learning_rate=DEFAULT_LR["clustering"], seed=seed))
    return evaluate_cluster(env.predicates["C"], task)


def run_digitadd_seed(kind, seed: int, steps: Optional[int] = None,
                      config: Optional[DigitAddConfig] = None) -> tuple:
    """Train the digit classifier through the addition constraint; return (digit acc, sum acc)."""
    steps = steps or DEFAULT_STEPS["digitadd"]
    task = DigitAddTask.generate(config, seed=seed)
    model = digit_model(task, seed=seed)
    train(parse_kb(DIGITADD_KB), digitadd_batches(task, model), task_semantics("digitadd", kind, steps),
          TrainConfig(steps=steps, learning_rate=DEFAULT_LR["digitadd"], seed=seed))
    return evaluate_digitadd(model, task)
