"""Random-forest morphology classifier and the two-threshold reference rule.

Classes: 0 primary particle, 1 chain-like, 2 raspberry-like agglomerate.

Trees are grown greedily to a fixed depth with Gini impurity. Every tree uses
its own random subset of feature indices; samples are not bootstrapped. A node
whose samples are pure or cannot be split is stored as a leaf even if it sits
above the nominal depth: routing through pass-through children would end in
leaves carrying the same majority label, so predictions are identical to the
padded perfect tree while the storage stays linear in the data.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InvalidInputError, LayoutMismatchError, NoSplitError

N_CLASSES = 3
SCHEMA_VERSION = 1


def gini(counts) -> float:
    c = np.asarray(counts, dtype=float)
    n = c.sum()
    if n <= 0:
        raise InvalidInputError("gini of an empty set")
    q = c / n
    return float(np.sum(q * (1.0 - q)))


def majority(counts) -> int:
    """Most frequent class; ``argmax`` already prefers the smaller label on ties."""
    return int(np.argmax(counts))


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise InvalidInputError("X must be (n, p) with one label per row")
    if len(y) and (y.min() < 0 or y.max() >= N_CLASSES):
        raise InvalidInputError("labels must be in {0, 1, 2}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("features must be finite")
    return X, y


def _split_scores(xs, ys):
    """Candidate splits of one sorted column.

    Returns boundary indices ``i`` (split between sorted positions i-1 and i)
    and the integer pair ``(num, den)`` with ``n - Q = num / den``; larger is
    better.
    """
    n = len(xs)
    onehot = np.zeros((n, N_CLASSES), dtype=np.int64)
    onehot[np.arange(n), ys] = 1
    left = np.cumsum(onehot, axis=0)[:-1]
    right = left[-1] + onehot[-1] - left
    cut = np.flatnonzero(xs[1:] != xs[:-1])
    if len(cut) == 0:
        return cut, None, None
    left, right = left[cut], right[cut]
    nl = cut + 1
    nr = n - nl
    a = (left * left).sum(axis=1)
    b = (right * right).sum(axis=1)
    # sum_k cl^2/nl + sum_k cr^2/nr, kept as an exact fraction
    return cut + 1, a * nr + b * nl, nl * nr


def best_split(X, y, J) -> tuple[int, float, float]:
    """Split minimizing summed child impurity ``Q = sum_child G * n_child``.

    Candidate thresholds are midpoints of consecutive distinct values; a
    sample goes left when its value is ``<= P*``. Ties are resolved exactly:
    smallest feature index first, then smallest threshold.

    Raises
    ------
    NoSplitError
        If the labels are pure or no feature in ``J`` takes two values.
    """
    X, y = _check_xy(X, y)
    J = sorted(int(j) for j in J)
    if not J:
        raise InvalidInputError("feature subset is empty")
    counts = np.bincount(y, minlength=N_CLASSES)
    if np.count_nonzero(counts) <= 1:
        raise NoSplitError("node is pure")
    n = len(y)
    best = None     # (Fraction score, j, threshold)
    for j in J:
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        idx, num, den = _split_scores(xs, ys)
        if num is None:
            continue
        score = num / den
        top = score.max()
        # float scores within rounding of the max are compared exactly
        near = np.flatnonzero(score >= top - 1e-9 * max(1.0, abs(top)))
        k = max(near, key=lambda t: (Fraction(int(num[t]), int(den[t])), -t))
        cand = Fraction(int(num[k]), int(den[k]))
        if best is None or cand > best[0]:
            thr = 0.5 * (xs[idx[k] - 1] + xs[idx[k]])
            best = (cand, j, float(thr))
    if best is None:
        raise NoSplitError("all samples identical on the feature subset")
    return best[1], best[2], float(n - best[0])


# ---------------------------------------------------------------- trees

@dataclass
class DecisionTree:
    """Array-encoded binary tree.

    ``feature[i] == -1`` marks a leaf. ``label`` holds the training majority of
    every node, so truncating the tree at a smaller depth is exact.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray
    node_depth: np.ndarray
    depth: int
    subset: tuple[int, ...]

    def truncate(self, depth: int) -> "DecisionTree":
        if depth >= self.depth:
            return self
        keep = np.flatnonzero(self.node_depth <= depth)
        remap = -np.ones(len(self.feature), dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        feat = self.feature[keep].copy()
        feat[self.node_depth[keep] == depth] = -1
        left = np.where(feat >= 0, remap[np.maximum(self.left[keep], 0)], -1)
        right = np.where(feat >= 0, remap[np.maximum(self.right[keep], 0)], -1)
        thr = np.where(feat >= 0, self.threshold[keep], 0.0)
        return DecisionTree(feat, thr, left, right, self.label[keep].copy(),
                            self.node_depth[keep].copy(), depth, self.subset)

    def apply(self, X, depth: int | None = None) -> np.ndarray:
        """Index of the node each row ends in (optionally stopping at ``depth``)."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        stop = self.depth if depth is None else min(depth, self.depth)
        for _ in range(stop):
            f = self.feature[node]
            act = f >= 0
            if not act.any():
                break
            rows = np.flatnonzero(act)
            go_left = X[rows, f[act]] <= self.threshold[node[act]]
            node[rows] = np.where(go_left, self.left[node[act]], self.right[node[act]])
        return node

    def predict(self, X, depth: int | None = None) -> np.ndarray:
        return self.label[self.apply(X, depth)]

    def to_dict(self) -> dict:
        return {
            "depth": int(self.depth),
            "subset": [int(j) for j in self.subset],
            "feature": self.feature.tolist(),
            "threshold": [float(t) if f >= 0 else None for f, t in zip(self.feature, self.threshold)],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "label": self.label.tolist(),
            "node_depth": self.node_depth.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        thr = np.array([0.0 if t is None else t for t in d["threshold"]], dtype=float)
        return cls(np.array(d["feature"], dtype=np.int64), thr,
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["label"], dtype=np.int64), np.array(d["node_depth"], dtype=np.int64),
                   int(d["depth"]), tuple(d["subset"]))


def build_tree(X, y, max_depth: int, J=None) -> DecisionTree:
    """Grow a CART tree on the features ``J`` to ``max_depth`` levels."""
    X, y = _check_xy(X, y)
    if len(y) == 0:
        raise InvalidInputError("cannot grow a tree on no samples")
    if max_depth < 0:
        raise InvalidInputError("max_depth must be >= 0")
    J = tuple(sorted(range(X.shape[1]) if J is None else (int(j) for j in J)))
    feature, threshold, left, right, label, ndepth = [], [], [], [], [], []

    def new(rows, d):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        label.append(majority(np.bincount(y[rows], minlength=N_CLASSES)))
        ndepth.append(d)
        return len(feature) - 1

    stack = [(new(np.arange(len(y)), 0), np.arange(len(y)))]
    while stack:
        i, rows = stack.pop()
        if ndepth[i] >= max_depth:
            continue
        try:
            j, thr, _ = best_split(X[rows], y[rows], J)
        except NoSplitError:
            continue
        go = X[rows, j] <= thr
        li = new(rows[go], ndepth[i] + 1)
        ri = new(rows[~go], ndepth[i] + 1)
        feature[i], threshold[i], left[i], right[i] = j, thr, li, ri
        stack.append((ri, rows[~go]))
        stack.append((li, rows[go]))
    return DecisionTree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                        np.array(label, dtype=np.int64), np.array(ndepth, dtype=np.int64),
                        int(max_depth), J)


# ---------------------------------------------------------------- forests

def tree_subset(seed: int, b: int, n_features: int, subset_size: int) -> tuple[int, ...]:
    """Feature subset of tree ``b``; depends only on ``(seed, b)``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(b)]))
    return tuple(sorted(int(j) for j in rng.choice(n_features, subset_size, replace=False)))


def vote(preds: np.ndarray) -> np.ndarray:
    """Plurality over axis 0 of a (trees, samples) label array; ties to the smaller label."""
    preds = np.atleast_2d(preds)
    counts = np.stack([(preds == k).sum(axis=0) for k in range(N_CLASSES)])
    return np.argmax(counts, axis=0)


@dataclass
class TrainedForest:
    trees: list
    n_trees: int
    max_depth: int
    subset_size: int
    seed: int
    layout: tuple[str, ...] | None = None
    fingerprint: str | None = None

    @property
    def n_features(self) -> int:
        return len(self.layout) if self.layout else max(max(t.subset) for t in self.trees) + 1

    def predict(self, X, layout_fingerprint: str | None = None) -> np.ndarray:
        if (layout_fingerprint is not None and self.fingerprint is not None
                and layout_fingerprint != self.fingerprint):
            raise LayoutMismatchError("feature layout differs from the one the forest was trained on")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.layout and X.shape[1] != len(self.layout):
            raise InvalidInputError(f"expected {len(self.layout)} features, got {X.shape[1]}")
        return vote(np.stack([t.predict(X) for t in self.trees]))

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "kind": "random_forest",
            "hyperparams": {"n_trees": self.n_trees, "max_depth": self.max_depth,
                            "subset_size": self.subset_size},
            "seed": self.seed,
            "layout": list(self.layout) if self.layout else None,
            "layout_fingerprint": self.fingerprint,
            "trees": [t.to_dict() for t in self.trees],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainedForest":
        d = json.loads(text)
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "random_forest":
            raise InvalidInputError("not a forest model file of a supported version")
        h = d["hyperparams"]
        return cls([DecisionTree.from_dict(t) for t in d["trees"]], h["n_trees"], h["max_depth"],
                   h["subset_size"], d["seed"], tuple(d["layout"]) if d["layout"] else None,
                   d["layout_fingerprint"])


def forest_predict(forest: TrainedForest, X, layout_fingerprint=None) -> np.ndarray:
    return forest.predict(X, layout_fingerprint)


class _TreeCache:
    """Deepest tree per feature subset; shallower trees are truncations."""

    def __init__(self, X, y, depth):
        self.X, self.y, self.depth = X, y, depth
        self._trees = {}

    def get(self, J):
        if J not in self._trees:
            self._trees[J] = build_tree(self.X, self.y, self.depth, J)
        return self._trees[J]


def train_forest(X, y, n_trees: int = 100, max_depth: int = 5, subset_size: int = 5,
                 seed: int = 0, layout=None, _cache=None) -> TrainedForest:
    """Grow ``n_trees`` trees, each on its own uniformly drawn feature subset."""
    from .descriptors import layout_fingerprint

    X, y = _check_xy(X, y)
    p = X.shape[1]
    if not 1 <= subset_size <= p:
        raise InvalidInputError(f"subset_size must lie in [1, {p}]")
    if n_trees < 1:
        raise InvalidInputError("need at least one tree")
    if layout is not None and len(layout) != p:
        raise InvalidInputError("layout length does not match the feature count")
    trees = []
    for b in range(n_trees):
        J = tree_subset(seed, b, p, subset_size)
        if _cache is not None and _cache.depth >= max_depth:
            trees.append(_cache.get(J).truncate(max_depth))
        else:
            trees.append(build_tree(X, y, max_depth, J))
    layout = tuple(layout) if layout is not None else None
    fp = layout_fingerprint(layout) if layout is not None else None
    return TrainedForest(trees, n_trees, max_depth, subset_size, int(seed), layout, fp)


def default_grid(n_features: int) -> dict:
    return {"n_trees": [50, 100, 200], "max_depth": [3, 5, 7, n_features],
            "subset_size": [5, n_features]}


@dataclass
class GridResult:
    best: dict
    forest: TrainedForest
    table: list = field(default_factory=list)   # (n_trees, max_depth, subset_size, accuracy)


def grid_search(X, y, grid=None, seed: int = 0, layout=None) -> GridResult:
    """Pick the combination with the highest training accuracy.

    Ties go to fewer trees, then smaller depth, then smaller subset.
    """
    X, y = _check_xy(X, y)
    if len(y) == 0:
        raise InvalidInputError("empty training set")
    p = X.shape[1]
    grid = grid or default_grid(p)
    Bs = sorted(set(grid["n_trees"]))
    depths = sorted(set(grid["max_depth"]))
    sizes = sorted(set(grid["subset_size"]))
    if sizes[0] < 1 or sizes[-1] > p:
        raise InvalidInputError(f"subset sizes must lie in [1, {p}]")
    cache = _TreeCache(X, y, max(depths))
    table = []
    for m in sizes:
        subsets = [tree_subset(seed, b, p, m) for b in range(max(Bs))]
        for dep in depths:
            preds = np.stack([cache.get(J).predict(X, dep) for J in subsets])
            for B in Bs:
                acc = float(np.mean(vote(preds[:B]) == y))
                table.append((B, dep, m, acc))
    key = max(table, key=lambda r: (r[3], -r[0], -r[1], -r[2]))
    best = {"n_trees": key[0], "max_depth": key[1], "subset_size": key[2], "train_accuracy": key[3]}
    forest = train_forest(X, y, key[0], key[1], key[2], seed, layout, _cache=cache)
    table.sort(key=lambda r: (r[0], r[1], r[2]))
    return GridResult(best, forest, table)


# ---------------------------------------------------------------- reference rule

@dataclass(frozen=True)
class ReferenceClassifier:
    d_threshold: float
    e_threshold: float

    def predict(self, d, e) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        e = np.asarray(e, dtype=float)
        return np.where(d < self.d_threshold, 0, np.where(e > self.e_threshold, 1, 2))

    def to_json(self) -> str:
        return json.dumps({"schema_version": SCHEMA_VERSION, "kind": "reference",
                           "d_threshold": self.d_threshold, "e_threshold": self.e_threshold},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ReferenceClassifier":
        d = json.loads(text)
        if d.get("schema_version") != SCHEMA_VERSION or d.get("kind") != "reference":
            raise InvalidInputError("not a reference model file of a supported version")
        return cls(float(d["d_threshold"]), float(d["e_threshold"]))


def _best_observed_threshold(values, positive, rule):
    """Observed value maximizing accuracy of ``rule(values, thr) == positive``.

    The smallest maximizing value is returned.
    """
    cand = np.unique(values)
    best_acc, best_t = -1, None
    for t in cand:
        acc = int(np.sum(rule(values, t) == positive))
        if acc > best_acc:
            best_acc, best_t = acc, float(t)
    return best_t


def reference_train(d, e, y) -> ReferenceClassifier:
    """Fit the diameter threshold, then the eccentricity threshold on true agglomerates."""
    d = np.asarray(d, dtype=float)
    e = np.asarray(e, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if set(np.unique(y)) != {0, 1, 2}:
        raise InvalidInputError("reference classifier needs all three classes")
    d_thr = _best_observed_threshold(d, y == 0, lambda v, t: v < t)
    agg = y != 0
    e_thr = _best_observed_threshold(e[agg], y[agg] == 1, lambda v, t: v > t)
    return ReferenceClassifier(d_thr, e_thr)


def reference_predict(d, e, model: ReferenceClassifier) -> np.ndarray:
    return model.predict(d, e)


# ---------------------------------------------------------------- evaluation

def confusion_matrix(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise InvalidInputError("prediction and label arrays differ in length")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def precision_recall(cm) -> tuple[np.ndarray, np.ndarray]:
    cm = np.asarray(cm, dtype=float)
    tp = np.diag(cm)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(cm.sum(0) > 0, tp / cm.sum(0), np.nan)
        recall = np.where(cm.sum(1) > 0, tp / cm.sum(1), np.nan)
    return precision, recall


def permutation_importance(forest: TrainedForest, X, y, seed: int = 0, k: int = 10) -> np.ndarray:
    """Mean accuracy drop over ``k`` shuffles of each feature column."""
    X, y = _check_xy(X, y)
    if len(y) == 0:
        raise InvalidInputError("no samples")
    base = np.mean(forest.predict(X) == y)
    rng = np.random.default_rng(seed)
    out = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        drops = []
        for _ in range(k):
            Xp = X.copy()
            Xp[:, j] = X[rng.permutation(len(X)), j]
            drops.append(base - np.mean(forest.predict(Xp) == y))
        out[j] = np.mean(drops)
    return out
