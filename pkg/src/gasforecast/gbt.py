"""Second-order gradient-boosted regression trees with exact greedy splits.

Each round fits a tree to the gradient/Hessian of the squared loss at the
current predictions. A split's gain is::

    1/2 * [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma

and a leaf's weight is ``-G / (H + lambda)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import DataError

# gains closer than this (relative) are treated as ties, so the
# lowest-feature / lowest-threshold rule decides instead of rounding noise
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class GbtParams:
    n_trees: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    base_score: Optional[float] = None  # None: mean training target

    def validate(self) -> None:
        if self.n_trees < 0:
            raise DataError("n_trees must be >= 0")
        if self.max_depth < 1:
            raise DataError("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise DataError("learning_rate must lie in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise DataError("reg_lambda, gamma and min_child_weight must be >= 0")


class GradHessPair(NamedTuple):
    g: float
    h: float


def squared_loss_grad_hess(pred, target):
    """Derivatives of ``(pred - target)^2 / 2``: ``g = pred - target``, ``h = 1``."""
    g = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    if g.ndim == 0:
        return GradHessPair(float(g), 1.0)
    return GradHessPair(g, np.ones_like(g))


class Split(NamedTuple):
    feature: int
    threshold: float
    gain: float


def _score(G, H, lam):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(H + lam > 0, G * G / (H + lam), 0.0)


def _midpoint(a: float, b: float) -> float:
    mid = a + (b - a) / 2.0
    # adjacent floats: the midpoint may round onto a
    return mid if a < mid <= b else b


def find_best_split(X, g, h, params: GbtParams) -> Optional[Split]:
    """Exact greedy search over every boundary between distinct feature values.

    Candidates whose children fall below ``min_child_weight`` are skipped.
    Returns ``None`` when no candidate has positive gain.
    """
    X = np.asarray(X, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    n, F = X.shape
    if n < 2 or F == 0:
        return None
    lam = params.reg_lambda
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    GL = np.cumsum(g[order], axis=0)[:-1]
    HL = np.cumsum(h[order], axis=0)[:-1]
    G, H = g.sum(), h.sum()
    GR, HR = G - GL, H - HL
    valid = (xs[:-1] < xs[1:]) & (HL >= params.min_child_weight) & (HR >= params.min_child_weight)
    if not valid.any():
        return None
    parent = float(_score(G, H, lam))
    gain = 0.5 * (_score(GL, HL, lam) + _score(GR, HR, lam) - parent) - params.gamma
    gain = np.where(valid, gain, -np.inf)
    best = float(gain.max())
    scale = max(1.0, abs(best), parent)
    if best <= TIE_RTOL * scale:
        return None
    tied = gain >= best - TIE_RTOL * scale
    # column-major scan: lowest feature first, then lowest threshold
    pos, feat = np.argwhere(tied.T)[0][::-1]
    thr = _midpoint(float(xs[pos, feat]), float(xs[pos + 1, feat]))
    return Split(int(feat), thr, float(gain[pos, feat]))


@dataclass
class RegressionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf holding ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    gain: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] < self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return self.value[node]


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    denom = H + reg_lambda
    return 0.0 if denom <= 0 else -G / denom


def build_tree(X, g, h, params: GbtParams) -> RegressionTree:
    """Grow one tree depth-first until depth, gain or child weight stops it."""
    X = np.asarray(X, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if len(g) == 0:
        raise DataError("cannot build a tree from zero samples")
    nodes: list[list] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        me = len(nodes)
        w = leaf_weight(float(g[idx].sum()), float(h[idx].sum()), params.reg_lambda)
        nodes.append([-1, 0.0, -1, -1, 0.0, w])
        if depth >= params.max_depth or len(idx) < 2:
            return me
        split = find_best_split(X[idx], g[idx], h[idx], params)
        if split is None:
            return me
        go_left = X[idx, split.feature] < split.threshold
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        nodes[me] = [split.feature, split.threshold, left, right, split.gain, 0.0]
        return me

    grow(np.arange(len(g)), 0)
    cols = list(zip(*nodes))
    return RegressionTree(
        feature=np.asarray(cols[0], dtype=int),
        threshold=np.asarray(cols[1], dtype=float),
        left=np.asarray(cols[2], dtype=int),
        right=np.asarray(cols[3], dtype=int),
        gain=np.asarray(cols[4], dtype=float),
        value=np.asarray(cols[5], dtype=float),
    )


@dataclass
class GbtModel:
    params: GbtParams
    base_score: float
    trees: list[RegressionTree] = field(default_factory=list)
    feature_names: tuple[str, ...] = ()
    importance: dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != len(self.feature_names):
            raise DataError(
                f"feature width {X.shape[1]} does not match model width {len(self.feature_names)}"
            )
        out = np.full(len(X), self.base_score)
        for tree in self.trees:
            out += self.params.learning_rate * tree.predict(X)
        return float(out[0]) if single else out


def fit(X, y, params: GbtParams = GbtParams(), feature_names=None, seed: int = 0) -> GbtModel:
    """Boost ``params.n_trees`` trees on squared loss.

    The exact greedy learner uses no randomness; ``seed`` is recorded only.
    """
    params.validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise DataError("X must be a non-empty (n, F) matrix matching y")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("non-finite feature or target value")
    if feature_names is None:
        feature_names = tuple(f"f{j}" for j in range(X.shape[1]))
    feature_names = tuple(feature_names)
    if len(feature_names) != X.shape[1]:
        raise DataError("feature_names length does not match X")

    base = float(np.mean(y)) if params.base_score is None else float(params.base_score)
    model = GbtModel(params, base, [], feature_names, {n: 0.0 for n in feature_names}, seed)
    pred = np.full(len(y), base)
    for _ in range(params.n_trees):
        g, h = squared_loss_grad_hess(pred, y)
        tree = build_tree(X, g, h, params)
        model.trees.append(tree)
        pred += params.learning_rate * tree.predict(X)
        for f, gain in zip(tree.feature, tree.gain):
            if f >= 0:
                model.importance[feature_names[f]] += float(gain)
    return model


def predict(model: GbtModel, X):
    return model.predict(X)


def feature_importance(model: GbtModel) -> dict[str, float]:
    """Share of total split gain per feature; empty if the model never split."""
    total = sum(model.importance.values())
    if total <= 0:
        return {}
    return {name: gain / total for name, gain in model.importance.items()}
