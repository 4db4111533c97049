"""Tree learners: CART, random forest, shrinkage boosting, second-order
regularized boosting and boosting on ordered target statistics.

All learners work on dense float matrices ``X`` of shape ``(rows, features)``
and a target vector ``y``. Splits send a row left iff
``x[feature] < threshold``; thresholds are midpoints between adjacent
distinct sorted values, and ties in split quality are resolved in favour of
the lowest feature index and then the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise DataError(f"bad shapes X{X.shape} y{y.shape}")
    if len(y) == 0:
        raise DataError("empty sample set")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("features and targets must be finite")
    return X, y


# -----------------------------------------------------------------------------
# single tree


@dataclass
class RegressionTree:
    """Binary regression tree stored as parallel node arrays.

    ``feature[n] == -1`` marks a leaf; ``value`` is meaningful on leaves.
    """

    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)
    n_samples: list = field(default_factory=list)
    n_features: int = 0
    max_depth: int = 0
    min_leaf: int = 1

    def _add(self, n):
        for lst, v in ((self.feature, -1), (self.threshold, 0.0), (self.left, -1),
                       (self.right, -1), (self.value, 0.0), (self.n_samples, n)):
            lst.append(v)
        return len(self.feature) - 1

    @property
    def n_nodes(self):
        return len(self.feature)

    def depth(self):
        def rec(n):
            if self.feature[n] < 0:
                return 0
            return 1 + max(rec(self.left[n]), rec(self.right[n]))
        return rec(0)

    def apply(self, X):
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(len(X), dtype=int)
        rows = np.arange(len(X))
        active = feat[node] >= 0
        while np.any(active):
            r = rows[active]
            n = node[r]
            go_left = X[r, feat[n]] < thr[n]
            node[r] = np.where(go_left, left[n], right[n])
            active = feat[node] >= 0
        return node

    def predict(self, X):
        return np.asarray(self.value)[self.apply(X)]

    def to_dict(self):
        return {
            "kind": "regression_tree",
            "n_features": self.n_features,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "feature": list(map(int, self.feature)),
            "threshold": list(map(float, self.threshold)),
            "left": list(map(int, self.left)),
            "right": list(map(int, self.right)),
            "value": list(map(float, self.value)),
            "n_samples": list(map(int, self.n_samples)),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["feature"]), list(d["threshold"]), list(d["left"]),
                   list(d["right"]), list(d["value"]), list(d["n_samples"]),
                   d["n_features"], d["max_depth"], d["min_leaf"])


# gains closer than this (relative to the node's sum of squares) are ties;
# without it, rounding can break exact ties or split on a zero gain
TIE_TOL = 1e-12


def _best_split(X, r, features, min_leaf, gain_fn):
    """Scan every (feature, midpoint) pair; return (gain, feature, threshold).

    ``gain_fn(sum_left, n_left, sum_right, n_right)`` is vectorized over
    candidate positions. Ties go to the lowest feature index, then the
    lowest threshold; a split needs a strictly positive gain.
    """
    n = len(r)
    best = (0.0, -1, 0.0)
    if n < 2 * min_leaf:
        return best
    n_left = np.arange(1, n)
    size_ok = (n_left >= min_leaf) & (n - n_left >= min_leaf)
    candidates = []
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cs = np.cumsum(r[order])
        total = cs[-1]
        valid = size_ok & (xs[:-1] < xs[1:])
        if not np.any(valid):
            continue
        s_left = cs[:-1]
        gains = gain_fn(s_left, n_left, total - s_left, n - n_left)
        candidates.append((int(f), xs, np.where(valid, gains, -np.inf)))
    if not candidates:
        return best
    top = max(float(g.max()) for _, _, g in candidates)
    eps = TIE_TOL * max(abs(top), float(np.dot(r, r)))
    if not top > eps:
        return best
    for f, xs, gains in candidates:
        hits = np.flatnonzero(gains >= top - eps)
        if len(hits):
            i = int(hits[0])
            thr = 0.5 * (xs[i] + xs[i + 1])
            if not xs[i] < thr:
                thr = xs[i + 1]
            return (float(gains[i]), f, float(thr))
    return best


def _sse_gain(sl, nl, sr, nr):
    # on node-centred targets: SSE(parent) - SSE(left) - SSE(right)
    return sl * sl / nl + sr * sr / nr


def _grow(X, r, max_depth, min_leaf, gain_fn, leaf_fn, centre, feature_sampler=None):
    tree = RegressionTree(n_features=X.shape[1], max_depth=max_depth, min_leaf=min_leaf)
    all_features = np.arange(X.shape[1])

    def rec(idx, depth):
        node = tree._add(len(idx))
        tree.value[node] = float(leaf_fn(r[idx]))
        if depth >= max_depth:
            return node
        rr = r[idx] - tree.value[node] if centre else r[idx]
        feats = all_features if feature_sampler is None else feature_sampler()
        gain, f, thr = _best_split(X[idx], rr, feats, min_leaf, gain_fn)
        if f < 0:
            return node
        go_left = X[idx, f] < thr
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = rec(idx[go_left], depth + 1)
        tree.right[node] = rec(idx[~go_left], depth + 1)
        return node

    rec(np.arange(len(r)), 0)
    return tree


def fit_tree(X, y, max_depth=6, min_leaf=1, feature_sampler=None):
    """Greedy CART regression tree minimizing the children's total SSE.

    Growth stops at ``max_depth``, when no split leaves ``min_leaf`` rows on
    both sides, or when no split strictly lowers the SSE. ``feature_sampler``
    (used by forests) returns the candidate feature indices for each split.
    """
    X, y = _check_xy(X, y)
    if max_depth < 0 or min_leaf < 1:
        raise DataError("max_depth must be >= 0 and min_leaf >= 1")
    return _grow(X, y, max_depth, min_leaf, _sse_gain, np.mean, True, feature_sampler)


def predict_tree(tree, X):
    return tree.predict(X)


def tree_sse(tree, X, y):
    """Training SSE of ``tree``, summed leaf by leaf."""
    leaves = tree.apply(X)
    total = 0.0
    for leaf in np.unique(leaves):
        v = y[leaves == leaf]
        total += float(np.sum((v - v.mean()) ** 2))
    return total


# -----------------------------------------------------------------------------
# random forest


@dataclass
class ForestModel:
    trees: list
    mtry: int
    bootstrap: bool
    seed: int
    max_depth: int
    min_leaf: int

    def predict(self, X):
        total = self.trees[0].predict(X)
        for t in self.trees[1:]:
            total = total + t.predict(X)
        return total / len(self.trees)

    def to_dict(self):
        return {
            "kind": "forest",
            "mtry": self.mtry,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        return cls([RegressionTree.from_dict(t) for t in d["trees"]], d["mtry"],
                   d["bootstrap"], d["seed"], d["max_depth"], d["min_leaf"])


def _fit_member(X, y, rng, mtry, bootstrap, max_depth, min_leaf):
    n, p = X.shape
    if bootstrap:
        rows = rng.integers(0, n, size=n)
        X, y = X[rows], y[rows]

    def sampler():
        return np.sort(rng.choice(p, size=mtry, replace=False))

    return fit_tree(X, y, max_depth=max_depth, min_leaf=min_leaf, feature_sampler=sampler)


def fit_forest(X, y, n_trees=100, mtry=None, bootstrap=True, seed=0, max_depth=12, min_leaf=5):
    """Bagged CART trees with ``mtry`` candidate features drawn per split.

    Tree ``k`` draws from its own stream spawned from ``seed``, so members
    can be trained in any order and still reproduce the same forest.
    """
    X, y = _check_xy(X, y)
    p = X.shape[1]
    mtry = p if mtry is None else int(mtry)
    if n_trees < 1:
        raise DataError("n_trees must be >= 1")
    if not 1 <= mtry <= p:
        raise DataError(f"mtry must lie in 1..{p}")
    streams = np.random.SeedSequence(seed).spawn(n_trees)
    trees = [
        _fit_member(X, y, np.random.default_rng(s), mtry, bootstrap, max_depth, min_leaf)
        for s in streams
    ]
    return ForestModel(trees, mtry, bootstrap, seed, max_depth, min_leaf)


# -----------------------------------------------------------------------------
# shrinkage boosting


@dataclass
class BoostModel:
    """``F(x) = 0 + sum_k learning_rate * tree_k(x)``."""

    trees: list
    learning_rate: float
    max_depth: int
    min_leaf: int
    train_sse: list = field(default_factory=list)

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        F = np.zeros(len(X))
        for t in self.trees:
            F = F + self.learning_rate * t.predict(X)
        return F

    def to_dict(self):
        return {
            "kind": "boost",
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "train_sse": list(map(float, self.train_sse)),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        return cls([RegressionTree.from_dict(t) for t in d["trees"]], d["learning_rate"],
                   d["max_depth"], d["min_leaf"], list(d["train_sse"]))


def _check_rate(rate, rounds, name):
    if not 0 < rate <= 1:
        raise DataError(f"{name} must lie in (0, 1]")
    if rounds < 1:
        raise DataError("rounds must be >= 1")


def fit_gbm(X, y, rounds=100, learning_rate=0.1, max_depth=3, min_leaf=1):
    """Least-squares boosting from a zero initial estimate.

    Each round fits a CART tree to the current residuals and adds it scaled
    by ``learning_rate``. ``train_sse[k]`` is the training SSE after ``k``
    rounds (``train_sse[0]`` is the SSE of the zero model).
    """
    X, y = _check_xy(X, y)
    _check_rate(learning_rate, rounds, "learning_rate")
    F = np.zeros(len(y))
    trees = []
    sse = [float(np.sum(y * y))]
    for _ in range(rounds):
        tree = fit_tree(X, y - F, max_depth=max_depth, min_leaf=min_leaf)
        F = F + learning_rate * tree.predict(X)
        trees.append(tree)
        sse.append(float(np.sum((y - F) ** 2)))
    return BoostModel(trees, learning_rate, max_depth, min_leaf, sse)


# -----------------------------------------------------------------------------
# second-order regularized boosting


@dataclass
class RegBoostModel:
    trees: list
    eta: float
    reg_lambda: float
    gamma: float
    max_depth: int
    min_leaf: int
    train_sse: list = field(default_factory=list)

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        F = np.zeros(len(X))
        for t in self.trees:
            F = F + self.eta * t.predict(X)
        return F

    def to_dict(self):
        return {
            "kind": "regboost",
            "eta": self.eta,
            "reg_lambda": self.reg_lambda,
            "gamma": self.gamma,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "train_sse": list(map(float, self.train_sse)),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        return cls([RegressionTree.from_dict(t) for t in d["trees"]], d["eta"],
                   d["reg_lambda"], d["gamma"], d["max_depth"], d["min_leaf"],
                   list(d["train_sse"]))


def leaf_weight(gradients, hessians, reg_lambda):
    return -np.sum(gradients) / (np.sum(hessians) + reg_lambda)


def fit_regression_stage(X, residuals, reg_lambda=1.0, gamma=0.0, max_depth=3, min_leaf=1):
    """One second-order tree for squared loss (gradient ``-residual``, hessian 1).

    Split gain is ``(GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)) / 2 - gamma``;
    only splits with positive gain are kept.
    """
    X, r = _check_xy(X, residuals)

    def gain(sl, nl, sr, nr):
        s = sl + sr
        return 0.5 * (sl * sl / (nl + reg_lambda) + sr * sr / (nr + reg_lambda)
                      - s * s / (nl + nr + reg_lambda)) - gamma

    def weight(rr):
        return leaf_weight(-rr, np.ones_like(rr), reg_lambda)

    return _grow(X, r, max_depth, min_leaf, gain, weight, False)


def fit_regboost(X, y, rounds=100, eta=0.1, reg_lambda=1.0, gamma=0.0, max_depth=3, min_leaf=1):
    X, y = _check_xy(X, y)
    _check_rate(eta, rounds, "eta")
    if reg_lambda < 0 or gamma < 0:
        raise DataError("reg_lambda and gamma must be >= 0")
    F = np.zeros(len(y))
    trees = []
    sse = [float(np.sum(y * y))]
    for _ in range(rounds):
        tree = fit_regression_stage(X, y - F, reg_lambda, gamma, max_depth, min_leaf)
        F = F + eta * tree.predict(X)
        trees.append(tree)
        sse.append(float(np.sum((y - F) ** 2)))
    return RegBoostModel(trees, eta, reg_lambda, gamma, max_depth, min_leaf, sse)


# -----------------------------------------------------------------------------
# ordered target statistics


def ordered_target_statistic(categories, y, permutation, prior_strength, prior):
    """Encode each row from same-category rows that precede it in ``permutation``.

    ``value = (sum of earlier same-category targets + a * P) / (count + a)``
    """
    categories = np.asarray(categories)
    y = np.asarray(y, dtype=float)
    encoded = np.empty(len(y))
    sums, counts = {}, {}
    for row in permutation:
        c = categories[row].item()
        s, k = sums.get(c, 0.0), counts.get(c, 0)
        encoded[row] = (s + prior_strength * prior) / (k + prior_strength)
        sums[c] = s + y[row]
        counts[c] = k + 1
    return encoded


@dataclass
class OrderedBoostModel:
    booster: BoostModel
    cat_feature: int
    prior_strength: float
    prior: float
    permutation_seed: int
    category_sums: dict
    category_counts: dict

    def encode(self, X):
        X = np.array(X, dtype=float)
        col = X[:, self.cat_feature]
        enc = np.full(len(X), self.prior, dtype=float)
        for c, s in self.category_sums.items():
            k = self.category_counts[c]
            enc[col == c] = (s + self.prior_strength * self.prior) / (k + self.prior_strength)
        X[:, self.cat_feature] = enc
        return X

    def predict(self, X):
        return self.booster.predict(self.encode(X))

    def to_dict(self):
        return {
            "kind": "ordered_boost",
            "cat_feature": self.cat_feature,
            "prior_strength": self.prior_strength,
            "prior": self.prior,
            "permutation_seed": self.permutation_seed,
            "categories": [[float(c), float(self.category_sums[c]), int(self.category_counts[c])]
                           for c in sorted(self.category_sums)],
            "booster": self.booster.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        sums = {c: s for c, s, _ in d["categories"]}
        counts = {c: k for c, _, k in d["categories"]}
        return cls(BoostModel.from_dict(d["booster"]), d["cat_feature"], d["prior_strength"],
                   d["prior"], d["permutation_seed"], sums, counts)


def fit_ordered_boost(X, y, rounds=100, learning_rate=0.1, max_depth=3, min_leaf=1,
                      cat_feature=1, permutation_seed=0, prior_strength=1.0, prior=None):
    """Boosting after replacing a categorical column by ordered target statistics.

    A single random permutation of the rows is drawn from
    ``permutation_seed``. ``prior`` defaults to the mean training target.
    At prediction time a category is encoded from all of its training rows.
    """
    X, y = _check_xy(X, y)
    if prior_strength <= 0:
        raise DataError("prior_strength must be > 0")
    prior = float(np.mean(y)) if prior is None else float(prior)
    perm = np.random.default_rng(permutation_seed).permutation(len(y))
    Xe = X.copy()
    Xe[:, cat_feature] = ordered_target_statistic(X[:, cat_feature], y, perm, prior_strength, prior)
    booster = fit_gbm(Xe, y, rounds=rounds, learning_rate=learning_rate,
                      max_depth=max_depth, min_leaf=min_leaf)
    sums, counts = {}, {}
    for c in np.unique(X[:, cat_feature]):
        mask = X[:, cat_feature] == c
        sums[float(c)] = float(np.sum(y[mask]))
        counts[float(c)] = int(mask.sum())
    return OrderedBoostModel(booster, cat_feature, float(prior_strength), prior,
                             permutation_seed, sums, counts)
