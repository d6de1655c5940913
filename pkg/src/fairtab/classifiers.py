"""Weighted binary classifiers trained on encoded feature matrices.

Five variants share one interface: ``fit(features, labels, weights,
seed)`` and ``predict_proba(features)`` returning the probability of the
favorable class per row.  Sample weights enter each variant through its
own estimator (weighted Gini impurity, weighted Gaussian moments,
weighted log-loss, weighted bootstrap); the nearest-neighbors variant
has no weighted estimator and ignores weights entirely, which makes it a
useful control: its predictions cannot change under reweighing.

Features may be a plain (n, d) array or an ``EncodedMatrix``; fitting on
the latter records the column layout and prediction rejects a matrix
with a different layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import EncodedMatrix
from .errors import SchemaError, TrainingError
from .serialize import load_bundle, save_bundle

CLASSIFIER_BUNDLE = "fairtab-classifier"


@dataclass(frozen=True)
class PredictionSet:
    """Favorable-class probabilities plus the cut turning them into labels."""

    probabilities: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 1 or not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise TrainingError("probabilities must be finite values in [0, 1]")
        if not (0.0 < self.threshold < 1.0):
            raise TrainingError("threshold must lie strictly between 0 and 1")
        object.__setattr__(self, "probabilities", p)

    @property
    def labels(self) -> np.ndarray:
        return (self.probabilities >= self.threshold).astype(np.int64)

    def with_threshold(self, threshold: float) -> "PredictionSet":
        return PredictionSet(probabilities=self.probabilities, threshold=threshold)


def uniform_threshold_grid(count: int) -> np.ndarray:
    """``count`` equally spaced thresholds strictly inside (0, 1)."""
    if count < 1:
        raise TrainingError("threshold grid needs at least one point")
    return (np.arange(count) + 0.5) / count


def threshold_sweep(pred: PredictionSet, thresholds) -> list[np.ndarray]:
    """Hard labelings of one probability vector under each threshold."""
    out = []
    for t in thresholds:
        out.append(pred.with_threshold(float(t)).labels)
    return out


def _as_matrix(features) -> tuple[np.ndarray, tuple | None]:
    if isinstance(features, EncodedMatrix):
        return features.data, features.layout.column_names
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise TrainingError("features must be a 2-D matrix")
    return arr, None


def _check_fit_inputs(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> None:
    if len(x) != len(y) or len(y) != len(w):
        raise TrainingError("features, labels, and weights must have equal lengths")
    if len(y) < 2:
        raise TrainingError("need at least two rows to fit")
    if not np.all(np.isfinite(x)):
        raise TrainingError("features contain non-finite values")
    if not np.isin(y, (0, 1)).all():
        raise TrainingError("labels must be 0 or 1")
    if (y == y[0]).all():
        raise TrainingError("labels contain a single class")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise TrainingError("weights must be finite and nonnegative")
    if w.sum() <= 0.0:
        raise TrainingError("total weight must be positive")


class Classifier:
    """Shared fit/predict plumbing; subclasses implement the estimators."""

    variant = "?"

    def __init__(self):
        self.feature_names: tuple | None = None
        self.n_features: int | None = None

    def fit(self, features, labels, weights=None, seed: int = 0):
        x, names = _as_matrix(features)
        y = np.asarray(labels, dtype=np.int64)
        w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
        _check_fit_inputs(x, y, w)
        self.feature_names = names
        self.n_features = x.shape[1]
        self._fit(x, y, w, seed)
        return self

    def _fit(self, x, y, w, seed):
        raise NotImplementedError

    def _predict(self, x):
        raise NotImplementedError

    def predict_proba(self, features) -> np.ndarray:
        x, names = _as_matrix(features)
        if self.n_features is None:
            raise TrainingError(f"{self.variant}: model is not fitted")
        if x.shape[1] != self.n_features:
            raise SchemaError(
                f"{self.variant}: expected {self.n_features} feature columns, got {x.shape[1]}"
            )
        if self.feature_names is not None and names is not None and names != self.feature_names:
            raise SchemaError(f"{self.variant}: feature layout does not match the fitted layout")
        return np.clip(self._predict(x), 0.0, 1.0)

    def predict(self, features, threshold: float = 0.5) -> PredictionSet:
        return PredictionSet(probabilities=self.predict_proba(features), threshold=threshold)

    # subclasses fill these in for serialization
    def _params(self) -> dict:
        return {}

    def _arrays(self) -> dict:
        raise NotImplementedError

    def _restore(self, arrays: dict) -> None:
        raise NotImplementedError


def _gini_children(wl, wyl, wr, wyr, total):
    """Weighted Gini impurity of a candidate (left, right) pair."""
    pl = np.divide(wyl, wl, out=np.zeros_like(wyl), where=wl > 0)
    pr = np.divide(wyr, wr, out=np.zeros_like(wyr), where=wr > 0)
    return (wl * 2.0 * pl * (1.0 - pl) + wr * 2.0 * pr * (1.0 - pr)) / total


class _TreeBuilder:
    """Grows one binary tree on (x, y, w); used by DT and RF."""

    def __init__(self, max_depth, min_leaf_weight, features_per_split=None, rng=None):
        self.max_depth = max_depth
        self.min_leaf_weight = min_leaf_weight
        self.features_per_split = features_per_split
        self.rng = rng
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.prob: list[float] = []

    def build(self, x, y, w):
        self._grow(x, y, w, depth=0)
        return (
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.asarray(self.prob, dtype=np.float64),
        )

    def _new_node(self, prob):
        self.feature.append(0)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.prob.append(float(prob))
        return len(self.prob) - 1

    def _candidate_features(self, d):
        if self.features_per_split is None or self.features_per_split >= d:
            return range(d)
        picked = self.rng.choice(d, size=self.features_per_split, replace=False)
        return sorted(int(j) for j in picked)

    def _grow(self, x, y, w, depth):
        total = w.sum()
        p1 = float((w * y).sum() / total)
        node = self._new_node(p1)
        if depth >= self.max_depth or p1 in (0.0, 1.0):
            return node
        parent_impurity = 2.0 * p1 * (1.0 - p1)
        best_score = parent_impurity - 1e-12
        best = None
        wy = w * y
        for j in self._candidate_features(x.shape[1]):
            order = np.argsort(x[:, j], kind="stable")
            xv = x[order, j]
            boundary = np.nonzero(xv[:-1] < xv[1:])[0]
            if boundary.size == 0:
                continue
            cw = np.cumsum(w[order])
            cwy = np.cumsum(wy[order])
            wl, wyl = cw[boundary], cwy[boundary]
            wr, wyr = total - wl, cwy[-1] - wyl
            valid = (wl >= self.min_leaf_weight) & (wr >= self.min_leaf_weight)
            if not valid.any():
                continue
            scores = _gini_children(wl, wyl, wr, wyr, total)
            scores[~valid] = np.inf
            k = int(np.argmin(scores))
            if scores[k] < best_score:
                best_score = float(scores[k])
                thr = 0.5 * (xv[boundary[k]] + xv[boundary[k] + 1])
                best = (j, thr)
        if best is None:
            return node
        j, thr = best
        go_left = x[:, j] <= thr
        self.feature[node] = j
        self.threshold[node] = thr
        self.left[node] = self._grow(x[go_left], y[go_left], w[go_left], depth + 1)
        self.right[node] = self._grow(x[~go_left], y[~go_left], w[~go_left], depth + 1)
        return node


def _tree_predict(x, feature, threshold, left, right, prob):
    idx = np.zeros(len(x), dtype=np.int64)
    rows = np.arange(len(x))
    while True:
        active = left[idx] >= 0
        if not active.any():
            return prob[idx]
        go_left = x[rows, feature[idx]] <= threshold[idx]
        stepped = np.where(go_left, left[idx], right[idx])
        idx = np.where(active, stepped, idx)


class DecisionTree(Classifier):
    """CART-style tree: weighted Gini splits at feature-value midpoints.

    A split is kept only if it lowers the weighted impurity and leaves at
    least ``min_leaf_weight`` of weight on each side; leaves report the
    weighted favorable fraction of their rows.
    """

    variant = "DT"

    def __init__(self, max_depth: int = 12, min_leaf_weight: float = 1.0):
        super().__init__()
        if max_depth < 1:
            raise TrainingError("max_depth must be at least 1")
        self.max_depth = max_depth
        self.min_leaf_weight = min_leaf_weight

    def _fit(self, x, y, w, seed):
        builder = _TreeBuilder(self.max_depth, self.min_leaf_weight)
        (self.feature_, self.threshold_, self.left_, self.right_, self.prob_) = builder.build(x, y, w)

    def _predict(self, x):
        return _tree_predict(x, self.feature_, self.threshold_, self.left_, self.right_, self.prob_)

    @property
    def root_split(self) -> tuple[int, float]:
        """(feature, threshold) at the root; (-1, 0.0) if the root is a leaf."""
        if self.left_[0] < 0:
            return (-1, 0.0)
        return int(self.feature_[0]), float(self.threshold_[0])

    def _params(self):
        return {"max_depth": self.max_depth, "min_leaf_weight": self.min_leaf_weight}

    def _arrays(self):
        return {
            "feature": self.feature_,
            "threshold": self.threshold_,
            "left": self.left_,
            "right": self.right_,
            "prob": self.prob_,
        }

    def _restore(self, arrays):
        self.feature_ = arrays["feature"]
        self.threshold_ = arrays["threshold"]
        self.left_ = arrays["left"]
        self.right_ = arrays["right"]
        self.prob_ = arrays["prob"]


class RandomForest(Classifier):
    """Bagged trees with per-split feature subsampling.

    Weights shape the ensemble through the bootstrap: each tree resamples
    rows with probability proportional to weight, then grows unweighted.
    Probabilities are the mean of the member trees' leaf fractions.
    """

    variant = "RF"

    def __init__(self, n_trees: int = 100, max_depth: int = 12, min_leaf_weight: float = 1.0):
        super().__init__()
        if n_trees < 1:
            raise TrainingError("n_trees must be at least 1")
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf_weight = min_leaf_weight

    def _fit(self, x, y, w, seed):
        n, d = x.shape
        m = max(1, int(math.sqrt(d)))
        probs = w / w.sum()
        self.trees_ = []
        for ss in np.random.SeedSequence(seed).spawn(self.n_trees):
            rng = np.random.default_rng(ss)
            idx = rng.choice(n, size=n, replace=True, p=probs)
            builder = _TreeBuilder(self.max_depth, self.min_leaf_weight, features_per_split=m, rng=rng)
            self.trees_.append(builder.build(x[idx], y[idx], np.ones(n)))

    def _predict(self, x):
        acc = np.zeros(len(x))
        for tree in self.trees_:
            acc += _tree_predict(x, *tree)
        return acc / len(self.trees_)

    def _params(self):
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_leaf_weight": self.min_leaf_weight,
        }

    def _arrays(self):
        out = {}
        for i, (f, t, l, r, p) in enumerate(self.trees_):
            out[f"t{i}_feature"] = f
            out[f"t{i}_threshold"] = t
            out[f"t{i}_left"] = l
            out[f"t{i}_right"] = r
            out[f"t{i}_prob"] = p
        return out

    def _restore(self, arrays):
        self.trees_ = []
        for i in range(self.n_trees):
            self.trees_.append(
                tuple(arrays[f"t{i}_{part}"] for part in ("feature", "threshold", "left", "right", "prob"))
            )


class GaussianNaiveBayes(Classifier):
    """Per-class diagonal Gaussians with weighted moments and priors."""

    variant = "GNB"

    def __init__(self, var_floor: float = 1e-9):
        super().__init__()
        self.var_floor = var_floor

    def _fit(self, x, y, w, seed):
        self.mean_ = np.zeros((2, x.shape[1]))
        self.var_ = np.zeros((2, x.shape[1]))
        self.log_prior_ = np.zeros(2)
        total = w.sum()
        for c in (0, 1):
            wc = w[y == c]
            if wc.sum() <= 0.0:
                raise TrainingError(f"class {c} has zero total weight")
            xc = x[y == c]
            mean = (wc[:, None] * xc).sum(axis=0) / wc.sum()
            var = (wc[:, None] * (xc - mean) ** 2).sum(axis=0) / wc.sum()
            self.mean_[c] = mean
            self.var_[c] = np.maximum(var, self.var_floor)
            self.log_prior_[c] = np.log(wc.sum() / total)

    def _predict(self, x):
        log_like = np.zeros((len(x), 2))
        for c in (0, 1):
            z = (x - self.mean_[c]) ** 2 / self.var_[c]
            log_like[:, c] = self.log_prior_[c] - 0.5 * (
                np.log(2.0 * np.pi * self.var_[c]).sum() + z.sum(axis=1)
            )
        shift = log_like.max(axis=1, keepdims=True)
        expd = np.exp(log_like - shift)
        return expd[:, 1] / expd.sum(axis=1)

    def _params(self):
        return {"var_floor": self.var_floor}

    def _arrays(self):
        return {"mean": self.mean_, "var": self.var_, "log_prior": self.log_prior_}

    def _restore(self, arrays):
        self.mean_ = arrays["mean"]
        self.var_ = arrays["var"]
        self.log_prior_ = arrays["log_prior"]


class KNearestNeighbors(Classifier):
    """Euclidean k-nearest-neighbors vote.

    Sample weights are ignored by design (there is no weighted estimator
    here); distance ties break toward the lower training-row index, so
    predictions are deterministic.
    """

    variant = "KNN"

    def __init__(self, n_neighbors: int = 5):
        super().__init__()
        if n_neighbors < 1:
            raise TrainingError("n_neighbors must be at least 1")
        self.n_neighbors = n_neighbors

    def _fit(self, x, y, w, seed):
        if len(x) < self.n_neighbors:
            raise TrainingError(
                f"need at least n_neighbors={self.n_neighbors} training rows, got {len(x)}"
            )
        self.x_ = x.copy()
        self.y_ = y.copy()

    def _predict(self, x):
        out = np.empty(len(x))
        train_sq = (self.x_**2).sum(axis=1)
        chunk = max(1, int(2**22 // max(1, len(self.x_))))
        for start in range(0, len(x), chunk):
            block = x[start : start + chunk]
            d2 = np.maximum(
                train_sq + (block**2).sum(axis=1)[:, None] - 2.0 * block @ self.x_.T, 0.0
            )
            # stable argsort keeps the lower index first among tied distances
            order = np.argsort(d2, axis=1, kind="stable")[:, : self.n_neighbors]
            out[start : start + len(block)] = self.y_[order].mean(axis=1)
        return out

    def _params(self):
        return {"n_neighbors": self.n_neighbors}

    def _arrays(self):
        return {"x": self.x_, "y": self.y_}

    def _restore(self, arrays):
        self.x_ = arrays["x"]
        self.y_ = arrays["y"]


class LogisticRegression(Classifier):
    """Plain gradient descent on the weight-normalized logistic loss.

    Zero initialization, fixed step size, no regularization; descent
    stops when the gradient norm drops below ``tolerance`` or after
    ``max_iterations`` steps.
    """

    variant = "LR"

    def __init__(self, learning_rate: float = 0.1, max_iterations: int = 5000, tolerance: float = 1e-6):
        super().__init__()
        self.learning_rate = learning_rate
        self.max_iterations = max_iterations
        self.tolerance = tolerance

    @staticmethod
    def _sigmoid(z):
        return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))

    def _fit(self, x, y, w, seed):
        n, d = x.shape
        coef = np.zeros(d)
        intercept = 0.0
        wn = w / w.sum()
        self.n_iterations_ = self.max_iterations
        for it in range(self.max_iterations):
            p = self._sigmoid(x @ coef + intercept)
            err = wn * (p - y)
            grad_coef = x.T @ err
            grad_int = err.sum()
            norm = math.sqrt(float(grad_coef @ grad_coef) + grad_int**2)
            if norm < self.tolerance:
                self.n_iterations_ = it
                break
            coef -= self.learning_rate * grad_coef
            intercept -= self.learning_rate * grad_int
        self.coef_ = coef
        self.intercept_ = float(intercept)

    def _predict(self, x):
        return self._sigmoid(x @ self.coef_ + self.intercept_)

    def _params(self):
        return {
            "learning_rate": self.learning_rate,
            "max_iterations": self.max_iterations,
            "tolerance": self.tolerance,
        }

    def _arrays(self):
        return {"coef": self.coef_, "intercept": np.asarray([self.intercept_])}

    def _restore(self, arrays):
        self.coef_ = arrays["coef"]
        self.intercept_ = float(arrays["intercept"][0])


VARIANTS: dict[str, type[Classifier]] = {
    "DT": DecisionTree,
    "GNB": GaussianNaiveBayes,
    "KNN": KNearestNeighbors,
    "LR": LogisticRegression,
    "RF": RandomForest,
}


def make_classifier(variant: str, params: dict | None = None) -> Classifier:
    if variant not in VARIANTS:
        raise TrainingError(f"unknown classifier variant {variant!r}; choose from {sorted(VARIANTS)}")
    return VARIANTS[variant](**(params or {}))


def fit_classifier(variant, features, labels, weights=None, params=None, seed: int = 0) -> Classifier:
    """Construct and fit one variant in a single call."""
    return make_classifier(variant, params).fit(features, labels, weights=weights, seed=seed)


def save_classifier(model: Classifier, path) -> None:
    if model.n_features is None:
        raise TrainingError("cannot save an unfitted model")
    meta = {
        "variant": model.variant,
        "params": model._params(),
        "n_features": model.n_features,
        "feature_names": list(model.feature_names) if model.feature_names else None,
    }
    save_bundle(path, CLASSIFIER_BUNDLE, meta, model._arrays())


def load_classifier(path) -> Classifier:
    meta, arrays = load_bundle(path, CLASSIFIER_BUNDLE)
    model = make_classifier(meta["variant"], meta.get("params"))
    model.n_features = int(meta["n_features"])
    names = meta.get("feature_names")
    model.feature_names = tuple(names) if names else None
    model._restore(arrays)
    return model
