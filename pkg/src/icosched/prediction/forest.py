"""Bagged regression trees predicting a pod's average scheduling latency."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import InsufficientData, ShapeError
from . import _cart
from .features import FEATURE_NAMES, N_FEATURES

MODEL_FORMAT = "icosched-forest"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 12
    min_samples_leaf: int = 5
    features_per_split: int = math.ceil(N_FEATURES / 3)
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 1 <= self.features_per_split <= N_FEATURES:
            raise ValueError(f"features_per_split must be in [1, {N_FEATURES}]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_values(self) -> np.ndarray:
        return self.value[self.feature == _cart.LEAF]

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0])
        _cart.predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value, out)
        return out

    def same_structure(self, other: Tree) -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("feature", "threshold", "left", "right", "value")
        )

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Tree:
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


@dataclass(eq=False)
class ForestModel:
    trees: list[Tree]
    params: ForestParams
    target_range: tuple[float, float] = (0.0, 0.0)
    n_features: int = N_FEATURES
    feature_names: tuple[str, ...] = field(default=FEATURE_NAMES)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got shape {X.shape}")
        X = np.ascontiguousarray(X)
        out = np.zeros(X.shape[0])
        for t in self.trees:
            _cart.predict_tree(X, t.feature, t.threshold, t.left, t.right, t.value, out)
        return out / len(self.trees)

    def same_structure(self, other: ForestModel) -> bool:
        return len(self.trees) == len(other.trees) and all(
            a.same_structure(b) for a, b in zip(self.trees, other.trees)
        )

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "feature_order": list(self.feature_names),
            "params": asdict(self.params),
            "target_range": list(self.target_range),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict, expected_features: Sequence[str] = FEATURE_NAMES) -> ForestModel:
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a forest model file (format={d.get('format')!r})")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        names = tuple(d["feature_order"])
        if names != tuple(expected_features):
            raise ShapeError("model feature order does not match this build")
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            params=ForestParams(**d["params"]),
            target_range=tuple(d["target_range"]),
            n_features=len(names),
            feature_names=names,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> ForestModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _tree_seed(seed: int, i: int) -> int:
    return (seed ^ i) & 0xFFFFFFFFFFFFFFFF


def _fit_one(XT, y, presorted, params: ForestParams, i: int) -> Tree:
    n = y.shape[0]
    rng = np.random.default_rng(_tree_seed(params.seed, i))
    if params.bootstrap:
        w = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.float64)
        in_bag = w[presorted] > 0
        order = presorted[in_bag].reshape(presorted.shape[0], -1)
    else:
        w = np.ones(n)
        order = presorted.copy()
    split_seed = int(rng.integers(0, 2**63))
    arrays = _cart.grow_tree(
        XT, y, w, order, params.max_depth, params.min_samples_leaf, params.features_per_split, split_seed
    )
    return Tree(*arrays)


def train_forest(X, y, params: ForestParams = ForestParams(), n_jobs: int = 1) -> ForestModel:
    """Fit ``params.n_trees`` trees on ``X`` (rows = feature vectors).

    Tree ``i`` draws its bootstrap and feature subsets from its own stream
    seeded with ``seed ^ i``, so the result does not depend on ``n_jobs``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ShapeError(f"X {X.shape} and y {y.shape} do not line up")
    if X.shape[1] > 0 and params.features_per_split > X.shape[1]:
        raise ShapeError(f"features_per_split {params.features_per_split} exceeds {X.shape[1]} features")
    if X.shape[0] < 2 * params.min_samples_leaf or X.shape[0] == 0:
        raise InsufficientData(
            f"need at least {2 * params.min_samples_leaf} samples, got {X.shape[0]}"
        )
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    XT = np.ascontiguousarray(X.T)
    presorted = np.argsort(XT, axis=1, kind="stable").astype(np.int64)

    def fit(i):
        return _fit_one(XT, y, presorted, params, i)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(fit, range(params.n_trees)))
    else:
        trees = [fit(i) for i in range(params.n_trees)]
    return ForestModel(
        trees=trees,
        params=params,
        target_range=(float(y.min()), float(y.max())),
        n_features=X.shape[1],
        feature_names=FEATURE_NAMES if X.shape[1] == N_FEATURES else tuple(f"f{i}" for i in range(X.shape[1])),
    )


def predict_latency(model: ForestModel, features) -> float:
    """Mean leaf prediction for one feature vector, in ns."""
    return float(model.predict(features)[0])
