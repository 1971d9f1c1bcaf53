"""Random-forest empirical performance model over (configuration, instance) pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .config_space import Configuration, ConfigurationSpace
from .instances import FeatureMap
from .runhistory import RunHistory, par10_cost

LOG_FLOOR = 0.001


class EpmError(ValueError):
    pass


@dataclass(frozen=True)
class ForestSettings:
    n_trees: int = 10
    min_samples_leaf: int = 3
    bootstrap: bool = True
    split_fraction: float = 5 / 6
    max_depth: int | None = None

    def n_split_candidates(self, dim: int) -> int:
        return max(1, math.ceil(self.split_fraction * dim))


def to_log(cost):
    return np.log10(np.maximum(cost, LOG_FLOOR))


def from_log(value):
    return np.power(10.0, value)


def encode(space: ConfigurationSpace, config: Configuration) -> np.ndarray:
    """Fixed-length numeric vector; inactive parameters take their encoded default."""
    return np.array([p.to_unit(config[p.name] if p.name in config else p.default)
                     for p in space.parameters], dtype=float)


def encode_many(space: ConfigurationSpace, configs: Sequence[Configuration]) -> np.ndarray:
    if not configs:
        return np.zeros((0, len(space)))
    return np.vstack([encode(space, c) for c in configs])


def design_matrix(history: RunHistory | Sequence, space: ConfigurationSpace, features: FeatureMap
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``encode(config) ++ features(instance)`` rows with log10 PAR targets."""
    records = list(history)
    par_factor = getattr(history, "par_factor", 10.0)
    if not records:
        return np.zeros((0, len(space) + len(features.schema))), np.zeros(0)
    cache: dict[Configuration, np.ndarray] = {}
    rows = []
    for r in records:
        if r.config not in cache:
            cache[r.config] = encode(space, r.config)
        rows.append(np.concatenate([cache[r.config], features[r.instance]]))
    y = to_log(np.array([par10_cost(r, par_factor) for r in records]))
    return np.vstack(rows), y


class Epm:
    """A fitted forest. Predictions are in log10-cost space."""

    def __init__(self, space: ConfigurationSpace, schema: Sequence[str], forest: RandomForestRegressor,
                 dim: int, y_range: tuple[float, float]):
        self.space = space
        self.schema = tuple(schema)
        self.dim = dim
        self.y_range = y_range
        self._trees = [est.tree_ for est in forest.estimators_]

    @property
    def n_trees(self) -> int:
        return len(self._trees)

    def tree_predictions(self, X: np.ndarray) -> np.ndarray:
        """(n_trees, n_rows) matrix of per-tree leaf means."""
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float32)
        if X.shape[1] != self.dim:
            raise EpmError(f"query has {X.shape[1]} columns, model was trained on {self.dim}")
        return np.vstack([t.predict(X)[:, 0] for t in self._trees])

    def predict_rows(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        per_tree = self.tree_predictions(X)
        return per_tree.mean(axis=0), per_tree.var(axis=0)

    def predict(self, config: Configuration, features: np.ndarray) -> tuple[float, float]:
        x = np.concatenate([encode(self.space, config), np.asarray(features, dtype=float)])
        mean, var = self.predict_rows(x[None, :])
        return float(mean[0]), float(var[0])

    def predict_marginal_encoded(self, encoded: np.ndarray, feature_matrix: np.ndarray
                                 ) -> tuple[np.ndarray, np.ndarray]:
        """Mean over instances for each encoded configuration.

        Each tree's prediction is averaged over the instances first, so the
        returned variance is the across-tree variance of the marginal.
        """
        n_cfg, n_inst = encoded.shape[0], feature_matrix.shape[0]
        if n_inst == 0:
            raise EpmError("marginal prediction over an empty instance set")
        X = np.hstack([np.repeat(encoded, n_inst, axis=0), np.tile(feature_matrix, (n_cfg, 1))])
        per_tree = self.tree_predictions(X).reshape(self.n_trees, n_cfg, n_inst).mean(axis=2)
        return per_tree.mean(axis=0), per_tree.var(axis=0)

    def per_instance(self, configs: Sequence[Configuration], feature_matrix: np.ndarray) -> np.ndarray:
        """(n_configs, n_instances) matrix of predicted log costs."""
        encoded = encode_many(self.space, configs)
        n_cfg, n_inst = encoded.shape[0], feature_matrix.shape[0]
        X = np.hstack([np.repeat(encoded, n_inst, axis=0), np.tile(feature_matrix, (n_cfg, 1))])
        return self.predict_rows(X)[0].reshape(n_cfg, n_inst)


def fit(X: np.ndarray, y: np.ndarray, space: ConfigurationSpace, schema: Sequence[str],
        settings: ForestSettings = ForestSettings(), seed: int = 0) -> Epm:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise EpmError("cannot fit an EPM on an empty training set")
    if X.shape[0] != y.size:
        raise EpmError(f"{X.shape[0]} rows but {y.size} targets")
    if not np.all(np.isfinite(y)):
        raise EpmError("non-finite training target")
    forest = RandomForestRegressor(
        n_estimators=settings.n_trees,
        max_features=settings.n_split_candidates(X.shape[1]),
        min_samples_leaf=settings.min_samples_leaf,
        max_depth=settings.max_depth,
        bootstrap=settings.bootstrap,
        random_state=seed,
    )
    forest.fit(X, y)
    return Epm(space, schema, forest, X.shape[1], (float(y.min()), float(y.max())))


def fit_history(history: RunHistory, space: ConfigurationSpace, features: FeatureMap,
                settings: ForestSettings = ForestSettings(), seed: int = 0) -> Epm:
    X, y = design_matrix(history, space, features)
    return fit(X, y, space, features.schema, settings, seed)


def marginal_predict(epm: Epm, config: Configuration, instances: Sequence[str], features: FeatureMap) -> float:
    """Mean predicted log cost of ``config`` over ``instances``."""
    instances = list(instances)
    if not instances:
        raise EpmError("marginal prediction over an empty instance set")
    fm = features.project(epm.schema).matrix(instances)
    mean, _ = epm.predict_marginal_encoded(encode(epm.space, config)[None, :], fm)
    return float(mean[0])
