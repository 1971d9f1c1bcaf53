"""Warmstarting a configuration run from earlier runs on other instance sets.

* INIT: race a small complementary set of previous incumbents first. The set
  is chosen greedily to minimise the mincost (mean over all previous
  instances of the per-instance best predicted cost) starting from the
  default, with costs predicted by one forest pooled over all previous
  histories.
* DMW: keep one forest per previous history, fitted once, and predict with a
  linear stack ``w0 + w_cur * cur + sum_i w_i * prior_i`` whose weights are
  refitted every iteration on a held-out third of the current history.
* IDMW: both.
* AAF: a baseline that adds a decaying bonus for configurations the previous
  models consider good to the expected improvement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config_space import Configuration, ConfigurationSpace
from .epm import Epm, ForestSettings, design_matrix, encode_many, fit, fit_history, from_log
from .instances import FeatureMap, InstanceSet, check_schema_compat
from .runhistory import RunHistory
from .smbo import (WARMSTART_INIT, Acquisition, Challenger, LoopResult, PlainModel, SmboSettings, SmboState,
                   Surrogate, Task, _SingleSurrogate, expected_improvement, incumbent_log_cost, run_loop)

log = logging.getLogger(__name__)

MODES = ("off", "init", "dmw", "idmw", "aaf")

SGD_LEARNING_RATE = 0.01
SGD_EPOCHS = 500
SGD_BATCH = 32


class WarmstartError(ValueError):
    pass


@dataclass
class WarmstartData:
    incumbent_sets: list[tuple[str, list[Configuration]]] = field(default_factory=list)
    histories: list[RunHistory] = field(default_factory=list)
    instance_sets: list[tuple[InstanceSet, FeatureMap]] = field(default_factory=list)

    def __post_init__(self) -> None:
        ids = {s.id for s, _ in self.instance_sets}
        for h in self.histories:
            if h.origin not in ids:
                raise WarmstartError(f"history origin {h.origin!r} matches no previous instance set")

    def instance_set(self, set_id: str) -> tuple[InstanceSet, FeatureMap]:
        for inst, fmap in self.instance_sets:
            if inst.id == set_id:
                return inst, fmap
        raise WarmstartError(f"no instance set {set_id!r}")

    def validate(self, space: ConfigurationSpace) -> None:
        for _, configs in self.incumbent_sets:
            for c in configs:
                space.validate(c)

    def is_empty(self) -> bool:
        return not self.histories and not any(c for _, c in self.incumbent_sets)


def _configured_instances(inst: InstanceSet) -> list[str]:
    return inst.train or list(inst.instances)


# ---------------------------------------------------------------- INIT


@dataclass(frozen=True)
class MincostMatrix:
    configs: tuple[Configuration, ...]
    instances: tuple[str, ...]
    costs: np.ndarray

    def __post_init__(self) -> None:
        if self.costs.shape != (len(self.configs), len(self.instances)):
            raise WarmstartError(f"cost matrix shape {self.costs.shape} does not match "
                                 f"{len(self.configs)} configs x {len(self.instances)} instances")
        if not np.all(np.isfinite(self.costs)):
            raise WarmstartError("non-finite predicted cost")

    def row(self, config: Configuration) -> np.ndarray:
        return self.costs[self.configs.index(config)]


def mincost(configs: Sequence[Configuration], matrix: MincostMatrix) -> float:
    """Mean over instances of the cheapest cost among ``configs``."""
    if not configs:
        raise WarmstartError("mincost of an empty configuration set")
    return float(np.min(np.vstack([matrix.row(c) for c in configs]), axis=0).mean())


def pooled_epm(data: WarmstartData, space: ConfigurationSpace, settings: ForestSettings | None = None,
               seed: int = 0) -> Epm:
    """One forest over the union of all previous histories (needs one feature schema)."""
    if not data.histories:
        raise WarmstartError("no previous run histories")
    maps = [fm for _, fm in data.instance_sets]
    check_schema_compat(maps)
    Xs, ys = [], []
    for h in data.histories:
        X, y = design_matrix(h, space, data.instance_set(h.origin)[1])
        Xs.append(X)
        ys.append(y)
    return fit(np.vstack(Xs), np.concatenate(ys), space, maps[0].schema, settings or ForestSettings(), seed)


def predicted_costs(epm: Epm, configs: Sequence[Configuration], instances: Sequence[str],
                    features: FeatureMap) -> np.ndarray:
    """(configs x instances) predicted costs in seconds."""
    fm = features.project(epm.schema).matrix(list(instances))
    return from_log(epm.per_instance(list(configs), fm))


def per_set_best(data: WarmstartData, epm: Epm) -> list[Configuration]:
    """For every previous set, its incumbent with the lowest predicted total cost on that set."""
    chosen: list[Configuration] = []
    for set_id, configs in data.incumbent_sets:
        if not configs:
            log.warning("previous set %s has no incumbents; skipped", set_id)
            continue
        inst, fmap = data.instance_set(set_id)
        totals = predicted_costs(epm, configs, _configured_instances(inst), fmap).sum(axis=1)
        best = configs[int(np.argmin(totals))]
        if best not in chosen:
            chosen.append(best)
    return chosen


def build_mincost_matrix(data: WarmstartData, epm: Epm, configs: Sequence[Configuration]) -> MincostMatrix:
    instances: list[str] = []
    blocks = []
    for inst, fmap in data.instance_sets:
        names = _configured_instances(inst)
        instances += names
        blocks.append(predicted_costs(epm, configs, names, fmap))
    return MincostMatrix(tuple(configs), tuple(instances), np.hstack(blocks))


def greedy_init_select(candidates: Sequence[Configuration], matrix: MincostMatrix, default: Configuration,
                       max_k: int = 10) -> list[Configuration]:
    """Greedy forward selection from ``{default}``; returns the additions in order."""
    current = matrix.row(default).copy()
    remaining = [c for c in dict.fromkeys(candidates) if c != default]
    chosen: list[Configuration] = []
    while remaining and len(chosen) < max_k:
        best, best_value = None, current.mean()
        for c in remaining:
            value = np.minimum(current, matrix.row(c)).mean()
            if value < best_value:
                best, best_value = c, value
        if best is None:
            break
        chosen.append(best)
        remaining.remove(best)
        current = np.minimum(current, matrix.row(best))
    return chosen


def build_init_design(data: WarmstartData, space: ConfigurationSpace, default: Configuration | None = None,
                      max_k: int = 10, settings: ForestSettings | None = None, seed: int = 0) -> list[Challenger]:
    if not data.histories or not any(configs for _, configs in data.incumbent_sets):
        raise WarmstartError("INIT needs previous run histories and incumbents")
    data.validate(space)
    default = default or space.default_configuration()
    epm = pooled_epm(data, space, settings, seed)
    candidates = per_set_best(data, epm)
    matrix = build_mincost_matrix(data, epm, [default] + [c for c in candidates if c != default])
    selected = greedy_init_select(candidates, matrix, default, max_k)
    out, current = [], [default]
    for c in selected:
        before = mincost(current, matrix)
        current.append(c)
        out.append(Challenger(c, before - mincost(current, matrix), WARMSTART_INIT))
    return out


# ---------------------------------------------------------------- DMW


def sgd_stack_weights(P: np.ndarray, y: np.ndarray, rng: np.random.Generator, lr: float = SGD_LEARNING_RATE,
                      epochs: int = SGD_EPOCHS, batch: int = SGD_BATCH) -> np.ndarray:
    """Fit ``y ~ w0 + P @ w`` by minibatch SGD on the squared error.

    Columns of ``P`` are model predictions. SGD runs in whitened predictor
    coordinates (so every direction converges at the same rate) with the
    summed squared error of a minibatch as loss, starting from ``w0 = 0`` and
    equal weights ``1/k``. Iterates of the second half of training are
    averaged. Directions without variance in ``P`` are not identifiable; they
    keep their initial weight and the intercept absorbs them.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    y = np.asarray(y, dtype=float)
    n, k = P.shape
    w_init = np.r_[0.0, np.full(k, 1.0 / k)]
    mean = P.mean(axis=0)
    cov = np.atleast_2d(np.cov(P, rowvar=False, bias=True)) if n > 1 else np.zeros((k, k))
    evals, evecs = np.linalg.eigh(cov)
    keep = evals > 1e-10 * max(1.0, float(evals.max(initial=0.0)))
    whiten = evecs[:, keep] / np.sqrt(evals[keep])
    unwhiten = evecs[:, keep] * np.sqrt(evals[keep])
    null_part = w_init[1:] - whiten @ (unwhiten.T @ w_init[1:])

    X = np.hstack([np.ones((n, 1)), (P - mean) @ whiten])
    b = np.r_[w_init[1:] @ mean, unwhiten.T @ w_init[1:]]
    size = min(batch, n)
    total, count = np.zeros_like(b), 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, size):
            idx = order[start:start + size]
            resid = X[idx] @ b - y[idx]
            b -= lr * (X[idx].T @ resid)
            if 2 * epoch >= epochs:
                total += b
                count += 1
    b = total / count
    w = np.empty(k + 1)
    w[1:] = whiten @ b[1:] + null_part
    w[0] = b[0] - w[1:] @ mean
    return w


@dataclass
class PriorModel:
    origin: str
    epm: Epm


def fallback_weights(n_priors: int) -> np.ndarray:
    w = np.zeros(n_priors + 2)
    w[1] = 1.0
    return w


class StackedEpm:
    """``w0 + w_cur * current + sum_i w_i * prior_i``; priors are fixed after construction."""

    def __init__(self, priors: Sequence[PriorModel], current: Epm | None = None, weights: np.ndarray | None = None):
        self.priors = tuple(priors)
        self.current = current
        self.weights = fallback_weights(len(self.priors)) if weights is None else np.asarray(weights, dtype=float)
        if self.weights.shape != (len(self.priors) + 2,):
            raise WarmstartError(f"need {len(self.priors) + 2} weights, got {self.weights.shape}")

    @property
    def models(self) -> list[Epm]:
        return [self.current] + [p.epm for p in self.priors]

    def combine(self, means: Sequence[np.ndarray], variances: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        w = self.weights
        mean = w[0] + sum(wi * m for wi, m in zip(w[1:], means))
        var = sum(wi ** 2 * v for wi, v in zip(w[1:], variances))
        return mean, var

    def predict(self, config: Configuration, features: Sequence[np.ndarray]) -> tuple[float, float]:
        """``features[j]`` is the instance's vector in model ``j``'s schema (current model first)."""
        preds = [m.predict(config, f) for m, f in zip(self.models, features)]
        mean, var = self.combine([np.array(p[0]) for p in preds], [np.array(p[1]) for p in preds])
        return float(mean), float(var)

    def marginal(self, encoded: np.ndarray, feature_matrices: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        parts = [m.predict_marginal_encoded(encoded, fm) for m, fm in zip(self.models, feature_matrices)]
        return self.combine([p[0] for p in parts], [p[1] for p in parts])


def stacked_predict(stack: StackedEpm, config: Configuration, features: Sequence[np.ndarray]) -> tuple[float, float]:
    return stack.predict(config, features)


def _predict_records(epm: Epm, records, space: ConfigurationSpace, features: FeatureMap) -> np.ndarray:
    fm = features.project(epm.schema)
    X = np.hstack([encode_many(space, [r.config for r in records]), fm.matrix([r.instance for r in records])])
    return epm.predict_rows(X)[0]


def fit_stacked_weights(stack: StackedEpm, history: RunHistory, space: ConfigurationSpace, features: FeatureMap,
                        rng: np.random.Generator, settings: ForestSettings | None = None) -> np.ndarray:
    """Refit the stack weights on a 2:1 split of ``history``, then refit the current model on all of it."""
    settings = settings or ForestSettings()
    records = history.records
    n = len(records)
    if n < 3:
        stack.weights = fallback_weights(len(stack.priors))
    else:
        order = rng.permutation(n)
        n_val = n // 3
        train = [records[i] for i in order[n_val:]]
        val = [records[i] for i in order[:n_val]]
        X, y = design_matrix(RunHistory(history.origin, history.par_factor, train), space, features)
        partial = fit(X, y, space, features.schema, settings, int(rng.integers(2**31)))
        _, y_val = design_matrix(RunHistory(history.origin, history.par_factor, val), space, features)
        P = np.column_stack([_predict_records(m, val, space, features)
                             for m in [partial] + [p.epm for p in stack.priors]])
        stack.weights = sgd_stack_weights(P, y_val, rng)
    stack.current = fit_history(history, space, features, settings, int(rng.integers(2**31)))
    return stack.weights


def fit_priors(data: WarmstartData, space: ConfigurationSpace, settings: ForestSettings | None = None,
               seed: int = 0) -> list[PriorModel]:
    seeds = np.random.SeedSequence(seed).generate_state(max(1, len(data.histories)))
    return [PriorModel(h.origin, fit_history(h, space, data.instance_set(h.origin)[1], settings or ForestSettings(),
                                             int(s) & 0x7FFFFFFF))
            for h, s in zip(data.histories, seeds)]


class _StackSurrogate:
    def __init__(self, stack: StackedEpm, feature_matrices: list[np.ndarray]):
        self.stack = stack
        self.feature_matrices = feature_matrices

    def marginal(self, encoded):
        return self.stack.marginal(encoded, self.feature_matrices)


class DmwModel:
    """Model provider for the loop: stacked current + previous forests.

    Without previous models it behaves exactly like ``PlainModel``.
    """

    def __init__(self, priors: Sequence[PriorModel], settings: ForestSettings | None = None):
        self.settings = settings or ForestSettings()
        self.stack = StackedEpm(priors)
        self.weight_log: list[tuple[int, int, tuple[float, ...]]] = []

    def fit(self, state: SmboState) -> Surrogate:
        instances = list(state.task.instances)
        if not self.stack.priors:
            seed = int(state.rng_model.integers(2**31))
            self.stack.current = fit_history(state.history, state.space, state.task.features, self.settings, seed)
            return _SingleSurrogate(self.stack.current, state.task.features.matrix(instances))
        fit_stacked_weights(self.stack, state.history, state.space, state.task.features, state.rng_model,
                            self.settings)
        self.weight_log.append((state.iteration, len(state.history), tuple(float(w) for w in self.stack.weights)))
        matrices = [state.task.features.project(m.schema).matrix(instances) for m in self.stack.models]
        return _StackSurrogate(self.stack, matrices)


# ---------------------------------------------------------------- AAF


def aaf_acquisition(ei_current, prior_costs, iteration: int):
    """EI plus a decaying bonus ``1/(t+1) * mean_i minmax(-cost_i)`` over the candidate batch.

    ``prior_costs`` has one row per previous model with its marginal
    predicted cost of every candidate.
    """
    ei = np.asarray(ei_current, dtype=float)
    prior_costs = np.atleast_2d(np.asarray(prior_costs, dtype=float))
    if prior_costs.size == 0:
        return ei
    score = -prior_costs
    lo, hi = score.min(axis=1, keepdims=True), score.max(axis=1, keepdims=True)
    span = np.where(hi > lo, hi - lo, 1.0)
    normed = np.where(hi > lo, (score - lo) / span, 0.0)
    return ei + normed.mean(axis=0) / (iteration + 1)


def aaf_factory(priors: Sequence[PriorModel], features: FeatureMap, instances: Sequence[str]):
    """Acquisition factory for ``run_loop`` that biases EI towards regions the priors like."""
    matrices = [features.project(p.epm.schema).matrix(list(instances)) for p in priors]

    def factory(surrogate: Surrogate, state: SmboState) -> Acquisition:
        best = incumbent_log_cost(state)
        t = state.iteration - 1

        def acq(configs, encoded):
            mean, var = surrogate.marginal(encoded)
            ei = expected_improvement(mean, var, best)
            if not priors:
                return ei
            costs = [p.epm.predict_marginal_encoded(encoded, fm)[0] for p, fm in zip(priors, matrices)]
            return aaf_acquisition(ei, costs, t)
        return acq
    return factory


# ---------------------------------------------------------------- variants


def run_variant(task: Task, mode: str = "off", data: WarmstartData | None = None,
                settings: SmboSettings | None = None, max_k: int = 10, on_iteration=None
                ) -> tuple[LoopResult, DmwModel | PlainModel]:
    """Run one configuration loop in the given warmstart mode.

    Previous-run models use seeds derived from ``task.seed`` but separate
    from the loop's own random streams, so an empty ``data`` leaves every
    mode identical to the plain loop.
    """
    if mode not in MODES:
        raise WarmstartError(f"unknown warmstart mode {mode!r}")
    settings = settings or SmboSettings()
    data = data or WarmstartData()
    init_seed, prior_seed = (int(s) & 0x7FFFFFFF for s in
                             np.random.SeedSequence([task.seed, 7]).generate_state(2))
    init: list[Challenger] = []
    if mode in ("init", "idmw") and not data.is_empty():
        init = build_init_design(data, task.space, max_k=max_k, settings=settings.forest, seed=init_seed)
    priors = fit_priors(data, task.space, settings.forest, prior_seed) if mode in ("dmw", "idmw", "aaf") else []
    model = DmwModel(priors, settings.forest) if mode in ("dmw", "idmw") else PlainModel(settings.forest)
    factory = aaf_factory(priors, task.features, task.instances) if mode == "aaf" else None
    result = run_loop(task, model, init_challengers=init, acquisition_factory=factory, settings=settings,
                      on_iteration=on_iteration)
    return result, model
