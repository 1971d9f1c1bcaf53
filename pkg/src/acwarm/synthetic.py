"""Synthetic target algorithms with a tunable cross-set relatedness.

Every generated set shares one configuration space. The log10 runtime of
configuration ``theta`` on instance ``pi`` is

    shift(pi) + scale(pi) * g_s(theta) + noise

where ``g_s`` is a quadratic bowl over the normalised numeric parameters
plus categorical offsets. ``rho`` mixes a shared optimum/offset draw with a
per-set independent draw, so ``rho=1`` gives one cost landscape (up to
instance shift and scale) and ``rho=0`` gives unrelated landscapes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .config_space import Configuration, ConfigurationSpace, parse_space
from .instances import TEST, TRAIN, FeatureMap, InstanceSet

SPACE_TEXT = """\
x0 real [0.0, 1.0] default 0.5
x1 real [0.0, 1.0] default 0.5
x2 real [0.01, 100.0] default 1.0 log
x3 int [0, 20] default 10
mode cat {a,b,c} default a
boost real [0.0, 1.0] default 0.5
boost | mode in {b}
"""

NUMERIC = ("x0", "x1", "x2", "x3")
WEIGHTS = np.array([2.0, 2.0, 1.5, 1.0])
MODES = ("a", "b", "c")
MODE_OFFSETS = np.array([0.0, 0.3, 0.6])
BOOST_GAIN = 0.35
FEATURES = ("f_shift", "f_scale", "f_size")
SCALE_RANGE = (1.5, 2.5)


def synthetic_space() -> ConfigurationSpace:
    return parse_space(SPACE_TEXT)


@dataclass(frozen=True)
class SyntheticTarget:
    """Cost generator for one instance set; deterministic in (theta, pi, seed)."""

    set_index: int
    optimum: tuple[float, ...]
    boost_optimum: float
    mode_offsets: tuple[float, ...]
    shifts: Mapping[str, float]
    scales: Mapping[str, float]
    noise: float = 0.1

    def badness(self, config: Configuration, space: ConfigurationSpace) -> float:
        """``g_s(theta)``: zero-or-less at the optimum, larger is slower."""
        u = np.array([space[n].to_unit(config[n]) for n in NUMERIC])
        g = float(np.sum(WEIGHTS * (u - np.asarray(self.optimum)) ** 2))
        mode = config["mode"]
        g += self.mode_offsets[MODES.index(mode)]
        if mode == "b":
            g += (config["boost"] - self.boost_optimum) ** 2 - BOOST_GAIN
        return g

    def log_runtime(self, config: Configuration, instance: str, space: ConfigurationSpace) -> float:
        return self.shifts[instance] + self.scales[instance] * self.badness(config, space)

    def true_runtime(self, config: Configuration, instance: str, space: ConfigurationSpace) -> float:
        return 10.0 ** self.log_runtime(config, instance, space)

    def runtime(self, config: Configuration, instance: str, seed: int, space: ConfigurationSpace) -> float:
        eps = _hashed_normal(config.config_id, instance, seed) if self.noise > 0 else 0.0
        return 10.0 ** (self.log_runtime(config, instance, space) + self.noise * eps)


def _hashed_normal(*parts) -> float:
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return float(np.random.default_rng(int.from_bytes(digest[:8], "little")).standard_normal())


@dataclass(frozen=True)
class SuiteParams:
    rho: float
    n_sets: int
    n_instances: int
    seed: int
    noise: float = 0.1
    test_fraction: float = 0.5
    feature_noise: float = 0.3

    def ident(self, set_index: int) -> str:
        return (f"rho={self.rho!r},n_sets={self.n_sets},n_instances={self.n_instances},"
                f"seed={self.seed},noise={self.noise!r},test_fraction={self.test_fraction!r},"
                f"feature_noise={self.feature_noise!r},set={set_index}")


def parse_synthetic_id(text: str) -> tuple[SuiteParams, int]:
    """Inverse of ``SuiteParams.ident``: ``"rho=1.0,n_sets=3,...,set=2"``."""
    fields = {}
    for item in text.split(","):
        if "=" not in item:
            raise ValueError(f"malformed synthetic id component {item!r}")
        k, v = item.split("=", 1)
        fields[k.strip()] = v.strip()
    try:
        params = SuiteParams(
            rho=float(fields.pop("rho")), n_sets=int(fields.pop("n_sets")),
            n_instances=int(fields.pop("n_instances")), seed=int(fields.pop("seed")),
            noise=float(fields.pop("noise", 0.1)), test_fraction=float(fields.pop("test_fraction", 0.5)),
            feature_noise=float(fields.pop("feature_noise", 0.3)))
        set_index = int(fields.pop("set", 0))
    except KeyError as exc:
        raise ValueError(f"synthetic id lacks {exc.args[0]!r}") from None
    if fields:
        raise ValueError(f"unknown synthetic id keys {sorted(fields)}")
    if not 0 <= set_index < params.n_sets:
        raise ValueError(f"set index {set_index} out of range")
    return params, set_index


def generate(params: SuiteParams) -> list[tuple[InstanceSet, FeatureMap, SyntheticTarget]]:
    if params.n_sets < 1 or params.n_instances < 1:
        raise ValueError("need at least one set and one instance")
    if not 0.0 <= params.rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {params.rho}")
    rho = params.rho
    rng = np.random.default_rng(params.seed)
    shared_opt = rng.uniform(0.15, 0.85, size=len(NUMERIC))
    shared_boost = rng.uniform(0.1, 0.9)
    shared_modes = rng.permutation(MODE_OFFSETS)

    n_test = int(round(params.n_instances * params.test_fraction))
    suite = []
    for s in range(params.n_sets):
        own_opt = rng.uniform(0.15, 0.85, size=len(NUMERIC))
        own_boost = rng.uniform(0.1, 0.9)
        own_modes = rng.permutation(MODE_OFFSETS)
        set_offset = rng.uniform(-0.6, 0.6)
        optimum = rho * shared_opt + (1 - rho) * own_opt
        modes = rho * shared_modes + (1 - rho) * own_modes
        boost = rho * shared_boost + (1 - rho) * own_boost

        names = tuple(f"s{s}_i{k:03d}" for k in range(params.n_instances))
        # interleave test instances so both splits cover the hardness range
        test_idx = set(np.linspace(1, params.n_instances - 1, n_test).round().astype(int).tolist()) if n_test else set()
        splits = tuple(TEST if k in test_idx else TRAIN for k in range(params.n_instances))
        hardness = rng.uniform(-1.0, 0.0, size=params.n_instances)
        scale = rng.uniform(*SCALE_RANGE, size=params.n_instances)
        size = rng.uniform(0.0, 1.0, size=params.n_instances)
        shifts = {n: float(set_offset + h) for n, h in zip(names, hardness)}
        scales = {n: float(c) for n, c in zip(names, scale)}
        # features are noisy proxies of hardness, as real instance features are
        blur = rng.normal(0.0, params.feature_noise, size=(params.n_instances, 2))
        vectors = {n: np.array([shifts[n] + b[0], scales[n] + b[1], float(z)]) for n, z, b in zip(names, size, blur)}

        target = SyntheticTarget(s, tuple(float(v) for v in optimum), float(boost),
                                 tuple(float(v) for v in modes), shifts, scales, params.noise)
        suite.append((InstanceSet(f"set{s}", names, splits), FeatureMap(FEATURES, vectors), target))
    return suite


def target_from_id(text: str) -> tuple[SyntheticTarget, InstanceSet, FeatureMap]:
    params, set_index = parse_synthetic_id(text)
    instances, features, target = generate(params)[set_index]
    return target, instances, features
