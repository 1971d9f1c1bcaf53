"""Scenario files: flat ``key = value`` text, list-valued keys repeated.

Relative paths are resolved against the directory of the scenario file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .config_space import Configuration, ConfigurationSpace, load_space
from .instances import TRAIN, FeatureMap, InstanceSet, load_features, load_instance_split, load_instances
from .runhistory import DEFAULT_PAR_FACTOR
from .runhistory import load as load_history
from .smbo import Budget
from .synthetic import parse_synthetic_id, synthetic_space, target_from_id
from .target_runner import EXTERNAL, SYNTHETIC, TargetSpec
from .warmstart import MODES, WarmstartData

LIST_KEYS = ("prior_history", "prior_incumbents", "prior_instances", "prior_features")
SYNTHETIC_CUTOFF = 100.0


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    space_file: str = ""
    train_instances: str = ""
    test_instances: str = ""
    feature_file: str = ""
    target_cmd: str = ""
    synthetic: str = ""
    cutoff: float | None = None
    budget_seconds: float | None = None
    budget_runs: int | None = None
    par_factor: float = DEFAULT_PAR_FACTOR
    seed: int = 0
    warmstart_mode: str = "off"
    prior_history: list[str] = field(default_factory=list)
    prior_incumbents: list[str] = field(default_factory=list)
    prior_instances: list[str] = field(default_factory=list)
    prior_features: list[str] = field(default_factory=list)
    output_dir: str = "output"
    workers: int = 1
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def effective_cutoff(self) -> float:
        return self.cutoff if self.cutoff is not None else SYNTHETIC_CUTOFF

    @property
    def budget(self) -> Budget:
        return Budget(self.budget_seconds, self.budget_runs)


_CASTS = {"cutoff": float, "budget_seconds": float, "budget_runs": int, "par_factor": float, "seed": int,
          "workers": int}
KEYS = tuple(f.name for f in fields(Scenario) if f.name != "base_dir")


def parse_scenario(text: str, base_dir: Path | str = ".") -> Scenario:
    values: dict = {k: [] for k in LIST_KEYS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in KEYS:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
        if key in LIST_KEYS:
            values[key].append(value)
            continue
        if key in values:
            raise ScenarioError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _CASTS[key](value) if key in _CASTS else value
        except ValueError:
            raise ScenarioError(f"line {lineno}: bad value for {key}: {value!r}") from None
    return Scenario(**values, base_dir=Path(base_dir))


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    return parse_scenario(path.read_text(encoding="utf-8"), path.parent)


def serialize_scenario(sc: Scenario) -> str:
    lines = []
    for key in KEYS:
        value = getattr(sc, key)
        if key in LIST_KEYS:
            lines += [f"{key} = {v}" for v in value]
        elif value is not None and value != "":
            lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"


def check_scenario(sc: Scenario) -> None:
    """Raise ``ScenarioError`` on the first problem; touches files but runs nothing."""
    if bool(sc.target_cmd) == bool(sc.synthetic):
        raise ScenarioError("exactly one of target_cmd and synthetic is required")
    if sc.cutoff is not None and not sc.cutoff > 0:
        raise ScenarioError("cutoff must be positive")
    if sc.target_cmd and sc.cutoff is None:
        raise ScenarioError("cutoff is required for external targets")
    if sc.budget_seconds is None and sc.budget_runs is None:
        raise ScenarioError("budget_seconds and/or budget_runs is required")
    if (sc.budget_seconds is not None and not sc.budget_seconds > 0) or (sc.budget_runs is not None
                                                                        and sc.budget_runs < 1):
        raise ScenarioError("budget must be positive")
    if not sc.par_factor >= 1:
        raise ScenarioError("par_factor must be at least 1")
    if sc.workers < 1:
        raise ScenarioError("workers must be at least 1")
    if sc.warmstart_mode not in MODES:
        raise ScenarioError(f"warmstart_mode must be one of {', '.join(MODES)}")
    if sc.target_cmd:
        for key in ("space_file", "train_instances", "feature_file"):
            if not getattr(sc, key):
                raise ScenarioError(f"{key} is required for external targets")
    if sc.synthetic:
        try:
            parse_synthetic_id(sc.synthetic)
        except ValueError as exc:
            raise ScenarioError(f"synthetic: {exc}") from None
    for key in ("space_file", "train_instances", "test_instances", "feature_file"):
        value = getattr(sc, key)
        if value and not sc.path(value).is_file():
            raise ScenarioError(f"{key}: file not found: {value}")
    for key in LIST_KEYS:
        for value in getattr(sc, key):
            if not sc.path(value).is_file():
                raise ScenarioError(f"{key}: file not found: {value}")
    mode = sc.warmstart_mode
    if mode in ("init", "idmw") and not (sc.prior_history and sc.prior_incumbents):
        raise ScenarioError(f"warmstart_mode {mode} needs prior_history and prior_incumbents files")
    if mode in ("dmw", "aaf") and not sc.prior_history:
        raise ScenarioError(f"warmstart_mode {mode} needs prior_history files")
    for key in ("prior_instances", "prior_features"):
        given = getattr(sc, key)
        if given and len(given) != len(sc.prior_history):
            raise ScenarioError(f"{key} must be given once per prior_history file")
    if len(sc.prior_instances) != len(sc.prior_features):
        raise ScenarioError("prior_instances and prior_features must be given together")


@dataclass
class Problem:
    """A scenario with every referenced file loaded."""

    space: ConfigurationSpace
    instances: InstanceSet
    features: FeatureMap
    spec: TargetSpec
    origin: str
    warmstart: WarmstartData


def read_incumbents(path, space: ConfigurationSpace | None = None) -> tuple[str, list[Configuration]]:
    """``{"origin": ..., "configs": [{name: value, ...}, ...]}``; a bare mapping is one configuration."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from None
    if isinstance(data, dict) and "configs" in data:
        origin, raw = str(data.get("origin", "")), data["configs"]
    elif isinstance(data, dict):
        origin, raw = "", [data]
    else:
        raise ScenarioError(f"{path}: expected an object")
    if space is None:
        return origin, [Configuration(c) for c in raw]
    return origin, [space.make_configuration(c, strict=True) for c in raw]


def write_incumbents(path, origin: str, configs) -> None:
    payload = {"origin": origin, "configs": [c.as_dict() for c in configs]}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def load_problem(sc: Scenario) -> Problem:
    """Load and cross-check all inputs. Raises ``ScenarioError`` (or a loader error) on bad input."""
    check_scenario(sc)
    if sc.synthetic:
        _, gen_instances, gen_features = target_from_id(sc.synthetic)
        space = load_space(sc.path(sc.space_file)) if sc.space_file else synthetic_space()
        spec = TargetSpec(SYNTHETIC, sc.effective_cutoff, sc.par_factor, synthetic_id=sc.synthetic, space=space)
        origin = sc.synthetic
        if sc.train_instances:
            instances = load_instance_split(sc.path(sc.train_instances),
                                            sc.path(sc.test_instances) if sc.test_instances else None, origin)
        else:
            instances = InstanceSet(origin, gen_instances.instances, gen_instances.splits)
        features = load_features(sc.path(sc.feature_file), instances) if sc.feature_file else gen_features
    else:
        space = load_space(sc.path(sc.space_file))
        spec = TargetSpec(EXTERNAL, sc.effective_cutoff, sc.par_factor, command_template=sc.target_cmd, space=space)
        origin = Path(sc.train_instances).stem
        instances = load_instance_split(sc.path(sc.train_instances),
                                        sc.path(sc.test_instances) if sc.test_instances else None, origin)
        features = load_features(sc.path(sc.feature_file), instances)
    if not instances.train:
        raise ScenarioError("no training instances")
    missing = [i for i in instances.train if i not in features]
    if missing:
        raise ScenarioError(f"no features for instance {missing[0]!r}")
    return Problem(space, instances, features, spec, origin, load_warmstart(sc, space))


def load_warmstart(sc: Scenario, space: ConfigurationSpace) -> WarmstartData:
    histories, sets = [], []
    for k, path in enumerate(sc.prior_history):
        h = load_history(sc.path(path), space)
        if any(h.origin == s.id for s, _ in sets):
            raise ScenarioError(f"two prior histories share origin {h.origin!r}")
        if sc.prior_instances:
            inst = load_instances(sc.path(sc.prior_instances[k]), TRAIN, h.origin)
            fmap = load_features(sc.path(sc.prior_features[k]), inst)
        else:
            try:
                _, inst, fmap = target_from_id(h.origin)
            except ValueError:
                raise ScenarioError(f"{path}: origin {h.origin!r} is not a synthetic id; "
                                    "give prior_instances and prior_features") from None
            inst = InstanceSet(h.origin, inst.instances, inst.splits)
        histories.append(h)
        sets.append((inst, fmap))
    incumbents = []
    known = {s.id for s, _ in sets}
    for path in sc.prior_incumbents:
        origin, configs = read_incumbents(sc.path(path), space)
        if origin not in known:
            raise ScenarioError(f"{path}: origin {origin!r} matches no prior history")
        incumbents.append((origin, configs))
    return WarmstartData(incumbents, histories, sets)
