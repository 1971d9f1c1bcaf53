"""Typed parameter spaces with conditional activity.

A space is parsed from a small line-based format::

    # comment
    alpha real [0.01, 10.0] default 1.0 log
    depth int [1, 64] default 8
    mode cat {fast,safe} default safe
    depth | mode in {safe}

The last line makes ``depth`` active only while ``mode == safe``.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

REAL = "real"
INTEGER = "int"
CATEGORICAL = "cat"

_NEIGHBOR_SCALE = 0.2


class SpaceError(ValueError):
    """Base class for configuration space errors."""


class SpaceSyntaxError(SpaceError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class CyclicConditionError(SpaceError):
    pass


class DomainError(SpaceError):
    pass


@dataclass(frozen=True)
class Parameter:
    name: str
    kind: str
    default: Any
    lower: float | None = None
    upper: float | None = None
    choices: tuple[Any, ...] = ()
    log: bool = False

    def __post_init__(self) -> None:
        if self.kind in (REAL, INTEGER):
            if self.lower is None or self.upper is None or not self.lower < self.upper:
                raise DomainError(f"{self.name}: need lo < hi, got [{self.lower}, {self.upper}]")
            if self.log and self.lower <= 0:
                raise DomainError(f"{self.name}: log scale requires lo > 0")
            if self.kind == INTEGER:
                object.__setattr__(self, "lower", int(self.lower))
                object.__setattr__(self, "upper", int(self.upper))
        elif self.kind == CATEGORICAL:
            if not self.choices:
                raise DomainError(f"{self.name}: empty category list")
            if len(set(self.choices)) != len(self.choices):
                raise DomainError(f"{self.name}: duplicate categories")
        else:
            raise DomainError(f"{self.name}: unknown kind {self.kind!r}")
        if not self.contains(self.default):
            raise DomainError(f"{self.name}: default {self.default!r} outside domain")

    @property
    def is_numeric(self) -> bool:
        return self.kind != CATEGORICAL

    def contains(self, value: Any) -> bool:
        if self.kind == CATEGORICAL:
            return value in self.choices
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            return False
        if self.kind == INTEGER and float(value) != int(value):
            return False
        return self.lower <= value <= self.upper

    def coerce(self, value: Any) -> Any:
        """Convert a raw (possibly string) value to this parameter's type."""
        if self.kind == CATEGORICAL:
            if value in self.choices:
                return value
            text = str(value)
            for c in self.choices:
                if str(c) == text:
                    return c
            raise DomainError(f"{self.name}: {value!r} not in {list(self.choices)}")
        try:
            number = float(value)
        except (TypeError, ValueError):
            raise DomainError(f"{self.name}: {value!r} is not numeric") from None
        if self.kind == INTEGER:
            if number != int(number):
                raise DomainError(f"{self.name}: {value!r} is not an integer")
            number = int(number)
        if not self.lower <= number <= self.upper:
            raise DomainError(f"{self.name}: {value!r} outside [{self.lower}, {self.upper}]")
        return number

    def to_unit(self, value: Any) -> float:
        """Numeric value -> [0, 1] (after log transform); category -> its index."""
        if self.kind == CATEGORICAL:
            return float(self.choices.index(value))
        if self.log:
            lo, hi = math.log(self.lower), math.log(self.upper)
            return (math.log(value) - lo) / (hi - lo)
        return (float(value) - self.lower) / (self.upper - self.lower)

    def from_unit(self, u: float) -> Any:
        u = min(max(u, 0.0), 1.0)
        if self.log:
            lo, hi = math.log(self.lower), math.log(self.upper)
            value = math.exp(lo + u * (hi - lo))
        else:
            value = self.lower + u * (self.upper - self.lower)
        if self.kind == INTEGER:
            return int(min(max(round(value), self.lower), self.upper))
        return float(min(max(value, self.lower), self.upper))

    def sample(self, rng: np.random.Generator) -> Any:
        if self.kind == CATEGORICAL:
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.kind == INTEGER and not self.log:
            return int(rng.integers(self.lower, self.upper + 1))
        return self.from_unit(float(rng.uniform()))

    def to_line(self) -> str:
        if self.kind == CATEGORICAL:
            values = ",".join(str(c) for c in self.choices)
            return f"{self.name} cat {{{values}}} default {self.default}"
        line = f"{self.name} {self.kind} [{_fmt(self.lower)}, {_fmt(self.upper)}] default {_fmt(self.default)}"
        return line + " log" if self.log else line


@dataclass(frozen=True)
class Condition:
    """``child`` is active only if ``parent`` is active and takes one of ``values``."""

    child: str
    parent: str
    values: frozenset

    def to_line(self, parent: Parameter) -> str:
        ordered = [v for v in parent.choices if v in self.values] if parent.choices else sorted(self.values)
        return f"{self.child} | {self.parent} in {{{','.join(_fmt(v) for v in ordered)}}}"


class Configuration(Mapping[str, Any]):
    """Immutable assignment of the active parameters.

    Equality and hashing use the canonical sorted item tuple, so two
    configurations that agree on every active value are the same point.
    """

    __slots__ = ("_values", "_key", "_hash")

    def __init__(self, values: Mapping[str, Any]):
        self._values = dict(sorted(values.items()))
        self._key = tuple(self._values.items())
        self._hash = hash(self._key)

    def __getitem__(self, name: str) -> Any:
        return self._values[name]

    def __iter__(self):
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self._key == other._key

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v!r}" for k, v in self._key)
        return f"Configuration({inner})"

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)

    @property
    def config_id(self) -> str:
        """Short content hash, stable across processes."""
        blob = json.dumps(self._values, sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:12]


@dataclass(frozen=True)
class ConfigurationSpace:
    parameters: tuple[Parameter, ...]
    conditions: tuple[Condition, ...] = ()
    _by_name: dict = field(init=False, repr=False, compare=False)
    _order: tuple = field(init=False, repr=False, compare=False)
    _parents: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        by_name = {}
        for p in self.parameters:
            if p.name in by_name:
                raise SpaceError(f"duplicate parameter {p.name!r}")
            by_name[p.name] = p
        parents: dict[str, list[Condition]] = {p.name: [] for p in self.parameters}
        for c in self.conditions:
            for name in (c.child, c.parent):
                if name not in by_name:
                    raise SpaceError(f"condition references unknown parameter {name!r}")
            if not c.values:
                raise DomainError(f"condition on {c.child}: empty activating set")
            for v in c.values:
                if not by_name[c.parent].contains(v):
                    raise DomainError(f"condition on {c.child}: {v!r} outside domain of {c.parent}")
            parents[c.child].append(c)
        object.__setattr__(self, "_by_name", by_name)
        object.__setattr__(self, "_parents", {k: tuple(v) for k, v in parents.items()})
        object.__setattr__(self, "_order", self._topological_order(parents))

    def _topological_order(self, parents: dict[str, list[Condition]]) -> tuple[str, ...]:
        order: list[str] = []
        state: dict[str, int] = {}

        def visit(name: str, path: tuple[str, ...]) -> None:
            if state.get(name) == 2:
                return
            if state.get(name) == 1:
                cycle = " -> ".join(path[path.index(name):] + (name,))
                raise CyclicConditionError(f"cyclic conditions: {cycle}")
            state[name] = 1
            for c in parents[name]:
                visit(c.parent, path + (name,))
            state[name] = 2
            order.append(name)

        for p in self.parameters:
            visit(p.name, ())
        return tuple(order)

    def __getitem__(self, name: str) -> Parameter:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return len(self.parameters)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.parameters]

    def is_active(self, name: str, values: Mapping[str, Any]) -> bool:
        """Whether ``name`` is active given (at least) the values of its ancestors."""
        for c in self._parents[name]:
            if c.parent not in values or values[c.parent] not in c.values:
                return False
        return True

    def _complete(self, values: dict[str, Any], fill) -> Configuration:
        # walk parents-first so activity of each child is decided on final parent values
        out: dict[str, Any] = {}
        for name in self._order:
            if self.is_active(name, out):
                out[name] = fill(self._by_name[name], values.get(name))
        return Configuration(out)

    def make_configuration(self, values: Mapping[str, Any], strict: bool = False) -> Configuration:
        """Build a validated configuration; values of inactive parameters are dropped.

        With ``strict`` an inactive assignment is an error rather than dropped.
        """
        for name in values:
            if name not in self._by_name:
                raise DomainError(f"unknown parameter {name!r}")

        def fill(p: Parameter, v: Any) -> Any:
            if v is None:
                raise DomainError(f"active parameter {p.name!r} has no value")
            return p.coerce(v)

        config = self._complete(dict(values), fill)
        if strict:
            extra = set(values) - set(config)
            if extra:
                raise DomainError(f"inactive parameters assigned: {sorted(extra)}")
        return config

    def default_configuration(self) -> Configuration:
        return self._complete({}, lambda p, _: p.default)

    def sample_configuration(self, rng: np.random.Generator) -> Configuration:
        out: dict[str, Any] = {}
        for name in self._order:
            if self.is_active(name, out):
                out[name] = self._by_name[name].sample(rng)
        return Configuration(out)

    def neighbors(self, config: Configuration, rng: np.random.Generator, count: int) -> list[Configuration]:
        """``count`` one-exchange neighbours of ``config``.

        One active parameter is changed per neighbour: numeric values take a
        Gaussian step of 0.2 of the (normalised) range, clipped to the bounds;
        categoricals switch to a different category. Children that become
        active are sampled, children that become inactive are dropped.
        """
        movable = [n for n in self._order if n in config and self._can_move(self._by_name[n])]
        if not movable:
            return [config] * count
        result = []
        for _ in range(count):
            name = movable[int(rng.integers(len(movable)))]
            p = self._by_name[name]
            values = config.as_dict()
            values[name] = self._perturb(p, config[name], rng)
            out: dict[str, Any] = {}
            for n in self._order:
                if self.is_active(n, out):
                    out[n] = values[n] if n in values else self._by_name[n].sample(rng)
            result.append(Configuration(out))
        return result

    @staticmethod
    def _can_move(p: Parameter) -> bool:
        return p.kind != CATEGORICAL or len(p.choices) > 1

    @staticmethod
    def _perturb(p: Parameter, value: Any, rng: np.random.Generator) -> Any:
        if p.kind == CATEGORICAL:
            others = [c for c in p.choices if c != value]
            return others[int(rng.integers(len(others)))]
        u = p.to_unit(value)
        new = value
        for _ in range(20):
            new = p.from_unit(u + rng.normal(0.0, _NEIGHBOR_SCALE))
            if new != value:
                break
        return new

    def validate(self, config: Mapping[str, Any]) -> None:
        """Raise ``DomainError`` unless ``config`` assigns exactly the active parameters."""
        for name, v in config.items():
            if name not in self._by_name:
                raise DomainError(f"unknown parameter {name!r}")
            if not self._by_name[name].contains(v):
                raise DomainError(f"{name}: {v!r} outside domain")
        active = {n for n in self._order if self.is_active(n, config)}
        if active != set(config):
            missing, extra = sorted(active - set(config)), sorted(set(config) - active)
            raise DomainError(f"activity mismatch: missing {missing}, inactive but set {extra}")

    def to_text(self) -> str:
        lines = [p.to_line() for p in self.parameters]
        lines += [c.to_line(self._by_name[c.parent]) for c in self.conditions]
        return "\n".join(lines) + "\n"


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


_NUMERIC_RE = re.compile(
    r"^(?P<name>\S+)\s+(?P<kind>real|int)\s*\[\s*(?P<lo>[^,\]]+?)\s*,\s*(?P<hi>[^\]]+?)\s*\]"
    r"\s+default\s+(?P<default>\S+)(?P<log>\s+log)?$"
)
_CAT_RE = re.compile(r"^(?P<name>\S+)\s+cat\s*\{(?P<values>[^}]*)\}\s+default\s+(?P<default>\S+)$")
_COND_RE = re.compile(r"^(?P<child>\S+)\s*\|\s*(?P<parent>\S+)\s+in\s*\{(?P<values>[^}]*)\}$")


def parse_space(text: str) -> ConfigurationSpace:
    params: list[Parameter] = []
    raw_conditions: list[tuple[int, str, str, list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if m := _COND_RE.match(line):
            values = [v.strip() for v in m["values"].split(",") if v.strip()]
            raw_conditions.append((lineno, m["child"], m["parent"], values))
        elif m := _NUMERIC_RE.match(line):
            try:
                lo, hi, default = float(m["lo"]), float(m["hi"]), float(m["default"])
            except ValueError:
                raise SpaceSyntaxError(lineno, f"non-numeric bound or default: {line!r}") from None
            if m["kind"] == INTEGER:
                if any(v != int(v) for v in (lo, hi, default)):
                    raise SpaceSyntaxError(lineno, f"integer parameter with fractional value: {line!r}")
                lo, hi, default = int(lo), int(hi), int(default)
            params.append(_build(lineno, Parameter, name=m["name"], kind=m["kind"], default=default,
                                 lower=lo, upper=hi, log=bool(m["log"])))
        elif m := _CAT_RE.match(line):
            choices = tuple(v.strip() for v in m["values"].split(",") if v.strip())
            params.append(_build(lineno, Parameter, name=m["name"], kind=CATEGORICAL,
                                 default=m["default"], choices=choices))
        else:
            raise SpaceSyntaxError(lineno, f"cannot parse {line!r}")

    by_name = {p.name: p for p in params}
    conditions = []
    for lineno, child, parent, values in raw_conditions:
        if child not in by_name or parent not in by_name:
            missing = child if child not in by_name else parent
            raise SpaceSyntaxError(lineno, f"condition references unknown parameter {missing!r}")
        try:
            coerced = frozenset(by_name[parent].coerce(v) for v in values)
        except DomainError as exc:
            raise DomainError(f"line {lineno}: {exc}") from None
        conditions.append(Condition(child, parent, coerced))
    return ConfigurationSpace(tuple(params), tuple(conditions))


def _build(lineno: int, cls, **kwargs):
    try:
        return cls(**kwargs)
    except DomainError as exc:
        raise DomainError(f"line {lineno}: {exc}") from None


def load_space(path) -> ConfigurationSpace:
    with open(path, encoding="utf-8") as fh:
        return parse_space(fh.read())
