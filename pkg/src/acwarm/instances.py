"""Instance sets and their feature vectors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

TRAIN = "train"
TEST = "test"


class InstanceError(ValueError):
    pass


class SchemaMismatchError(InstanceError):
    pass


@dataclass(frozen=True)
class InstanceSet:
    id: str
    instances: tuple[str, ...]
    splits: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.instances:
            raise InstanceError(f"instance set {self.id!r} is empty")
        seen = set()
        for name in self.instances:
            if name in seen:
                raise InstanceError(f"duplicate instance {name!r} in set {self.id!r}")
            seen.add(name)
        if not self.splits:
            object.__setattr__(self, "splits", (TRAIN,) * len(self.instances))
        if len(self.splits) != len(self.instances) or set(self.splits) - {TRAIN, TEST}:
            raise InstanceError("split tags must be 'train'/'test', one per instance")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def of_split(self, split: str) -> list[str]:
        return [i for i, s in zip(self.instances, self.splits) if s == split]

    @property
    def train(self) -> list[str]:
        return self.of_split(TRAIN)

    @property
    def test(self) -> list[str]:
        return self.of_split(TEST)


@dataclass(frozen=True)
class FeatureMap:
    schema: tuple[str, ...]
    vectors: dict[str, np.ndarray]
    imputed: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        for name, vec in self.vectors.items():
            if vec.shape != (len(self.schema),):
                raise InstanceError(f"feature vector of {name!r} has length {vec.shape}, schema has {len(self.schema)}")
            if not np.all(np.isfinite(vec)):
                raise InstanceError(f"non-finite feature value for {name!r}")

    def __getitem__(self, instance: str) -> np.ndarray:
        return self.vectors[instance]

    def __contains__(self, instance: str) -> bool:
        return instance in self.vectors

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return (self.schema == other.schema and self.vectors.keys() == other.vectors.keys()
                and all(np.array_equal(v, other.vectors[k]) for k, v in self.vectors.items()))

    def matrix(self, instances: Sequence[str]) -> np.ndarray:
        if not instances:
            return np.zeros((0, len(self.schema)))
        return np.vstack([self.vectors[i] for i in instances])

    def project(self, schema: Sequence[str]) -> "FeatureMap":
        """Reorder/select columns by name, e.g. to query a model trained on another schema."""
        schema = tuple(schema)
        if schema == self.schema:
            return self
        missing = [f for f in schema if f not in self.schema]
        if missing:
            raise SchemaMismatchError(f"features {missing} not available")
        idx = [self.schema.index(f) for f in schema]
        return FeatureMap(schema, {k: v[idx] for k, v in self.vectors.items()}, self.imputed)


def _read_lines(path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"instance file not found: {path}")
    names = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            names.append(line)
    return names


def load_instances(path, split: str = TRAIN, set_id: str | None = None) -> InstanceSet:
    names = _read_lines(path)
    return InstanceSet(set_id or Path(path).stem, tuple(names), (split,) * len(names))


def load_instance_split(train_path, test_path=None, set_id: str | None = None) -> InstanceSet:
    """One set holding the train file's instances followed by the test file's."""
    train = _read_lines(train_path)
    test = _read_lines(test_path) if test_path else []
    return InstanceSet(set_id or Path(train_path).stem, tuple(train + test),
                       (TRAIN,) * len(train) + (TEST,) * len(test))


def load_features(path, instances: InstanceSet | Sequence[str]) -> FeatureMap:
    """Read ``instance,f1,f2,...`` rows; empty cells become the column median.

    Instances without a row are imputed entirely and listed in ``imputed``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"feature file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or len(rows[0]) < 2:
        raise InstanceError(f"{path}: feature file has no feature columns")
    schema = tuple(c.strip() for c in rows[0][1:])

    raw: dict[str, list[float]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        name = row[0].strip()
        cells = [c.strip() for c in row[1:]]
        if len(cells) != len(schema):
            raise InstanceError(f"{path}:{lineno}: expected {len(schema)} values, got {len(cells)}")
        values = []
        for cell in cells:
            if cell == "" or cell.lower() in ("na", "nan"):
                values.append(math.nan)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise InstanceError(f"{path}:{lineno}: malformed numeric cell {cell!r}") from None
            if not math.isfinite(v):
                raise InstanceError(f"{path}:{lineno}: non-finite value {cell!r}")
            values.append(v)
        raw[name] = values

    table = np.array(list(raw.values()), dtype=float).reshape(len(raw), len(schema))
    medians = np.zeros(len(schema))
    for j in range(len(schema)):
        present = table[~np.isnan(table[:, j]), j]
        if present.size:
            medians[j] = float(np.median(present))

    vectors = {}
    for name, row in zip(raw, table):
        vectors[name] = np.where(np.isnan(row), medians, row)
    imputed = []
    for name in instances:
        if name not in vectors:
            vectors[name] = medians.copy()
            imputed.append(name)
    return FeatureMap(schema, vectors, tuple(imputed))


def write_features(path, fmap: FeatureMap, instances: Sequence[str] | None = None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("instance",) + fmap.schema)
        for name in instances if instances is not None else fmap.vectors:
            w.writerow([name] + [repr(float(v)) for v in fmap[name]])


def check_schema_compat(maps: Sequence[FeatureMap]) -> None:
    if not maps:
        raise InstanceError("need at least one feature map")
    ref = maps[0].schema
    for k, m in enumerate(maps[1:], start=1):
        if m.schema == ref:
            continue
        for a, b in zip(ref, m.schema):
            if a != b:
                raise SchemaMismatchError(f"feature map {k}: feature {b!r} where {a!r} expected")
        longer = ref if len(ref) > len(m.schema) else m.schema
        first = longer[min(len(ref), len(m.schema))]
        raise SchemaMismatchError(f"feature map {k}: schemas differ in length at feature {first!r}")
