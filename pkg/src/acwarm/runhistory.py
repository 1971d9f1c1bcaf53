"""Run records, PAR-k costs and the (serialisable) run history."""

from __future__ import annotations

import json
import math
import threading
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .config_space import Configuration, ConfigurationSpace

OK = "ok"
TIMEOUT = "timeout"
CRASHED = "crashed"
STATUSES = (OK, TIMEOUT, CRASHED)

FORMAT_VERSION = 1
DEFAULT_PAR_FACTOR = 10.0


class RunHistoryError(ValueError):
    pass


class NoDataError(RunHistoryError):
    pass


@dataclass(frozen=True)
class RunRecord:
    config: Configuration
    instance: str
    seed: int
    status: str
    runtime: float
    cutoff: float

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise RunHistoryError(f"unknown status {self.status!r}")
        if not self.cutoff > 0:
            raise RunHistoryError(f"cutoff must be positive, got {self.cutoff}")
        if not (self.runtime >= 0 and math.isfinite(self.runtime)):
            raise RunHistoryError(f"invalid runtime {self.runtime}")
        if self.status == TIMEOUT:
            object.__setattr__(self, "runtime", float(self.cutoff))
        elif self.status == OK and self.runtime > self.cutoff:
            raise RunHistoryError(f"ok run with runtime {self.runtime} above cutoff {self.cutoff}")

    def to_json(self) -> dict:
        return {"config": self.config.as_dict(), "instance": self.instance, "seed": self.seed,
                "status": self.status, "runtime": self.runtime, "cutoff": self.cutoff}


def par10_cost(record: RunRecord, par_factor: float = DEFAULT_PAR_FACTOR) -> float:
    """Runtime for solved runs, ``par_factor * cutoff`` for timeouts and crashes."""
    if record.status == OK:
        return float(record.runtime)
    return par_factor * record.cutoff


class RunHistory:
    """Append-only log of target runs, unique per (config, instance, seed)."""

    def __init__(self, origin: str = "", par_factor: float = DEFAULT_PAR_FACTOR,
                 records: Iterable[RunRecord] = ()):
        self.origin = origin
        self.par_factor = par_factor
        self._records: list[RunRecord] = []
        self._keys: set[tuple] = set()
        self._by_config: dict[Configuration, dict[str, list[float]]] = defaultdict(dict)
        self._lock = threading.Lock()
        for r in records:
            self.append(r)

    def append(self, record: RunRecord) -> None:
        key = (record.config, record.instance, record.seed)
        with self._lock:
            if key in self._keys:
                raise RunHistoryError(f"duplicate run {record.config.config_id}/{record.instance}/{record.seed}")
            self._keys.add(key)
            self._records.append(record)
            self._by_config[record.config].setdefault(record.instance, []).append(
                par10_cost(record, self.par_factor))

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[RunRecord]:
        return iter(list(self._records))

    def __getitem__(self, idx):
        return self._records[idx]

    @property
    def records(self) -> list[RunRecord]:
        return list(self._records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RunHistory):
            return NotImplemented
        return (self.origin == other.origin and self.par_factor == other.par_factor
                and self._records == other._records)

    def configs(self) -> list[Configuration]:
        """Distinct configurations in first-seen order."""
        return list(self._by_config)

    def has_run(self, config: Configuration, instance: str, seed: int | None = None) -> bool:
        if seed is None:
            return instance in self._by_config.get(config, {})
        return (config, instance, seed) in self._keys

    def instances_of(self, config: Configuration) -> list[str]:
        """Instances ``config`` was run on, in first-run order."""
        return list(self._by_config.get(config, {}))

    def instance_costs(self, config: Configuration) -> dict[str, float]:
        """Per-instance cost, averaged over seeds."""
        return {i: sum(c) / len(c) for i, c in self._by_config.get(config, {}).items()}

    def aggregate_cost(self, config: Configuration, instances: Sequence[str] | None = None) -> float:
        """Mean PAR cost: seeds are averaged per instance, then instances are averaged."""
        costs = self.instance_costs(config)
        if instances is not None:
            wanted = set(instances)
            costs = {i: c for i, c in costs.items() if i in wanted}
        if not costs:
            raise NoDataError(f"no runs of {config.config_id} on the requested instances")
        return sum(costs.values()) / len(costs)

    def save(self, path) -> None:
        save(self, path)


def aggregate_cost(history: RunHistory, config: Configuration, instances: Sequence[str] | None = None) -> float:
    return history.aggregate_cost(config, instances)


def to_json(history: RunHistory) -> dict:
    return {"format_version": FORMAT_VERSION, "origin": history.origin, "par_factor": history.par_factor,
            "records": [r.to_json() for r in history]}


def save(history: RunHistory, path) -> None:
    # write-then-rename so readers never see a partial file
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(to_json(history), indent=1) + "\n", encoding="utf-8")
    tmp.replace(path)


def from_json(data: dict, space: ConfigurationSpace | None = None) -> RunHistory:
    if data.get("format_version") != FORMAT_VERSION:
        raise RunHistoryError(f"unsupported format_version {data.get('format_version')!r}")
    history = RunHistory(data.get("origin", ""), float(data.get("par_factor", DEFAULT_PAR_FACTOR)))
    for k, rec in enumerate(data.get("records", [])):
        try:
            values = rec["config"]
            config = space.make_configuration(values, strict=True) if space is not None else Configuration(values)
            history.append(RunRecord(config, str(rec["instance"]), int(rec["seed"]), rec["status"],
                                     float(rec["runtime"]), float(rec["cutoff"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise RunHistoryError(f"malformed record {k}: {exc}") from None
    return history


def load(path, space: ConfigurationSpace | None = None) -> RunHistory:
    """Read a history file; with ``space`` every configuration is validated against it."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RunHistoryError(f"{path}: not a run history file ({exc})") from None
    return from_json(data, space)
