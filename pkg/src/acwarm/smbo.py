"""Sequential model-based configuration: initial design, fit, select, race."""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.stats import norm

from .config_space import Configuration, ConfigurationSpace
from .epm import Epm, ForestSettings, encode_many, fit_history, to_log
from .instances import FeatureMap
from .runhistory import RunHistory, RunRecord
from .target_runner import Runner

log = logging.getLogger(__name__)

RANDOM = "random"
LOCAL_SEARCH = "local-search"
WARMSTART_INIT = "warmstart-init"


@dataclass(frozen=True)
class Challenger:
    config: Configuration
    acquisition_value: float
    provenance: str


@dataclass(frozen=True)
class Budget:
    seconds: float | None = None
    runs: int | None = None

    def __post_init__(self) -> None:
        if self.seconds is None and self.runs is None:
            raise ValueError("budget needs seconds and/or runs")
        if (self.seconds is not None and not self.seconds > 0) or (self.runs is not None and self.runs < 1):
            raise ValueError("budget must be positive")


@dataclass
class SmboSettings:
    n_challengers: int = 8
    min_challengers: int = 2
    ls_restarts: int = 10
    ls_neighbors: int = 20
    ls_max_steps: int = 50
    ls_random_starts: int = 50
    cap_factor: float = 2.0
    min_instances_before_reject: int = 1
    init_min_instances: int = 3
    forest: ForestSettings = field(default_factory=ForestSettings)


class Clock:
    """Configuration time.

    With ``virtual`` the clock only advances by the runtime charged for
    target runs, which keeps synthetic experiments reproducible; otherwise
    it is wall-clock time since construction.
    """

    def __init__(self, virtual: bool):
        self.virtual = virtual
        self._start = time.monotonic()
        self._virtual = 0.0

    def elapsed(self) -> float:
        return self._virtual if self.virtual else time.monotonic() - self._start

    def charge(self, seconds: float) -> None:
        self._virtual += seconds


class Surrogate(Protocol):
    def marginal(self, encoded: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of the marginal (over training instances) log cost."""


class ModelProvider(Protocol):
    def fit(self, state: "SmboState") -> Surrogate: ...


@dataclass
class Task:
    """Everything the loop needs about the configuration problem at hand."""

    space: ConfigurationSpace
    instances: Sequence[str]
    features: FeatureMap
    runner: Runner
    cutoff: float
    budget: Budget
    seed: int = 0
    par_factor: float = 10.0
    origin: str = ""


@dataclass
class SmboState:
    task: Task
    incumbent: Configuration
    history: RunHistory
    clock: Clock
    rng_race: np.random.Generator
    rng_select: np.random.Generator
    rng_model: np.random.Generator
    iteration: int = 0
    trajectory: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def space(self) -> ConfigurationSpace:
        return self.task.space

    def exhausted(self) -> bool:
        b = self.task.budget
        if b.runs is not None and len(self.history) >= b.runs:
            return True
        return b.seconds is not None and self.clock.elapsed() >= b.seconds

    def remaining_seconds(self) -> float:
        b = self.task.budget
        return math.inf if b.seconds is None else b.seconds - self.clock.elapsed()

    def instance_seed(self, instance: str) -> int:
        # one seed per instance, shared by all configurations (common random numbers)
        digest = hashlib.sha256(f"{self.task.seed}|{instance}".encode()).digest()
        return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF

    def run(self, config: Configuration, instance: str, cap: float) -> RunRecord:
        start = time.monotonic()
        record = self.task.runner.run(config, instance, self.instance_seed(instance), cap)
        self.history.append(record)
        self.clock.charge(record.runtime if self.clock.virtual else time.monotonic() - start)
        return record

    def train_cost(self, config: Configuration) -> float:
        return self.history.aggregate_cost(config)

    def log_incumbent(self) -> None:
        point = (self.clock.elapsed(), self.train_cost(self.incumbent), self.incumbent.config_id, self.incumbent)
        if self.trajectory and point[0] <= self.trajectory[-1][0]:
            self.trajectory[-1] = point
        else:
            self.trajectory.append(point)


def new_state(task: Task) -> SmboState:
    streams = np.random.SeedSequence(task.seed).spawn(3)
    return SmboState(task=task, incumbent=task.space.default_configuration(),
                     history=RunHistory(task.origin, task.par_factor), clock=Clock(task.runner.spec.is_synthetic),
                     rng_race=np.random.default_rng(streams[0]), rng_select=np.random.default_rng(streams[1]),
                     rng_model=np.random.default_rng(streams[2]))


def initial_design_default(task: Task) -> SmboState:
    """Run the default once on a uniformly chosen training instance."""
    if not task.instances:
        raise ValueError("no training instances")
    state = new_state(task)
    instance = task.instances[int(state.rng_race.integers(len(task.instances)))]
    state.run(state.incumbent, instance, min(task.cutoff, state.remaining_seconds()))
    state.log_incumbent()
    return state


def expected_improvement(mean, var, best):
    """Closed-form EI for minimisation; works elementwise on arrays."""
    mean, var = np.asarray(mean, dtype=float), np.asarray(var, dtype=float)
    s = np.sqrt(np.maximum(var, 0.0))
    diff = best - mean
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        u = np.where(s > 0, diff / np.where(s > 0, s, 1.0), 0.0)
        ei = np.where(s > 0, diff * norm.cdf(u) + s * norm.pdf(u), np.maximum(diff, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def incumbent_log_cost(state: SmboState) -> float:
    """Incumbent's training cost in model space: mean log10 cost over its instances."""
    costs = state.history.instance_costs(state.incumbent)
    return float(np.mean(to_log(np.array(list(costs.values())))))


# acquisition(configs, encoded) -> values; larger is better
Acquisition = Callable[[Sequence[Configuration], np.ndarray], np.ndarray]


def ei_acquisition(surrogate: Surrogate, best: float) -> Acquisition:
    def acq(configs, encoded):
        mean, var = surrogate.marginal(encoded)
        return expected_improvement(mean, var, best)
    return acq


def _local_search(space: ConfigurationSpace, start: Configuration, value: float, acq: Acquisition,
                  rng: np.random.Generator, settings: SmboSettings) -> tuple[Configuration, float]:
    current, current_value = start, value
    for _ in range(settings.ls_max_steps):
        batch = [current] + space.neighbors(current, rng, settings.ls_neighbors)
        values = acq(batch, encode_many(space, batch))
        current_value = float(values[0])
        k = int(np.argmax(values[1:])) + 1
        if not values[k] > current_value:
            break
        current, current_value = batch[k], float(values[k])
    return current, current_value


def select_challengers(acq: Acquisition, state: SmboState, n_challengers: int,
                       settings: SmboSettings | None = None) -> list[Challenger]:
    """Interleave local-search optima (odd positions) with random samples (even)."""
    settings = settings or SmboSettings()
    space, rng = state.space, state.rng_select
    n_ls = (n_challengers + 1) // 2
    n_rand = n_challengers - n_ls

    pool = state.history.configs() + [space.sample_configuration(rng) for _ in range(settings.ls_random_starts)]
    pool = list(dict.fromkeys(pool))
    pool_values = acq(pool, encode_many(space, pool))
    order = np.argsort(-pool_values, kind="stable")[:settings.ls_restarts]

    found: dict[Configuration, float] = {}
    for idx in order:
        config, value = _local_search(space, pool[idx], float(pool_values[idx]), acq, rng, settings)
        if config not in found:
            found[config] = value
    ranked = sorted(found.items(), key=lambda kv: -kv[1])
    local = [Challenger(c, float(v), LOCAL_SEARCH) for c, v in ranked if c != state.incumbent][:n_ls]

    randoms = [space.sample_configuration(rng) for _ in range(n_rand + (n_ls - len(local)))]
    rand_values = acq(randoms, encode_many(space, randoms)) if randoms else []
    random_chal = [Challenger(c, float(v), RANDOM) for c, v in zip(randoms, rand_values)]
    local += random_chal[n_rand:]
    random_chal = random_chal[:n_rand]

    out: list[Challenger] = []
    for k in range(n_challengers):
        src = local if k % 2 == 0 else random_chal
        if src:
            out.append(src.pop(0))
    return out


def _ensure_incumbent_runs(state: SmboState, target: int) -> None:
    """Run the incumbent on new instances until it has ``target`` of them."""
    seen = set(state.history.instances_of(state.incumbent))
    unseen = [i for i in state.task.instances if i not in seen]
    state.rng_race.shuffle(unseen)
    while len(seen) < target and unseen and not state.exhausted():
        instance = unseen.pop()
        state.run(state.incumbent, instance, min(state.task.cutoff, state.remaining_seconds()))
        seen.add(instance)


def race_one(challenger: Challenger, state: SmboState, min_instances_before_reject: int,
             settings: SmboSettings | None = None) -> str:
    """Race one challenger against the incumbent; returns the outcome label."""
    settings = settings or SmboSettings()
    inc = state.incumbent
    if challenger.config == inc:
        return "skipped"
    n_train = len(state.task.instances)
    min_reject = min(min_instances_before_reject, n_train)
    inc_count = len(state.history.instances_of(inc))
    _ensure_incumbent_runs(state, min(n_train, max(inc_count + 1, min_reject)))

    chal = challenger.config
    done = set(state.history.instances_of(chal))
    inc_instances = state.history.instances_of(inc)
    to_run = [i for i in inc_instances if i not in done]
    state.rng_race.shuffle(to_run)
    inc_costs = state.history.instance_costs(inc)

    def record(outcome: str) -> str:
        common = [i for i in state.history.instances_of(chal) if i in inc_costs]
        event = {"iteration": state.iteration, "event": outcome, "config_id": chal.config_id,
                 "provenance": challenger.provenance, "n_instances": len(common),
                 "challenger_cost": state.history.aggregate_cost(chal, common) if common else None,
                 "incumbent_cost": state.history.aggregate_cost(inc, common) if common else None,
                 "elapsed": state.clock.elapsed()}
        state.trace.append(event)
        return outcome

    pos, batch = 0, 1
    while pos < len(to_run):
        for instance in to_run[pos:pos + batch]:
            if state.exhausted():
                return record("budget")
            common = [i for i in state.history.instances_of(chal) if i in inc_costs] + [instance]
            inc_mean = float(np.mean([inc_costs[i] for i in common]))
            cap = min(state.task.cutoff, settings.cap_factor * inc_mean, state.remaining_seconds())
            state.run(chal, instance, cap)
        pos += batch
        batch *= 2
        common = [i for i in state.history.instances_of(chal) if i in inc_costs]
        worse = state.history.aggregate_cost(chal, common) > state.history.aggregate_cost(inc, common)
        if worse and len(common) >= min_reject:
            return record("reject")

    common = [i for i in state.history.instances_of(chal) if i in inc_costs]
    if len(common) < len(inc_costs):
        return record("budget")
    if state.history.aggregate_cost(chal, common) < state.history.aggregate_cost(inc, common):
        outcome = record("promote")
        state.incumbent = chal
        state.log_incumbent()
        return outcome
    return record("reject")


def race(challengers: Sequence[Challenger], state: SmboState, min_instances_before_reject: int = 1,
         settings: SmboSettings | None = None) -> SmboState:
    settings = settings or SmboSettings()
    for ch in challengers:
        if state.exhausted():
            break
        needed = settings.init_min_instances if ch.provenance == WARMSTART_INIT else min_instances_before_reject
        race_one(ch, state, needed, settings)
    return state


class PlainModel:
    """Refits a single forest on the current history every iteration."""

    def __init__(self, settings: ForestSettings | None = None):
        self.settings = settings or ForestSettings()
        self.current: Epm | None = None

    def fit(self, state: SmboState) -> Surrogate:
        seed = int(state.rng_model.integers(2**31))
        self.current = fit_history(state.history, state.space, state.task.features, self.settings, seed)
        return _SingleSurrogate(self.current, state.task.features.matrix(list(state.task.instances)))


class _SingleSurrogate:
    def __init__(self, epm: Epm, feature_matrix: np.ndarray):
        self.epm = epm
        self.feature_matrix = feature_matrix

    def marginal(self, encoded):
        return self.epm.predict_marginal_encoded(encoded, self.feature_matrix)


class LoopError(RuntimeError):
    """A loop aborted by an exception; ``state`` holds whatever was done (None if nothing)."""

    def __init__(self, state: SmboState | None, cause: BaseException):
        super().__init__(f"configuration loop failed: {cause}")
        self.state = state


@dataclass
class LoopResult:
    incumbent: Configuration
    history: RunHistory
    trajectory: list
    trace: list
    state: SmboState


def run_loop(task: Task, model: ModelProvider | None = None,
             initial_design: Callable[[Task], SmboState] = initial_design_default,
             init_challengers: Sequence[Challenger] = (),
             acquisition_factory: Callable[[Surrogate, SmboState], Acquisition] | None = None,
             settings: SmboSettings | None = None,
             on_iteration: Callable[[SmboState], None] | None = None) -> LoopResult:
    """fit -> select -> race until the budget is spent.

    Each iteration races at least ``min_challengers`` challengers and keeps
    racing (drawing extra random challengers when the list runs out) until
    racing time has caught up with the time spent fitting and selecting.
    """
    settings = settings or SmboSettings()
    model = model or PlainModel(settings.forest)
    state = None
    try:
        state = initial_design(task)
        if init_challengers and not state.exhausted():
            race(init_challengers, state, settings.init_min_instances, settings)

        while not state.exhausted():
            state.iteration += 1
            t0 = state.clock.elapsed()
            surrogate = model.fit(state)
            best = incumbent_log_cost(state)
            acq = acquisition_factory(surrogate, state) if acquisition_factory else ei_acquisition(surrogate, best)
            challengers = select_challengers(acq, state, settings.n_challengers, settings)
            model_time = state.clock.elapsed() - t0

            race_start, raced = state.clock.elapsed(), 0
            queue = list(challengers)
            while not state.exhausted():
                if not queue:
                    if raced >= settings.min_challengers and state.clock.elapsed() - race_start >= model_time:
                        break
                    c = state.space.sample_configuration(state.rng_select)
                    queue.append(Challenger(c, float(acq([c], encode_many(state.space, [c]))[0]), RANDOM))
                outcome = race_one(queue.pop(0), state, settings.min_instances_before_reject, settings)
                if outcome != "skipped":
                    raced += 1
                if raced >= settings.min_challengers and state.clock.elapsed() - race_start >= model_time:
                    break
            if on_iteration:
                on_iteration(state)
        # close the trajectory at the end of the budget
        state.log_incumbent()
    except Exception as exc:
        raise LoopError(state, exc) from exc
    return LoopResult(state.incumbent, state.history, state.trajectory, state.trace, state)


def write_trajectory(trajectory: Sequence[tuple], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for elapsed, cost, config_id, _ in trajectory:
            fh.write(f"{elapsed!r}, {cost!r}, {config_id}\n")


def read_trajectory(path) -> list[tuple[float, float, str]]:
    points = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                t, c, cid = (x.strip() for x in line.split(","))
                points.append((float(t), float(c), cid))
    return points
