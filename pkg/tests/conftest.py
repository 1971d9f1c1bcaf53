from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from acwarm.config_space import parse_space
from acwarm.instances import FeatureMap
from acwarm.runhistory import OK, TIMEOUT, RunRecord
from acwarm.smbo import Budget, Task
from acwarm.target_runner import Runner, make_synthetic_suite


@dataclass
class _Spec:
    is_synthetic: bool = True


class TableRunner:
    """Runtime = ``table[(value of x, instance)]``; capped like the synthetic runner."""

    def __init__(self, table):
        self.table = table
        self.spec = _Spec()
        self.calls = []

    def run(self, config, instance, seed, cap=None):
        self.calls.append((config["x"], instance))
        runtime = self.table[(config["x"], instance)]
        if runtime > cap:
            return RunRecord(config, instance, seed, TIMEOUT, cap, cap)
        return RunRecord(config, instance, seed, OK, runtime, cap)


TABLE_SPACE = parse_space("x cat {d,good,bad} default d")


def table_task(table, instances, runs=100, cutoff=100.0):
    fm = FeatureMap(("f",), {i: np.array([float(k)]) for k, i in enumerate(instances)})
    return Task(TABLE_SPACE, list(instances), fm, TableRunner(table), cutoff, Budget(runs=runs), seed=0)


def synthetic_task(rho=1.0, n_instances=20, runs=200, seed=0, suite_seed=0, set_index=0):
    inst, fm, spec = make_synthetic_suite(rho, 3, n_instances, suite_seed)[set_index]
    return Task(spec.space, inst.train, fm, Runner(spec), spec.cutoff, Budget(runs=runs), seed=seed,
                origin=spec.synthetic_id)


@pytest.fixture
def small_task():
    return synthetic_task(runs=60, n_instances=10)
