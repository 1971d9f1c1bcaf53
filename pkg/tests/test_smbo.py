from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from acwarm.runhistory import par10_cost
from acwarm.smbo import (LOCAL_SEARCH, RANDOM, WARMSTART_INIT, Budget, Challenger, ei_acquisition,
                         expected_improvement, initial_design_default, new_state, race, run_loop,
                         select_challengers)
from acwarm.target_runner import execute
from conftest import TABLE_SPACE, synthetic_task, table_task

INSTANCES = [f"i{k}" for k in range(6)]


def _table(good, bad, default=10.0):
    table = {}
    for i in INSTANCES:
        table[("d", i)] = default
        table[("good", i)] = good
        table[("bad", i)] = bad
    return table


def _state_with_incumbent_runs(table, n):
    task = table_task(table, INSTANCES)
    state = new_state(task)
    for i in INSTANCES[:n]:
        state.run(state.incumbent, i, task.cutoff)
    return state


def _challenger(value, provenance=RANDOM):
    return Challenger(TABLE_SPACE.make_configuration({"x": value}), 0.0, provenance)


# ------------------------------------------------------------------ EI


def test_ei_examples():
    assert expected_improvement(1.0, 0.0, 1.0) == 0.0
    assert expected_improvement(0.0, 0.0, 1.0) == 1.0
    assert expected_improvement(1.0, 1.0, 1.0) == pytest.approx(0.398942, abs=1e-6)


def test_ei_matches_numerical_integration():
    # E[max(0, best - N(mean, s^2))] by quadrature on a fine grid
    mean, s, best = 0.3, 0.7, 0.5
    z = np.linspace(-12, 12, 400_001)
    integrand = np.maximum(0.0, best - (mean + s * z)) * norm.pdf(z)
    assert expected_improvement(mean, s * s, best) == pytest.approx(np.trapezoid(integrand, z), abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 4), st.floats(-5, 5))
def test_ei_nonnegative_and_vectorised(mean, var, best):
    value = expected_improvement(mean, var, best)
    assert value >= 0 and np.isfinite(value)
    assert expected_improvement(np.array([mean]), np.array([var]), best)[0] == value


def test_ei_matches_monte_carlo():
    rng = np.random.default_rng(0)
    for _ in range(10):
        mean, var, best = rng.normal(), rng.uniform(0.01, 2.0), rng.normal()
        samples = rng.normal(mean, np.sqrt(var), size=1_000_000)
        assert abs(expected_improvement(mean, var, best) - np.mean(np.maximum(0, best - samples))) < 1e-2


# ------------------------------------------------------------------ initial design


def test_initial_design_runs_default_once():
    task = synthetic_task(runs=10)
    state = initial_design_default(task)
    assert len(state.history) == 1
    assert state.incumbent == task.space.default_configuration()
    again = initial_design_default(synthetic_task(runs=10))
    assert again.history[0].instance == state.history[0].instance


def test_initial_design_single_instance():
    task = table_task(_table(1.0, 50.0), INSTANCES[:1])
    assert initial_design_default(task).history[0].instance == "i0"


# ------------------------------------------------------------------ challenger selection


class _Flat:
    def marginal(self, encoded):
        return np.full(len(encoded), 1.0), np.full(len(encoded), 0.25)


def test_interleaving_and_flat_landscape():
    state = initial_design_default(synthetic_task(runs=10))
    acq = ei_acquisition(_Flat(), best=1.0)
    out = select_challengers(acq, state, 4)
    assert [c.provenance for c in out] == [LOCAL_SEARCH, RANDOM, LOCAL_SEARCH, RANDOM]
    values = {c.acquisition_value for c in out}
    assert len(values) == 1 and all(np.isfinite(v) and v >= 0 for v in values)


def test_selection_deterministic():
    def pick():
        state = initial_design_default(synthetic_task(runs=10))
        return [c.config for c in select_challengers(ei_acquisition(_Flat(), 1.0), state, 6)]
    assert pick() == pick()


# ------------------------------------------------------------------ racing


def test_dominating_challenger_promoted():
    state = _state_with_incumbent_runs(_table(good=2.0, bad=50.0), 2)
    race([_challenger("good")], state)
    assert state.incumbent["x"] == "good"
    event = state.trace[-1]
    assert event["event"] == "promote" and event["n_instances"] == 3
    assert event["challenger_cost"] < event["incumbent_cost"]


def test_random_challenger_rejected_after_one_instance():
    state = _state_with_incumbent_runs(_table(good=2.0, bad=50.0), 4)
    race([_challenger("bad")], state)
    assert state.incumbent["x"] == "d"
    assert state.trace[-1]["event"] == "reject" and state.trace[-1]["n_instances"] == 1


def test_warmstart_challenger_gets_three_instances():
    state = _state_with_incumbent_runs(_table(good=2.0, bad=50.0), 1)
    race([_challenger("bad", WARMSTART_INIT)], state)
    event = state.trace[-1]
    assert event["event"] == "reject" and event["n_instances"] >= 3


def test_adaptive_cap_counts_as_timeout():
    state = _state_with_incumbent_runs(_table(good=2.0, bad=50.0), 4)
    race([_challenger("bad")], state)
    record = state.history[-1]
    assert record.status == "timeout" and record.runtime == pytest.approx(2 * 10.0)


def test_race_stops_at_budget():
    task = table_task(_table(good=2.0, bad=50.0), INSTANCES, runs=3)
    state = new_state(task)
    state.run(state.incumbent, "i0", 100.0)
    race([_challenger("good"), _challenger("bad")], state)
    assert len(state.history) == 3


# ------------------------------------------------------------------ the loop


def test_budget_of_one_run():
    task = synthetic_task(runs=1)
    result = run_loop(task)
    assert len(result.history) == 1
    assert result.incumbent == task.space.default_configuration()


def test_loop_improves_on_default():
    task = synthetic_task(runs=200)
    result = run_loop(task)
    assert len(result.history) == 200
    instances = result.history.instances_of(result.incumbent)
    default = task.space.default_configuration()
    default_costs = [par10_cost(execute(task.runner.spec, default, i, result.state.instance_seed(i)))
                     for i in instances]
    assert result.state.train_cost(result.incumbent) <= np.mean(default_costs)


def test_loop_deterministic():
    a = run_loop(synthetic_task(runs=80, seed=3))
    b = run_loop(synthetic_task(runs=80, seed=3))
    assert [(t, c, cid) for t, c, cid, _ in a.trajectory] == [(t, c, cid) for t, c, cid, _ in b.trajectory]
    assert a.history == b.history


def test_loop_invariants():
    result = run_loop(synthetic_task(runs=150, seed=1))
    promotions = [e for e in result.trace if e["event"] == "promote"]
    assert all(e["challenger_cost"] < e["incumbent_cost"] for e in promotions)
    times = [t for t, _, _, _ in result.trajectory]
    assert times == sorted(times) and len(set(times)) == len(times)
    assert all(r.runtime <= r.cutoff for r in result.history)
    assert len(result.trajectory) == len(promotions) + 2


def test_time_budget():
    task = synthetic_task(runs=10_000)
    task.budget = Budget(seconds=200.0)
    result = run_loop(task)
    assert result.state.clock.elapsed() >= 200.0
    # the last run is capped by what was left of the budget
    assert result.state.clock.elapsed() <= 200.0 + 1e-6
