"""Evaluating configurator runs: test-set validation, significance tests, speedups, reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .config_space import Configuration
from .runhistory import par10_cost
from .target_runner import TargetSpec, execute

VALIDATION_SEED = 0
EXACT_LIMIT = 8
VARIANT_LABELS = {"off": "default", "init": "INIT", "dmw": "DMW", "idmw": "IDMW", "aaf": "AAF"}


class AnalysisError(ValueError):
    pass


@dataclass
class Trajectory:
    """Incumbent changes of one run as (elapsed, incumbent id, train cost) points."""

    points: list[tuple[float, str, float]]
    run_id: str = ""
    variant: str = "default"

    def __post_init__(self) -> None:
        if not self.points:
            raise AnalysisError(f"trajectory {self.run_id!r} is empty")
        times = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise AnalysisError(f"trajectory {self.run_id!r} times are not strictly increasing")

    @classmethod
    def from_file_points(cls, points: Sequence[tuple[float, float, str]], run_id: str = "",
                         variant: str = "default") -> "Trajectory":
        """From ``(elapsed, cost, id)`` tuples as stored in trajectory files."""
        return cls([(t, cid, c) for t, c, cid in points], run_id, variant)

    @property
    def end(self) -> float:
        return self.points[-1][0]

    def times(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    def step_values(self, grid: np.ndarray, values: Sequence[float]) -> np.ndarray:
        """Step function of ``values`` (one per point) on ``grid``.

        The last point at or before each grid time applies; grid times before
        the first point take the first value.
        """
        idx = np.searchsorted(self.times(), grid, side="right") - 1
        return np.asarray(values, dtype=float)[np.maximum(idx, 0)]


@dataclass
class ValidationResult:
    config_id: str
    costs: dict[str, float]
    par10: float
    statuses: dict[str, str] = field(default_factory=dict)


def validate(config: Configuration, instances: Sequence[str], spec: TargetSpec,
             seed: int = VALIDATION_SEED) -> ValidationResult:
    """One full-cutoff run per test instance; crashes and timeouts cost ``par_factor * cutoff``."""
    if not instances:
        raise AnalysisError("validation needs a non-empty test set")
    costs, statuses = {}, {}
    for inst in instances:
        record = execute(spec, config, inst, seed)
        costs[inst] = par10_cost(record, spec.par_factor)
        statuses[inst] = record.status
    return ValidationResult(config.config_id, costs, float(np.mean(list(costs.values()))), statuses)


# ---------------------------------------------------------------- Mann-Whitney


def _u_statistic(a: np.ndarray, b: np.ndarray) -> float:
    diff = a[:, None] - b[None, :]
    return float(np.sum(diff > 0) + 0.5 * np.sum(diff == 0))


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _exact_lower_tail(a: np.ndarray, b: np.ndarray, u_obs: float) -> float:
    """P(U <= u_obs) over all equally likely relabellings of the pooled sample.

    Counts subsets of size ``len(a)`` by their sum of doubled midranks
    (integers, so ties are handled exactly).
    """
    n1 = len(a)
    ranks2 = np.rint(2 * _midranks(np.concatenate([a, b]))).astype(int)
    max_sum = int(ranks2.sum())
    ways = np.zeros((n1 + 1, max_sum + 1))
    ways[0, 0] = 1.0
    for r in ranks2:
        ways[1:, r:] = ways[1:, r:] + ways[:-1, :max_sum + 1 - r]
    # doubled rank sum = doubled U + n1 (n1 + 1)
    threshold = int(round(2 * u_obs)) + n1 * (n1 + 1)
    return float(ways[n1, :threshold + 1].sum() / math.comb(len(ranks2), n1))


def mann_whitney_one_sided(a: Sequence[float], b: Sequence[float], alpha: float = 0.05
                           ) -> tuple[float, float, bool]:
    """Test H1 "``a`` tends to be smaller than ``b``".

    ``U`` counts pairs with ``a > b`` (ties count one half), so small ``U``
    supports H1. The p-value is exact when the smaller sample has at most
    eight values and uses the tie-corrected normal approximation with
    continuity correction otherwise.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size < 1 or b.size < 1:
        raise AnalysisError("both samples need at least one value")
    n1, n2 = a.size, b.size
    u = _u_statistic(a, b)
    if min(n1, n2) <= EXACT_LIMIT:
        p = _exact_lower_tail(a, b, u)
    else:
        n = n1 + n2
        _, counts = np.unique(np.concatenate([a, b]), return_counts=True)
        tie = float(np.sum(counts ** 3 - counts))
        var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1)))
        if var <= 0:
            p = 1.0
        else:
            p = float(norm.cdf((u - n1 * n2 / 2.0 + 0.5) / math.sqrt(var)))
    p = min(1.0, p)
    return u, p, p < alpha


# ---------------------------------------------------------------- permutation test


def permutation_pvalue(x: Sequence[float], y: Sequence[float], n_perm: int = 10_000,
                       rng: np.random.Generator | None = None) -> float:
    """One-sided p-value for "``x`` has a larger median than ``y``"."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    rng = rng if rng is not None else np.random.default_rng(0)
    perms = _permutations(len(x) + len(y), n_perm, rng)
    return _perm_pvalues(np.concatenate([x, y])[None, :], len(x), perms)[0]


def _permutations(n: int, n_perm: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permuted(np.tile(np.arange(n), (n_perm, 1)), axis=1)


def _perm_pvalues(pooled: np.ndarray, nx: int, perms: np.ndarray) -> np.ndarray:
    """Vectorised over rows of ``pooled`` (one test per row)."""
    obs = np.median(pooled[:, :nx], axis=1) - np.median(pooled[:, nx:], axis=1)
    shuffled = pooled[:, perms]  # (tests, n_perm, n)
    stats = np.median(shuffled[:, :, :nx], axis=2) - np.median(shuffled[:, :, nx:], axis=2)
    exceed = np.sum(stats >= obs[:, None] - 1e-12, axis=1)
    return (1.0 + exceed) / (perms.shape[0] + 1.0)


# ---------------------------------------------------------------- speedup


@dataclass(frozen=True)
class SpeedupResult:
    speedup: float
    reached_parity: bool
    parity_time: float
    baseline_parity_time: float


def union_grid(trajectories: Sequence[Trajectory]) -> np.ndarray:
    return np.unique(np.concatenate([t.times() for t in trajectories]))


def _test_values(traj: Trajectory, grid: np.ndarray, test_costs: Mapping[str, float]) -> np.ndarray:
    try:
        values = [test_costs[cid] for _, cid, _ in traj.points]
    except KeyError as exc:
        raise AnalysisError(f"no test cost for incumbent {exc.args[0]}") from None
    return traj.step_values(grid, values)


def _parity_time(group: Sequence[Trajectory], target: np.ndarray, grid: np.ndarray,
                 test_costs: Mapping[str, float], perms: np.ndarray, alpha: float) -> float | None:
    """Earliest grid time from which on ``group`` is never significantly worse than ``target``."""
    values = np.column_stack([_test_values(t, grid, test_costs) for t in group])  # (grid, runs)
    pooled = np.hstack([values, np.broadcast_to(target, (len(grid), len(target)))])
    # only distinct rows need a test
    uniq, inverse = np.unique(pooled, axis=0, return_inverse=True)
    pvals = np.empty(len(uniq))
    for start in range(0, len(uniq), 64):
        pvals[start:start + 64] = _perm_pvalues(uniq[start:start + 64], values.shape[1], perms)
    rejected = pvals[np.ravel(inverse)] < alpha
    if rejected[-1]:
        return None
    bad = np.flatnonzero(rejected)
    return float(grid[bad[-1] + 1]) if bad.size else float(grid[0])


def speedup(variant: Sequence[Trajectory], baseline: Sequence[Trajectory], test_costs: Mapping[str, float],
            n_perm: int = 10_000, alpha: float = 0.05, rng: np.random.Generator | None = None) -> SpeedupResult:
    """Speedup of ``variant`` over ``baseline`` from the time each first matches the baseline's final quality.

    For a group of runs the parity time is the earliest time from which on a
    permutation test (difference of medians) never finds the baseline's
    final test costs significantly better. The raw speedup is ``B / t`` for
    the full budget ``B``; the variant's raw speedup is divided by the
    baseline's own. When the variant never reaches parity its raw speedup is
    ``B`` over the variant's own end time and the result is flagged.
    """
    if not variant or not baseline:
        raise AnalysisError("speedup needs at least one run per group")
    rng = rng if rng is not None else np.random.default_rng(0)
    grid = union_grid(list(variant) + list(baseline))
    budget = float(grid[-1])
    target = np.array([_test_values(t, grid[-1:], test_costs)[0] for t in baseline])
    perms = _permutations(len(variant) + len(baseline), n_perm, rng)

    t_base = _parity_time(baseline, target, grid, test_costs, perms, alpha)
    t_base = budget if t_base is None else t_base
    t_var = _parity_time(variant, target, grid, test_costs, perms, alpha)
    base_raw = budget / max(t_base, 1e-12)
    if t_var is None:
        var_end = max(t.end for t in variant)
        return SpeedupResult(budget / var_end / base_raw, False, math.inf, t_base)
    return SpeedupResult(budget / max(t_var, 1e-12) / base_raw, True, t_var, t_base)


# ---------------------------------------------------------------- report


def percentile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation percentile (``q`` in [0, 100])."""
    return float(np.percentile(np.asarray(values, dtype=float), q))


def geometric_mean(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.exp(np.mean(np.log(values))))


def _group(trajectories: Sequence[Trajectory]) -> dict[str, list[Trajectory]]:
    groups: dict[str, list[Trajectory]] = {}
    for t in trajectories:
        groups.setdefault(t.variant, []).append(t)
    return groups


def _point_values(traj: Trajectory, test_costs: Mapping[str, float] | None) -> list[float]:
    if test_costs and all(cid in test_costs for _, cid, _ in traj.points):
        return [test_costs[cid] for _, cid, _ in traj.points]
    return [c for _, _, c in traj.points]


def report(trajectories: Sequence[Trajectory], test_costs: Mapping[str, float] | None, out_dir,
           baseline: str = "default", n_perm: int = 10_000, alpha: float = 0.05, seed: int = 0) -> dict:
    """Write the median/percentile, final-PAR10 and speedup tables plus a summary."""
    if not trajectories:
        raise AnalysisError("report needs at least one run")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups = _group(trajectories)
    grid = union_grid(trajectories)

    with open(out / "trajectory_median.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "variant", "p25", "median", "p75"])
        for variant, runs in groups.items():
            values = np.column_stack([t.step_values(grid, _point_values(t, test_costs)) for t in runs])
            for t, row in zip(grid, values):
                w.writerow([repr(float(t)), variant, percentile(row, 25), percentile(row, 50), percentile(row, 75)])

    finals = {v: [_point_values(t, test_costs)[-1] for t in runs] for v, runs in groups.items()}
    medians = {v: float(np.median(f)) for v, f in finals.items()}
    best = min(medians, key=medians.get)
    significant = {v: (v != best and mann_whitney_one_sided(finals[best], finals[v], alpha)[2]) for v in finals}
    with open(out / "final_par10.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "median", "significant_vs_best"])
        for v in groups:
            w.writerow([v, medians[v], significant[v]])

    speedups: dict[str, SpeedupResult] = {}
    base_name = baseline if baseline in groups else next(iter(groups))
    if test_costs is not None:
        for v, runs in groups.items():
            speedups[v] = speedup(runs, groups[base_name], test_costs, n_perm, alpha, np.random.default_rng(seed))
    with open(out / "speedups.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "speedup", "reached_parity"])
        for v, r in speedups.items():
            w.writerow([v, r.speedup, r.reached_parity])
        others = [r.speedup for v, r in speedups.items() if v != base_name]
        if others:
            w.writerow(["geometric_mean", geometric_mean(others), all(r.reached_parity for r in speedups.values())])

    lines = [f"runs: {len(trajectories)}", f"variants: {', '.join(groups)}", f"baseline: {base_name}",
             f"best final median PAR10: {best} ({medians[best]:.4g})"]
    for v in groups:
        mark = " (significantly worse than best)" if significant[v] else ""
        lines.append(f"  {v}: {len(groups[v])} runs, final median PAR10 {medians[v]:.4g}{mark}")
        if v in speedups:
            r = speedups[v]
            lines.append(f"    speedup {r.speedup:.3g}" + ("" if r.reached_parity else " (parity not reached)"))
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"final": finals, "medians": medians, "significant": significant, "speedups": speedups}
