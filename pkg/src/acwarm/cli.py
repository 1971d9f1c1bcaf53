"""Command line: configure, validate, report, generate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import analysis
from .config_space import DomainError, SpaceError
from .instances import InstanceError
from .runhistory import RunHistoryError
from .runhistory import save as save_history
from .scenario import (Problem, Scenario, ScenarioError, load_problem, load_scenario, read_incumbents,
                       serialize_scenario, write_incumbents)
from .smbo import LoopError, SmboState, Task, write_trajectory, read_trajectory
from .synthetic import SuiteParams
from .target_runner import Runner
from .warmstart import DmwModel, WarmstartError, run_variant

log = logging.getLogger("acwarm")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
INPUT_ERRORS = (ScenarioError, SpaceError, InstanceError, RunHistoryError, WarmstartError, OSError, ValueError)

INCUMBENT_FILE = "incumbent.json"
HISTORY_FILE = "runhistory.json"
TRAJECTORY_FILE = "trajectory.txt"
TRACE_FILE = "trace.jsonl"
WEIGHTS_FILE = "weights.csv"
RUN_FILE = "run.json"
TEST_COSTS_FILE = "validation.json"


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def write_artifacts(out: Path, problem: Problem, sc: Scenario, state: SmboState, model=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_incumbents(out / INCUMBENT_FILE, problem.origin, [state.incumbent])
    save_history(state.history, out / HISTORY_FILE)
    write_trajectory(state.trajectory, out / TRAJECTORY_FILE)
    with open(out / TRACE_FILE, "w", encoding="utf-8") as fh:
        for event in state.trace:
            fh.write(json.dumps(event) + "\n")
    if isinstance(model, DmwModel) and model.weight_log:
        with open(out / WEIGHTS_FILE, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "n_records", "w0", "w_current"]
                       + [f"w_{p.origin}" for p in model.stack.priors])
            for it, n, weights in model.weight_log:
                w.writerow([it, n] + [repr(x) for x in weights])


def run_configure(sc: Scenario) -> int:
    try:
        problem = load_problem(sc)
    except (DomainError, *INPUT_ERRORS) as exc:
        return _fail(f"invalid scenario: {exc}", EXIT_USAGE)
    out = sc.path(sc.output_dir)
    task = Task(problem.space, problem.instances.train, problem.features, Runner(problem.spec, sc.workers),
                problem.spec.cutoff, sc.budget, sc.seed, sc.par_factor, problem.origin)
    try:
        result, model = run_variant(task, sc.warmstart_mode, problem.warmstart)
    except LoopError as exc:
        if exc.state is not None:
            write_artifacts(out, problem, sc, exc.state)
        return _fail(str(exc), EXIT_FAILURE)
    except Exception as exc:  # noqa: BLE001 - any other failure is unrecoverable for this run
        return _fail(f"configuration failed: {exc}", EXIT_FAILURE)
    write_artifacts(out, problem, sc, result.state, model)

    test = problem.instances.test
    if test:
        costs = {}
        for _, _, cid, config in result.trajectory:
            if cid not in costs:
                costs[cid] = analysis.validate(config, test, problem.spec).par10
        (out / TEST_COSTS_FILE).write_text(json.dumps(costs, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    meta = {"variant": analysis.VARIANT_LABELS[sc.warmstart_mode], "seed": sc.seed, "origin": problem.origin,
            "budget_seconds": sc.budget_seconds, "budget_runs": sc.budget_runs, "cutoff": problem.spec.cutoff,
            "test_instances": list(test)}
    (out / RUN_FILE).write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    print(f"incumbent {result.incumbent.config_id}: train cost {result.state.train_cost(result.incumbent):.6g} "
          f"after {len(result.history)} runs")
    return EXIT_OK


def run_validate(sc: Scenario, config_file: str, out_file: str | None = None) -> int:
    try:
        problem = load_problem(sc)
        if not problem.instances.test:
            return _fail("scenario has no test instances", EXIT_USAGE)
        _, configs = read_incumbents(config_file, problem.space)
        if not configs:
            return _fail(f"{config_file}: no configuration", EXIT_USAGE)
    except (DomainError, *INPUT_ERRORS) as exc:
        return _fail(f"invalid input: {exc}", EXIT_USAGE)
    result = analysis.validate(configs[0], problem.instances.test, problem.spec)
    path = Path(out_file) if out_file else sc.path(sc.output_dir) / f"validation_{result.config_id}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "status", "cost"])
        for inst, cost in result.costs.items():
            w.writerow([inst, result.statuses[inst], repr(cost)])
        w.writerow(["PAR", "", repr(result.par10)])
    print(f"{result.config_id}: PAR{problem.spec.par_factor:g} {result.par10:.6g} on {len(result.costs)} instances")
    return EXIT_OK


def run_report(dirs: list[str], out_dir: str, n_perm: int = 10_000, seed: int = 0) -> int:
    trajectories, test_costs, reference = [], {}, None
    try:
        for d in dirs:
            d = Path(d)
            meta = json.loads((d / RUN_FILE).read_text(encoding="utf-8"))
            key = (meta["budget_seconds"], meta["budget_runs"], tuple(meta["test_instances"]))
            if reference is None:
                reference = key
            elif key != reference:
                return _fail(f"{d}: budget or test set differs from {dirs[0]}", EXIT_USAGE)
            points = read_trajectory(d / TRAJECTORY_FILE)
            trajectories.append(analysis.Trajectory.from_file_points(points, d.name, meta["variant"]))
            if (d / TEST_COSTS_FILE).is_file():
                test_costs.update(json.loads((d / TEST_COSTS_FILE).read_text(encoding="utf-8")))
    except (OSError, KeyError, ValueError) as exc:
        return _fail(f"cannot read run directory: {exc}", EXIT_USAGE)
    has_tests = all(cid in test_costs for t in trajectories for _, cid, _ in t.points)
    analysis.report(trajectories, test_costs if has_tests else None, out_dir, n_perm=n_perm, seed=seed)
    print((Path(out_dir) / "summary.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def run_generate(rho: float, n_sets: int, n_instances: int, seed: int, out_dir: str, budget_runs: int,
                 cutoff: float) -> int:
    try:
        params = SuiteParams(rho, n_sets, n_instances, seed)
        for k in range(n_sets):
            SuiteParams.ident(params, k)
        if not 0 <= rho <= 1 or n_sets < 1 or n_instances < 1:
            raise ValueError("need 0 <= rho <= 1 and positive sizes")
    except ValueError as exc:
        return _fail(str(exc), EXIT_USAGE)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(n_sets):
        sc = Scenario(synthetic=params.ident(k), cutoff=cutoff, budget_runs=budget_runs, seed=0,
                      output_dir=f"runs/set{k}")
        (out / f"set{k}.scenario").write_text(serialize_scenario(sc), encoding="utf-8")
    print(f"wrote {n_sets} scenario files to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acwarm", description="Model-based algorithm configuration with "
                                     "warmstarting from previous configuration runs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("configure", help="run one configuration loop")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--output-dir", help="override the scenario output_dir")

    p = sub.add_parser("validate", help="evaluate a configuration on the test instances")
    p.add_argument("scenario")
    p.add_argument("--config", required=True, help="incumbent file or JSON mapping of parameter values")
    p.add_argument("--out", help="output CSV (default: output_dir/validation_<id>.csv)")

    p = sub.add_parser("report", help="merge run directories into tables and a summary")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--out", default="report")
    p.add_argument("--n-perm", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("generate", help="write scenario files for a synthetic suite")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--n-sets", type=int, default=3)
    p.add_argument("--n-instances", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget-runs", type=int, default=300)
    p.add_argument("--cutoff", type=float, default=100.0)
    p.add_argument("--out", default=".")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("configure", "validate"):
        try:
            sc = load_scenario(args.scenario)
        except (ScenarioError, OSError) as exc:
            return _fail(str(exc), EXIT_USAGE)
        if args.command == "configure":
            if args.seed is not None:
                sc.seed = args.seed
            if args.output_dir is not None:
                sc.output_dir = str(Path(args.output_dir).resolve())
            return run_configure(sc)
        return run_validate(sc, args.config, args.out)
    if args.command == "report":
        return run_report(args.dirs, args.out, args.n_perm, args.seed)
    return run_generate(args.rho, args.n_sets, args.n_instances, args.seed, args.out, args.budget_runs, args.cutoff)


if __name__ == "__main__":
    sys.exit(main())
