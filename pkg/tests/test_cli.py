from __future__ import annotations

import csv
import json
import sys

import pytest

from acwarm.analysis import validate
from acwarm.cli import main
from acwarm.runhistory import load as load_history
from acwarm.scenario import Scenario, ScenarioError, load_problem, parse_scenario, serialize_scenario


def _generate(tmp_path, budget=50, rho=1.0):
    assert main(["generate", "--rho", str(rho), "--n-instances", "10", "--budget-runs", str(budget),
                 "--out", str(tmp_path)]) == 0
    return tmp_path / "set0.scenario"


def _edit(path, **changes):
    text = path.read_text()
    lines = [ln for ln in text.splitlines() if ln.split("=")[0].strip() not in changes]
    for k, v in changes.items():
        values = v if isinstance(v, list) else [v]
        lines += [f"{k} = {x}" for x in values]
    path.write_text("\n".join(lines) + "\n")


def test_configure_plain(tmp_path):
    sc = _generate(tmp_path)
    assert main(["configure", str(sc)]) == 0
    out = tmp_path / "runs" / "set0"
    for name in ("incumbent.json", "runhistory.json", "trajectory.txt"):
        assert (out / name).is_file()
    assert len(load_history(out / "runhistory.json")) == 50


def test_configure_deterministic(tmp_path):
    sc = _generate(tmp_path)
    assert main(["configure", str(sc), "--output-dir", str(tmp_path / "a")]) == 0
    assert main(["configure", str(sc), "--output-dir", str(tmp_path / "b")]) == 0
    for name in ("runhistory.json", "trajectory.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_idmw_without_priors_is_usage_error(tmp_path, capsys):
    sc = _generate(tmp_path)
    _edit(sc, warmstart_mode="idmw")
    assert main(["configure", str(sc)]) == 2
    assert "prior_history" in capsys.readouterr().err
    assert not (tmp_path / "runs").exists()


def test_warmstarted_run_from_files(tmp_path):
    _generate(tmp_path, budget=40)
    for k in (1, 2):
        assert main(["configure", str(tmp_path / f"set{k}.scenario")]) == 0
    sc = tmp_path / "set0.scenario"
    _edit(sc, warmstart_mode="idmw", output_dir="runs/idmw",
          prior_history=[f"runs/set{k}/runhistory.json" for k in (1, 2)],
          prior_incumbents=[f"runs/set{k}/incumbent.json" for k in (1, 2)])
    assert main(["configure", str(sc)]) == 0
    out = tmp_path / "runs" / "idmw"
    assert (out / "weights.csv").is_file()
    trace = [json.loads(ln) for ln in (out / "trace.jsonl").read_text().splitlines()]
    assert any(e["provenance"] == "warmstart-init" for e in trace)


def test_validate_matches_analysis(tmp_path):
    sc = _generate(tmp_path)
    problem = load_problem(parse_scenario(sc.read_text(), tmp_path))
    cfg = tmp_path / "default.json"
    cfg.write_text(json.dumps(problem.space.default_configuration().as_dict()))
    out = tmp_path / "val.csv"
    assert main(["validate", str(sc), "--config", str(cfg), "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    expected = validate(problem.space.default_configuration(), problem.instances.test, problem.spec)
    assert rows[-1][0] == "PAR" and float(rows[-1][2]) == expected.par10
    assert len(rows) == len(problem.instances.test) + 2


def test_validate_unknown_parameter(tmp_path, capsys):
    sc = _generate(tmp_path)
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"x0": 0.3, "zz": 1}))
    assert main(["validate", str(sc), "--config", str(cfg)]) == 2
    assert "zz" in capsys.readouterr().err


def test_validate_missing_test_split(tmp_path):
    sc = _generate(tmp_path)
    (tmp_path / "train.txt").write_text("s0_i000\ns0_i002\n")
    _edit(sc, train_instances="train.txt")
    assert main(["validate", str(sc), "--config", str(sc)]) == 2
    _edit(sc, test_instances="missing.txt")
    assert main(["validate", str(sc), "--config", str(sc)]) == 2


def test_report_and_mixed_budgets(tmp_path):
    sc = _generate(tmp_path, budget=30)
    dirs = []
    for seed in (1, 2):
        d = tmp_path / f"r{seed}"
        assert main(["configure", str(sc), "--seed", str(seed), "--output-dir", str(d)]) == 0
        dirs.append(str(d))
    assert main(["report", *dirs, "--out", str(tmp_path / "rep"), "--n-perm", "200"]) == 0
    for name in ("trajectory_median.csv", "final_par10.csv", "speedups.csv", "summary.txt"):
        assert (tmp_path / "rep" / name).is_file()

    _edit(sc, budget_runs="20")
    other = tmp_path / "r3"
    assert main(["configure", str(sc), "--output-dir", str(other)]) == 0
    assert main(["report", *dirs, str(other), "--out", str(tmp_path / "rep2")]) == 2


def test_external_target(tmp_path):
    target = tmp_path / "solver.py"
    target.write_text("import sys\nargs = sys.argv[1:]\nx = float(args[args.index('-x') + 1])\n"
                      "print(f'RESULT: ok, {0.01 + (x - 0.3) ** 2}')\n")
    (tmp_path / "space.pcs").write_text("x real [0, 1] default 0.9\n")
    (tmp_path / "train.txt").write_text("a\nb\nc\n")
    (tmp_path / "test.txt").write_text("d\n")
    (tmp_path / "features.csv").write_text("instance,f\na,1\nb,2\nc,3\nd,4\n")
    sc = tmp_path / "ext.scenario"
    sc.write_text(f"space_file = space.pcs\ntrain_instances = train.txt\ntest_instances = test.txt\n"
                  f"feature_file = features.csv\ntarget_cmd = {sys.executable} {target} {{instance}} {{seed}}\n"
                  "cutoff = 5\nbudget_runs = 12\n")
    assert main(["configure", str(sc)]) == 0
    inc = json.loads((tmp_path / "output" / "incumbent.json").read_text())
    assert inc["origin"] == "train"
    assert len(load_history(tmp_path / "output" / "runhistory.json")) == 12


@pytest.mark.parametrize("text", [
    "synthetic = rho=1.0,n_sets=1,n_instances=4,seed=0,set=0\nbudget_runs = 5\nwarmstart_mode = off\n",
    "space_file = s.pcs\ntrain_instances = t.txt\ntarget_cmd = run {instance} {seed}\ncutoff = 3.5\n"
    "budget_seconds = 60.0\nprior_history = a.json\nprior_history = b.json\nworkers = 2\n",
])
def test_scenario_round_trip(text):
    sc = parse_scenario(text)
    assert parse_scenario(serialize_scenario(sc)) == sc


def test_scenario_rejects_unknown_and_duplicate_keys():
    with pytest.raises(ScenarioError, match="budgetruns"):
        parse_scenario("budgetruns = 5\n")
    with pytest.raises(ScenarioError, match="duplicate"):
        parse_scenario("seed = 1\nseed = 2\n")


def test_scenario_default_values():
    assert Scenario().par_factor == 10 and Scenario().workers == 1 and Scenario().warmstart_mode == "off"
