"""Running the target algorithm: external commands or synthetic generators."""

from __future__ import annotations

import logging
import os
import re
import shlex
import signal
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .config_space import Configuration, ConfigurationSpace
from .instances import FeatureMap, InstanceSet
from .runhistory import CRASHED, DEFAULT_PAR_FACTOR, OK, TIMEOUT, RunRecord
from .synthetic import SuiteParams, SyntheticTarget, generate, synthetic_space, target_from_id

log = logging.getLogger(__name__)

EXTERNAL = "external"
SYNTHETIC = "synthetic"
KILL_GRACE = 5.0

_RESULT_RE = re.compile(r"RESULT:\s*(ok|timeout|crashed)\s*,\s*([-+0-9.eE]+|inf|nan)\s*$", re.IGNORECASE)


class TargetSpecError(ValueError):
    pass


@dataclass(frozen=True)
class TargetSpec:
    kind: str
    cutoff: float
    par_factor: float = DEFAULT_PAR_FACTOR
    command_template: str = ""
    synthetic_id: str = ""
    synthetic: SyntheticTarget | None = None
    space: ConfigurationSpace | None = None

    def __post_init__(self) -> None:
        if not self.cutoff > 0:
            raise TargetSpecError(f"cutoff must be positive, got {self.cutoff}")
        if self.kind == EXTERNAL:
            for ph in ("{instance}", "{seed}"):
                if ph not in self.command_template:
                    raise TargetSpecError(f"command template lacks placeholder {ph}")
        elif self.kind == SYNTHETIC:
            if self.synthetic is None:
                if not self.synthetic_id:
                    raise TargetSpecError("synthetic target needs a synthetic id")
                object.__setattr__(self, "synthetic", target_from_id(self.synthetic_id)[0])
            if self.space is None:
                object.__setattr__(self, "space", synthetic_space())
        else:
            raise TargetSpecError(f"unknown target kind {self.kind!r}")

    @property
    def is_synthetic(self) -> bool:
        return self.kind == SYNTHETIC


def build_command(template: str, config: Configuration, instance: str, seed: int, cutoff: float) -> list[str]:
    text = (template.replace("{instance}", shlex.quote(instance))
            .replace("{seed}", str(seed))
            .replace("{cutoff}", repr(float(cutoff))))
    args = shlex.split(text)
    for name, value in config.items():
        args += [f"-{name}", str(value)]
    return args


def parse_result(output: str) -> tuple[str, float] | None:
    """The last ``RESULT: status, runtime`` line of ``output``, if any."""
    for line in reversed(output.strip().splitlines()):
        m = _RESULT_RE.search(line.strip())
        if m:
            return m.group(1).lower(), float(m.group(2))
    return None


def _kill_group(proc: subprocess.Popen) -> None:
    for sig, wait in ((signal.SIGTERM, KILL_GRACE), (signal.SIGKILL, None)):
        try:
            os.killpg(proc.pid, sig)
        except ProcessLookupError:
            return
        try:
            proc.wait(timeout=wait)
            return
        except subprocess.TimeoutExpired:
            continue


def _run_external(spec: TargetSpec, config: Configuration, instance: str, seed: int, cap: float) -> RunRecord:
    args = build_command(spec.command_template, config, instance, seed, cap)
    start = time.monotonic()
    try:
        proc = subprocess.Popen(args, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
                                stdin=subprocess.DEVNULL, text=True, start_new_session=True)
    except OSError as exc:
        log.warning("could not start target %r: %s", args[0], exc)
        return RunRecord(config, instance, seed, CRASHED, 0.0, cap)
    try:
        out, _ = proc.communicate(timeout=cap)
    except subprocess.TimeoutExpired:
        _kill_group(proc)
        try:
            proc.communicate(timeout=KILL_GRACE)
        except subprocess.TimeoutExpired:
            pass
        return RunRecord(config, instance, seed, TIMEOUT, cap, cap)
    finally:
        # a target may leave children behind in its session even after it exits
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            pass
    elapsed = min(time.monotonic() - start, cap)
    parsed = parse_result(out or "")
    if parsed is None:
        return RunRecord(config, instance, seed, CRASHED, elapsed, cap)
    status, runtime = parsed
    if not runtime >= 0 or runtime == float("inf"):
        return RunRecord(config, instance, seed, CRASHED, elapsed, cap)
    if status == TIMEOUT or runtime > cap:
        return RunRecord(config, instance, seed, TIMEOUT, cap, cap)
    return RunRecord(config, instance, seed, status, runtime, cap)


def execute(spec: TargetSpec, config: Configuration, instance: str, seed: int,
            cap: float | None = None) -> RunRecord:
    """Run ``config`` on ``instance`` with the per-run cap ``min(cap, cutoff)``.

    The returned record carries the effective cap as its cutoff, so a run
    stopped at the cap is a timeout at that cap.
    """
    cap = spec.cutoff if cap is None else min(cap, spec.cutoff)
    if not cap > 0:
        raise TargetSpecError(f"cap must be positive, got {cap}")
    if spec.kind == EXTERNAL:
        return _run_external(spec, config, instance, seed, cap)
    runtime = spec.synthetic.runtime(config, instance, seed, spec.space)
    if runtime > cap:
        return RunRecord(config, instance, seed, TIMEOUT, cap, cap)
    return RunRecord(config, instance, seed, OK, runtime, cap)


class Runner:
    """Executes batches of runs, optionally on a thread pool; results keep dispatch order."""

    def __init__(self, spec: TargetSpec, workers: int = 1):
        self.spec = spec
        self.workers = max(1, workers)

    def run(self, config: Configuration, instance: str, seed: int, cap: float | None = None) -> RunRecord:
        return execute(self.spec, config, instance, seed, cap)

    def run_batch(self, tasks: Sequence[tuple[Configuration, str, int, float]]) -> list[RunRecord]:
        if self.workers == 1 or len(tasks) < 2 or self.spec.is_synthetic:
            return [execute(self.spec, *t) for t in tasks]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(lambda t: execute(self.spec, *t), tasks))


def make_synthetic_suite(rho: float, n_sets: int, n_instances: int, seed: int, cutoff: float = 100.0,
                         noise: float = 0.1, par_factor: float = DEFAULT_PAR_FACTOR
                         ) -> list[tuple[InstanceSet, FeatureMap, TargetSpec]]:
    params = SuiteParams(rho, n_sets, n_instances, seed, noise)
    space = synthetic_space()
    return [(inst, feats, TargetSpec(SYNTHETIC, cutoff, par_factor, synthetic_id=params.ident(k),
                                     synthetic=target, space=space))
            for k, (inst, feats, target) in enumerate(generate(params))]
