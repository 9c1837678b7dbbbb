"""Experiment plans, multi-topology/multi-path runs, metrics and file output.

Output layout under ``out_dir``::

    manifest.json
    <topology>/consensus_error.csv        k,metric_value,run_index
    <topology>/consensus_error_mean.csv   k,mean,stderr
    <topology>/objective.csv, objective_mean.csv (and grad_norm*.csv if requested)
    <topology>/final_x_run<r>.txt         final agent iterates, one row per agent
    centralized/...                       same files for the m = 1 baseline
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .exceptions import ConfigError, ContractError, DivergenceError
from .network import TOPOLOGIES, MixingMatrix, build_topology, dump_matrix, metropolis_weights
from .problems import SINGLE_STAGE, TWO_STAGE, estimate_implicit_objective, make_problem
from .smoothing import smoothed_grad_norm_mc, stream
from .tracking import (LowerSchedule, RunConfig, Trajectory, checkpoint_grid, consensus_error,
                       det_gamma_hat, run, sa_schedule)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

__all__ = ["ExperimentPlan", "ExperimentResult", "consensus_error", "load_plan",
           "run_experiment", "centralized_baseline", "CENTRALIZED"]

CENTRALIZED = "centralized"
METRICS = ("consensus_error", "objective", "grad_norm")
_RECORD_KEY = {"consensus_error": "consensus_error", "objective": "objective_estimate",
               "grad_norm": "grad_norm_estimate"}

# Stream keys below the agent index range used by the tracking iteration.
_GRAPH_KEY = 1_000_001
_PATH_KEY = 1_000_002
_EVAL_KEY = 1_000_003
_GRAD_KEY = 1_000_004

PROBLEM_STAGE = {"toy": SINGLE_STAGE, "bilevel": SINGLE_STAGE, "cournot": TWO_STAGE}

# Config key -> plan field.
CONFIG_KEYS = {
    "problem": "problem", "mode": "mode", "oracle": "oracle", "m": "m",
    "topologies": "topologies", "gamma": "gamma", "eta": "eta", "K": "K",
    "minibatch": "minibatch", "epochs": "epochs", "lower_iters": "lower_iters",
    "eval_samples": "eval_samples", "sample_paths": "sample_paths", "seed": "seed",
    "out_dir": "out_dir", "schedule.a": "schedule_a", "schedule.gamma_hat": "schedule_gamma_hat",
    "schedule.big_gamma_hat": "schedule_big_gamma_hat", "schedule.form": "schedule_form",
    "leader_box": "leader_box", "include_leader_shift": "include_leader_shift", "d": "d",
    "x_u": "x_u", "p_followers": "p_followers", "x0": "x0", "init": "init",
    "grad_samples": "grad_samples", "sparse_degree": "sparse_degree",
    "er_probability": "er_probability", "baseline": "baseline",
}
REQUIRED_KEYS = ("problem",)


@dataclass(frozen=True)
class ExperimentPlan:
    problem: str
    mode: Optional[str] = None
    oracle: str = "inexact"
    m: int = 20
    topologies: tuple = TOPOLOGIES
    gamma: float = 1e-4
    eta: float = 0.1
    K: int = 100
    minibatch: int = 5
    epochs: int = 5
    lower_iters: int = 150
    eval_samples: int = 50
    sample_paths: int = 5
    seed: int = 0
    out_dir: Optional[str] = None
    schedule_a: float = 1.0
    schedule_gamma_hat: Optional[float] = None
    schedule_big_gamma_hat: Optional[float] = None
    schedule_form: str = "experiment"
    leader_box: bool = False
    include_leader_shift: bool = True
    d: float = 0.2
    x_u: float = 10.0
    p_followers: int = 20
    x0: Optional[tuple] = None
    init: str = "common"
    grad_samples: int = 0
    sparse_degree: float = 3.0
    er_probability: float = 0.2
    baseline: bool = True

    def __post_init__(self):
        problems = tuple(PROBLEM_STAGE)
        if self.problem not in PROBLEM_STAGE:
            raise ConfigError(f"problem must be one of {problems}, got {self.problem!r}")
        stage = PROBLEM_STAGE[self.problem]
        if self.mode is None:
            object.__setattr__(self, "mode", stage)
        elif self.mode != stage:
            raise ConfigError(f"mode {self.mode!r} does not match problem {self.problem!r} ({stage})")
        object.__setattr__(self, "topologies", tuple(self.topologies))
        bad = [t for t in self.topologies if t not in TOPOLOGIES]
        if bad:
            raise ConfigError(f"unknown topologies {bad}; expected a subset of {list(TOPOLOGIES)}")
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        checks = [
            (self.m >= 2, "m must be >= 2"),
            (self.sample_paths >= 1, "sample_paths must be >= 1"),
            (self.K >= 1, "K must be >= 1"),
            (1 <= self.epochs <= self.K, "epochs must lie in [1, K]"),
            (self.lower_iters >= 1, "lower_iters must be >= 1"),
            (self.eval_samples >= 1, "eval_samples must be >= 1"),
            (self.minibatch >= 1, "minibatch must be >= 1"),
            (self.gamma > 0 and self.eta > 0, "gamma and eta must be positive"),
            (self.grad_samples >= 0, "grad_samples must be >= 0"),
            (self.oracle in ("exact", "inexact"), "oracle must be 'exact' or 'inexact'"),
            (self.schedule_form in ("experiment", "theorem"), "schedule.form must be 'experiment' or 'theorem'"),
            (self.init in ("common", "random"), "init must be 'common' or 'random'"),
            (len(self.topologies) >= 1, "topologies must not be empty"),
        ]
        errors = [msg for ok, msg in checks if not ok]
        if errors:
            raise ConfigError("; ".join(errors))

    def build_problem(self):
        return make_problem(self.problem, p_followers=self.p_followers,
                            include_leader_shift=self.include_leader_shift, d=self.d, x_u=self.x_u)

    def run_config(self, seed: int, *, centralized: bool = False) -> RunConfig:
        box = (0.0, self.x_u) if self.leader_box and self.mode == TWO_STAGE else None
        return RunConfig(
            mode=self.mode, oracle=self.oracle, gamma=self.gamma, eta=self.eta,
            horizon_k=self.K, minibatch=self.minibatch * (self.m if centralized else 1),
            lower_minibatch=self.minibatch,
            schedule=LowerSchedule(a=self.schedule_a, gamma_hat=self.schedule_gamma_hat,
                                   big_gamma_hat=self.schedule_big_gamma_hat,
                                   form=self.schedule_form),
            x0=self.x0, init=self.init, leader_box=box, master_seed=seed)

    def path_seeds(self) -> list:
        return [int(stream(self.seed, _PATH_KEY, r).integers(2 ** 63 - 1))
                for r in range(self.sample_paths)]

    def graph_seed(self, topology_index: int) -> int:
        return int(stream(self.seed, _GRAPH_KEY, topology_index).integers(2 ** 63 - 1))

    def checkpoints(self) -> list:
        return checkpoint_grid(self.K, self.epochs)

    def to_dict(self) -> dict:
        out = {}
        for key, attr in CONFIG_KEYS.items():
            v = getattr(self, attr)
            out[key] = list(v) if isinstance(v, tuple) else v
        return out


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def plan_from_mapping(raw: dict) -> ExperimentPlan:
    flat = _flatten(raw)
    unknown = sorted(k for k in flat if k not in CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED_KEYS if flat.get(k) is None]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    kwargs = {}
    types = {f.name: f.type for f in fields(ExperimentPlan)}
    for key, value in flat.items():
        if value is None:
            continue
        attr = CONFIG_KEYS[key]
        try:
            kwargs[attr] = _coerce(attr, types[attr], value)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({err})") from None
    try:
        return ExperimentPlan(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None


def _coerce(attr, typ, value):
    typ = str(typ)
    if attr == "topologies":
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        return tuple(str(v) for v in value)
    if attr == "x0":
        return tuple(float(v) for v in np.atleast_1d(value))
    if typ.startswith("bool"):
        if isinstance(value, str):
            lowered = value.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError("expected a boolean")
            return lowered in ("true", "1", "yes")
        if not isinstance(value, (bool, int)):
            raise ValueError("expected a boolean")
        return bool(value)
    if typ.startswith("int"):
        if isinstance(value, bool) or float(value) != int(float(value)):
            raise ValueError("expected an integer")
        return int(float(value))
    if "float" in typ:
        if isinstance(value, bool):
            raise ValueError("expected a number")
        return float(value)
    return str(value)


def load_plan(path, overrides: Optional[dict] = None) -> ExperimentPlan:
    """Read a TOML plan (flat keys; ``schedule.a = 1`` style dotted keys allowed).
    ``overrides`` use the same key names and win over the file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"cannot parse {path}: {err}") from None
    flat = _flatten(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            flat[k] = v
    return plan_from_mapping(flat)


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    trajectories: dict
    lambdas: dict
    divergences: list = field(default_factory=list)
    wall_clock: float = 0.0

    def mean_curve(self, topology: str, metric: str = "consensus_error"):
        """``(k, mean, stderr)`` over the non-diverged sample paths."""
        return mean_curve([t for t in self.trajectories[topology] if t is not None], metric)

    def all_diverged(self) -> bool:
        runs = [t for name, ts in self.trajectories.items() if name != CENTRALIZED for t in ts]
        return bool(runs) and all(t is None for t in runs)


def mean_curve(trajs, metric):
    if not trajs:
        return np.array([], dtype=int), np.array([]), np.array([])
    key = _RECORD_KEY[metric]
    ks = trajs[0].ks
    vals = np.array([t.column(key) for t in trajs])
    mean = vals.mean(axis=0)
    if len(trajs) > 1:
        se = vals.std(axis=0, ddof=1) / math.sqrt(len(trajs))
    else:
        se = np.full(len(ks), np.nan)
    return ks, mean, se


def _metric_hooks(plan, problem, cfg, m_eval):
    """Checkpoint callbacks. Every checkpoint reuses the same evaluation
    stream, so changes across checkpoints reflect the iterate, not resampling."""
    exact = plan.oracle == "exact"
    kwargs = dict(num_agents=m_eval, exact=exact, lower_minibatch=cfg.lower_minibatch)
    if problem.stage == SINGLE_STAGE:
        kwargs["schedule"] = sa_schedule(cfg, problem)
    else:
        kwargs["gamma_hat"] = det_gamma_hat(cfg, problem)

    def objective(k, state):
        rng = stream(cfg.master_seed, _EVAL_KEY)
        val = estimate_implicit_objective(problem, state.x_bar(), plan.lower_iters,
                                          plan.eval_samples, rng, **kwargs)
        return {"objective_estimate": val}

    hooks = [objective]
    if plan.grad_samples > 0:
        def fbar(x):
            return estimate_implicit_objective(problem, x, plan.lower_iters, plan.eval_samples,
                                               stream(cfg.master_seed, _EVAL_KEY), **kwargs)

        def grad_norm(k, state):
            rng = stream(cfg.master_seed, _GRAD_KEY)
            return {"grad_norm_estimate": smoothed_grad_norm_mc(fbar, state.x_bar(), plan.eta,
                                                                plan.grad_samples, rng)}
        hooks.append(grad_norm)
    return hooks


def _single_run(plan: ExperimentPlan, w: MixingMatrix, seed: int, centralized: bool):
    problem = plan.build_problem()
    cfg = plan.run_config(seed, centralized=centralized)
    hooks = _metric_hooks(plan, problem, cfg, plan.m)
    return run(cfg, problem, w, hooks, plan.checkpoints())


def _task(args):
    plan, w, seed, centralized = args
    try:
        return _single_run(plan, w, seed, centralized), None
    except DivergenceError as err:
        return None, {"iteration": err.iteration, "message": str(err)}


def centralized_mixing() -> MixingMatrix:
    return MixingMatrix(w=np.ones((1, 1)), lambda_w=0.0)


def _run_tasks(tasks, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_task, tasks))
    return [_task(t) for t in tasks]


def run_experiment(plan: ExperimentPlan, *, jobs: int = 1, write: bool = True) -> ExperimentResult:
    """Every topology x sample path (plus the centralized baseline when
    ``plan.baseline``); the network is fixed per topology and the sample-path
    seeds are shared across topologies, so topologies are compared on common
    random numbers."""
    start = time.perf_counter()
    seeds = plan.path_seeds()
    mixing, lambdas, tasks, labels = {}, {}, [], []
    for ti, kind in enumerate(plan.topologies):
        g = build_topology(kind, plan.m, sparse_degree=plan.sparse_degree,
                           er_probability=plan.er_probability, rng_seed=plan.graph_seed(ti))
        mixing[kind] = metropolis_weights(g)
        lambdas[kind] = mixing[kind].lambda_w
        for r, s in enumerate(seeds):
            tasks.append((plan, mixing[kind], s, False))
            labels.append((kind, r))
    if plan.baseline:
        for r, s in enumerate(seeds):
            tasks.append((plan, centralized_mixing(), s, True))
            labels.append((CENTRALIZED, r))
        lambdas[CENTRALIZED] = 0.0
    outcomes = _run_tasks(tasks, jobs)
    trajectories = {name: [None] * plan.sample_paths for name, _ in labels}
    divergences = []
    for (name, r), (traj, err) in zip(labels, outcomes):
        trajectories[name][r] = traj
        if err is not None:
            log.warning("run %s/%d diverged: %s", name, r, err["message"])
            divergences.append({"topology": name, "run_index": r, **err})
    result = ExperimentResult(plan=plan, trajectories=trajectories, lambdas=lambdas,
                              divergences=divergences, wall_clock=time.perf_counter() - start)
    if write and plan.out_dir:
        write_outputs(result, seeds)
    return result


def centralized_baseline(plan: ExperimentPlan, *, write: bool = True) -> list:
    """The ``m = 1`` reduction with the same stepsizes and schedules and a
    minibatch of ``m * minibatch`` samples per iteration, one trajectory per
    sample path."""
    seeds = plan.path_seeds()
    start = time.perf_counter()
    outcomes = _run_tasks([(plan, centralized_mixing(), s, True) for s in seeds], 1)
    divergences = [{"topology": CENTRALIZED, "run_index": r, **e}
                   for r, (_, e) in enumerate(outcomes) if e is not None]
    result = ExperimentResult(plan=plan, trajectories={CENTRALIZED: [t for t, _ in outcomes]},
                              lambdas={CENTRALIZED: 0.0}, divergences=divergences,
                              wall_clock=time.perf_counter() - start)
    if write and plan.out_dir:
        write_outputs(result, seeds)
    return result.trajectories[CENTRALIZED]


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_outputs(result: ExperimentResult, seeds) -> None:
    plan = result.plan
    out = plan.out_dir
    os.makedirs(out, exist_ok=True)
    metrics = ["consensus_error", "objective"] + (["grad_norm"] if plan.grad_samples else [])
    for name, trajs in result.trajectories.items():
        d = os.path.join(out, name)
        os.makedirs(d, exist_ok=True)
        for metric in metrics:
            key = _RECORD_KEY[metric]
            with open(os.path.join(d, f"{metric}.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["k", "metric_value", "run_index"])
                for r, t in enumerate(trajs):
                    if t is None:
                        continue
                    for rec in t.records:
                        w.writerow([rec["k"], _fmt(rec[key]), r])
            ks, mean, se = result.mean_curve(name, metric)
            with open(os.path.join(d, f"{metric}_mean.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["k", "mean", "stderr"])
                for row in zip(ks, mean, se):
                    w.writerow([int(row[0]), _fmt(row[1]), _fmt(row[2])])
        for r, t in enumerate(trajs):
            if t is not None:
                with open(os.path.join(d, f"final_x_run{r}.txt"), "w") as fh:
                    dump_matrix(t.final_state.x, fh)
    manifest = {
        "plan": plan.to_dict(),
        "path_seeds": list(seeds),
        "checkpoints": plan.checkpoints(),
        "lambda_w": result.lambdas,
        "divergences": result.divergences,
        "wall_clock_seconds": result.wall_clock,
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
