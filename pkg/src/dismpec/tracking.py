"""Distributed zeroth-order gradient tracking over a static network.

Per upper iteration every agent draws a sphere direction and a sample, gets
the lower-level solution at ``x_i +/- eta v`` (closed form or a few solver
steps), forms the central-difference gradient of its smoothed implicit
objective and then runs the tracking and consensus updates::

    y <- W (y + g - g_prev)
    x <- W (x - gamma y)

All agents are processed as stacked arrays; randomness comes from
per-(agent, iteration, purpose) streams so the result does not depend on the
order in which agents are visited.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import ContractError, DivergenceError
from .lower_level import SaSchedule, det_solve, sa_solve, t_schedule_1s, t_schedule_2s
from .network import MixingMatrix, mix
from .problems import SINGLE_STAGE, TWO_STAGE
from .smoothing import (DIRECTION, LOWER_MINUS, LOWER_PLUS, LOWER_START, UPPER_SAMPLE,
                        sample_unit_sphere, stream, zo_gradients)

IDENTITY_TOL = 1e-10


@dataclass(frozen=True)
class LowerSchedule:
    """Lower-level solver settings.

    ``form="experiment"`` uses ``(k + 1)`` in the single-stage count and the
    plain ``ceil(ln(...))`` two-stage count; ``form="theorem"`` uses
    ``(k + big_gamma_hat)`` and the rate-scaled two-stage count.
    ``fixed_iters`` overrides both.
    """

    a: float = 1.0
    gamma_hat: Optional[float] = None
    big_gamma_hat: Optional[float] = None
    form: str = "experiment"
    fixed_iters: Optional[int] = None


@dataclass(frozen=True)
class RunConfig:
    mode: str = SINGLE_STAGE
    oracle: str = "inexact"
    gamma: float = 1e-4
    eta: float = 0.1
    horizon_k: int = 100
    minibatch: int = 1
    lower_minibatch: int = 1
    schedule: LowerSchedule = field(default_factory=LowerSchedule)
    x0: Optional[tuple] = None
    init: str = "common"
    init_scale: float = 1.0
    leader_box: Optional[tuple] = None
    warm_start: bool = False
    check_identities: bool = False
    master_seed: int = 0

    def __post_init__(self):
        if self.mode not in (SINGLE_STAGE, TWO_STAGE):
            raise ContractError(f"mode must be {SINGLE_STAGE!r} or {TWO_STAGE!r}, got {self.mode!r}")
        if self.oracle not in ("exact", "inexact"):
            raise ContractError(f"oracle must be 'exact' or 'inexact', got {self.oracle!r}")
        if self.init not in ("common", "random"):
            raise ContractError(f"init must be 'common' or 'random', got {self.init!r}")
        if not self.gamma > 0:
            raise ContractError("gamma must be positive")
        if not self.eta > 0:
            raise ContractError("eta must be positive")
        if self.horizon_k < 0:
            raise ContractError("horizon_k must be nonnegative")
        if self.minibatch < 1 or self.lower_minibatch < 1:
            raise ContractError("minibatch sizes must be >= 1")


@dataclass(frozen=True)
class AgentState:
    x: np.ndarray
    y: np.ndarray
    g_prev: np.ndarray


@dataclass
class SwarmState:
    """Stacked agent states; row ``i`` of each array belongs to agent ``i``."""

    x: np.ndarray
    y: np.ndarray
    g_prev: np.ndarray
    iteration: int = 0
    # Last lower-level iterates, kept only for warm starts.
    z_cache: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.x.shape[0]

    @property
    def agents(self) -> list:
        return [AgentState(self.x[i], self.y[i], self.g_prev[i]) for i in range(self.m)]

    def x_bar(self) -> np.ndarray:
        return self.x.mean(axis=0)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.x).all() and np.isfinite(self.y).all()
                    and np.isfinite(self.g_prev).all())


def consensus_error(x) -> float:
    """``||x - 1 x_bar||_F^2``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return float(((x - x.mean(axis=0)) ** 2).sum())


def initial_state(cfg: RunConfig, problem, m: int) -> SwarmState:
    x0 = np.asarray(cfg.x0 if cfg.x0 is not None else problem.x0, dtype=float)
    if x0.shape != (problem.n,):
        raise ContractError(f"initial point must have {problem.n} entries, got {x0.shape}")
    x = np.tile(x0, (m, 1))
    if cfg.init == "random":
        rng = stream(cfg.master_seed, 0, 0, 99)
        x = x + cfg.init_scale * rng.standard_normal((m, problem.n))
    zeros = np.zeros((m, problem.n))
    return SwarmState(x=x, y=zeros.copy(), g_prev=zeros.copy(), iteration=0)


def lower_iterations(cfg: RunConfig, problem, k: int) -> int:
    s = cfg.schedule
    if s.fixed_iters is not None:
        return int(s.fixed_iters)
    if problem.stage == SINGLE_STAGE:
        offset = 1.0 if s.form == "experiment" else sa_schedule(cfg, problem).big_gamma_hat
        return t_schedule_1s(k, problem.n, cfg.eta, s.a, offset)
    return t_schedule_2s(k, problem.n, cfg.eta, s.a, problem.mu_f, det_gamma_hat(cfg, problem),
                         form=s.form)


def sa_schedule(cfg: RunConfig, problem) -> SaSchedule:
    s = cfg.schedule
    base = problem.default_schedule(a=s.a)
    sched = SaSchedule(gamma_hat=s.gamma_hat if s.gamma_hat is not None else base.gamma_hat,
                       big_gamma_hat=s.big_gamma_hat if s.big_gamma_hat is not None else base.big_gamma_hat,
                       a=s.a)
    return sched.validate(problem.mu_f, problem.l_f)


def det_gamma_hat(cfg: RunConfig, problem) -> float:
    if cfg.schedule.gamma_hat is not None:
        return cfg.schedule.gamma_hat
    return problem.default_gamma_hat()


def _check_compatible(state, w, problem, cfg):
    if cfg.mode != problem.stage:
        raise ContractError(f"run mode {cfg.mode!r} does not match problem {problem.name!r} ({problem.stage})")
    if w.m != state.m:
        raise ContractError(f"W is {w.m}x{w.m} but there are {state.m} agents")
    if state.x.shape[1] != problem.n:
        raise ContractError(f"state dimension {state.x.shape[1]} != problem dimension {problem.n}")


def _draw(cfg, problem, k, m, t_k, agent_order):
    """Per-agent draws stacked in agent-index order."""
    B, n, p = cfg.minibatch, problem.n, problem.p
    v = np.empty((m, B, n))
    xi = np.empty((m, B))
    starts = np.empty((2, m, B, p))
    noisy = (problem.stage == SINGLE_STAGE and cfg.oracle == "inexact"
             and problem.noise_sampler is not None)
    noise = np.empty((t_k, cfg.lower_minibatch, 2, m, B)) if noisy else None
    seed = cfg.master_seed
    for i in agent_order:
        v[i] = sample_unit_sphere(stream(seed, i, k, DIRECTION), n, B)
        xi[i] = problem.xi_sampler(stream(seed, i, k, UPPER_SAMPLE), (B,))
        starts[:, i] = stream(seed, i, k, LOWER_START).standard_normal((2, B, p))
        if noisy:
            for side, purpose in enumerate((LOWER_MINUS, LOWER_PLUS)):
                noise[:, :, side, i] = problem.noise_sampler(
                    stream(seed, i, k, purpose), (t_k, cfg.lower_minibatch, B))
    return v, xi, starts, noise


def _local_gradients(state, problem, cfg, agent_order):
    m, k = state.m, state.iteration
    exact = cfg.oracle == "exact"
    t_k = 0 if exact else lower_iterations(cfg, problem, k)
    v, xi, starts, noise = _draw(cfg, problem, k, m, t_k, agent_order)
    sign = np.array([-1.0, 1.0])[:, None, None, None]
    x_pm = state.x[None, :, None, :] + sign * cfg.eta * v[None]
    xi_pm = np.broadcast_to(xi, (2,) + xi.shape)
    z_cache = None
    if problem.stage == SINGLE_STAGE:
        if exact:
            z_pm = problem.exact_z(x_pm)
        else:
            z0 = state.z_cache if cfg.warm_start and state.z_cache is not None else starts
            z0 = problem.random_start(x_pm, z0)
            z_pm = sa_solve(problem.lower_vi(), x_pm, z0, sa_schedule(cfg, problem), t_k,
                            minibatch=cfg.lower_minibatch, noise=noise).z
            z_cache = z_pm
    else:
        if exact:
            z_pm = problem.exact_z(x_pm, xi_pm)
        else:
            z0 = state.z_cache if cfg.warm_start and state.z_cache is not None else starts
            z0 = problem.random_start(x_pm, xi_pm, z0)
            z_pm = det_solve(problem.lower_vi(), x_pm, xi_pm, z0,
                             det_gamma_hat(cfg, problem), t_k).z
            z_cache = z_pm
    h = problem.h_tilde(x_pm, z_pm, xi_pm)
    g = zo_gradients(h[1], h[0], v, cfg.eta).mean(axis=1)
    return g, z_cache


def step(state: SwarmState, w: MixingMatrix, problem, cfg: RunConfig,
         agent_order: Optional[Sequence[int]] = None) -> SwarmState:
    """One upper-level iteration of the mode matching ``problem``."""
    _check_compatible(state, w, problem, cfg)
    order = range(state.m) if agent_order is None else agent_order
    g, z_cache = _local_gradients(state, problem, cfg, order)
    y_new = mix(w, state.y + g - state.g_prev)
    x_new = mix(w, state.x - cfg.gamma * y_new)
    box = cfg.leader_box if problem.stage == TWO_STAGE else None
    if box is not None:
        x_new = np.clip(x_new, box[0], box[1])
    new = SwarmState(x=x_new, y=y_new, g_prev=g, iteration=state.iteration + 1, z_cache=z_cache)
    if not new.is_finite():
        raise DivergenceError(f"non-finite iterate at k={state.iteration}", state.iteration)
    if cfg.check_identities:
        check_averaging_identities(state, new, cfg.gamma, clipped=box is not None)
    return new


def step_single_stage(state, w, problem, cfg, agent_order=None):
    if problem.stage != SINGLE_STAGE:
        raise ContractError("step_single_stage needs a single-stage problem")
    return step(state, w, problem, cfg, agent_order)


def step_two_stage(state, w, problem, cfg, agent_order=None):
    if problem.stage != TWO_STAGE:
        raise ContractError("step_two_stage needs a two-stage problem")
    return step(state, w, problem, cfg, agent_order)


def check_averaging_identities(old: SwarmState, new: SwarmState, gamma: float,
                               clipped: bool = False) -> None:
    """Column stochasticity of ``W`` makes the tracker average equal the
    gradient average and moves the mean iterate by ``-gamma * y_bar``."""
    y_bar = new.y.mean(axis=0)
    gap = np.abs(y_bar - new.g_prev.mean(axis=0)).max()
    if gap > IDENTITY_TOL:
        raise AssertionError(f"tracker mean drifted from gradient mean by {gap:.3e} at k={old.iteration}")
    if not clipped:
        gap = np.abs(new.x_bar() - (old.x_bar() - gamma * y_bar)).max()
        if gap > IDENTITY_TOL:
            raise AssertionError(f"mean iterate identity off by {gap:.3e} at k={old.iteration}")


@dataclass
class Trajectory:
    records: list
    final_state: SwarmState
    seed: int
    states: dict = field(default_factory=dict)

    def column(self, key) -> np.ndarray:
        return np.array([r.get(key, np.nan) for r in self.records], dtype=float)

    @property
    def ks(self) -> np.ndarray:
        return np.array([r["k"] for r in self.records], dtype=int)


def checkpoint_grid(horizon_k: int, epochs: int) -> list:
    """``epochs`` evenly spaced iteration indices in ``[0, horizon_k]``."""
    if epochs < 1:
        raise ContractError("epochs must be >= 1")
    return sorted({int(round(v)) for v in np.linspace(0, horizon_k, epochs)})


def run(cfg: RunConfig, problem, w: MixingMatrix, callbacks: Sequence[Callable] = (),
        checkpoints: Optional[Sequence[int]] = None, *, agent_order=None,
        keep_states: bool = False) -> Trajectory:
    """Run ``cfg.horizon_k`` iterations and record metrics at ``checkpoints``
    (every iteration by default). Each callback gets ``(k, state)`` and returns
    a dict merged into that checkpoint's record."""
    state = initial_state(cfg, problem, w.m)
    marks = set(range(cfg.horizon_k + 1) if checkpoints is None else checkpoints)
    traj = Trajectory(records=[], final_state=state, seed=cfg.master_seed)

    def record(s):
        rec = {"k": s.iteration, "consensus_error": consensus_error(s.x),
               "tracker_norm": float(np.linalg.norm(s.y))}
        for cb in callbacks:
            rec.update(cb(s.iteration, s))
        traj.records.append(rec)
        if keep_states:
            traj.states[s.iteration] = s.x.copy()

    if 0 in marks:
        record(state)
    for _ in range(cfg.horizon_k):
        try:
            state = step(state, w, problem, cfg, agent_order)
        except DivergenceError as err:
            err.trajectory = traj
            raise
        if state.iteration in marks:
            record(state)
    traj.final_state = state
    return traj


def theoretical_stepsize(lambda_w: float, n: int, eta: float, l0: float, k_horizon: int) -> float:
    """``min(eta^(2/3) / (sqrt(n^(3/2) K) L0^(3/2)), cap * eta / (sqrt(n) L0))``
    where ``cap`` is the smallest of the five network-dependent terms."""
    if not 0.0 <= lambda_w < 1.0:
        raise ContractError(f"lambda_w must lie in [0, 1), got {lambda_w}")
    if min(n, eta, l0, k_horizon) <= 0:
        raise ContractError("n, eta, l0 and k_horizon must be positive")
    lam2 = lambda_w ** 2
    gap = 1.0 - lam2

    def ratio(num, den):
        return math.inf if den == 0 else num / den

    cap = min(ratio(math.sqrt(gap), 10.0 * math.sqrt(3.0) * lam2),
              ratio(gap, 20.0 * lambda_w ** 3),
              ratio(gap ** 2, 20.0 * lam2),
              1.0 / 6.0,
              ratio(gap, 9.0 * lambda_w))
    formula = eta ** (2.0 / 3.0) / (math.sqrt(n ** 1.5 * k_horizon) * l0 ** 1.5)
    return min(formula, cap * eta / (math.sqrt(n) * l0))


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, master_seed=int(seed))
