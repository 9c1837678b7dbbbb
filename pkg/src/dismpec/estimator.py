"""scikit-learn style wrapper around a single tracking run.

There is no data matrix here: the "data" is the problem instance, so ``fit``
takes an optional problem object and mixing matrix instead of ``X, y``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .network import MixingMatrix, build_topology, metropolis_weights
from .problems import make_problem
from .tracking import LowerSchedule, RunConfig, run


class DistributedZOTracker(BaseEstimator):
    def __init__(self, problem="toy", topology="ring", m=20, gamma=1e-4, eta=0.1, horizon_k=100,
                 minibatch=1, lower_minibatch=1, oracle="inexact", schedule_a=1.0,
                 schedule_form="experiment", x0=None, init="common", checkpoints=None,
                 random_state=0):
        self.problem = problem
        self.topology = topology
        self.m = m
        self.gamma = gamma
        self.eta = eta
        self.horizon_k = horizon_k
        self.minibatch = minibatch
        self.lower_minibatch = lower_minibatch
        self.oracle = oracle
        self.schedule_a = schedule_a
        self.schedule_form = schedule_form
        self.x0 = x0
        self.init = init
        self.checkpoints = checkpoints
        self.random_state = random_state

    def _problem(self, problem):
        if problem is not None:
            return problem
        return make_problem(self.problem) if isinstance(self.problem, str) else self.problem

    def fit(self, problem=None, w: MixingMatrix | None = None, callbacks=()):
        prob = self._problem(problem)
        if w is None:
            w = metropolis_weights(build_topology(self.topology, self.m, rng_seed=self.random_state))
        cfg = RunConfig(mode=prob.stage, oracle=self.oracle, gamma=self.gamma, eta=self.eta,
                        horizon_k=self.horizon_k, minibatch=self.minibatch,
                        lower_minibatch=self.lower_minibatch,
                        schedule=LowerSchedule(a=self.schedule_a, form=self.schedule_form),
                        x0=None if self.x0 is None else tuple(np.atleast_1d(self.x0)),
                        init=self.init, master_seed=self.random_state)
        self.problem_ = prob
        self.mixing_ = w
        self.trajectory_ = run(cfg, prob, w, callbacks, self.checkpoints)
        self.x_ = self.trajectory_.final_state.x
        self.x_bar_ = self.x_.mean(axis=0)
        self.n_iter_ = self.trajectory_.final_state.iteration
        return self
