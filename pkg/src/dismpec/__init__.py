"""Distributed zeroth-order gradient tracking for stochastic MPECs."""
from .estimator import DistributedZOTracker
from .exceptions import (ConfigError, ContractError, DivergenceError, GraphConstructionError,
                         InfeasibleError, NumericalError)
from .harness import ExperimentPlan, centralized_baseline, load_plan, run_experiment
from .network import Graph, MixingMatrix, build_topology, metropolis_weights, spectral_gap
from .problems import bilevel_benchmark, cournot_game, make_problem, toy_mpec
from .tracking import LowerSchedule, RunConfig, consensus_error, run

__version__ = "0.1.0"
