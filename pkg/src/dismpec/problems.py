"""Problem instances: upper objective, lower VI map, parametrized feasible set
and samplers, all vectorized over leading axes (trailing axis = dimension)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .lower_level import (Polyhedron, SaSchedule, VIInstance, det_solve,
                          max_det_stepsize, project_orthant, sa_solve)

SINGLE_STAGE = "single_stage"
TWO_STAGE = "two_stage"

# Squared-diameter placeholder for unbounded feasible sets; it only feeds the
# logged inexactness level, never the iterations.
NOMINAL_DIAMETER = 100.0


def _stack(*cols):
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def _zeros(rng, shape):
    return np.zeros(shape)


@dataclass(frozen=True)
class SingleStageProblem:
    """Lower level is ``SOL(Z(x), E[F(x, ., zeta)])``; the upper sample ``xi``
    and the lower noise ``zeta`` are drawn independently."""

    name: str
    n: int
    p: int
    h_tilde: Callable
    f_map: Callable
    projector: Callable
    xi_sampler: Callable
    noise_sampler: Optional[Callable]
    exact_z: Optional[Callable]
    mu_f: float
    l_f: float
    nu_f: float
    d_i: float = NOMINAL_DIAMETER
    x0: tuple = ()
    projector_factory: Optional[Callable] = None
    info: dict = field(default_factory=dict)
    stage: str = field(default=SINGLE_STAGE, init=False)

    def lower_vi(self) -> VIInstance:
        proj = self.projector
        factory = self.projector_factory
        return VIInstance(dim_p=self.p, map_oracle=self.f_map,
                          projector=lambda x, z, xi: proj(x, z),
                          mu_f=self.mu_f, l_f=self.l_f, diameter_bound=self.d_i,
                          nu_f=self.nu_f, noise_sampler=self.noise_sampler,
                          projector_factory=None if factory is None else (lambda x, xi: factory(x)))

    def random_start(self, x, normals):
        return self.projector(x, normals)

    def default_schedule(self, a: float = 1.0) -> SaSchedule:
        return SaSchedule.default_for(self.mu_f, self.l_f, a=a)

    def solve_lower(self, x, rng, iters, *, schedule=None, minibatch=1, exact=False, xi=None):
        x = np.asarray(x, dtype=float)
        if exact and self.exact_z is not None:
            return self.exact_z(x)
        z0 = self.random_start(x, rng.standard_normal(x.shape[:-1] + (self.p,)))
        schedule = schedule or self.default_schedule()
        return sa_solve(self.lower_vi(), x, z0, schedule, iters, rng, minibatch=minibatch).z


@dataclass(frozen=True)
class TwoStageProblem:
    """Lower level is ``SOL(Z(x, xi), F(x, ., xi))`` for each scenario ``xi``,
    which is shared with the upper objective."""

    name: str
    n: int
    p: int
    h_tilde: Callable
    f_map: Callable
    projector: Callable
    xi_sampler: Callable
    exact_z: Optional[Callable]
    mu_f: float
    l_f: float
    nu_f: float = 0.0
    d_i: float = NOMINAL_DIAMETER
    x0: tuple = ()
    leader_box: Optional[tuple] = None
    info: dict = field(default_factory=dict)
    stage: str = field(default=TWO_STAGE, init=False)

    def lower_vi(self) -> VIInstance:
        proj = self.projector
        return VIInstance(dim_p=self.p, map_oracle=self.f_map,
                          projector=lambda x, z, xi: proj(x, xi, z),
                          mu_f=self.mu_f, l_f=self.l_f, diameter_bound=self.d_i)

    def random_start(self, x, xi, normals):
        return self.projector(x, xi, normals)

    def default_gamma_hat(self) -> float:
        return max_det_stepsize(self.lower_vi())

    def solve_lower(self, x, rng, iters, *, xi, gamma_hat=None, exact=False, **_):
        x = np.asarray(x, dtype=float)
        if exact and self.exact_z is not None:
            return self.exact_z(x, xi)
        z0 = self.random_start(x, xi, rng.standard_normal(x.shape[:-1] + (self.p,)))
        gamma_hat = gamma_hat or self.default_gamma_hat()
        return det_solve(self.lower_vi(), x, xi, z0, gamma_hat, iters).z


def toy_mpec() -> SingleStageProblem:
    """``min_x (x + 1 - z(x))^2`` with ``z(x) = argmin_{z >= 0} |z - x|^2 / 2``,
    whose implicit objective ``(x + 1 - max(0, x))^2`` is nonsmooth and
    nonconvex."""

    def h_tilde(x, z, xi):
        return (x[..., 0] + 1.0 - z[..., 0]) ** 2

    def f_map(x, z, noise):
        return z - x

    def projector(x, z):
        return project_orthant(z)

    def exact_z(x):
        return np.maximum(np.asarray(x, dtype=float), 0.0)

    return SingleStageProblem(
        name="toy", n=1, p=1, h_tilde=h_tilde, f_map=f_map, projector=projector,
        xi_sampler=_zeros, noise_sampler=None, exact_z=exact_z,
        mu_f=1.0, l_f=1.0, nu_f=0.0, x0=(-3.0,))


def toy_implicit(x):
    x = np.asarray(x, dtype=float)
    return (x + 1.0 - np.maximum(0.0, x)) ** 2


BILEVEL_A = np.array([[-2.0, 1.0], [3.0, -1.0]])


def bilevel_rhs(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return _stack(-3.0 - x1 ** 2 + 2.0 * x1 - x2 ** 2, 4.0 - x2)


def bilevel_benchmark(xi_range=(5.0, 8.0), zeta_range=(3.0, 6.0)) -> SingleStageProblem:
    """Quadratic bilevel program whose lower-level polyhedron moves with ``x``.

    Upper: ``-x1^2 - 3 x2 - xi y1 + y2^2``. Lower: ``min_{y >= 0}
    E[2 x1^2 + y1^2 + y2^2 - zeta y2]`` subject to
    ``-2 y1 + y2 >= -3 - x1^2 + 2 x1 - x2^2`` and ``3 y1 - y2 >= 4 - x2``.
    """
    poly = Polyhedron(BILEVEL_A, nonneg=True)
    xi_lo, xi_hi = sorted(xi_range)
    ze_lo, ze_hi = sorted(zeta_range)
    zeta_mean = 0.5 * (ze_lo + ze_hi)

    def h_tilde(x, y, xi):
        return -x[..., 0] ** 2 - 3.0 * x[..., 1] - xi * y[..., 0] + y[..., 1] ** 2

    def f_map(x, y, zeta):
        if zeta is None:
            zeta = zeta_mean
        return _stack(2.0 * y[..., 0], 2.0 * y[..., 1] - zeta)

    def projector(x, y):
        return poly.project(y, bilevel_rhs(x))

    def projector_factory(x):
        rhs = bilevel_rhs(x)
        return lambda y: poly.project(y, rhs)

    def exact_z(x):
        # The expected lower objective is ||y - (0, E[zeta]/2)||^2 up to constants.
        x = np.asarray(x, dtype=float)
        target = np.broadcast_to(np.array([0.0, zeta_mean / 2.0]), x.shape[:-1] + (2,))
        return poly.project(target, bilevel_rhs(x))

    def xi_sampler(rng, shape):
        return rng.uniform(xi_lo, xi_hi, size=shape)

    def noise_sampler(rng, shape):
        return rng.uniform(ze_lo, ze_hi, size=shape)

    return SingleStageProblem(
        name="bilevel", n=2, p=2, h_tilde=h_tilde, f_map=f_map, projector=projector,
        xi_sampler=xi_sampler, noise_sampler=noise_sampler, exact_z=exact_z,
        mu_f=2.0, l_f=2.0, nu_f=(ze_hi - ze_lo) / np.sqrt(12.0), x0=(0.0, 0.0),
        projector_factory=projector_factory, info={"polyhedron": poly})


def cournot_game(num_followers: int = 20, include_leader_shift: bool = True, *,
                 b: float = 0.1, d: float = 0.2, x_u: float = 10.0, c=None,
                 c_range=(0.05, 0.5), c_seed: int = 0,
                 xi_range=(7.5, 12.5)) -> TwoStageProblem:
    """Stackelberg leader facing ``num_followers`` Cournot firms.

    Inverse demand ``a(xi) - b * total``, follower costs ``c_j z_j^2 / 2``,
    leader cost ``d x^2 / 2``. Follower ``j``'s map component is
    ``(c_j + b) z_j - a(xi) + b sum_l z_l + b x`` (the ``b x`` term is dropped
    when ``include_leader_shift`` is false).
    """
    p = int(num_followers)
    if p < 1:
        raise ValueError("need at least one follower")
    if c is None:
        c = np.random.default_rng(c_seed).uniform(*c_range, size=p)
    c = np.asarray(c, dtype=float)
    if c.shape != (p,):
        raise ValueError(f"expected {p} follower cost coefficients, got shape {c.shape}")
    shift = 1.0 if include_leader_shift else 0.0
    mat = np.diag(c + b) + b * np.ones((p, p))
    unit_response = np.linalg.solve(mat, np.ones(p))
    xi_lo, xi_hi = sorted(xi_range)
    mu_f = float(c.min() + b)
    l_f = float(c.max() + b + b * p)

    def intercept(x, xi):
        return xi - b * shift * x[..., 0]

    def h_tilde(x, z, xi):
        x0 = x[..., 0]
        return 0.5 * d * x0 ** 2 - x0 * (xi - b * (x0 + z.sum(axis=-1)))

    def f_map(x, z, xi):
        return (c + b) * z + b * z.sum(axis=-1, keepdims=True) - intercept(x, xi)[..., None]

    def projector(x, xi, z):
        return project_orthant(z)

    problem = None

    def exact_z(x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        q = intercept(x, xi)
        z = q[..., None] * unit_response
        bad = (z < 0).any(axis=-1)
        if bad.any():
            xb = np.broadcast_to(x, q.shape + (1,))[bad]
            xib = np.broadcast_to(xi, q.shape)[bad]
            z = z.copy()
            z[bad] = det_solve(problem.lower_vi(), xb, xib, np.zeros((xb.shape[0], p)),
                               problem.default_gamma_hat(), 10_000).z
        return z

    def xi_sampler(rng, shape):
        return rng.uniform(xi_lo, xi_hi, size=shape)

    problem = TwoStageProblem(
        name="cournot", n=1, p=p, h_tilde=h_tilde, f_map=f_map, projector=projector,
        xi_sampler=xi_sampler, exact_z=exact_z, mu_f=mu_f, l_f=l_f,
        x0=(1.0,), leader_box=(0.0, x_u),
        info={"c": c, "b": b, "d": d, "x_u": x_u, "include_leader_shift": include_leader_shift})
    return problem


def make_problem(name: str, **params):
    if name == "toy":
        return toy_mpec()
    if name == "bilevel":
        return bilevel_benchmark()
    if name == "cournot":
        return cournot_game(
            num_followers=params.get("p_followers", 20),
            include_leader_shift=params.get("include_leader_shift", True),
            d=params.get("d", 0.2), x_u=params.get("x_u", 10.0))
    raise ValueError(f"unknown problem {name!r}; expected toy, bilevel or cournot")


def estimate_implicit_objective(problem, x_bar, lower_iters: int, eval_samples: int, rng, *,
                                num_agents: int = 1, exact: bool = False, schedule=None,
                                gamma_hat=None, lower_minibatch: int = 1,
                                return_se: bool = False):
    """Monte Carlo estimate of ``f(x_bar) = (1/m) sum_i E[h_i(x_bar, z_i, xi_i)]``.

    Every sample gets its own lower-level solve at ``x_bar`` (``lower_iters``
    solver steps from a random feasible start, or the closed form when
    ``exact``); ``num_agents * eval_samples`` samples in total.
    """
    if lower_iters < 1:
        raise ValueError("lower_iters must be >= 1")
    x_bar = np.atleast_1d(np.asarray(x_bar, dtype=float))
    total = num_agents * eval_samples
    xs = np.broadcast_to(x_bar, (total, problem.n))
    xi = problem.xi_sampler(rng, (total,))
    if problem.stage == SINGLE_STAGE:
        z = problem.solve_lower(xs, rng, lower_iters, schedule=schedule,
                                minibatch=lower_minibatch, exact=exact)
    else:
        z = problem.solve_lower(xs, rng, lower_iters, xi=xi, gamma_hat=gamma_hat, exact=exact)
    vals = problem.h_tilde(xs, z, xi)
    mean = float(vals.mean())
    if return_se:
        se = float(vals.std(ddof=1) / np.sqrt(total)) if total > 1 else float("inf")
        return mean, se
    return mean
