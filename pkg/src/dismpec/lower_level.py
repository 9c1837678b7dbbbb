"""Lower-level variational inequality solvers.

``sa_solve`` is projected stochastic approximation with stepsize
``gamma_hat / (t + big_gamma_hat)`` for expectation-valued maps;
``det_solve`` is the constant-step projection method for a map whose random
sample is held fixed. Both accept batches: every array argument may carry
leading batch axes, and the trailing axis is the vector dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Any, Callable, Optional

import numpy as np

from .exceptions import ContractError, InfeasibleError


@dataclass(frozen=True)
class VIInstance:
    """A strongly monotone VI over a parametrized convex set.

    ``map_oracle(x, z, noise)`` and ``projector(x, z, xi)`` broadcast over
    leading axes. ``noise_sampler(rng, shape)`` draws the map noise; leave it
    ``None`` for deterministic maps.
    """

    dim_p: int
    map_oracle: Callable
    projector: Callable
    mu_f: float
    l_f: float
    diameter_bound: float
    nu_f: float = 0.0
    noise_sampler: Optional[Callable] = None
    # Optional (x, xi) -> (z -> projection) that precomputes the set once.
    projector_factory: Optional[Callable] = None

    def bound_projector(self, x_hat, xi=None):
        if self.projector_factory is not None:
            return self.projector_factory(x_hat, xi)
        return lambda z: self.projector(x_hat, z, xi)

    def __post_init__(self):
        if self.mu_f <= 0:
            raise ContractError("mu_f must be positive")
        if self.l_f < self.mu_f:
            raise ContractError("l_f must be >= mu_f")
        if self.diameter_bound <= 0:
            raise ContractError("diameter_bound must be positive")


@dataclass(frozen=True)
class SaSchedule:
    gamma_hat: float
    big_gamma_hat: float
    a: float = 1.0

    def validate(self, mu_f: float, l_f: float) -> "SaSchedule":
        if not self.gamma_hat > 1.0 / mu_f:
            raise ContractError(f"gamma_hat={self.gamma_hat} must exceed 1/mu_F={1.0 / mu_f}")
        bound = self.gamma_hat * l_f ** 2 / mu_f
        if not self.big_gamma_hat > bound:
            raise ContractError(f"big_gamma_hat={self.big_gamma_hat} must exceed {bound}")
        if not self.a > 0.5:
            raise ContractError(f"schedule exponent a={self.a} must exceed 0.5")
        return self

    @classmethod
    def default_for(cls, mu_f: float, l_f: float, a: float = 1.0) -> "SaSchedule":
        gamma_hat = 2.0 / mu_f
        return cls(gamma_hat=gamma_hat, big_gamma_hat=2.0 * gamma_hat * l_f ** 2 / mu_f, a=a)


@dataclass
class LowerSolveResult:
    z: np.ndarray
    iterations: int
    schedule_epsilon: float
    path: Optional[list] = None


def sa_error_bound(nu_f, mu_f, gamma_hat, big_gamma_hat, diameter, t) -> float:
    """Mean-squared error bound of projected SA after ``t`` steps; infinite
    when ``mu_f * gamma_hat <= 1`` (the bound needs a larger initial step)."""
    if mu_f * gamma_hat <= 1.0:
        return math.inf
    c = max(nu_f ** 2 * gamma_hat / (mu_f * gamma_hat - 1.0), big_gamma_hat * diameter)
    return c / (t + big_gamma_hat)


def det_error_bound(mu_f, gamma_hat, diameter, t) -> float:
    return (1.0 - mu_f * gamma_hat) ** t * diameter


def _check_steps(t_k):
    if int(t_k) != t_k or t_k < 1:
        raise ContractError(f"iteration count must be a positive integer, got {t_k}")
    return int(t_k)


def sa_solve(vi: VIInstance, x_hat, z0, schedule: SaSchedule, t_k: int,
             noise_stream: np.random.Generator | None = None, *, minibatch: int = 1,
             noise: Any = None, keep_path: bool = False) -> LowerSolveResult:
    """Run ``t_k`` projected stochastic-approximation steps from ``z0``.

    One noise draw per step (``minibatch`` draws averaged when > 1). Noise can
    be passed pre-sampled with shape ``(t_k, minibatch) + batch_shape``.
    """
    t_k = _check_steps(t_k)
    x_hat = np.asarray(x_hat, dtype=float)
    z = np.array(z0, dtype=float)
    batch = z.shape[:-1]
    if noise is None and vi.noise_sampler is not None:
        noise = vi.noise_sampler(noise_stream, (t_k, minibatch) + batch)
    path = [z.copy()] if keep_path else None
    xb = x_hat[None]
    project = vi.bound_projector(x_hat)
    for t in range(t_k):
        step = schedule.gamma_hat / (t + schedule.big_gamma_hat)
        if noise is None:
            f = vi.map_oracle(x_hat, z, None)
        else:
            f = vi.map_oracle(xb, z[None], noise[t]).mean(axis=0)
        z = project(z - step * f)
        if keep_path:
            path.append(z.copy())
    eps = sa_error_bound(vi.nu_f, vi.mu_f, schedule.gamma_hat, schedule.big_gamma_hat,
                         vi.diameter_bound, t_k)
    return LowerSolveResult(z=z, iterations=t_k, schedule_epsilon=eps, path=path)


def max_det_stepsize(vi: VIInstance) -> float:
    return vi.mu_f / vi.l_f ** 2


def det_solve(vi: VIInstance, x_hat, xi, z0, gamma_hat: float, t_k: int, *,
              keep_path: bool = False) -> LowerSolveResult:
    """Constant-step projection method for the VI with the sample ``xi`` fixed."""
    t_k = _check_steps(t_k)
    if gamma_hat <= 0 or gamma_hat > max_det_stepsize(vi) * (1 + 1e-12):
        raise ContractError(f"gamma_hat={gamma_hat} must lie in (0, mu_F/L_F^2 = {max_det_stepsize(vi)}]")
    x_hat = np.asarray(x_hat, dtype=float)
    z = np.array(z0, dtype=float)
    path = [z.copy()] if keep_path else None
    project = vi.bound_projector(x_hat, xi)
    for _ in range(t_k):
        z = project(z - gamma_hat * vi.map_oracle(x_hat, z, xi))
        if keep_path:
            path.append(z.copy())
    eps = det_error_bound(vi.mu_f, gamma_hat, vi.diameter_bound, t_k)
    return LowerSolveResult(z=z, iterations=t_k, schedule_epsilon=eps, path=path)


def t_schedule_1s(k: int, n: int, eta: float, a: float = 1.0, big_gamma: float = 1.0) -> int:
    """``ceil(sqrt(n) (k + big_gamma)^a / eta^(2/3))``, at least 1.

    ``big_gamma = 1`` gives the form used in the single-stage experiment.
    """
    if eta <= 0:
        raise ContractError("eta must be positive")
    if a <= 0.5:
        raise ContractError(f"a must exceed 0.5, got {a}")
    return max(1, math.ceil(math.sqrt(n) * (k + big_gamma) ** a / eta ** (2.0 / 3.0)))


def t_schedule_2s(k: int, n: int, eta: float, a: float = 1.0, mu_f: float | None = None,
                  gamma_hat: float | None = None, form: str = "theorem") -> int:
    """Iteration count for the deterministic lower solver at upper step ``k``.

    ``form="theorem"``:
    ``ceil(-a / ln(1 - mu_f gamma_hat) * ln(n^(1/(2a)) (k+1) eta^(-2/(3a))))``.
    ``form="experiment"``: ``ceil(ln(sqrt(n) (k+1) eta^(-2/3)))``.
    Nonpositive logarithms are clamped to a single step.
    """
    if eta <= 0:
        raise ContractError("eta must be positive")
    if form == "experiment":
        val = math.log(math.sqrt(n) * (k + 1) * eta ** (-2.0 / 3.0))
    elif form == "theorem":
        if a <= 0.5:
            raise ContractError(f"a must exceed 0.5, got {a}")
        if mu_f is None or gamma_hat is None:
            raise ContractError("theorem form needs mu_f and gamma_hat")
        rate = mu_f * gamma_hat
        if not 0.0 < rate < 1.0:
            raise ContractError(f"mu_F * gamma_hat = {rate} must lie in (0, 1)")
        inner = n ** (1.0 / (2.0 * a)) * (k + 1) * eta ** (-2.0 / (3.0 * a))
        val = -a / math.log(1.0 - rate) * math.log(inner)
    else:
        raise ContractError(f"unknown schedule form {form!r}")
    if val <= 0:
        return 1
    return max(1, math.ceil(val))


class Polyhedron:
    """``{z : A z >= b, z >= 0 if nonneg}`` with exact projection by active-set
    enumeration. ``A`` is fixed; ``b`` may vary per projected point.

    Only meant for small ``p``: every linearly independent subset of at most
    ``p`` constraint rows is a candidate face, and the candidate point and
    multipliers of each face are linear in ``(y, b)``, so all faces are
    evaluated with two matrix products.
    """

    def __init__(self, A, nonneg: bool = True):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.A = A
        self.q, self.p = A.shape
        self.nonneg = nonneg
        self.G = np.vstack([A, np.eye(self.p)]) if nonneg else A
        r, p = self.G.shape
        faces = []
        for size in range(0, min(p, r) + 1):
            for s in combinations(range(r), size):
                if size and np.linalg.matrix_rank(self.G[list(s)]) < size:
                    continue
                faces.append(list(s))
        self.faces = faces
        nf = len(faces)
        # Row form per face: z = y zy + rhs zb, lam = y ly + rhs lb (lam padded to r).
        zy = np.zeros((nf, p, p))
        zb = np.zeros((nf, r, p))
        ly = np.zeros((nf, p, r))
        lb = np.zeros((nf, r, r))
        for f, s in enumerate(faces):
            zy[f] = np.eye(p)
            if not s:
                continue
            gs = self.G[s]
            inv_t = np.linalg.inv(gs @ gs.T).T
            ly[f][:, s] = -gs.T @ inv_t
            lb[f][np.ix_(s, s)] = inv_t
            zy[f] += ly[f][:, s] @ gs
            zb[f][s] = inv_t @ gs
        # Column form stacked as (component, face) rows, applied to y^T and rhs^T.
        g = self.G
        self._z_y = zy.transpose(2, 0, 1).reshape(p * nf, p)
        self._z_b = zb.transpose(2, 0, 1).reshape(p * nf, r)
        slack_y = np.einsum("jo,fio->jfi", g, zy)
        slack_b = np.einsum("jo,fio->jfi", g, zb) - np.eye(r)[:, None, :]
        self._c_y = np.concatenate([slack_y, ly.transpose(2, 0, 1)]).reshape(2 * r * nf, p)
        self._c_b = np.concatenate([slack_b, lb.transpose(2, 0, 1)]).reshape(2 * r * nf, r)

    def _rhs(self, b, batch_shape):
        b = np.broadcast_to(np.asarray(b, dtype=float), batch_shape + (self.q,))
        if self.nonneg:
            b = np.concatenate([b, np.zeros(batch_shape + (self.p,))], axis=-1)
        return b

    def project(self, y, b, *, tol: float = 1e-9, return_multipliers: bool = False):
        y = np.asarray(y, dtype=float)
        batch = y.shape[:-1]
        r, p, nf = self.G.shape[0], self.p, len(self.faces)
        yt = y.reshape(-1, p).T
        rt = self._rhs(b, batch).reshape(-1, r).T
        n = yt.shape[1]
        z = (self._z_y @ yt + self._z_b @ rt).reshape(p, nf, n)
        checks = (self._c_y @ yt + self._c_b @ rt).reshape(2 * r, nf, n)
        scale = 1.0 + np.abs(rt).max(axis=0)
        feas = (checks[:r] >= -tol * scale).all(axis=0)
        valid = feas & (checks[r:] >= -tol).all(axis=0)
        dist = ((z - yt[:, None, :]) ** 2).sum(axis=0)
        # Feasible-only fallback covers rounding at degenerate vertices.
        has_valid = valid.any(axis=0)
        use = np.where(has_valid, valid, feas)
        if not use.any(axis=0).all():
            raise InfeasibleError("polyhedron is empty: no feasible active-set candidate")
        pick = np.where(use, dist, np.inf).argmin(axis=0)
        cols = np.arange(n)
        out = z[:, pick, cols].T.reshape(batch + (p,))
        if return_multipliers:
            lam = checks[r:][:, pick, cols].T
            return out, np.maximum(lam, 0.0).reshape(batch + (r,))
        return out

    def contains(self, z, b, tol: float = 1e-9) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        rhs = self._rhs(b, z.shape[:-1])
        return (z @ self.G.T >= rhs - tol * (1.0 + np.abs(rhs))).all(axis=-1)


def project_polyhedron(point, A, b, nonneg: bool = True):
    """Euclidean projection of ``point`` onto ``{z : A z >= b, z >= 0}``."""
    return Polyhedron(A, nonneg=nonneg).project(point, b)


def project_orthant(z):
    return np.maximum(z, 0.0)
