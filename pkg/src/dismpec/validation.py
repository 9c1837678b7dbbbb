"""Quick self-check of the structural invariants (used by ``dismpec validate``)."""
from __future__ import annotations

import numpy as np

from .lower_level import Polyhedron, det_solve
from .network import TOPOLOGIES, build_topology, check_doubly_stochastic, metropolis_weights
from .problems import BILEVEL_A, bilevel_rhs, cournot_game, toy_mpec
from .smoothing import sample_unit_sphere, stream, zo_gradients
from .tracking import RunConfig, run


def _check_mixing(seed):
    worst = 0.0
    for i, kind in enumerate(TOPOLOGIES):
        w = metropolis_weights(build_topology(kind, 20, rng_seed=seed + i))
        check_doubly_stochastic(w.w)
        if not np.allclose(w.w, w.w.T) or not 0.0 <= w.lambda_w < 1.0:
            return False, f"{kind}: symmetric={np.allclose(w.w, w.w.T)} lambda={w.lambda_w}"
        worst = max(worst, w.lambda_w)
    return True, f"largest lambda_W {worst:.6f}"


def _check_zo_linear(seed):
    # For linear h the central difference is exact and E[n (a.v) v] = a.
    rng = stream(seed, 7)
    n, samples, eta = 4, 200_000, 0.3
    a = rng.normal(size=n)
    v = sample_unit_sphere(rng, n, samples)
    g = zo_gradients((v * eta) @ a, -(v * eta) @ a, v, eta)
    err = np.abs(g.mean(axis=0) - a).max()
    se = g.std(axis=0).max() / np.sqrt(samples)
    return bool(err < 5 * se), f"max error {err:.2e} vs 5 se {5 * se:.2e}"


def _check_projection(seed):
    rng = stream(seed, 8)
    poly = Polyhedron(BILEVEL_A)
    worst = -np.inf
    for _ in range(200):
        x = rng.uniform(-1, 1, size=2)
        b = bilevel_rhs(x)
        y = rng.normal(scale=3.0, size=2)
        p = poly.project(y, b)
        if not poly.contains(p, b):
            return False, f"projection of {y} left the set"
        z = rng.uniform(0, 10, size=(200, 2))
        z = z[poly.contains(z, b)]
        if len(z):
            worst = max(worst, float(((y - p) * (z - p)).sum(axis=1).max()))
    return bool(worst <= 1e-8), f"largest <y - P(y), z - P(y)> = {worst:.2e}"


def _check_contraction(seed):
    prob = cournot_game()
    vi = prob.lower_vi()
    rng = stream(seed, 9)
    xi = prob.xi_sampler(rng, ())
    x = np.array([1.0])
    z_star = prob.exact_z(x, xi)
    res = det_solve(vi, x, xi, np.zeros(prob.p), prob.default_gamma_hat(), 50, keep_path=True)
    errs = np.linalg.norm(res.path - z_star, axis=-1)
    ratios = errs[1:] / np.maximum(errs[:-1], 1e-300)
    bound = 1 - vi.mu_f * prob.default_gamma_hat()
    ok = bool(np.all(ratios[errs[:-1] > 1e-12] <= bound + 1e-9))
    return ok, f"largest step ratio {ratios.max():.6f} vs {bound:.6f}"


def _check_identities(seed):
    prob = cournot_game()
    w = metropolis_weights(build_topology("ring", 6, rng_seed=seed))
    cfg = RunConfig(mode=prob.stage, horizon_k=20, minibatch=2, check_identities=True,
                    init="random", master_seed=seed)
    run(cfg, prob, w)
    return True, "mean tracker and mean iterate identities hold for 20 steps"


def _check_toy(seed):
    prob = toy_mpec()
    w = metropolis_weights(build_topology("complete", 5))
    cfg = RunConfig(mode=prob.stage, oracle="exact", gamma=0.05, eta=0.01, horizon_k=400,
                    master_seed=seed)
    xbar = run(cfg, prob, w, checkpoints=[]).final_state.x_bar()[0]
    return bool(abs(xbar + 1.0) < 1e-2), f"toy mean iterate {xbar:.6f} (target -1)"


CHECKS = {
    "mixing_matrices": _check_mixing,
    "zo_estimator_linear": _check_zo_linear,
    "polyhedral_projection": _check_projection,
    "det_solver_contraction": _check_contraction,
    "averaging_identities": _check_identities,
    "toy_convergence": _check_toy,
}


def validate_invariants(seed: int = 0) -> list:
    """``[(name, ok, detail), ...]``; exceptions count as failures."""
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn(seed)
        except Exception as err:  # report, don't crash the suite
            ok, detail = False, f"{type(err).__name__}: {err}"
        out.append((name, ok, detail))
    return out
