import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dismpec.exceptions import ContractError, InfeasibleError
from dismpec.lower_level import (Polyhedron, SaSchedule, VIInstance, det_error_bound, det_solve,
                                 project_orthant, project_polyhedron, sa_error_bound, sa_solve,
                                 t_schedule_1s, t_schedule_2s)
from dismpec.problems import cournot_game


def scalar_vi(slope, offset, lo=-np.inf, hi=np.inf, noise=None, nu=0.0, d=1.0):
    """F(z) = slope z - offset - noise on [lo, hi]."""
    def fmap(x, z, xi):
        if xi is None:
            return slope * z - offset
        return slope * z - np.asarray(xi)[..., None]
    return VIInstance(dim_p=1, map_oracle=fmap, projector=lambda x, z, xi: np.clip(z, lo, hi),
                      mu_f=slope, l_f=slope, diameter_bound=d, nu_f=nu, noise_sampler=noise)


def test_vi_instance_validation():
    with pytest.raises(ContractError):
        scalar_vi(0.0, 0.0)
    with pytest.raises(ContractError):
        VIInstance(1, None, None, mu_f=2.0, l_f=1.0, diameter_bound=1.0)
    with pytest.raises(ContractError):
        VIInstance(1, None, None, mu_f=1.0, l_f=1.0, diameter_bound=0.0)


def test_sa_schedule_validation():
    SaSchedule(1.0, 3.0).validate(2.0, 2.0)
    with pytest.raises(ContractError):
        SaSchedule(0.5, 3.0).validate(2.0, 2.0)
    with pytest.raises(ContractError):
        SaSchedule(1.0, 2.0).validate(2.0, 2.0)
    with pytest.raises(ContractError):
        SaSchedule(1.0, 3.0, a=0.5).validate(2.0, 2.0)
    SaSchedule.default_for(2.0, 5.0).validate(2.0, 5.0)


def test_sa_one_step_arithmetic():
    vi = scalar_vi(1.0, 0.0)
    res = sa_solve(vi, np.zeros(1), np.array([1.0]), SaSchedule(1.0, 2.0), 1)
    np.testing.assert_allclose(res.z, [0.5])
    assert res.iterations == 1


def test_sa_noiseless_box():
    vi = scalar_vi(2.0, 3.0, 0.0, 10.0)
    res = sa_solve(vi, np.zeros(1), np.array([10.0]), SaSchedule(2.0, 9.0), 200)
    assert abs(res.z[0] - 1.5) <= 1e-2


def test_sa_rejects_bad_step_count():
    vi = scalar_vi(1.0, 0.0)
    with pytest.raises(ContractError):
        sa_solve(vi, np.zeros(1), np.zeros(1), SaSchedule(2.0, 3.0), 0)


def test_sa_mse_decays_like_one_over_t():
    vi = scalar_vi(2.0, 0.0, noise=lambda rng, shape: rng.uniform(2, 4, size=shape),
                   nu=math.sqrt(1 / 3))
    reps, t_max = 50, 10_000
    z0 = np.zeros((reps, 1))
    res = sa_solve(vi, np.zeros(1), z0, SaSchedule(1.0, 3.0), t_max,
                   np.random.default_rng(11), keep_path=True)
    path = np.array(res.path)[:, :, 0]
    ts = np.unique(np.logspace(2, 4, 15).astype(int))
    mse = ((path[ts] - 1.5) ** 2).mean(axis=1)
    slope = np.polyfit(np.log(ts), np.log(mse), 1)[0]
    assert slope <= -0.8


def test_error_bound_formulas():
    assert sa_error_bound(1.0, 2.0, 1.0, 3.0, 9.0, 7) == pytest.approx(27.0 / 10.0)
    assert sa_error_bound(3.0, 2.0, 1.0, 3.0, 1.0, 7) == pytest.approx(9.0 / 10.0)
    assert det_error_bound(0.5, 1.0, 4.0, 3) == pytest.approx(0.5)


def test_det_one_step_exact():
    res = det_solve(scalar_vi(1.0, 0.0), np.zeros(1), None, np.array([4.0]), 1.0, 1)
    np.testing.assert_allclose(res.z, [0.0])


def test_det_rejects_large_step():
    with pytest.raises(ContractError):
        det_solve(scalar_vi(1.0, 0.0), np.zeros(1), None, np.zeros(1), 1.5, 3)


def test_det_scalar_cournot_cell_contraction():
    c, b, q = 0.3, 0.1, 2.0
    vi = scalar_vi(c + 2 * b, q, lo=0.0)
    z_star = q / (c + 2 * b)
    gamma_hat = 1.0
    res = det_solve(vi, np.zeros(1), None, np.array([0.0]), gamma_hat, 100, keep_path=True)
    errs = np.abs(np.array(res.path)[:, 0] - z_star)
    rate = 1 - vi.mu_f * gamma_hat
    t = np.arange(101)
    assert np.all(errs <= rate ** t * errs[0] * (1 + 1e-9))


def cournot_oracle(c, b, a, x=0.0, shift=True):
    p = len(c)
    m = np.diag(np.asarray(c) + b) + b * np.ones((p, p))
    return np.linalg.solve(m, np.full(p, a - (b * x if shift else 0.0)))


def test_det_matches_cournot_interior_solution_p3():
    c = np.array([0.1, 0.2, 0.3])
    prob = cournot_game(3, c=c)
    rng = np.random.default_rng(12)
    for _ in range(5):
        x, xi = rng.uniform(0, 5, size=1), rng.uniform(7.5, 12.5)
        z_ref = cournot_oracle(c, 0.1, xi, x[0])
        assert (z_ref >= 0).all()
        res = det_solve(prob.lower_vi(), x, xi, np.zeros(3), prob.default_gamma_hat(), 200)
        assert np.abs(res.z - z_ref).max() <= 1e-6


def test_det_matches_cournot_interior_solution_p20():
    prob = cournot_game(20)
    c = prob.info["c"]
    rng = np.random.default_rng(13)
    x, xi = rng.uniform(0, 5, size=1), rng.uniform(7.5, 12.5)
    z_ref = cournot_oracle(c, 0.1, xi, x[0])
    res = det_solve(prob.lower_vi(), x, xi, np.zeros(20), prob.default_gamma_hat(), 20_000)
    assert np.abs(res.z - z_ref).max() <= 1e-6


def test_results_are_projector_fixed_points():
    prob = cournot_game(5)
    vi = prob.lower_vi()
    rng = np.random.default_rng(14)
    res = det_solve(vi, np.ones(1), 9.0, rng.uniform(0, 3, 5), prob.default_gamma_hat(), 7)
    np.testing.assert_allclose(vi.projector(np.ones(1), res.z, 9.0), res.z, atol=1e-10)


def test_t_schedule_1s_examples():
    assert t_schedule_1s(0, 1, 1.0, 1, 1) == 1
    assert t_schedule_1s(9, 4, 0.1, 1, 1) == 93
    assert t_schedule_1s(0, 2, 0.1, 1, 1) == 7
    with pytest.raises(ContractError):
        t_schedule_1s(0, 1, 0.1, a=0.5)


def test_t_schedule_2s_examples():
    assert t_schedule_2s(0, 1, 1.0, 1, 0.5, 1.0) == 1
    assert t_schedule_2s(0, 1, 0.1, 1, 0.5, 1.0) == 3
    # the experiment form is the plain log count
    for k in (0, 9, 99):
        assert t_schedule_2s(k, 1, 0.1, form="experiment") == math.ceil(math.log((k + 1) * 0.1 ** (-2 / 3)))
    assert t_schedule_2s(99, 1, 0.1, form="experiment") == 7
    with pytest.raises(ContractError):
        t_schedule_2s(0, 1, 0.1, 1, 1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(k=st.integers(0, 500), n=st.integers(1, 10), eta=st.floats(1e-3, 2.0),
       rate=st.floats(1e-3, 0.999))
def test_schedules_positive_and_monotone(k, n, eta, rate):
    for form in ("theorem", "experiment"):
        a = t_schedule_2s(k, n, eta, 1.0, rate, 1.0, form=form)
        b = t_schedule_2s(k + 1, n, eta, 1.0, rate, 1.0, form=form)
        assert 1 <= a <= b
    assert 1 <= t_schedule_1s(k, n, eta) <= t_schedule_1s(k + 1, n, eta)


def test_projection_examples():
    np.testing.assert_allclose(project_orthant(np.array([-1.0, -1.0])), [0.0, 0.0])
    z = project_polyhedron(np.array([-1.0, -1.0]), np.zeros((0, 2)), np.zeros(0))
    np.testing.assert_allclose(z, [0.0, 0.0])
    z = project_polyhedron(np.array([2.0, 0.0]), np.array([[1.0, 1.0]]), np.array([3.0]))
    np.testing.assert_allclose(z, [2.5, 0.5], atol=1e-12)


def test_projection_multipliers_satisfy_kkt():
    poly = Polyhedron(np.array([[1.0, 1.0]]))
    y = np.array([2.0, 0.0])
    z, lam = poly.project(y, np.array([3.0]), return_multipliers=True)
    # z - y = G^T lam with lam >= 0 on active rows
    np.testing.assert_allclose(z - y, poly.G.T @ lam, atol=1e-12)
    np.testing.assert_allclose(lam, [0.5, 0.0, 0.0], atol=1e-12)


def test_projection_empty_set():
    poly = Polyhedron(np.array([[-1.0, -1.0]]))
    with pytest.raises(InfeasibleError):
        poly.project(np.zeros(2), np.array([1.0]))


def random_instance(rng, p, q):
    a = rng.normal(size=(q, p))
    anchor = rng.uniform(0, 2, size=p)
    b = a @ anchor - rng.uniform(0, 1, size=q)
    return a, b


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10 ** 6), p=st.integers(1, 3), q=st.integers(1, 3))
def test_projection_properties(seed, p, q):
    rng = np.random.default_rng(seed)
    a, b = random_instance(rng, p, q)
    poly = Polyhedron(a)
    y1, y2 = rng.normal(scale=3, size=(2, p))
    z1, z2 = poly.project(y1, b), poly.project(y2, b)
    assert poly.contains(z1, b)
    np.testing.assert_allclose(poly.project(z1, b), z1, atol=1e-12)
    assert np.linalg.norm(z1 - z2) <= np.linalg.norm(y1 - y2) + 1e-12
    # obtuse-angle characterization against random feasible points
    cand = rng.uniform(0, 4, size=(300, p))
    cand = cand[poly.contains(cand, b, tol=0.0)]
    assert np.all((cand - z1) @ (y1 - z1) <= 1e-9)


def test_projection_batched_matches_single():
    rng = np.random.default_rng(15)
    a, _ = random_instance(rng, 2, 2)
    poly = Polyhedron(a)
    ys = rng.normal(size=(4, 3, 2))
    bs = a @ rng.uniform(0, 2, size=(4, 3, 2, 1))[..., 0].reshape(-1, 2).T
    bs = bs.T.reshape(4, 3, 2) - 0.3
    batch = poly.project(ys, bs)
    for i in range(4):
        for j in range(3):
            np.testing.assert_allclose(batch[i, j], poly.project(ys[i, j], bs[i, j]), atol=1e-14)
