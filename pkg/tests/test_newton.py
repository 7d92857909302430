import math

import numpy as np
import pytest
from conftest import random_instance, random_points

import softnewt as sn
from softnewt.bounds import probe_empirical
from softnewt.newton import NotPositiveDefiniteError
from softnewt.oracle import spectral


def exact_cfg(**kw):
    base = dict(mode="exact", eps=1e-12, stationarity_tol=1e-13, max_iters=100, strict=False)
    base.update(kw)
    return sn.NewtonConfig(**base)


@pytest.fixture(scope="module")
def s1_reference(s1_instance):
    rep = sn.solve(s1_instance, np.zeros(2), exact_cfg())
    assert rep.status == "converged" and rep.final_grad_norm <= 1e-13
    return rep.final_x


def test_step_fixed_point_at_optimum(s1_instance, s1_reference):
    x_next, diag = sn.newton_step(s1_instance, s1_reference, exact_cfg())
    assert np.linalg.norm(x_next - s1_reference) <= 1e-13
    assert diag.grad_norm <= 1e-13


def test_quadratic_specialization_one_step():
    # A2 = 0 makes the data term constant; the objective is a pure ridge
    # quadratic and one exact Newton step lands on zero from anywhere
    rng = np.random.default_rng(2)
    A1 = rng.uniform(-0.5, 0.5, size=(4, 3))
    inst = sn.ProblemInstance(
        A1=A1, A2=np.zeros((2, 4)), b=np.array([0.3, -0.1]), w=np.full(4, 2.0),
        activation=sn.Activation("identity"), R=1.5,
    )
    x0 = np.array([0.9, -0.4, 0.2])
    x1, _ = sn.newton_step(inst, x0, exact_cfg())
    assert np.linalg.norm(x1) <= 1e-12
    rep = sn.solve(inst, x0, exact_cfg())
    assert rep.status == "converged" and rep.n_iters == 1


def test_solve_zero_iterations_at_reference(s1_instance, s1_reference):
    rep = sn.solve(s1_instance, s1_reference, exact_cfg(), x_ref=s1_reference)
    assert rep.status == "converged" and rep.n_iters == 0
    assert rep.r_t == [0.0]


def test_golden_trace(s1_instance, s1_golden):
    g = s1_golden["newton_trace"]
    cfg = exact_cfg(eps=1e-14, stationarity_tol=1e-14)
    rep = sn.solve(s1_instance, np.array(g["x0"]), cfg, x_ref=np.array(g["x_ref"]))
    assert rep.status == g["status"]
    assert len(rep.iterates) == len(g["iterates"])
    for ours, golden in zip(rep.iterates, g["iterates"]):
        np.testing.assert_allclose(ours, golden, atol=1e-10)
    np.testing.assert_allclose(rep.r_t, g["r_t"], atol=1e-10)


def test_max_iters_zero_reports_max_iters(s1_instance, s1_reference):
    x0 = s1_reference + 0.1
    rep = sn.solve(s1_instance, x0, exact_cfg(max_iters=0), x_ref=s1_reference)
    assert rep.status == "max_iters" and rep.n_iters == 0


def test_monotone_loss_exact_mode(s1_instance, s1_reference):
    rep = sn.solve(s1_instance, s1_reference + np.array([0.2, -0.15]), exact_cfg())
    assert rep.status == "converged"
    diffs = np.diff(rep.loss_tots)
    assert np.all(diffs <= 1e-14)


def test_exact_mode_iteration_bound_and_quadratic_tail(s1_instance, s1_reference):
    eps = 1e-10
    x0 = s1_reference + np.array([0.05, -0.03])
    rep = sn.solve(s1_instance, x0, exact_cfg(eps=eps), x_ref=s1_reference)
    assert rep.status == "converged"
    r0 = rep.r_t[0]
    budget = math.ceil(math.log(r0 / eps) / math.log(2.5)) + 1
    assert rep.n_iters <= budget
    # local quadratic behavior: r_{t+1} / r_t^2 stays sane near the optimum
    lam_min = spectral(sn.hess_tot(sn.eval_forward(s1_instance, s1_reference), s1_instance).H_tot)[0]
    assert lam_min >= 0.1
    quad = [
        rep.r_t[t + 1] / rep.r_t[t] ** 2
        for t in range(len(rep.r_t) - 1)
        if rep.r_t[t] > 1e-12
    ]
    assert all(q < 1e6 for q in quad[-3:])


def test_non_positive_definite_error_carries_lambda_min():
    inst = sn.ProblemInstance(
        A1=np.array([[1.0], [-1.0]]), A2=np.array([[1.0, 0.0]]), b=np.array([0.9]),
        w=np.zeros(2), activation=sn.Activation("identity"), R=4.0,
    )
    with pytest.raises(NotPositiveDefiniteError) as exc:
        sn.newton_step(inst, np.array([-3.0]), exact_cfg())
    assert exc.value.lambda_min < 0

    rep = sn.solve(inst, np.array([-3.0]), exact_cfg())
    assert rep.status == "error"
    assert "positive definite" in rep.error_message


def test_sketched_solve_deterministic(s1_instance, s1_reference):
    cfg = sn.NewtonConfig(mode="sketched", eps=1e-9, eps0=0.01, seed=3,
                          stationarity_tol=1e-12, max_iters=50, strict=False)
    x0 = s1_reference + np.array([0.02, 0.01])
    a = sn.solve(s1_instance, x0, cfg, x_ref=s1_reference)
    b = sn.solve(s1_instance, x0, cfg, x_ref=s1_reference)
    assert a.status == b.status == "converged"
    for xa, xb in zip(a.iterates, b.iterates):
        assert np.array_equal(xa, xb)
    assert a.sketch_eps_per_iter == b.sketch_eps_per_iter


def test_basin_check_trivial_and_analytic_vs_empirical(s1_instance, s1_reference):
    assert sn.basin_check(s1_reference, s1_reference, M=1e300, l=1e-12)
    assert sn.basin_check(s1_reference + 1.0, s1_reference, M=0.0, l=1e-12)

    pts = [s1_reference + dx for dx in random_points(s1_instance, 31, 8, radius_frac=0.05)]
    rep = probe_empirical(s1_instance, pts)
    st_ref = sn.eval_forward(s1_instance, s1_reference)
    l = spectral(sn.hess_tot(st_ref, s1_instance).H_tot)[0]
    x0 = s1_reference + np.array([0.01, -0.005])
    assert not sn.basin_check(x0, s1_reference, M=rep.analytic["M"], l=l)
    assert sn.basin_check(x0, s1_reference, M=rep.M_empirical, l=l)


@pytest.fixture(scope="module")
def basin_setup():
    """A recipe-ridge instance with reference optimum, l, and empirical M."""
    inst = random_instance(101, n=6, m=3, d=3, kind="tanh", ridge="recipe", noise=0.05)
    ref = sn.solve(inst, np.zeros(3), exact_cfg())
    assert ref.status == "converged"
    x_ref = ref.final_x
    l = spectral(sn.hess_tot(sn.eval_forward(inst, x_ref), inst).H_tot)[0]
    pts = [x_ref + dx for dx in random_points(inst, 77, 10, radius_frac=0.2)]
    M_emp = probe_empirical(inst, pts).M_empirical
    return inst, x_ref, l, M_emp


def test_sketched_contraction_inside_basin(basin_setup):
    inst, x_ref, l, M_emp = basin_setup
    r0 = min(0.05 * l / max(M_emp, 1e-12), 0.1 * inst.R)
    rng = np.random.default_rng(55)
    failures = 0
    n_seeds = 10
    for seed in range(n_seeds):
        direction = rng.standard_normal(inst.d)
        x0 = x_ref + r0 * direction / np.linalg.norm(direction)
        assert sn.basin_check(x0, x_ref, M=M_emp, l=l)
        cfg = sn.NewtonConfig(mode="sketched", eps=1e-9, eps0=0.01, delta=0.05,
                              seed=seed, max_iters=50, stationarity_tol=1e-13,
                              strict=False)
        rep = sn.solve(inst, x0, cfg, x_ref=x_ref)
        if rep.status != "converged" or any(rho > 0.4 for rho in rep.ratios):
            failures += 1
    assert failures <= max(1, int(0.1 * n_seeds))


def test_shrinking_bound_consistency(basin_setup):
    inst, x_ref, l, M_emp = basin_setup
    x0 = x_ref + min(0.05 * l / max(M_emp, 1e-12), 0.1 * inst.R) * np.ones(inst.d) / math.sqrt(inst.d)
    cfg = sn.NewtonConfig(mode="sketched", eps=1e-9, eps0=0.01, seed=9,
                          max_iters=50, stationarity_tol=1e-13, strict=False)
    rep = sn.solve(inst, x0, cfg, x_ref=x_ref)
    assert rep.status == "converged"
    for t in range(len(rep.r_t) - 1):
        r = rep.r_t[t]
        if r < 1e-9:
            continue
        eps_meas = rep.sketch_eps_per_iter[t] or 0.0
        rbar = M_emp * r
        assert l > rbar
        assert rep.r_t[t + 1] <= 2.0 * (eps_meas + rbar / (l - rbar)) * r + 1e-15


def test_divergence_detector(s1_instance, s1_reference, monkeypatch):
    # three consecutive doublings of the reference distance flag divergence
    import softnewt.newton as newton_mod

    def runaway_step(inst, x_t, cfg, *, step_seed=None, state=None):
        x_next = s1_reference + 2.5 * (x_t - s1_reference)
        diag = newton_mod.StepDiagnostics(grad_norm=1.0, step_norm=1.0, loss_tot=1.0)
        return x_next, diag

    monkeypatch.setattr(newton_mod, "newton_step", runaway_step)
    rep = newton_mod.solve(
        s1_instance, s1_reference + np.array([0.01, 0.0]), exact_cfg(max_iters=20),
        x_ref=s1_reference,
    )
    assert rep.status == "diverged"
    assert len(rep.ratios) >= 3 and all(r >= 2.0 for r in rep.ratios[-3:])


def test_config_validation():
    with pytest.raises(ValueError, match="strict"):
        sn.NewtonConfig(eps=0.5)
    with pytest.raises(ValueError, match="strict"):
        sn.NewtonConfig(delta=0.5)
    with pytest.raises(ValueError, match="strict"):
        sn.NewtonConfig(damping=True)
    sn.NewtonConfig(eps=0.5, delta=0.5, damping=True, strict=False)
    with pytest.raises(ValueError, match="mode"):
        sn.NewtonConfig(mode="bfgs")
    with pytest.raises(ValueError, match="eps0"):
        sn.NewtonConfig(eps0=0.7)


def test_damping_counts_halvings(s1_instance, s1_reference):
    # force an uphill full step by feeding a gradient from a far point; the
    # damped step must not increase the loss
    cfg = sn.NewtonConfig(mode="exact", eps=1e-9, damping=True, strict=False,
                          max_iters=50, stationarity_tol=1e-12)
    rep = sn.solve(s1_instance, s1_reference + np.array([0.4, 0.4]), cfg)
    assert rep.status == "converged"
    assert np.all(np.diff(rep.loss_tots) <= 1e-14)


def test_norm_budget_warning(s1_instance):
    with pytest.warns(UserWarning, match="norm budget"):
        sn.solve(s1_instance, np.full(2, 5.0), exact_cfg(max_iters=1))
