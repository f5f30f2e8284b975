import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hdmed import kernels, l1_solver
from hdmed.data import moments, prepare, Dataset
from hdmed.errors import DataError, InfeasibleError
from hdmed.l1_solver import (
    FEAS_TOL, default_tau, estimate_omega_C, estimate_omega_I, min_residual, solve_row,
    solve_row_info, solve_rows,
)
from hdmed.simulation import SimulationScenario, generate, scenario_parameters

from oracles import l1_row_oracle


def _instance(rng, m, rank=None, tau_hi=0.5):
    k = m + 3 if rank is None else rank
    A = rng.standard_normal((k, m))
    sigma = A.T @ A / k
    d = rng.standard_normal(m)
    return sigma, d, float(rng.uniform(0.0, tau_hi))


def _residual(sigma, d, w):
    return float(np.max(np.abs(sigma @ w - d)))


def test_identity_tau_zero():
    e2 = np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(solve_row(np.eye(3), e2, 0.0), e2, atol=1e-12)


def test_identity_slack_swallows_target():
    np.testing.assert_array_equal(solve_row(np.eye(3), np.array([0.0, 1.0, 0.0]), 1.0),
                                  np.zeros(3))


def test_random_4x4_matches_lp():
    rng = np.random.default_rng(4)
    for _ in range(20):
        sigma, d, _ = _instance(rng, 4)
        w = solve_row(sigma, d, 0.1)
        _, ref = l1_row_oracle(sigma, d, 0.1)
        assert np.abs(w).sum() == pytest.approx(ref, abs=1e-6)
        assert _residual(sigma, d, w) <= 0.1 + FEAS_TOL


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 8), rank_def=st.booleans())
def test_optimal_and_feasible_property(seed, m, rank_def):
    rng = np.random.default_rng(seed)
    sigma, d, tau = _instance(rng, m, rank=max(1, m - 2) if rank_def else None)
    _, ref = l1_row_oracle(sigma, d, tau)
    if not np.isfinite(ref):
        with pytest.raises(InfeasibleError):
            solve_row(sigma, d, tau)
        return
    w = solve_row(sigma, d, tau)
    assert _residual(sigma, d, w) <= tau + FEAS_TOL
    assert np.abs(w).sum() == pytest.approx(ref, abs=1e-6)


@pytest.mark.parametrize("method", ["homotopy", "admm", "highs"])
def test_methods_agree(method):
    rng = np.random.default_rng(7)
    for _ in range(10):
        sigma, d, tau = _instance(rng, 12, rank=8, tau_hi=0.3)
        sigma = sigma + 0.05 * np.eye(12)
        info = solve_row_info(sigma, d, tau, method=method)
        _, ref = l1_row_oracle(sigma, d, tau)
        # the first-order route may hand over to HiGHS on ill-conditioned rows
        assert info.method in (method, "highs")
        assert info.l1 == pytest.approx(ref, abs=1e-6)
        assert info.residual <= tau + FEAS_TOL


def test_admm_certifies_well_conditioned_rows():
    rng = np.random.default_rng(17)
    for _ in range(10):
        sigma, d, tau = _instance(rng, 12, rank=60, tau_hi=0.3)
        info = solve_row_info(sigma, d, tau, method="admm")
        _, ref = l1_row_oracle(sigma, d, tau)
        assert info.method == "admm"
        assert info.l1 == pytest.approx(ref, abs=1e-6)


def test_admm_with_fallback_kernels(monkeypatch):
    monkeypatch.setattr(kernels, "admm_block", kernels.get_backend("python").admm_block)
    rng = np.random.default_rng(8)
    sigma, d, tau = _instance(rng, 10, rank=60, tau_hi=0.2)
    info = solve_row_info(sigma, d, tau, method="admm")
    _, ref = l1_row_oracle(sigma, d, tau)
    assert info.method == "admm"
    assert info.l1 == pytest.approx(ref, abs=1e-6)


def test_monotone_in_tau():
    rng = np.random.default_rng(9)
    for _ in range(5):
        sigma, d, _ = _instance(rng, 15, rank=10)
        sigma += 0.01 * np.eye(15)
        l1 = [np.abs(solve_row(sigma, d, t)).sum() for t in np.linspace(0.0, 2.0, 15)]
        assert np.all(np.diff(l1) <= 1e-9)
        assert l1[-1] <= l1[0]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.01, 100.0))
def test_scaling_invariance(seed, c):
    rng = np.random.default_rng(seed)
    sigma, d, tau = _instance(rng, 6)
    a = solve_row(sigma, d, tau)
    b = solve_row(c * sigma, c * d, c * tau)
    assert np.abs(b).sum() == pytest.approx(np.abs(a).sum(), abs=1e-6 * max(1, np.abs(a).sum()))


@pytest.mark.parametrize("method", ["auto", "homotopy", "admm", "highs"])
def test_infeasible_reports_min_residual(method):
    sigma = np.diag([1.0, 0.0])
    d = np.array([0.0, 1.0])
    with pytest.raises(InfeasibleError) as err:
        solve_row(sigma, d, 0.5, method=method)
    assert err.value.min_residual == pytest.approx(1.0, abs=1e-7)
    assert min_residual(sigma, d) == pytest.approx(1.0, abs=1e-7)


def test_relax_policy_records_row_tau():
    sigma = np.diag([1.0, 0.0])
    targets = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(InfeasibleError, match="row 1"):
        solve_rows(sigma, targets, 0.5)
    om = solve_rows(sigma, targets, 0.5, on_infeasible="relax")
    assert om.relaxed_rows == [1]
    np.testing.assert_allclose(om.row_taus, [0.5, 1.001])
    assert om.row_residuals[1] <= 1.001 + FEAS_TOL


def test_input_checks():
    with pytest.raises(DataError):
        solve_row(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2), 0.1)
    with pytest.raises(DataError):
        solve_row(np.eye(2), np.zeros(2), -0.1)
    with pytest.raises(DataError):
        solve_row(np.eye(3), np.zeros(2), 0.1)


def test_threads_do_not_change_rows():
    rng = np.random.default_rng(11)
    sigma, _, _ = _instance(rng, 30, rank=20)
    targets = rng.standard_normal((6, 30))
    a = solve_rows(sigma, targets, 0.2, n_jobs=1, on_infeasible="relax")
    b = solve_rows(sigma, targets, 0.2, n_jobs=4, on_infeasible="relax")
    np.testing.assert_array_equal(a.omega, b.omega)


# debiasing matrices


def _sim(n, p, c=0.5, seed=3, rep=0):
    k = min(5, (p + 1) // 2)
    scn = SimulationScenario(n=n, p=p, c=c, n_nonzero_gamma=k, n_nonzero_alpha0=k, seed=seed)
    raw, truth = generate(scn, rep)
    return prepare(raw), truth


def test_omega_c_zero_target(rng):
    n, p = 50, 4
    G = rng.standard_normal((n, p))
    G -= G.mean(axis=0)
    s = rng.standard_normal(n)
    s -= s.mean()
    s -= G @ np.linalg.lstsq(G, s, rcond=None)[0]
    mom = moments(prepare(Dataset(Y=rng.standard_normal(n), G=G, S=s)))
    assert np.max(np.abs(mom.sigma_sg)) < 1e-14
    om = estimate_omega_C(mom, 0.01)
    np.testing.assert_array_equal(om.omega, 0.0)


def test_omega_c_dense_solve():
    d, _ = _sim(200, 3)
    mom = moments(d)
    om = estimate_omega_C(mom, 0.0)
    ref = np.linalg.solve(mom.sigma_gg, mom.sigma_sg.T).T
    np.testing.assert_allclose(om.omega, ref, atol=1e-8)


def test_omega_i_dense_solve():
    d, _ = _sim(200, 4)
    mom = moments(d)
    om = estimate_omega_I(mom, 0.0)
    ref = np.linalg.solve(mom.sigma_xx, mom.d_hat.T).T
    np.testing.assert_allclose(om.omega, ref, atol=1e-8)
    assert om.omega.shape == (2, 5)


def test_omega_c_default_tau_high_dimensional():
    d, _ = _sim(300, 500)
    mom = moments(d)
    tau = default_tau(300, 500)
    assert tau == pytest.approx(np.sqrt(np.log(500) / 300) / 3)
    om = estimate_omega_C(mom, tau)
    assert om.omega.shape == (1, 500)
    assert np.all(om.row_residuals <= tau + 1e-7)
    # certificate recomputed from scratch
    assert np.max(np.abs(om.omega @ mom.sigma_gg - mom.sigma_sg)) <= tau + 1e-7


def test_omega_i_feasibility_both_rows():
    d, _ = _sim(150, 40)
    mom = moments(d)
    tau = default_tau(150, 40)
    om = estimate_omega_I(mom, tau)
    resid = np.max(np.abs(om.omega @ mom.sigma_xx - mom.d_hat), axis=1)
    assert np.all(resid <= tau + FEAS_TOL)
    np.testing.assert_allclose(resid, om.row_residuals, atol=1e-12)


def test_omega_i_consistency_over_n():
    p = 20
    scn = SimulationScenario(p=p, c=0.5, n_nonzero_gamma=5, n_nonzero_alpha0=5, seed=3)
    truth = scenario_parameters(scn)
    sigma_sg = truth.c * truth.gamma.T
    sigma_gg = truth.c**2 * truth.gamma @ truth.gamma.T + truth.sigma_e
    sigma_xx = np.block([[sigma_gg, sigma_sg.T], [sigma_sg, np.eye(1)]])
    D = np.zeros((2, p + 1))
    D[0, :p] = sigma_sg
    D[1, p] = 1.0
    target = np.linalg.solve(sigma_xx, D.T).T
    medians = []
    for n in (500, 1000, 2000):
        errs = []
        for rep in range(20):
            raw, _ = generate(replace_n(scn, n), 1000 * n + rep, truth)
            mom = moments(prepare(raw))
            om = estimate_omega_I(mom, default_tau(n, p))
            errs.append(np.max(np.abs(om.omega - target)))
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]


def replace_n(scn, n):
    from dataclasses import replace
    return replace(scn, n=n)


def test_diagnostics_shape():
    d, _ = _sim(100, 10)
    om = estimate_omega_C(moments(d), 0.05)
    diag = om.diagnostics()
    assert diag["tau"] == 0.05
    assert len(diag["row_residuals"]) == 1
