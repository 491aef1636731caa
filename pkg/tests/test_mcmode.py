import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from defaulttimes.errors import BasisError, SimulationError
from defaulttimes.mcmode import (
    BLOCK,
    KusuokaSpec,
    SdeSpec,
    compensated_default,
    compensated_default_test,
    cox_survival_check,
    default_basis,
    default_hazard,
    event_windows,
    export_paths,
    holm,
    immersion_violation_test,
    kusuoka_diagnostics,
    kusuoka_scenario,
    linear_basis,
    polynomial_features,
    regression_cond_exp,
    regression_decomposition,
    simulate_paths,
    statistical_martingale_test,
    wald_test,
)


def const(value):
    return lambda t, x: np.full(x.shape, value, dtype=float)


def brownian(sigma=1.0, x0=0.0):
    return SdeSpec(const(0.0), const(sigma), (x0,))


GRID = np.linspace(0.0, 1.0, 21)


# -- path simulation ----------------------------------------------------------


def test_zero_coefficients_give_constant_paths():
    table = simulate_paths(SdeSpec(const(0.0), const(0.0), (2.5, -1.0)), GRID, 300, seed=1)
    assert table.values.shape == (300, 21, 2)
    assert np.all(table.values[:, :, 0] == 2.5)
    assert np.all(table.values[:, :, 1] == -1.0)


def test_deterministic_drift_is_integrated_exactly():
    table = simulate_paths(SdeSpec(const(3.0), const(0.0), (1.0,)), GRID, 10, seed=0)
    assert np.allclose(table.values[:, :, 0], 1.0 + 3.0 * GRID[None, :], atol=1e-13)


def test_terminal_variance_matches_time_horizon():
    n = 10_000
    table = simulate_paths(brownian(), GRID, n, seed=7)
    xT = table.values[:, -1, 0]
    assert abs(xT.mean()) <= 3 / np.sqrt(n)
    assert abs(xT.var() - 1.0) <= 3 * np.sqrt(2 / n)


def test_noise_is_reported_with_paths():
    table = simulate_paths(brownian(2.0), GRID, 50, seed=3)
    recon = np.concatenate([np.zeros((50, 1)), np.cumsum(2.0 * table.noise[:, :, 0], axis=1)], axis=1)
    assert np.allclose(table.values[:, :, 0], recon, atol=1e-12)


@given(st.integers(1, 3 * BLOCK + 5), st.integers(0, 2**32), st.integers(2, 4))
def test_paths_do_not_depend_on_worker_count(n, seed, workers):
    spec = KusuokaSpec().sde()
    a = simulate_paths(spec, GRID, n, seed, workers=1)
    b = simulate_paths(spec, GRID, n, seed, workers=workers)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.hit_index, b.hit_index)


def test_prefix_of_a_larger_run_is_the_smaller_run():
    spec = brownian()
    small = simulate_paths(spec, GRID, 300, seed=11)
    big = simulate_paths(spec, GRID, 700, seed=11)
    assert np.array_equal(big.values[:300], small.values)


def test_seeds_give_different_paths():
    a = simulate_paths(brownian(), GRID, 5, seed=1)
    b = simulate_paths(brownian(), GRID, 5, seed=2)
    assert not np.array_equal(a.values, b.values)


def test_absorbed_component_is_frozen_after_first_crossing():
    table = simulate_paths(SdeSpec(const(0.0), const(1.0), (0.5,), absorb=(0, 0.0)), GRID, 2000, seed=5)
    x, hit = table.values[:, :, 0], table.hit_index
    K = len(GRID) - 1
    for i in np.flatnonzero(hit <= K)[:200]:
        assert np.all(x[i, : hit[i]] > 0)
        assert np.all(x[i, hit[i]:] == 0.0)
    assert np.all(x[hit > K] > 0)


def test_bridge_correction_recovers_continuous_hitting_probability():
    # P(min_{t <= 1} B_t <= -1) = 2 Phi(-1); the bridge test is exact for Brownian motion
    n = 10_000
    exact = 2 * stats.norm.cdf(-1.0)
    spec = SdeSpec(const(0.0), const(1.0), (1.0,), absorb=(0, 0.0))
    grid = np.linspace(0, 1, 11)
    plain = (simulate_paths(spec, grid, n, seed=2).hit_index <= 10).mean()
    bridged = (simulate_paths(spec, grid, n, seed=2, bridge=True).hit_index <= 10).mean()
    se = np.sqrt(exact * (1 - exact) / n)
    assert abs(bridged - exact) <= 3 * se
    assert plain < exact - 3 * se


def test_overflow_raises_with_location():
    spec = SdeSpec(lambda t, x: x**2, const(0.0), (1e200,))
    with pytest.raises(SimulationError) as err:
        simulate_paths(spec, GRID, BLOCK + 3, seed=0)
    assert err.value.path == 0
    assert err.value.step == 1


def test_non_positive_path_count_is_rejected():
    with pytest.raises(ValueError):
        simulate_paths(brownian(), GRID, 0, seed=0)


def test_export_writes_one_row_per_path_and_time(tmp_path):
    table = simulate_paths(brownian(), GRID, 3, seed=0)
    out = tmp_path / "paths.csv"
    export_paths(table, out, names=["w"])
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["path", "time_index", "time", "w"]
    assert len(rows) == 1 + 3 * len(GRID)
    last = rows[-1]
    assert int(last[0]) == 2 and int(last[1]) == len(GRID) - 1
    assert float(last[3]) == table.values[2, -1, 0]


# -- regression ---------------------------------------------------------------


def test_polynomial_target_is_fitted_exactly(rng):
    x = rng.normal(size=500)
    X = polynomial_features(x, 3)
    reg = regression_cond_exp(1 + 2 * x - 0.5 * x**3, X)
    assert np.allclose(reg.coef, [1, 2, 0, -0.5], atol=1e-10)
    assert reg.residual_rms < 1e-10
    assert reg.oof_mse < 1e-18


def test_weighted_regression_of_indicator_reproduces_weighted_block_means(rng):
    g = rng.integers(0, 3, size=400)
    X = np.column_stack([(g == j).astype(float) for j in range(3)])
    y = rng.normal(size=400)
    w = rng.uniform(0.5, 2.0, size=400)
    reg = regression_cond_exp(y, X, weights=w)
    for j in range(3):
        m = g == j
        assert reg.coef[j] == pytest.approx(np.average(y[m], weights=w[m]), abs=1e-12)


def test_rank_deficient_design_raises(rng):
    x = rng.normal(size=100)
    with pytest.raises(BasisError):
        regression_cond_exp(x, np.column_stack([np.ones(100), x, 2 * x]))
    with pytest.raises(BasisError):
        regression_cond_exp(x[:2], polynomial_features(x[:2], 3))


def test_wald_statistic_on_known_coefficients(rng):
    x = rng.normal(size=4000)
    y = 0.3 * x + rng.normal(size=4000)
    reg = regression_cond_exp(y, np.column_stack([np.ones(4000), x]), folds=0)
    stat, p = wald_test(reg, [1])
    assert stat == pytest.approx((reg.coef[1] / reg.stderr()[1]) ** 2)
    assert p < 1e-10
    assert reg.stderr()[1] == pytest.approx(1 / np.sqrt(4000), rel=0.1)


def test_bases_at_time_zero_are_intercept_only(rng):
    y = rng.normal(size=(10, 4))
    assert default_basis(y, 0).shape == (10, 1)
    assert linear_basis(y, 0).shape == (10, 1)
    assert default_basis(y, 2).shape == (10, 5)
    assert np.array_equal(linear_basis(y, 2)[:, 2], y[:, :3].min(axis=1))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_holm_adjustment_dominates_raw_and_keeps_order(p):
    adj = holm(p)
    p = np.asarray(p)
    assert np.all(adj >= p - 1e-15) and np.all(adj <= 1)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(adj[order]) >= 0)
    assert adj[order[0]] == pytest.approx(min(1.0, len(p) * p[order[0]]))


# -- martingale tests ---------------------------------------------------------


def _walk(rng, n, K, drift=0.0):
    X = np.zeros((n, K + 1))
    X[:, 1:] = np.cumsum(rng.normal(drift, 1.0, size=(n, K)), axis=1)
    return X


def test_centered_walk_is_not_rejected(rng):
    X = _walk(rng, 3000, 6)
    res = statistical_martingale_test(X, lambda k: linear_basis(X, k - 1))
    assert not res.reject


def test_walk_with_five_standard_error_drift_is_rejected(rng):
    n = 2500
    X = _walk(rng, n, 3, drift=5 / np.sqrt(n))
    res = statistical_martingale_test(X, lambda k: np.ones((n, 1)))
    assert res.reject
    assert res.pvalues.max() < 1e-3


def test_state_dependent_drift_is_detected(rng):
    n = 3000
    X = np.zeros((n, 5))
    X[:, 0] = rng.normal(size=n)
    for k in range(1, 5):
        X[:, k] = X[:, k - 1] + 0.2 * np.sign(X[:, k - 1]) + rng.normal(size=n)
    res = statistical_martingale_test(X, lambda k: np.column_stack([np.ones(n), X[:, k - 1] > 0]))
    assert res.reject


def test_constant_process_gives_unit_pvalues():
    X = np.full((50, 4), 3.0)
    res = statistical_martingale_test(X, [np.ones((50, 1))] * 3)
    assert np.all(res.pvalues == 1.0) and not res.reject


def test_level_outside_unit_interval_is_rejected():
    with pytest.raises(ValueError):
        statistical_martingale_test(np.zeros((5, 2)), [np.ones((5, 1))], level=1.5)


@given(st.lists(st.integers(1, 21), min_size=1, max_size=300), st.integers(1, 40))
def test_event_windows_cover_the_grid_with_enough_events(taus, min_events):
    K = 20
    tau = np.array(taus)
    b = event_windows(tau, K, min_events)
    assert b[0] == 0 and b[-1] == K and np.all(np.diff(b) > 0)
    counts = [np.sum((tau > b[j - 1]) & (tau <= b[j])) for j in range(1, len(b))]
    if np.sum(tau <= K) >= min_events:
        assert min(counts) >= min_events


# -- Cox times ----------------------------------------------------------------


def test_cox_survival_matches_exact_conditional_survival(rng):
    n, K = 20_000, 10
    times = np.linspace(0, 2, K + 1)
    lam = np.zeros((n, K + 1))
    lam[:, 1:] = np.exp(np.cumsum(0.3 * rng.normal(size=(n, K)), axis=1)) * 0.5
    mc, exact, se = cox_survival_check(lam, times, seed=4)
    assert mc[0] == 1.0 and exact[0] == 1.0
    assert np.max(np.abs(mc - exact)[1:] / se[1:]) <= 4


def test_regression_decomposition_recovers_linear_integrands(rng):
    n, K = 2000, 4
    dW = rng.normal(size=(n, K))
    dN = (rng.uniform(size=(n, K)) < 0.1).astype(float) - 0.1
    M = np.zeros((n, K + 1))
    M[:, 1:] = np.cumsum(1.5 * dW - 2.0 * dN, axis=1)
    coefs, resid = regression_decomposition(M, dW, dN, lambda k: np.ones((n, 1)))
    assert np.all(resid < 1e-10)
    for c in coefs:
        assert np.allclose(c, [1.5, -2.0])


# -- Kusuoka model ------------------------------------------------------------


@pytest.fixture(scope="module")
def coupled_run():
    return kusuoka_scenario(KusuokaSpec(), n_steps=40, n_paths=6000, seed=0)


def test_kusuoka_density_has_unit_mean_and_is_trivial_without_coupling(coupled_run):
    assert coupled_run.density.mean() == pytest.approx(1.0)
    decoupled = kusuoka_scenario(KusuokaSpec(coupling=0.0), 10, 500, seed=0)
    assert np.allclose(decoupled.density, 1.0)


def test_kusuoka_default_time_and_absorption(coupled_run):
    K = coupled_run.K
    assert np.all((coupled_run.tau_index >= 1) & (coupled_run.tau_index <= K + 1))
    for i in np.flatnonzero(coupled_run.tau_index <= K)[:100]:
        assert np.all(coupled_run.X[i, coupled_run.tau_index[i]:] == 0)


def test_detector_rejects_coupled_dynamics(coupled_run):
    assert immersion_violation_test(coupled_run).reject


def test_detector_accepts_decoupled_dynamics():
    run = kusuoka_scenario(KusuokaSpec(coupling=0.0), 40, 6000, seed=0)
    res = immersion_violation_test(run)
    assert not res.reject
    assert res.s_index == 20


def test_reweighting_restores_martingale_property_of_compensated_default(coupled_run):
    assert not compensated_default_test(coupled_run, reweight=True).reject
    assert compensated_default_test(coupled_run, reweight=False).reject


def test_compensated_default_has_zero_weighted_mean_each_step(coupled_run):
    w = coupled_run.density
    N = compensated_default(coupled_run, default_hazard(coupled_run, w))
    assert np.allclose(np.average(N, axis=0, weights=w), 0.0, atol=1e-12)


def test_degenerate_observation_noise_raises():
    with pytest.raises(SimulationError):
        kusuoka_scenario(KusuokaSpec(sigma2=0.0), 10, 100, seed=0)


def test_diagnostics_report_null_size():
    mc, _ = kusuoka_diagnostics(KusuokaSpec(), 20, 2000, seed=0, null_seeds=range(1, 6))
    assert mc.estimates["detector_reject"]
    assert 0 <= mc.estimates["null_rejection_rate"] <= 1
    assert mc.stderrs["null_rejection_rate"] == pytest.approx(np.sqrt(0.01 * 0.99 / 5))
    assert 0 < mc.estimates["density_ess_fraction"] <= 1
