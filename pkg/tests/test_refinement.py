import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from defaulttimes.finspace import is_martingale, spanning_martingales
from defaulttimes.hypotest import check_H
from defaulttimes.refinement import (
    CONSTANT_HAZARD,
    STOCHASTIC_HAZARD,
    ZERO_ERROR,
    fit_order,
    gamma_error,
    refinement_harness,
    regime_space,
    representation_error,
    zq_error,
)


def test_regime_space_has_one_path_per_switch_time():
    space = regime_space(6, T=2.0, kappa=0.7)
    assert space.n == 7
    assert space.weights.sum() == pytest.approx(1.0)
    # never switching has probability exp(-kappa T)
    assert space.weights[-1] == pytest.approx(np.exp(-0.7 * 2.0))
    assert np.all(np.diff(space.driver, axis=1) >= 0)
    assert space.driver[0, 0] == 0 and space.driver[0, 1] == 1


def test_regime_filtration_supports_martingales():
    space = regime_space(5)
    S = spanning_martingales(space.filtration, space.weights)
    for b in range(S.shape[2]):
        assert is_martingale(S[:, :, b], space.filtration, space.weights, tol=1e-12).ok


def test_family_models_are_cox_times():
    for fam in (CONSTANT_HAZARD, STOCHASTIC_HAZARD):
        model, aux = fam.build(6)
        assert check_H(model, tol=1e-12).holds
        assert aux["integrated"].shape == (model.n, 7)
        assert np.all(aux["integrated"][:, 0] == 0)


def test_exact_step_hazard_reproduces_integrated_intensity():
    for fam in (CONSTANT_HAZARD, STOCHASTIC_HAZARD):
        exact = dataclasses.replace(fam, exact_step=True)
        for K in (4, 16):
            assert gamma_error(exact, K) <= ZERO_ERROR


def test_identical_target_gives_all_zero_table():
    exact = dataclasses.replace(STOCHASTIC_HAZARD, exact_step=True)
    tab = refinement_harness(lambda K: gamma_error(exact, K), Ks=(4, 8, 16))
    assert tab.all_zero and tab.ok
    assert np.isnan(tab.order)


def test_regime_free_claim_has_no_representation_residual():
    fam = dataclasses.replace(CONSTANT_HAZARD, z1=0.0)
    assert representation_error(fam, 12) <= ZERO_ERROR


@pytest.mark.parametrize("metric", [gamma_error, zq_error, representation_error])
def test_errors_shrink_at_first_order(metric):
    tab = refinement_harness(lambda K: metric(STOCHASTIC_HAZARD, K), Ks=(8, 16, 32))
    assert tab.monotone
    assert 0.9 <= tab.order <= 1.2
    assert tab.ok


@given(st.floats(0.5, 3.0), st.floats(1e-3, 10.0))
def test_fit_order_recovers_power_law(p, c):
    dts = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    assert fit_order(dts, [c * dt**p for dt in dts]) == pytest.approx(p, rel=1e-9)


def test_growing_error_is_not_monotone():
    tab = refinement_harness(lambda K: {4: 0.1, 8: 0.2, 16: 0.05}[K], Ks=(4, 8, 16))
    assert not tab.monotone and not tab.ok


def test_slow_convergence_fails_the_order_threshold():
    tab = refinement_harness(lambda K: K**-0.5, Ks=(8, 16, 32), min_order=0.9)
    assert tab.monotone and tab.order == pytest.approx(0.5)
    assert not tab.ok


def test_harness_needs_three_grids():
    with pytest.raises(ValueError):
        refinement_harness(lambda K: 1.0 / K, Ks=(8, 16))
