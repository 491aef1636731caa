from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from defaulttimes.enlarge import azema_bundle, compensated_default_martingale, enlarge_progressively, independent_time
from defaulttimes.errors import PreconditionError
from defaulttimes.finspace import cond_exp, is_martingale, spanning_martingales
from defaulttimes.hypotest import check_H
from defaulttimes.represent import (
    direct_price,
    l_process,
    orthogonal_decompose,
    orthogonality_check,
    projection_formula,
    represent_general,
    represent_z_tau,
    value_defaultable,
)
from defaulttimes.scenarios import (
    TAU_KINDS,
    argmax_walk_model,
    coin_space,
    constant_cox_model,
    first_passage,
    random_model,
    uniform_independent_model,
)

from oracles import block_mean

Q = Fraction


def step_z(model, values):
    z = np.zeros((model.n, model.K + 1), dtype=object)
    z[:, 1:] = np.array(values, dtype=object)[None, :]
    return z


def predictable(rng, model, low=0.1, high=1.0):
    return np.stack([cond_exp(rng.uniform(low, high, model.n), model.F.previous(k), model.weights) for k in range(model.K + 1)], axis=1)


def uniform_on_coin(K=2):
    space = coin_space(K, exact=True)
    law = np.array([Q(1, K)] * K + [Q(0)], dtype=object)
    return independent_time(space, law)


def test_l_process_independent_uniform():
    model = uniform_independent_model(2)
    lp = l_process(model)
    assert lp.horizon == 1
    assert [list(r) for r in lp.L] == [[1, 0], [1, 2]]
    assert is_martingale(lp.L, lp.filtration(model), model.weights, tol=0)


def test_l_process_never_default():
    space = coin_space(2, exact=True)
    model = enlarge_progressively(space, tau=[np.inf] * space.n)
    assert all(v == 1 for v in l_process(model).L.ravel())


def test_l_process_stopping_time_is_indicator():
    space = coin_space(3, exact=True)
    model = enlarge_progressively(space, tau_index=first_passage(space, 1))
    lp = l_process(model)
    alive = model.tau_index[:, None] > np.arange(lp.horizon + 1)[None, :]
    assert np.array_equal(lp.L.astype(int), alive.astype(int))


def test_orthogonality_constant_integrands():
    model = constant_cox_model(coin_space(3, exact=True), Q(1, 4))
    one = np.full((model.n, 4), Q(1), dtype=object)
    rep = orthogonality_check(one, model)
    assert rep.projection_violation == 0 and rep.ok
    N = compensated_default_martingale(model)
    assert all(v == 0 for k in range(4) for v in cond_exp(N[:, k], model.F[k], model.weights))
    assert orthogonality_check(np.zeros((model.n, 4), dtype=object), model).ok


def test_orthogonal_projection_fails_without_avoidance():
    space = coin_space(3, exact=True)
    model = enlarge_progressively(space, tau_index=first_passage(space, 1))
    one = np.full((model.n, 4), Q(1), dtype=object)
    assert not orthogonality_check(one, model).ok


def test_projection_formula_unit_claim():
    model = constant_cox_model(coin_space(3, exact=True), Q(1, 5))
    rep = projection_formula(step_z(model, [1, 1, 1]), model)
    defaulted = [1 if t <= 3 else 0 for t in model.tau_index]
    for k in range(4):
        assert list(rep.full[:, k]) == block_mean(defaulted, model.F[k].labels, model.weights)
    assert rep.full_gap == 0 and rep.restricted_gap == 0


def test_projection_formula_step_claim():
    model = constant_cox_model(coin_space(3, exact=True), Q(1, 5))
    rep = projection_formula(step_z(model, [0, 1, 0]), model)
    at2 = [1 if t == 2 else 0 for t in model.tau_index]
    for k in range(4):
        assert list(rep.full[:, k]) == block_mean(at2, model.F[k].labels, model.weights)
    assert rep.full_gap == 0


def test_projection_restricted_without_immersion():
    model = argmax_walk_model(2)
    rep = projection_formula(step_z(model, [Q(2), Q(3)]), model, full=False)
    assert rep.restricted_gap == 0
    with pytest.raises(PreconditionError):
        projection_formula(step_z(model, [1, 1]), model, full=True)


def test_value_defaultable_cases():
    model = uniform_on_coin(2)
    price = value_defaultable(step_z(model, [Q(3), Q(3)]), model)
    assert all(v == 3 for v in price.ravel())
    cox = constant_cox_model(coin_space(3, exact=True), Q(1, 5))
    z = step_z(cox, [Q(1), Q(1, 2), Q(1, 4)])
    price = value_defaultable(z, cox)
    assert np.array_equal(price, direct_price(z, cox))
    for i, t in enumerate(cox.tau_index):
        if t <= 3:
            assert all(price[i, k] == z[i, t] for k in range(t, 4))


def test_represent_independent_time_exact():
    model = uniform_on_coin(3)
    z = step_z(model, [Q(1), Q(1, 2), Q(1, 3)])
    res = represent_z_tau(z, model)
    assert res.residual == 0
    a, m = res.dm_terms[0]
    assert all(v == m[0, 0] for v in m.ravel())
    N = compensated_default_martingale(model)
    recon = res.m0 + np.cumsum(np.c_[np.zeros(model.n, dtype=object), res.dn_integrand[:, 1:] * np.diff(N, axis=1)], axis=1)
    assert np.array_equal(recon, res.price)


def test_represent_unit_claim_reconstructs_constant():
    model = uniform_on_coin(2)
    res = represent_z_tau(step_z(model, [1, 1]), model)
    assert all(v == 1 for v in res.price.ravel())
    assert all(v == 1 for v in res.reconstructed.ravel())


def test_represent_needs_pseudo_stopping():
    with pytest.raises(PreconditionError):
        represent_z_tau(step_z(argmax_walk_model(2), [1, 1]), argmax_walk_model(2))


def test_represent_general_reductions():
    model = constant_cox_model(coin_space(3, exact=True), Q(1, 5))
    z = step_z(model, [Q(1), Q(1, 2), Q(1, 4)])
    ones = np.full(model.n, Q(1), dtype=object)
    gen = represent_general(ones, z, model)
    base = represent_z_tau(z, model)
    assert np.array_equal(gen.price, base.price)
    assert gen.residual == base.residual
    unif = uniform_on_coin(3)
    F = np.array([Q(4 + int(x)) for x in unif.space.driver[:, -1]], dtype=object)
    res = represent_general(F, step_z(unif, [1, 1, 1]), unif)
    assert all(v == 0 for v in res.dn_integrand.ravel())
    EF = np.stack([cond_exp(F, p, unif.weights) for p in unif.F], axis=1)
    assert np.array_equal(res.price, EF)
    assert res.residual == 0


def test_represent_general_sign_handling():
    model = constant_cox_model(coin_space(2, exact=True), Q(1, 5))
    z = step_z(model, [Q(1), Q(1, 2)])
    F = np.array([Q(2 + int(x)) for x in model.space.driver[:, -1]], dtype=object) + 1
    pos = represent_general(F, z, model)
    neg = represent_general(-F, z, model)
    assert np.array_equal(neg.price, -pos.price)
    mixed = F - 2
    if any(v > 0 for v in mixed) and any(v < 0 for v in mixed):
        with pytest.raises(PreconditionError):
            represent_general(mixed, z, model)


def test_orthogonal_decompose_reductions():
    model = constant_cox_model(coin_space(3, exact=True), Q(1, 5))
    M = spanning_martingales(model.F, model.weights)[:, :, 1]
    dec = orthogonal_decompose(M, model)
    assert all(v == 0 for v in dec.h[:, 1:].ravel())
    assert np.array_equal(dec.V, M - M[:, :1])
    N = compensated_default_martingale(model)
    dec = orthogonal_decompose(N, model)
    assert all(v == 1 for v in dec.h[:, 1:].ravel())
    assert all(v == 0 for v in dec.V.ravel())


def test_orthogonal_decompose_recovers_representation():
    model = uniform_on_coin(3)
    z = step_z(model, [Q(1), Q(1, 2), Q(1, 3)])
    res = represent_z_tau(z, model)
    dec = orthogonal_decompose(res.price, model)
    at_risk = model.tau_index[:, None] >= np.arange(1, 4)[None, :]
    assert all(a == b for a, b in zip(dec.h[:, 1:][at_risk], res.dn_integrand[:, 1:][at_risk]))
    assert all(v == 0 for v in dec.V.ravel())


@given(st.integers(0, 10_000), st.sampled_from(TAU_KINDS))
def test_l_process_and_restricted_projection_always_hold(seed, kind):
    rng = np.random.default_rng(seed)
    model = random_model(rng, kind, n_max=40, K_max=5)
    b = azema_bundle(model)
    lp = l_process(model, b)
    assert is_martingale(lp.L, lp.filtration(model), model.weights, tol=1e-12)
    z = predictable(rng, model)
    assert projection_formula(z, model, b, full=False).restricted_gap <= 1e-12
    assert np.max(np.abs(value_defaultable(z, model, b) - direct_price(z, model))) <= 1e-12


@given(st.integers(0, 10_000), st.sampled_from(["cox", "independent"]))
def test_immersion_avoidance_identities(seed, kind):
    rng = np.random.default_rng(seed)
    model = random_model(rng, kind, n_max=48, K_max=5)
    b = azema_bundle(model)
    z = predictable(rng, model)
    rep = projection_formula(z, model, b)
    assert rep.full_gap <= 1e-12
    assert orthogonality_check(predictable(rng, model, -1, 1), model, b, 1e-12).ok
    res = represent_z_tau(z, model, b)
    assert np.allclose(res.price, value_defaultable(z, model, b), atol=1e-12)
    assert res.orthogonality_violation <= 1e-12


@given(st.integers(0, 10_000))
def test_representation_residual_is_common_jump_only(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, "independent", n_max=48, K_max=5)
    z = np.zeros((model.n, model.K + 1))
    z[:, 1:] = rng.uniform(0.1, 1.0, model.K)[None, :]
    res = represent_z_tau(z, model)
    assert res.residual <= 1e-12
