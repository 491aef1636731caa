"""Equivalent changes of measure on a random-time model.

A density ``rho`` is a strictly positive per-scenario weight with ``E[rho] = 1``;
the new measure charges scenario ``i`` with ``rho_i * p_i``.  The density
processes are ``e_k = E[rho | F_k]``, ``E_k = E[rho | G_k]`` and ``eta = e / E``.
"""

from dataclasses import dataclass, field

import numpy as np

from .enlarge import azema_bundle, compensated_default_martingale
from .errors import (
    InvalidDensityError,
    InvalidExponentialError,
    PreconditionError,
    UnsupportedFamilyError,
)
from .finspace import (
    block_spread,
    check_adapted,
    check_predictable,
    cond_exp,
    is_martingale,
    is_measurable,
    is_predictable,
    normalize_weights,
)
from .hypotest import _maxabs, check_H, default_tol

FAMILIES = ("generic", "f-infinity", "fh", "exponential")


@dataclass(frozen=True)
class DensityModel:
    """A density on a random-time model together with its density processes."""

    model: object
    rho: np.ndarray
    e: np.ndarray
    E: np.ndarray
    eta: np.ndarray
    family: str = "generic"
    q_model: object = field(default=None, repr=False)
    params: dict = field(default_factory=dict, repr=False)

    @property
    def q_weights(self):
        return self.q_model.weights


def _processes(model, rho):
    w = model.weights
    e = np.stack([cond_exp(rho, p, w) for p in model.F], axis=1)
    E = np.stack([cond_exp(rho, p, w) for p in model.G], axis=1)
    return e, E


def build_density(model, rho, family="generic", normalize=False, params=None):
    """Wrap ``rho`` as a :class:`DensityModel`; ``normalize`` rescales to unit mean."""
    rho = np.asarray(rho)
    if rho.dtype != object:
        rho = rho.astype(float)
    if rho.shape != (model.n,):
        raise InvalidDensityError("one density value per scenario required")
    bad = [i for i, r in enumerate(rho) if not (r > 0)]
    if bad:
        raise InvalidDensityError(f"density must be strictly positive (scenario {bad[0]})")
    mean = model.space.expect(rho)
    if normalize:
        rho = rho / mean
    elif abs(mean - 1) > (0 if rho.dtype == object else 1e-12):
        raise InvalidDensityError(f"density has mean {mean}, not 1")
    if family not in FAMILIES:
        raise UnsupportedFamilyError(f"unknown density family {family!r}")
    e, E = _processes(model, rho)
    q = model.with_weights(normalize_weights(model.weights * rho))
    return DensityModel(model, rho, e, E, e / E, family, q, dict(params or {}))


def reweight(model, rho):
    """Random-time model (or space) under ``dQ = rho dP``."""
    return model.with_weights(normalize_weights(model.weights * np.asarray(rho)))


def bayes_cond_exp(X, partition, weights, rho):
    """``E_Q[X | block]`` by the abstract Bayes formula ``E[rho X | .] / E[rho | .]``."""
    X = np.asarray(X)
    rho = np.asarray(rho)
    r = rho.reshape((-1,) + (1,) * (X.ndim - 1))
    return cond_exp(r * X, partition, weights) / cond_exp(rho, partition, weights).reshape(r.shape)


def _require_immersion(model, tol=None, what="P"):
    if not check_H(model, tol).holds:
        raise PreconditionError(f"immersion does not hold under {what}")


def girsanov_transfer(X, density, check=True):
    """``I^X_k = X_k + sum_{j<=k} dX_j deta_j / eta_{j-1}`` for an (F, Q)-martingale ``X``.

    Under immersion for P, ``I^X`` is a (G, Q)-martingale.
    """
    model = density.model
    X = np.asarray(X)
    check_adapted(X, model.F, what="X")
    if check:
        _require_immersion(model)
    eta = density.eta
    corr = (X[:, 1:] - X[:, :-1]) * (eta[:, 1:] - eta[:, :-1]) / eta[:, :-1]
    out = X.copy() if X.dtype == object else X.astype(float)
    out = out.astype(object) if corr.dtype == object else out
    out[:, 1:] = X[:, 1:] + np.cumsum(corr, axis=1)
    return out


def jy_condition_violation(density):
    """Worst ``|E[X rho | G_k] / E_k - E[X rho | F_k] / e_k|`` over terminal F-indicators."""
    model = density.model
    w = model.weights
    term = model.F.terminal.indicators()
    if density.rho.dtype == object:
        term = term.astype(int).astype(object)
    Xr = term * density.rho[:, None]
    worst = 0
    for k in range(model.K + 1):
        lhs = cond_exp(Xr, model.G[k], w) / density.E[:, k:k + 1]
        rhs = cond_exp(Xr, model.F[k], w) / density.e[:, k:k + 1]
        worst = max(worst, _maxabs(lhs - rhs))
    return worst


def jy_condition_check(density, tol=None):
    """Verdict of the Jeulin-Yor immersion condition for ``Q``; returns ``(ok, violation)``."""
    tol = default_tol(density.model) if tol is None else tol
    v = jy_condition_violation(density)
    return bool(v <= tol), v


def is_f_infinity(density, tol=None):
    return is_measurable(density.rho, density.model.F.terminal, tol)


@dataclass(frozen=True)
class InvarianceReport:
    z_gap: float
    n_violation: float
    immersion_q: bool

    @property
    def ok(self):
        return self.z_gap <= 1e-12 and self.n_violation <= 1e-12 and self.immersion_q


def f_infty_invariance(density, tol=None):
    """Check that an F_K-measurable density leaves ``Z``, ``N`` and immersion intact."""
    model = density.model
    if not is_f_infinity(density):
        raise PreconditionError("density is not F_K-measurable")
    _require_immersion(model, tol)
    bp = azema_bundle(model)
    bq = azema_bundle(density.q_model)
    N = compensated_default_martingale(model, bp)
    nv = is_martingale(N, model.G, density.q_weights, check=False).violation
    return InvarianceReport(
        z_gap=float(_maxabs(bq.Z - bp.Z)),
        n_violation=float(nv),
        immersion_q=check_H(density.q_model, tol).holds,
    )


# -- FH densities -------------------------------------------------------------


def _at_risk_split(model):
    """Indicators of ``{tau = t_j}`` for ``j < K`` and of ``{tau >= t_K}``."""
    K = model.K
    return [model.tau_index == j for j in range(1, K)], model.tau_index >= K


def fh_factor(model, z):
    """Pre-default factor ``H`` with ``E[H | F_K] = 1`` built from a predictable ``z``.

    ``H = z_tau`` on ``{tau < t_K}``; on ``{tau >= t_K}`` (where the pre-default
    information is all of ``F_K``) ``H`` is the F_K-measurable constant that
    makes the conditional mean one.  ``H`` is therefore measurable w.r.t. the
    partition generated by ``tau`` and the F-history up to ``tau``.
    """
    z = np.asarray(z)
    if z.shape != (model.n, model.K + 1):
        raise InvalidDensityError("z must have shape (n, K + 1)")
    check_predictable(z, model.F, what="z")
    if any(not (v > 0) for v in z[:, 1:].ravel()):
        raise InvalidDensityError("z must be strictly positive")
    w = model.weights
    term = model.F.terminal
    exact = model.exact or z.dtype == object
    H = np.empty(model.n, dtype=object if exact else float)
    early, late = _at_risk_split(model)
    mass = 0
    for j, hit in enumerate(early, start=1):
        H[hit] = z[hit, j]
        ind = hit.astype(int).astype(object) if exact else hit.astype(float)
        mass = mass + z[:, j] * cond_exp(ind, term, w)
    tail_ind = late.astype(int).astype(object) if exact else late.astype(float)
    tail = cond_exp(tail_ind, term, w)
    if any(not (t > 0) for t in tail):
        raise InvalidDensityError("P(tau >= t_K | F_K) vanishes on a block: no room to normalize")
    c = (1 - mass) / tail
    if any(not (v > 0) for v in c[late]):
        raise InvalidDensityError("normalizing constant on {tau >= t_K} is not positive; scale z down")
    H[late] = c[late]
    return H


def build_FH_density(model, F, z):
    """Density ``rho = F * H`` with ``F`` positive F_K-measurable of unit mean and ``H = fh_factor(z)``."""
    F = np.asarray(F)
    if not is_measurable(F, model.F.terminal):
        raise InvalidDensityError("F must be F_K-measurable")
    if any(not (v > 0) for v in F):
        raise InvalidDensityError("F must be strictly positive")
    H = fh_factor(model, z)
    return build_density(model, F * H, family="fh", params={"F": F, "H": H})


@dataclass(frozen=True)
class FHFactorization:
    F: np.ndarray
    H: np.ndarray
    factorizable: bool
    obstruction: float
    cond_mean_gap: float
    product_gap: float


def factorize_FH(density, tol=None):
    """Split ``E_K`` as ``F * H`` with ``F = e_K`` and ``H = 1 / eta_K``.

    ``factorizable`` is true iff ``H`` is constant on blocks of the
    ``(tau, F-history up to tau)`` partition; ``obstruction`` is the worst
    within-block spread of ``H``.
    """
    model = density.model
    tol = default_tol(model) if tol is None else tol
    F = density.e[:, -1]
    H = density.E[:, -1] / F
    spread = block_spread(H, model.f_tau_partition())
    mean_gap = _maxabs(cond_exp(H, model.F.terminal, model.weights) - 1)
    prod_gap = _maxabs(F * H - density.E[:, -1])
    return FHFactorization(F, H, bool(spread <= tol), spread, mean_gap, prod_gap)


# -- exponential densities ----------------------------------------------------


def exponential_density(model, F_proc, H_proc, m, bundle=None):
    """Density ``prod (1 + F dm) (1 + H dN)`` with ``F`` G-predictable and ``H`` F-predictable.

    Both factors must stay positive on every scenario and step.  The product
    is a P-martingale when immersion holds and default mass is F-predictable
    (``dA = da``); its terminal value must have unit mean.
    """
    if bundle is None:
        bundle = azema_bundle(model)
    F_proc = np.asarray(F_proc)
    H_proc = np.asarray(H_proc)
    m = np.asarray(m)
    check_predictable(F_proc, model.G, what="F_proc")
    check_predictable(H_proc, model.F, what="H_proc")
    check_adapted(m, model.F, what="m")
    N = compensated_default_martingale(model, bundle)
    f1 = 1 + F_proc[:, 1:] * (m[:, 1:] - m[:, :-1])
    f2 = 1 + H_proc[:, 1:] * (N[:, 1:] - N[:, :-1])
    for fac, name in ((f1, "1 + F dm"), (f2, "1 + H dN")):
        if fac.dtype == object:
            bad = np.argwhere(np.vectorize(lambda v: not (v > 0), otypes=[bool])(fac))
        else:
            bad = np.argwhere(~(fac > 0))
        if len(bad):
            i, k = bad[0]
            raise InvalidExponentialError(f"{name} is not positive", scenario=int(i), time_index=int(k) + 1)
    prod = f1 * f2
    Eproc = np.empty((model.n, model.K + 1), dtype=prod.dtype)
    Eproc[:, 0] = 1
    Eproc[:, 1:] = np.cumprod(prod, axis=1)
    rho = Eproc[:, -1]
    mean = model.space.expect(rho)
    if abs(mean - 1) > (0 if model.exact else 1e-12):
        raise PreconditionError(f"stochastic exponential has mean {mean}: not a martingale on this model")
    params = {"F_proc": F_proc, "H_proc": H_proc, "m": m, "E_product": Eproc}
    return build_density(model, rho, family="exponential", params=params)


def exponential_q_hazard(dLambda, H_proc):
    """Exact per-step Q-hazard ``dLambda (1 + H (1 - dLambda))`` of an exponential density."""
    return dLambda * (1 + H_proc * (1 - dLambda))


@dataclass(frozen=True)
class QAzema:
    """Q-side default quantities and their agreement with the exponential-density formulas.

    ``hazard_gap``: exact discrete Q-hazard vs the Q-bundle (on reachable blocks).
    ``nq_violation``: martingale violation of ``N^Q`` under Q (exact compensator).
    ``nq_linear_violation``: same with the first-order ``(1 + H) dLambda`` compensator.
    ``zq_product_gap``: ``Z^Q`` vs ``prod (1 - dLambda^Q)``; ``zq_continuous_gap``
    vs ``exp(-sum (1 + H) dGamma)``.  ``immersion_q`` is only computed when
    ``F_proc`` is F-predictable.
    """

    ZQ: np.ndarray
    dLambdaQ: np.ndarray
    NQ: np.ndarray
    hazard_gap: float
    nq_violation: float
    nq_linear_violation: float
    zq_product_gap: float
    zq_continuous_gap: float
    immersion_q: bool = None


def azema_under_Q(model, density, bundle=None, immersion=True):
    if density.family != "exponential":
        raise UnsupportedFamilyError("exponential-density formulas need an exponential density")
    if bundle is None:
        bundle = azema_bundle(model)
    if not bundle.positive[:, :-1].all():
        raise PreconditionError("Z must stay positive before the horizon")
    H_proc = density.params["H_proc"]
    F_proc = density.params["F_proc"]
    bq = azema_bundle(density.q_model)
    K = model.K
    dL = bundle.dLambda
    hz = exponential_q_hazard(dL, H_proc)
    hz[:, 0] = 0
    at_risk = model.tau_index[:, None] >= np.arange(1, K + 1)[None, :]
    gap = _maxabs((bq.dLambda[:, 1:] - hz[:, 1:])[at_risk])
    q = density.q_weights
    NQ = model.default_indicator() - np.cumsum(np.where(np.c_[np.zeros((model.n, 1), bool), at_risk], hz, 0), axis=1)
    lin = dL * (1 + H_proc)
    lin[:, 0] = 0
    NQ_lin = model.default_indicator() - np.cumsum(np.where(np.c_[np.zeros((model.n, 1), bool), at_risk], lin, 0), axis=1)
    nqv = is_martingale(NQ, model.G, q, check=False).violation
    nql = is_martingale(NQ_lin, model.G, q, check=False).violation
    surv = np.ones((model.n, K + 1), dtype=bq.Z.dtype)
    surv[:, 1:] = np.cumprod(1 - bq.dLambda[:, 1:], axis=1)
    prod_gap = _maxabs(bq.Z - surv)
    Zf = bundle.Z.astype(float)
    dGamma = np.zeros_like(Zf)
    with np.errstate(divide="ignore", invalid="ignore"):
        dGamma[:, 1:] = np.log(Zf[:, :-1] / Zf[:, 1:])
    Hf = H_proc.astype(float)
    cont = np.exp(-np.cumsum((1 + Hf) * dGamma, axis=1))
    finite = np.isfinite(cont)
    cont_gap = float(np.max(np.abs(bq.Z.astype(float) - cont)[finite])) if finite.any() else float("nan")
    imm = None
    if immersion and is_predictable(F_proc, model.F):
        imm = check_H(density.q_model).holds
    return QAzema(bq.Z, bq.dLambda, NQ, float(gap), float(nqv), float(nql), float(prod_gap), cont_gap, imm)


def independence_density(model):
    """Density making ``tau`` independent of ``F_K`` with unchanged marginals.

    ``rho = P(tau = j) / P(tau = j | F_K)`` on ``{tau = t_j}``; every pair
    (terminal F-block, default index) must carry positive mass.
    """
    w = model.weights
    term = model.F.terminal
    exact = model.exact
    rho = np.empty(model.n, dtype=object if exact else float)
    pairs = set(zip(term.labels.tolist(), model.tau_index.tolist()))
    values = sorted(set(model.tau_index.tolist()))
    if len(pairs) != term.n_blocks * len(values):
        raise InvalidDensityError("some (F_K-block, default time) pair has zero mass")
    for j in values:
        hit = model.tau_index == j
        ind = hit.astype(int).astype(object) if exact else hit.astype(float)
        cond = cond_exp(ind, term, w)
        marg = model.space.expect(ind)
        rho[hit] = marg / cond[hit]
    return build_density(model, rho, family="generic")
