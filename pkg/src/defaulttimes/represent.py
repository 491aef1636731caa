"""Valuation of defaultable claims and martingale representation in G.

A claim pays ``z_tau`` at default, with ``z`` F-predictable (column ``k`` known
at ``t_{k-1}``) and ``z_inf = 0``.  Discrete integrands are always predictable,
so every martingale statement here is exact; where a continuous-time
representation has no exact discrete counterpart the gap is returned as a
residual instead of being asserted away.
"""

from dataclasses import dataclass, field

from fractions import Fraction

import numpy as np

from .enlarge import azema_bundle, compensated_default_martingale
from .errors import IllPosedProjectionError, PreconditionError
from .finspace import (
    Filtration,
    check_predictable,
    cond_exp,
    integrate,
    is_martingale,
    is_measurable,
    spanning_martingales,
)
from .hypotest import _maxabs, check_H, check_pseudo_stopping, default_tol


def _like(model, shape):
    if model.exact:
        out = np.empty(shape, dtype=object)
        out[...] = 0
        return out
    return np.zeros(shape)


def _ind(mask, exact):
    return mask.astype(int).astype(object) if exact else mask.astype(float)


def _safe_div(num, den, exact):
    num = np.asarray(num)
    den = np.asarray(den)
    out = np.empty(np.broadcast(num, den).shape, dtype=object if exact else float)
    out[...] = 0
    num, den = np.broadcast_arrays(num, den)
    ok = np.array([d != 0 for d in den.ravel()]).reshape(den.shape) if exact else den != 0
    if exact:
        # int / int would silently produce a float
        out[ok] = [Fraction(a) / b for a, b in zip(num[ok], den[ok])]
    else:
        out[ok] = num[ok] / den[ok]
    return out


def z_at_default(z, model):
    """``z_tau`` per scenario, zero where ``tau = inf``."""
    return model.at_default(np.asarray(z), at_infinity=0)


@dataclass(frozen=True)
class LProcess:
    L: np.ndarray
    horizon: int

    def filtration(self, model):
        return Filtration(model.G.partitions[: self.horizon + 1], "G")


def l_process(model, bundle=None):
    """``L_k = 1{tau > t_k} / Z_k`` up to the last grid time before ``Z`` can vanish."""
    if bundle is None:
        bundle = azema_bundle(model)
    pos = bundle.positive.all(axis=0)
    horizon = int(np.argmin(pos)) - 1 if not pos.all() else model.K
    alive = _ind(model.tau_index[:, None] > np.arange(horizon + 1)[None, :], model.exact)
    L = _safe_div(alive, bundle.Z[:, : horizon + 1], model.exact)
    return LProcess(L, horizon)


@dataclass(frozen=True)
class OrthogonalityReport:
    projection_violation: float
    product_violation: float
    tol: float

    @property
    def ok(self):
        return self.projection_violation <= self.tol and self.product_violation <= self.tol


def orthogonality_check(H, model, bundle=None, tol=None):
    """``E[sum H dN | F_k] = 0`` and ``M * sum H dN`` a G-martingale for spanning F-martingales ``M``."""
    tol = default_tol(model) if tol is None else tol
    if bundle is None:
        bundle = azema_bundle(model)
    H = np.asarray(H)
    check_predictable(H, model.F, what="H")
    N = compensated_default_martingale(model, bundle)
    I = integrate(H, N)
    w = model.weights
    proj = 0
    for k in range(model.K + 1):
        proj = max(proj, _maxabs(cond_exp(I[:, k], model.F[k], w)))
    S = spanning_martingales(model.F, w)
    prod = 0
    for b in range(S.shape[2]):
        prod = max(prod, is_martingale(S[:, :, b] * I, model.G, w, tol=tol, check=False).violation)
    return OrthogonalityReport(float(proj), float(prod), tol)


@dataclass(frozen=True)
class ProjectionReport:
    """Both sides of the projection formulas, column ``k`` conditioned on ``F_k``.

    ``restricted``: ``E[z_tau 1{tau > t_k} | F_k]``; ``restricted_gap`` against
    ``E[sum_{j > k} z_j dA_j | F_k]`` (exact for every random time).
    ``full``: ``E[z_tau | F_k]``; ``full_gap`` against ``E[sum_j z_j dA_j | F_k]``
    (exact under immersion; ``None`` when not requested).
    ``gamma_gap``: difference between ``dA`` and its hazard-process form
    ``exp(-Gamma_{k-1}) (Gamma_k - Gamma_{k-1})`` inside the full formula.
    """

    restricted: np.ndarray
    restricted_gap: float
    full: np.ndarray = None
    full_gap: float = None
    gamma_gap: float = None


def _conditioned(X, model):
    w = model.weights
    return np.stack([cond_exp(X if X.ndim == 1 else X[:, k], model.F[k], w) for k in range(model.K + 1)], axis=1)


def projection_formula(z, model, bundle=None, full=True, check=True):
    if bundle is None:
        bundle = azema_bundle(model)
    z = np.asarray(z)
    check_predictable(z, model.F, what="z")
    exact = model.exact
    K = model.K
    ztau = z_at_default(z, model)
    zdA = z * bundle.dA
    zdA[:, 0] = 0
    tail = np.cumsum(zdA[:, ::-1], axis=1)[:, ::-1]
    after = _like(model, (model.n, K + 1))
    after[:, :-1] = tail[:, 1:]
    restricted = np.stack(
        [cond_exp(ztau * _ind(model.tau_index > k, exact), model.F[k], model.weights) for k in range(K + 1)], axis=1
    )
    gap_i = _maxabs(restricted - _conditioned(after, model))
    if not full:
        return ProjectionReport(restricted, float(gap_i))
    if check and not check_H(model).holds:
        raise PreconditionError("the unrestricted projection formula needs immersion")
    lhs = _conditioned(ztau, model)
    rhs = _conditioned(tail[:, 0], model)
    gap_ii = _maxabs(lhs - rhs)
    gamma_gap = None
    if bundle.gamma_defined:
        G = bundle.Gamma
        form = np.zeros((model.n, K + 1))
        form[:, 1:] = np.exp(-G[:, :-1]) * (G[:, 1:] - G[:, :-1])
        gamma_gap = float(np.max(np.abs((z.astype(float) * (form - bundle.dA.astype(float)))[:, 1:].sum(axis=1))))
    return ProjectionReport(restricted, float(gap_i), lhs, float(gap_ii), gamma_gap)


def value_defaultable(z, model, bundle=None):
    """Price ``E[z_tau | G_k]`` via ``L_k E[z_tau 1{tau > t_k} | F_k] + z_tau 1{tau <= t_k}``."""
    if bundle is None:
        bundle = azema_bundle(model)
    z = np.asarray(z)
    exact = model.exact
    ztau = z_at_default(z, model)
    K = model.K
    out = _like(model, (model.n, K + 1))
    for k in range(K + 1):
        alive = model.tau_index > k
        pre = cond_exp(ztau * _ind(alive, exact), model.F[k], model.weights)
        live = _safe_div(pre, bundle.Z[:, k], exact)
        out[:, k] = np.where(alive, live, ztau)
    return out


def direct_price(z, model):
    """``E[z_tau | G_k]`` by plain conditioning, for cross-checks."""
    ztau = z_at_default(z, model)
    return np.stack([cond_exp(ztau, p, model.weights) for p in model.G], axis=1)


@dataclass(frozen=True)
class RepresentationResult:
    """``price = m0 + sum_i integrate(a_i, m_i) + integrate(dn_integrand, N) + residual``.

    ``dm_terms`` is a list of ``(integrand, martingale)`` pairs; integrands are
    G-predictable, ``dn_integrand`` is F-predictable.  ``residual`` is the
    worst path-wise reconstruction error, ``mean_residual`` its expectation
    ``E[max_k |price_k - reconstructed_k|]``.
    """

    m0: object
    dm_terms: list
    dn_integrand: np.ndarray
    reconstructed: np.ndarray
    price: np.ndarray
    residual: float
    mean_residual: float
    orthogonality_violation: float
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def dm_integrand(self):
        return self.dm_terms[0][0] if self.dm_terms else None


def _residuals(price, recon, model):
    diff = np.abs((price - recon).astype(float))
    per_path = diff.max(axis=1)
    return float(per_path.max()), float(np.dot(model.weights.astype(float), per_path))


def represent_z_tau(z, model, bundle=None, check=True):
    """Split the price of ``z_tau`` into a ``dm`` part and a ``dN`` part.

    With ``m_k = E[sum_j z_j dA_j | F_k]`` and ``h_k = (m_k - sum_{j<=k} z_j dA_j) / Z_k``
    the integrands are ``1{tau >= t_k} / (Z_{k-1} (1 - dLambda_k))`` against ``m``
    and ``(z_k - h_{k-1}) / (1 - dLambda_k)`` against ``N``.  The reconstruction
    is exact unless ``m`` moves on the default step; that common-jump term is
    what ``residual`` measures.
    """
    if bundle is None:
        bundle = azema_bundle(model)
    if check and not check_pseudo_stopping(model)[0]:
        raise PreconditionError("representation needs a pseudo-stopping time (e.g. immersion)")
    z = np.asarray(z)
    check_predictable(z, model.F, what="z")
    exact = model.exact
    K = model.K
    zdA = z * bundle.dA
    zdA[:, 0] = 0
    paid = np.cumsum(zdA, axis=1)
    m = _conditioned(paid[:, -1], model)
    h = _safe_div(m - paid, bundle.Z, exact)
    dL = bundle.dLambda
    surv = 1 - dL[:, 1:]
    a = _like(model, (model.n, K + 1))
    b = _like(model, (model.n, K + 1))
    at_risk = model.tau_index[:, None] >= np.arange(1, K + 1)[None, :]
    a[:, 1:] = np.where(at_risk, _safe_div(1, bundle.Z[:, :-1] * surv, exact), 0)
    b[:, 1:] = _safe_div(z[:, 1:] - h[:, :-1], surv, exact)
    N = compensated_default_martingale(model, bundle)
    Im = integrate(a, m)
    In = integrate(b, N)
    recon = m[:, :1] + Im + In
    price = value_defaultable(z, model, bundle)
    res, mean_res = _residuals(price, recon, model)
    orth = is_martingale(Im * In, model.G, model.weights, tol=np.inf, check=False).violation
    return RepresentationResult(
        m0=m[0, 0], dm_terms=[(a, m)], dn_integrand=b, reconstructed=recon, price=price,
        residual=res, mean_residual=mean_res, orthogonality_violation=float(orth),
        extras={"m": m, "h": h, "N": N},
    )


def represent_general(F, z, model, bundle=None, check=True):
    """Representation of ``E[F z_tau | G_k]`` for F_K-measurable ``F`` of one strict sign.

    The claim is priced under ``dQ~ = F / E[F] dP`` (an F_K-measurable change,
    so ``Z`` and immersion are unchanged), then transported back with
    ``m^F_k = E[F | F_k] / E[F]`` by the exact discrete product rule.
    Integrands: ``X_{k-1} - a_k m~_{k-1}`` against ``m^F``, ``a_k`` against
    ``m^G = m^F m~`` and ``m^F_{k-1} b_k`` against ``N`` (all times ``E[F]``),
    where ``X``, ``a``, ``b``, ``m~`` come from the Q~ representation.
    """
    F = np.asarray(F)
    if not is_measurable(F, model.F.terminal):
        raise PreconditionError("F must be F_K-measurable")
    if all(v < 0 for v in F):
        res = represent_general(-F, z, model, bundle, check)
        return _negate(res)
    if any(not (v > 0) for v in F):
        raise PreconditionError("F must be nonzero and of one sign")
    if bundle is None:
        bundle = azema_bundle(model)
    if check and not check_H(model).holds:
        raise PreconditionError("representation of F z_tau needs immersion")
    w = model.weights
    c = model.space.expect(F)
    Fh = F / c
    qmodel = model.with_weights(w * Fh)
    qbundle = azema_bundle(qmodel)
    inner = represent_z_tau(z, qmodel, qbundle, check=False)
    a, mt = inner.dm_terms[0]
    b = inner.dn_integrand
    X = inner.price
    mF = _conditioned(Fh, model)
    mG = mF * mt
    K = model.K
    alpha = _like(model, (model.n, K + 1))
    beta = _like(model, (model.n, K + 1))
    gamma = _like(model, (model.n, K + 1))
    alpha[:, 1:] = c * (X[:, :-1] - a[:, 1:] * mt[:, :-1])
    beta[:, 1:] = c * a[:, 1:]
    gamma[:, 1:] = c * mF[:, :-1] * b[:, 1:]
    N = compensated_default_martingale(model, bundle)
    recon = c * X[:, :1] + integrate(alpha, mF) + integrate(beta, mG) + integrate(gamma, N)
    price = c * mF * X
    res, mean_res = _residuals(price, recon, model)
    Ifv = integrate(alpha, mF) + integrate(beta, mG)
    orth = is_martingale(Ifv * integrate(gamma, N), model.G, w, tol=np.inf, check=False).violation
    return RepresentationResult(
        m0=c * X[0, 0], dm_terms=[(alpha, mF), (beta, mG)], dn_integrand=gamma, reconstructed=recon,
        price=price, residual=res, mean_residual=mean_res, orthogonality_violation=float(orth),
        extras={"mF": mF, "mG": mG, "inner": inner, "scale": c},
    )


def _negate(res):
    return RepresentationResult(
        m0=-res.m0, dm_terms=[(-a, m) for a, m in res.dm_terms], dn_integrand=-res.dn_integrand,
        reconstructed=-res.reconstructed, price=-res.price, residual=res.residual,
        mean_residual=res.mean_residual, orthogonality_violation=res.orthogonality_violation, extras=res.extras,
    )


@dataclass(frozen=True)
class OrthogonalDecomposition:
    """``M = M_0 + V + sum h dN`` with ``h`` F-predictable.

    ``h_g`` is the G-predictable projection coefficient itself; ``h`` is its
    F-predictable version (taken from the pre-default part of each block).
    ``orthogonality_violation``: worst drift of ``V * sum h dN`` in G.
    """

    V: np.ndarray
    h: np.ndarray
    h_g: np.ndarray
    orthogonality_violation: float


def orthogonal_decompose(M, model, bundle=None, tol=None, check=True):
    """Project ``dM`` onto ``dN`` conditionally on ``G_{k-1}``; the remainder is ``V``."""
    if bundle is None:
        bundle = azema_bundle(model)
    tol = default_tol(model) if tol is None else tol
    if check and not check_H(model).holds:
        raise PreconditionError("orthogonal decomposition needs immersion")
    M = np.asarray(M)
    exact = model.exact or M.dtype == object
    w = model.weights
    K = model.K
    N = compensated_default_martingale(model, bundle)
    dM = M[:, 1:] - M[:, :-1]
    dN = N[:, 1:] - N[:, :-1]
    hg = _like(model, (model.n, K + 1))
    hf = _like(model, (model.n, K + 1))
    for k in range(1, K + 1):
        part = model.G[k - 1]
        cov = cond_exp(dM[:, k - 1] * dN[:, k - 1], part, w)
        var = cond_exp(dN[:, k - 1] * dN[:, k - 1], part, w)
        degenerate = np.array([v == 0 for v in var]) if exact else var <= 1e-15
        if np.any(degenerate & (np.abs(cov.astype(float)) > (0 if exact else 1e-12))):
            raise IllPosedProjectionError(f"dN is conditionally degenerate with nonzero covariance at t_{k}")
        hg[:, k] = _safe_div(np.where(degenerate, 0, cov), np.where(degenerate, 1, var), exact)
        alive = _ind(model.tau_index >= k, exact)
        mass = cond_exp(alive, model.F[k - 1], w)
        hf[:, k] = _safe_div(cond_exp(hg[:, k] * alive, model.F[k - 1], w), mass, exact)
    In = integrate(hg, N)
    V = M - M[:, :1] - In
    orth = is_martingale(V * In, model.G, w, tol=np.inf, check=False).violation
    return OrthogonalDecomposition(V, hf, hg, float(orth))
