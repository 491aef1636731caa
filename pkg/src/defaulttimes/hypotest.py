"""Diagnostics for immersion, pseudo-stopping and related structural hypotheses.

All checks are exact enumerations over block indicators, so on a finite
space a verdict is a statement about the model rather than an estimate.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InternalInconsistencyError, InvalidDensityError
from .finspace import block_weights, cond_exp, is_martingale, normalize_weights, spanning_martingales


def default_tol(model):
    return 0 if model.exact else 1e-12


def _maxabs(x):
    x = np.asarray(x)
    if x.size == 0:
        return 0.0
    if x.dtype == object:
        return max(abs(v) for v in x.ravel())
    return float(np.max(np.abs(x)))


def _indicators(partition, exact):
    ind = partition.indicators()
    if exact:
        out = np.empty(ind.shape, dtype=object)
        out[...] = 0
        out[ind.astype(bool)] = 1
        return out
    return ind.astype(float)


def _tau_le(model, s):
    mask = model.tau_index <= s
    if model.exact:
        out = np.empty(model.n, dtype=object)
        out[...] = 0
        out[mask] = 1
        return out
    return mask.astype(float)


def immersion_violations(model):
    """Worst violation of each of the four immersion characterizations.

    1. spanning F-martingales are G-martingales;
    2. ``E[F G_t | F_t] = E[F | F_t] E[G_t | F_t]`` for terminal F-indicators
       ``F`` and G_t-block indicators ``G_t``;
    3. ``E[F | G_t] = E[F | F_t]`` for terminal F-indicators;
    4. ``P(tau <= s | F_t) = P(tau <= s | F_K)`` for ``s <= t``.
    """
    F, G, w, K = model.F, model.G, model.weights, model.K
    exact = model.exact
    S = spanning_martingales(F, w)
    v1 = 0
    for k in range(K):
        v1 = max(v1, _maxabs(cond_exp(S[:, k + 1, :] - S[:, k, :], G[k], w)))
    term = _indicators(F.terminal, exact)
    v2 = 0
    v3 = 0
    for k in range(K + 1):
        EF = cond_exp(term, F[k], w)
        v3 = max(v3, _maxabs(cond_exp(term, G[k], w) - EF))
        gind = _indicators(G[k], exact)
        Eg = cond_exp(gind, F[k], w)
        for b in range(gind.shape[1]):
            joint = cond_exp(term * gind[:, b:b + 1], F[k], w)
            v2 = max(v2, _maxabs(joint - EF * Eg[:, b:b + 1]))
    v4 = 0
    for s in range(1, K + 1):
        ind = _tau_le(model, s)
        final = cond_exp(ind, F.terminal, w)
        for t in range(s, K + 1):
            v4 = max(v4, _maxabs(cond_exp(ind, F[t], w) - final))
    return v1, v2, v3, v4


@dataclass(frozen=True)
class ImmersionReport:
    verdicts: tuple
    violations: tuple
    tol: float

    @property
    def holds(self):
        return self.verdicts[0]

    def __bool__(self):
        return self.holds


def check_H(model, tol=None, strict=True):
    """Run all four immersion characterizations; they must agree.

    With ``strict`` a disagreement raises :class:`InternalInconsistencyError`
    (it would mean a bug, the four are equivalent on finite spaces).
    """
    tol = default_tol(model) if tol is None else tol
    viol = immersion_violations(model)
    verdicts = tuple(bool(v <= tol) for v in viol)
    if strict and len(set(verdicts)) > 1:
        raise InternalInconsistencyError(f"immersion characterizations disagree: {viol}")
    return ImmersionReport(verdicts, tuple(float(v) for v in viol), float(tol))


def pseudo_stopping_violation(model, martingales=None):
    """Signed worst ``E[M_{tau ^ T}] - M_0`` over F-martingales.

    ``martingales`` has shape ``(n, K + 1)`` or ``(n, K + 1, m)`` (or is a list of paths); the
    spanning family is used by default.
    """
    if martingales is None:
        S = spanning_martingales(model.F, model.weights)
    elif isinstance(martingales, (list, tuple)):
        S = np.stack([np.asarray(M) for M in martingales], axis=2)
    else:
        S = np.asarray(martingales)
        S = S[:, :, None] if S.ndim == 2 else S
    col = np.minimum(model.tau_index, model.K)
    stopped = S[np.arange(model.n), col, :]
    diff = model.space.expect(stopped) - S[0, 0, :]
    if diff.dtype == object:
        j = max(range(len(diff)), key=lambda i: abs(diff[i]))
    else:
        j = int(np.argmax(np.abs(diff)))
    return diff[j]


def check_pseudo_stopping(model, tol=None, martingales=None):
    tol = default_tol(model) if tol is None else tol
    v = pseudo_stopping_violation(model, martingales)
    return bool(abs(v) <= tol), v


def is_stopping_time(model):
    """``{tau <= t_k}`` is a union of F-blocks at every ``t_k``."""
    idx = model.tau_index
    return all(_uniform_on_blocks(idx <= k, model.F[k].labels) for k in range(1, model.K + 1))


def _uniform_on_blocks(mask, labels):
    nb = labels.max() + 1
    hits = np.bincount(labels, weights=mask.astype(float), minlength=nb)
    sizes = np.bincount(labels, minlength=nb)
    return bool(np.all((hits == 0) | (hits == sizes)))


def check_f_infty_measurable(model):
    """``tau`` is constant on every terminal F-block."""
    lab = model.F.terminal.labels
    idx = model.tau_index
    lo = np.full(lab.max() + 1, np.iinfo(np.int64).max)
    hi = np.full(lab.max() + 1, -1)
    np.minimum.at(lo, lab, idx)
    np.maximum.at(hi, lab, idx)
    return bool(np.all(lo == hi))


def avoidance_gap(model, bundle):
    """``max |dA - da|``: the discrete stand-in for avoidance of F-stopping times."""
    return _maxabs(bundle.dA - bundle.da)


@dataclass(frozen=True)
class HypothesisReport:
    h_verdicts: tuple
    h_violations: tuple
    pseudo_stopping: bool
    pseudo_stopping_violation: float
    f_infty_measurable: bool
    is_stopping_time: bool
    tol: float

    def to_dict(self):
        d = asdict(self)
        d["h_verdicts"] = list(self.h_verdicts)
        d["h_violations"] = list(self.h_violations)
        d["immersion"] = self.h_verdicts[0]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def hypothesis_report(model, tol=None):
    h = check_H(model, tol)
    ps, psv = check_pseudo_stopping(model, h.tol)
    return HypothesisReport(
        h_verdicts=h.verdicts,
        h_violations=h.violations,
        pseudo_stopping=ps,
        pseudo_stopping_violation=float(psv),
        f_infty_measurable=check_f_infty_measurable(model),
        is_stopping_time=is_stopping_time(model),
        tol=h.tol,
    )


# -- non-arbitrage constructions ---------------------------------------------


@dataclass(frozen=True)
class ArbitrageReport:
    """Outcome of the two measure constructions.

    ``q_weights`` is the measure under which every (F, P)-martingale is a
    (G, Q)-martingale; ``p2_weights`` the immersion-preserving measure agreeing
    with the candidate ``P1`` on ``F_K``.  Violations are worst conditional
    drifts; ``p2_f_gap`` is the worst difference of ``P2`` and ``P1`` on
    terminal F-blocks.
    """

    q_weights: np.ndarray
    q_violation: float
    q_ok: bool
    p2_weights: np.ndarray = None
    p2_immersion: bool = None
    p2_f_gap: float = None

    @property
    def ok(self):
        return self.q_ok and (self.p2_immersion is None or (self.p2_immersion and self.p2_f_gap <= 1e-12))


def _density_processes(model, rho):
    """``(e, E)`` for ``rho`` under the model's weights."""
    w = model.weights
    e = np.stack([cond_exp(rho, p, w) for p in model.F], axis=1)
    E = np.stack([cond_exp(rho, p, w) for p in model.G], axis=1)
    return e, E


def transfer_to_g_martingale_measure(model, q_tilde_weights):
    """From ``Q~`` under which immersion holds, build ``Q`` on G with ``dQ/dP = eta_K``.

    ``eta = e / E`` is computed for the density ``dP/dQ~`` with ``Q~`` as the
    reference measure; every (F, P)-martingale is then a (G, Q)-martingale.
    """
    qt = np.asarray(q_tilde_weights)
    if any(not (x > 0) for x in qt):
        raise InvalidDensityError("candidate measure must charge every scenario")
    qt = normalize_weights(qt)
    rho = model.weights / qt
    base = model.with_weights(qt)
    e, E = _density_processes(base, rho)
    eta = e / E
    return normalize_weights(model.weights * eta[:, -1])


def arbitrage_equivalence_suite(model, q_tilde_weights, p1_weights=None, tol=None):
    """Execute the two non-arbitrage constructions and verify them exactly.

    ``q_tilde_weights`` must be a measure under which immersion holds;
    ``p1_weights`` is an optional candidate whose F_K-restriction should be
    transported onto an immersion-preserving measure.
    """
    tol = default_tol(model) if tol is None else tol
    q = transfer_to_g_martingale_measure(model, q_tilde_weights)
    S = spanning_martingales(model.F, model.weights)
    worst = 0
    for b in range(S.shape[2]):
        v = is_martingale(S[:, :, b], model.G, q, tol=tol, check=False)
        worst = max(worst, v.violation)
    report = dict(q_weights=q, q_violation=float(worst), q_ok=bool(worst <= tol))
    if p1_weights is not None:
        qt = normalize_weights(np.asarray(q_tilde_weights))
        p1 = normalize_weights(np.asarray(p1_weights))
        if any(not (x > 0) for x in p1):
            raise InvalidDensityError("candidate measure must charge every scenario")
        term = model.F.terminal
        A = cond_exp(p1 / qt, term, qt)
        p2 = normalize_weights(qt * A)
        gap = _maxabs(_block_total(p2, term) - _block_total(p1, term))
        h = check_H(model.with_weights(p2), tol)
        report.update(p2_weights=p2, p2_immersion=h.holds, p2_f_gap=float(gap))
    return ArbitrageReport(**report)


def _block_total(w, partition):
    return block_weights(partition, w)
