"""Grid-refinement studies: discrete-exact quantities against continuous closed forms.

The model families live on a regime driver that switches at most once
(from 0 to 1) at rate ``kappa``.  With ``K`` steps there are only ``K + 1``
driver paths, so a Cox time on top gives about ``(K + 1)**2`` scenarios and
every quantity can be computed exactly even at ``dt = 2**-7``.
"""

from dataclasses import dataclass

import numpy as np

from .enlarge import azema_bundle, cox_construct
from .finspace import FiniteFilteredSpace, TimeGrid, natural_filtration
from .measure import azema_under_Q, exponential_density
from .represent import represent_general, represent_z_tau

ZERO_ERROR = 1e-12


def regime_space(K, T=1.0, kappa=1.0):
    """Space of one-switch regime paths; scenario ``j`` switches at ``t_j`` (``j = K + 1``: never)."""
    dt = T / K
    q = -np.expm1(-kappa * dt)
    j = np.arange(1, K + 2)
    driver = (np.arange(K + 1)[None, :] >= j[:, None]).astype(np.int64)
    w = np.where(j <= K, (1 - q) ** (j - 1) * q, (1 - q) ** K)
    return FiniteFilteredSpace(w / w.sum(), TimeGrid.uniform(K, T), natural_filtration(driver), driver)


def _lagged(values):
    """Predictable layout: column ``k`` holds the regime at ``t_{k-1}``."""
    out = np.zeros(values.shape, dtype=float)
    out[:, 1:] = values[:, :-1]
    return out


@dataclass(frozen=True)
class CoxFamily:
    """Cox time on the regime space with intensity ``lam0 + lam1 * regime``.

    ``exact_step`` uses per-step hazard ``1 - exp(-lambda dt)`` (so the hazard
    process is exactly the integrated intensity); otherwise ``lambda dt``.
    The claim ``z`` and the terminal factor ``F`` also depend on the regime.
    """

    lam0: float = 1.0
    lam1: float = 0.0
    kappa: float = 1.0
    T: float = 1.0
    exact_step: bool = False
    z0: float = 1.0
    z1: float = 0.5
    F0: float = 1.0
    F1: float = 1.0

    def build(self, K):
        space = regime_space(K, self.T, self.kappa)
        dt = self.T / K
        lam = self.lam0 + self.lam1 * _lagged(space.driver)
        hazard = -np.expm1(-lam * dt) if self.exact_step else lam * dt
        hazard[:, 0] = 0
        model = cox_construct(space, hazard)
        reg = space.driver[model.origin].astype(float)
        intensity = self.lam0 + self.lam1 * _lagged(reg)
        z = self.z0 + self.z1 * _lagged(reg)
        z[:, 0] = 0
        F = self.F0 + self.F1 * reg[:, -1]
        cum = np.zeros((model.n, K + 1))
        cum[:, 1:] = np.cumsum(intensity[:, 1:] * dt, axis=1)
        return model, {"intensity": intensity, "integrated": cum, "z": z, "F": F}


def gamma_error(family, K):
    """``max |Gamma_k - int_0^{t_k} lambda|`` over scenarios and grid times."""
    model, aux = family.build(K)
    b = azema_bundle(model)
    return float(np.max(np.abs(b.Gamma - aux["integrated"])))


def zq_error(family, K, c=0.5):
    """``max |Z^Q_k - exp(-(1 + c) int lambda)|`` for the exponential density with ``F = 0``, ``H = c``."""
    model, aux = family.build(K)
    b = azema_bundle(model)
    zero = np.zeros((model.n, K + 1))
    H = np.full((model.n, K + 1), c)
    dens = exponential_density(model, zero, H, zero, b)
    qa = azema_under_Q(model, dens, b, immersion=False)
    closed = np.exp(-(1 + c) * aux["integrated"])
    return float(np.max(np.abs(qa.ZQ.astype(float) - closed)))


def representation_error(family, K, general=False):
    """``E[max_k |price - reconstruction|]`` of the defaultable-claim representation."""
    model, aux = family.build(K)
    b = azema_bundle(model)
    if general:
        res = represent_general(aux["F"], aux["z"], model, b, check=False)
    else:
        res = represent_z_tau(aux["z"], model, b, check=False)
    return res.mean_residual


@dataclass(frozen=True)
class RefinementTable:
    dts: tuple
    errors: tuple
    order: float
    monotone: bool
    min_order: float

    @property
    def all_zero(self):
        return all(e <= ZERO_ERROR for e in self.errors)

    @property
    def ok(self):
        if self.all_zero:
            return True
        return self.monotone and self.order >= self.min_order

    def rows(self):
        return [(dt, err) for dt, err in zip(self.dts, self.errors)]


def fit_order(dts, errors):
    """Least-squares slope of ``log error`` against ``log dt``."""
    dts = np.asarray(dts, dtype=float)
    err = np.asarray(errors, dtype=float)
    if np.any(err <= ZERO_ERROR):
        return float("nan")
    return float(np.polyfit(np.log(dts), np.log(err), 1)[0])


def refinement_harness(error_fn, Ks=(8, 16, 32, 64, 128), T=1.0, min_order=0.9, slack=1e-9):
    """Evaluate ``error_fn(K)`` across halvings of ``dt = T / K`` and fit the order.

    Needs at least three grids.  ``monotone`` is false when the error grows
    from one halving to the next beyond ``slack``.
    """
    Ks = tuple(int(k) for k in Ks)
    if len(Ks) < 3:
        raise ValueError("need at least three grids")
    errors = tuple(float(error_fn(K)) for K in Ks)
    dts = tuple(T / K for K in Ks)
    monotone = all(b <= a * (1 + 1e-6) + slack for a, b in zip(errors, errors[1:]))
    return RefinementTable(dts, errors, fit_order(dts, errors), monotone, min_order)


CONSTANT_HAZARD = CoxFamily(lam0=1.0, lam1=0.0)
STOCHASTIC_HAZARD = CoxFamily(lam0=0.5, lam1=1.5, kappa=1.5, F1=2.0)
