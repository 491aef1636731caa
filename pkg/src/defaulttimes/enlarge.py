"""Random times, progressive enlargement and the Azéma bundle.

A random time lives on the grid: ``tau_index[i] = j`` means ``tau = t_j``
(``1 <= j <= K``) and ``j = K + 1`` encodes ``tau = +inf``.  The enlarged
filtration G adds at each ``t_k`` the information ``tau * 1{tau <= t_k}``,
so that ``{tau = t_k}`` and ``{tau > t_k}`` are separated and ``tau`` is a
G stopping time.
"""

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import DegenerateHazardError, InvalidSpaceError
from .finspace import (
    FiniteFilteredSpace,
    Filtration,
    Partition,
    TimeGrid,
    check_adapted,
    check_predictable,
    cond_exp,
    join_partitions,
    martingale_defects,
)


def _zeros_like_weights(weights, shape):
    if np.asarray(weights).dtype == object:
        out = np.empty(shape, dtype=object)
        out[...] = 0
        return out
    return np.zeros(shape)


def _indicator(mask, exact):
    if exact:
        out = np.empty(mask.shape, dtype=object)
        out[...] = 0
        out[mask] = 1
        return out
    return mask.astype(float)


@dataclass(frozen=True)
class RandomTimeModel:
    """A grid-valued random time on a finite filtered space, with its enlargement G.

    ``origin`` maps scenarios back to a base space when the model was built
    as a product (Cox construction, independent times).
    """

    space: FiniteFilteredSpace
    tau_index: np.ndarray
    G: Filtration = field(default=None, compare=False)
    origin: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        idx = np.asarray(self.tau_index, dtype=np.int64)
        K = self.space.K
        if idx.shape != (self.space.n,):
            raise InvalidSpaceError("one default index per scenario required")
        if np.any((idx < 1) | (idx > K + 1)):
            raise InvalidSpaceError("default indices must lie in 1..K (or K+1 for never)")
        idx.setflags(write=False)
        object.__setattr__(self, "tau_index", idx)
        if self.G is None:
            object.__setattr__(self, "G", _enlarged_filtration(self.space.filtration, idx))

    @property
    def F(self):
        return self.space.filtration

    @property
    def weights(self):
        return self.space.weights

    @property
    def n(self):
        return self.space.n

    @property
    def K(self):
        return self.space.K

    @property
    def exact(self):
        return self.space.exact

    @property
    def tau(self):
        """Default times as floats, ``inf`` for never."""
        times = np.append(self.space.grid.times.astype(float), np.inf)
        return times[self.tau_index]

    def alive(self, k):
        """Boolean mask of ``{tau > t_k}``."""
        return self.tau_index > k

    def default_indicator(self):
        """``1{tau <= t_k}`` as an ``(n, K + 1)`` array."""
        k = np.arange(self.K + 1)
        return _indicator(self.tau_index[:, None] <= k[None, :], self.exact)

    def stopped(self, X):
        """``X`` stopped at tau: column ``k`` holds ``X_{min(k, tau)}``."""
        X = np.asarray(X)
        cols = np.minimum(np.arange(self.K + 1)[None, :], np.minimum(self.tau_index, self.K)[:, None])
        return np.take_along_axis(X, cols, axis=1)

    def at_default(self, z, at_infinity=0):
        """``z_tau`` for a process ``z`` in the predictable layout; ``at_infinity`` on ``{tau = inf}``."""
        z = np.asarray(z)
        never = self.tau_index > self.K
        col = np.minimum(self.tau_index, self.K)
        out = z[np.arange(self.n), col].copy()
        if out.dtype == object or np.asarray(at_infinity).dtype == object:
            out = out.astype(object)
        out[never] = np.broadcast_to(np.asarray(at_infinity, dtype=out.dtype), out.shape)[never]
        return out

    def with_weights(self, weights):
        """Same random time and filtrations under another measure."""
        return replace(self, space=self.space.with_weights(weights))

    def f_tau_partition(self):
        """Partition generated by ``(tau, F-history up to tau)``; on ``{tau = inf}`` by ``F_K``."""
        col = np.minimum(self.tau_index, self.K)
        F_labels = np.stack([p.labels for p in self.F], axis=1)
        hist = F_labels[np.arange(self.n), col]
        return Partition(self.tau_index * (hist.max() + 1) + hist)


def _enlarged_filtration(F, tau_index):
    parts = []
    for k, part in enumerate(F):
        info = Partition(np.minimum(tau_index, k + 1))
        parts.append(join_partitions(part, info))
    return Filtration(tuple(parts), "G")


def tau_to_index(grid, tau):
    lookup = {t: j for j, t in enumerate(grid.times)}
    out = np.empty(len(tau), dtype=np.int64)
    for i, t in enumerate(tau):
        if t == np.inf or t is None:
            out[i] = grid.K + 1
        elif t in lookup and lookup[t] >= 1:
            out[i] = lookup[t]
        else:
            raise InvalidSpaceError(f"default time {t!r} is not a positive grid time")
    return out


def enlarge_progressively(space, tau=None, *, tau_index=None):
    """Random time model with ``G_t = F_t v sigma(tau ^ t)`` (tau a G stopping time).

    Pass either grid times ``tau`` (``np.inf`` for never) or indices ``tau_index``.
    """
    if tau_index is None:
        tau_index = tau_to_index(space.grid, tau)
    model = RandomTimeModel(space, tau_index)
    stop = model.default_indicator()
    check_adapted(stop, model.G, what="1{tau <= t}")
    return model


@dataclass(frozen=True)
class AzemaBundle:
    """Azéma supermartingale and the processes derived from it, all ``(n, K + 1)``.

    ``dA``/``da`` are increments of the dual optional/predictable projections
    (column 0 is zero), ``m`` is the Doob-Meyer martingale with ``Z = m - a``,
    ``mu = A + Z``, ``dLambda = da / Z_{k-1}`` (zero where ``Z_{k-1} = 0``),
    ``Gamma = -log Z`` (NaN where ``Z = 0``) and ``Z = Z0 * Z1`` is the
    multiplicative decomposition.  ``T0`` is the first index with ``Z = 0``
    (``K + 1`` if never).
    """

    Z: np.ndarray
    dA: np.ndarray
    A: np.ndarray
    da: np.ndarray
    a: np.ndarray
    m: np.ndarray
    mu: np.ndarray
    dLambda: np.ndarray
    Lambda: np.ndarray
    Gamma: np.ndarray
    Z0: np.ndarray
    Z1: np.ndarray
    T0: np.ndarray

    @property
    def positive(self):
        """True where ``Z > 0``."""
        return np.asarray(self.Z > 0, dtype=bool)

    @property
    def gamma_defined(self):
        """Hazard process defined on the whole horizon (``Z > 0`` everywhere)."""
        return bool(self.positive.all())


def _cumsum(x):
    return np.cumsum(x, axis=1)


def multiplicative_decomposition(Z, filtration, weights):
    """Discrete Itô-Watanabe factorization of a nonnegative supermartingale.

    Returns ``(Z0, Z1, dLambda)`` with ``Z1_k = prod_{j<=k} (1 - dLambda_j)``
    predictable and non-increasing, ``Z0`` a martingale and ``Z = Z0 * Z1``.
    ``dLambda_k = -E[Z_k - Z_{k-1} | part_{k-1}] / Z_{k-1}`` (0 where
    ``Z_{k-1} = 0``).  Where ``Z1`` reaches 0, ``Z0`` is frozen at its
    previous value.
    """
    Z = np.asarray(Z)
    exact = Z.dtype == object
    drift = martingale_defects(Z, filtration, weights)
    n, K1 = Z.shape
    dLam = _zeros_like_weights(weights, Z.shape)
    Z1 = _zeros_like_weights(weights, Z.shape)
    Z0 = _zeros_like_weights(weights, Z.shape)
    Z1[:, 0] = 1
    Z0[:, 0] = Z[:, 0]
    for k in range(1, K1):
        prev = Z[:, k - 1]
        pos = np.array([p > 0 for p in prev]) if exact else prev > 0
        step = _zeros_like_weights(weights, n)
        step[pos] = -drift[pos, k - 1] / prev[pos]
        if not exact:
            # a full hazard must kill Z1 exactly, not leave rounding dust
            step[np.abs(1 - step) <= 1e-12] = 1.0
        dLam[:, k] = step
        Z1[:, k] = Z1[:, k - 1] * (1 - step)
        live = np.array([x > 0 for x in Z1[:, k]]) if exact else Z1[:, k] > 0
        Z0[:, k] = Z0[:, k - 1]
        Z0[live, k] = Z[live, k] / Z1[live, k]
    return Z0, Z1, dLam


def azema_bundle(model):
    """Compute the Azéma bundle of ``model`` exactly by conditional expectations."""
    w = model.weights
    F = model.F
    K, n = model.K, model.n
    exact = model.exact
    idx = model.tau_index
    Z = _zeros_like_weights(w, (n, K + 1))
    dA = _zeros_like_weights(w, (n, K + 1))
    da = _zeros_like_weights(w, (n, K + 1))
    for k in range(K + 1):
        Z[:, k] = cond_exp(_indicator(idx > k, exact), F[k], w)
        if k >= 1:
            hit = _indicator(idx == k, exact)
            dA[:, k] = cond_exp(hit, F[k], w)
            da[:, k] = cond_exp(hit, F[k - 1], w)
    A = _cumsum(dA)
    a = _cumsum(da)
    Z0, Z1, dLam = multiplicative_decomposition(Z, F, w)
    # the generic compensator equals da / Z_{k-1} for an Azéma supermartingale
    Zf = Z.astype(float)
    with np.errstate(divide="ignore"):
        Gamma = np.where(Zf > 0, -np.log(np.where(Zf > 0, Zf, 1.0)), np.nan)
    zero = Zf <= 0
    T0 = np.where(zero.any(axis=1), zero.argmax(axis=1), K + 1)
    return AzemaBundle(
        Z=Z, dA=dA, A=A, da=da, a=a, m=Z + a, mu=A + Z,
        dLambda=dLam, Lambda=_cumsum(dLam), Gamma=Gamma,
        Z0=Z0, Z1=Z1, T0=T0,
    )


def ito_watanabe(bundle):
    """``(Z0, Z1)`` with ``Z = Z0 * Z1``; ``bundle.T0`` marks the truncation time."""
    return bundle.Z0, bundle.Z1


def compensated_default_martingale(model, bundle=None):
    """``N_k = 1{tau <= t_k} - sum_{j <= k, j <= tau} da_j / Z_{j-1}``, a G-martingale."""
    if bundle is None:
        bundle = azema_bundle(model)
    idx = model.tau_index
    K = model.K
    Zprev = bundle.Z[:, :-1]
    at_risk = idx[:, None] >= np.arange(1, K + 1)[None, :]
    if np.any(at_risk & ~np.asarray(Zprev > 0, dtype=bool)):
        raise DegenerateHazardError("Z vanishes before default on a reachable scenario")
    comp = _zeros_like_weights(model.weights, (model.n, K + 1))
    comp[:, 1:] = np.where(at_risk, bundle.dLambda[:, 1:], 0)
    return model.default_indicator() - _cumsum(comp)


def jeulin_yor_stopped_decomposition(M, model, bundle=None):
    """Decompose an F-martingale stopped at tau as ``M^tau = Mtilde + drift``.

    The drift increment at ``t_k`` on ``{tau >= t_k}`` is
    ``E[dM_k dmu_k | F_{k-1}] / Z_{k-1}``; ``Mtilde`` is a G-martingale.
    """
    if bundle is None:
        bundle = azema_bundle(model)
    M = np.asarray(M)
    check_adapted(M, model.F, what="M")
    w = model.weights
    K = model.K
    dM = M[:, 1:] - M[:, :-1]
    dmu = bundle.mu[:, 1:] - bundle.mu[:, :-1]
    drift_inc = _zeros_like_weights(w, (model.n, K + 1))
    for k in range(1, K + 1):
        cov = cond_exp(dM[:, k - 1] * dmu[:, k - 1], model.F[k - 1], w)
        at_risk = model.tau_index >= k
        drift_inc[at_risk, k] = cov[at_risk] / bundle.Z[at_risk, k - 1]
    drift = _cumsum(drift_inc)
    return model.stopped(M) - drift, drift


def cox_construct(space, hazard):
    """Cox-type default time driven by an F-predictable per-step hazard.

    ``hazard[:, k]`` (``k >= 1``, values in ``[0, 1)``) is the conditional
    probability of default in ``(t_{k-1}, t_k]`` given survival.  Each base
    scenario is split into copies carrying ``tau = t_j`` with weight
    ``w * S_{j-1} * h_j`` and ``tau = inf`` with weight ``w * S_K``, where
    ``S_k = prod_{i <= k} (1 - h_i)``; zero-weight copies are dropped.  This
    is the law of first crossing of an independent uniform threshold, and
    gives ``Z_k = S_k``.
    """
    hazard = np.asarray(hazard)
    K = space.K
    if hazard.shape != (space.n, K + 1):
        raise InvalidSpaceError("hazard must have shape (n, K + 1)")
    check_predictable(hazard, space.filtration, what="hazard")
    h = hazard[:, 1:]
    if any(not (0 <= x < 1) for x in h.ravel()):
        raise InvalidSpaceError("hazard values must lie in [0, 1)")
    exact = space.exact or hazard.dtype == object
    S = np.ones((space.n, K + 1), dtype=object if exact else float)
    S[:, 1:] = np.cumprod(1 - h, axis=1)
    copies = np.concatenate([S[:, :-1] * h, S[:, -1:]], axis=1)
    return _product_model(space, copies)


def independent_time(space, law):
    """Default time independent of everything in ``space`` with ``P(tau = t_j) = law[j - 1]``.

    ``law`` has ``K + 1`` entries, the last being ``P(tau = inf)``.
    """
    law = np.asarray(law)
    if len(law) != space.K + 1:
        raise InvalidSpaceError("law needs K + 1 entries (last one for tau = inf)")
    if any(x < 0 for x in law) or abs(float(sum(law)) - 1) > 1e-12:
        raise InvalidSpaceError("law must be a probability vector")
    return _product_model(space, np.broadcast_to(law, (space.n, space.K + 1)))


def _product_model(space, copies):
    """Split each scenario ``i`` into copies ``j = 1..K+1`` with relative weight ``copies[i, j-1]``."""
    K = space.K
    w = space.weights
    rows, cols = [], []
    for i in range(space.n):
        for j in range(K + 1):
            if copies[i, j] > 0:
                rows.append(i)
                cols.append(j + 1)
    origin = np.asarray(rows, dtype=np.int64)
    tau_index = np.asarray(cols, dtype=np.int64)
    if space.exact or copies.dtype == object:
        new_w = np.array([w[i] * copies[i, j - 1] for i, j in zip(origin, tau_index)], dtype=object)
    else:
        new_w = w[origin] * copies[origin, tau_index - 1].astype(float)
        new_w = new_w / new_w.sum()
    parts = tuple(Partition(p.labels[origin]) for p in space.filtration)
    driver = None if space.driver is None else np.asarray(space.driver)[origin]
    new_space = FiniteFilteredSpace(new_w, space.grid, Filtration(parts, space.filtration.name), driver)
    return RandomTimeModel(new_space, tau_index, origin=origin)


def lift(values, model):
    """Lift an array defined on the base space of a product model to the model's scenarios."""
    if model.origin is None:
        return np.asarray(values)
    return np.asarray(values)[model.origin]


# -- serialization ---------------------------------------------------------

MODEL_SCHEMA = "defaulttimes.model"
MODEL_VERSION = 1


def _enc(x):
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    raise TypeError(f"cannot encode {type(x)}")


def _dec(x, exact):
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(x) if exact else float(x)


def model_to_dict(model):
    sp = model.space
    driver = None
    if sp.driver is not None:
        driver = np.vectorize(_enc, otypes=[object])(np.asarray(sp.driver)).tolist()
    return {
        "schema": MODEL_SCHEMA,
        "version": MODEL_VERSION,
        "exact": bool(sp.exact),
        "grid": [_enc(t) for t in sp.grid.times],
        "weights": [_enc(x) for x in sp.weights],
        "partitions": [p.labels.tolist() for p in sp.filtration],
        "driver": driver,
        "tau_index": model.tau_index.tolist(),
        "origin": None if model.origin is None else model.origin.tolist(),
    }


def model_from_dict(doc):
    if doc.get("schema") != MODEL_SCHEMA:
        raise InvalidSpaceError("not a serialized random time model")
    if doc.get("version") != MODEL_VERSION:
        raise InvalidSpaceError(f"unsupported model version {doc.get('version')}")
    exact = bool(doc["exact"])
    dtype = object if exact else float
    grid = TimeGrid(np.array([_dec(t, exact) for t in doc["grid"]], dtype=dtype))
    weights = np.array([_dec(x, exact) for x in doc["weights"]], dtype=dtype)
    filt = Filtration(tuple(Partition(p) for p in doc["partitions"]), "F")
    driver = doc.get("driver")
    if driver is not None:
        raw = np.array(driver, dtype=object)
        driver = np.vectorize(lambda v: _dec(v, exact), otypes=[object])(raw)
        if not exact:
            driver = driver.astype(float)
    space = FiniteFilteredSpace(weights, grid, filt, driver)
    origin = doc.get("origin")
    return RandomTimeModel(space, np.asarray(doc["tau_index"]),
                           origin=None if origin is None else np.asarray(origin))


def model_to_json(model):
    return json.dumps(model_to_dict(model), indent=1, sort_keys=True)


def model_from_json(text):
    return model_from_dict(json.loads(text))
