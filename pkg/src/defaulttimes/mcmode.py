"""Monte Carlo layer: Euler paths, the Kusuoka filtering model, regression
conditional expectations and statistical martingale tests.

Random numbers are counter-based: paths are grouped in fixed blocks of
``BLOCK`` and block ``b`` draws from a Philox stream keyed by ``(seed, b)``.
Path ``i`` is therefore the same whatever the number of workers, and all
reductions run over arrays assembled in path order.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import BasisError, SimulationError

BLOCK = 256


def block_normals(seed, block, n, shape):
    """``n`` independent standard-normal arrays of ``shape`` from stream ``(seed, block)``."""
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, block], dtype=np.uint64)))
    return gen.standard_normal((n,) + tuple(shape))


def block_uniforms(seed, block, n, shape):
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, block + 2**40], dtype=np.uint64)))
    return gen.random((n,) + tuple(shape))


@dataclass(frozen=True)
class SdeSpec:
    """``dX = drift(t, X) dt + diffusion(t, X) dW`` with diagonal noise.

    ``drift`` and ``diffusion`` take ``(t, x)`` with ``x`` of shape ``(n, d)``
    and return ``(n, d)``.  ``absorb`` optionally names ``(component, level)``:
    that component is frozen at ``level`` from the first grid time it is at or
    below it.
    """

    drift: object
    diffusion: object
    x0: tuple
    absorb: tuple = None

    @property
    def dim(self):
        return len(self.x0)


@dataclass(frozen=True)
class PathTable:
    times: np.ndarray
    values: np.ndarray
    seed: int
    noise: np.ndarray = field(default=None, repr=False)
    hit_index: np.ndarray = field(default=None, repr=False)

    @property
    def n_paths(self):
        return self.values.shape[0]


def _grid_times(grid):
    return np.asarray(getattr(grid, "times", grid), dtype=float)


def _simulate_block(spec, times, seed, block, n, bridge):
    K = len(times) - 1
    d = spec.dim
    dt = np.diff(times)
    dW = block_normals(seed, block, n, (K, d)) * np.sqrt(dt)[None, :, None]
    u = block_uniforms(seed, block, n, (K,)) if bridge else None
    x = np.empty((n, K + 1, d))
    x[:, 0, :] = np.asarray(spec.x0, dtype=float)
    hit = np.full(n, K + 1)
    comp, level = spec.absorb if spec.absorb is not None else (None, None)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            cur = x[:, k, :]
            mu = np.asarray(spec.drift(times[k], cur), dtype=float)
            sig = np.asarray(spec.diffusion(times[k], cur), dtype=float)
            nxt = cur + mu * dt[k] + sig * dW[:, k, :]
            if comp is not None:
                alive = hit > k
                crossed = alive & (nxt[:, comp] <= level)
                if bridge:
                    a = cur[:, comp] - level
                    b = nxt[:, comp] - level
                    s2 = np.maximum(sig[:, comp] ** 2 * dt[k], 1e-300)
                    p = np.where((a > 0) & (b > 0), np.exp(-2 * a * b / s2), 0.0)
                    crossed |= alive & (u[:, k] < p)
                hit = np.where(crossed, k + 1, hit)
                dead = hit <= k + 1
                nxt[dead, comp] = np.where(hit[dead] == k + 1, level, cur[dead, comp])
            if not np.all(np.isfinite(nxt)):
                bad = int(np.argmax(~np.all(np.isfinite(nxt), axis=1)))
                raise SimulationError("non-finite state", path=block * BLOCK + bad, step=k + 1)
            x[:, k + 1, :] = nxt
    return x, dW, hit


def simulate_paths(spec, grid, n_paths, seed, workers=1, bridge=False):
    """Euler-Maruyama paths of shape ``(n_paths, K + 1, d)``.

    ``bridge`` adds a Brownian-bridge crossing test between grid points for
    the absorbed component.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    times = _grid_times(grid)
    blocks = [(b, min(BLOCK, n_paths - b * BLOCK)) for b in range((n_paths + BLOCK - 1) // BLOCK)]

    def run(item):
        b, n = item
        try:
            return _simulate_block(spec, times, seed, b, n, bridge)
        except SimulationError as err:
            raise SimulationError(str(err), path=err.path, step=err.step) from None

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(item) for item in blocks]
    x = np.concatenate([p[0] for p in parts])
    dW = np.concatenate([p[1] for p in parts])
    hit = np.concatenate([p[2] for p in parts])
    return PathTable(times, x, seed, dW, hit)


def export_paths(table, path, names=None):
    """Write a path table as CSV with header ``path,time_index,time,<names>``."""
    d = table.values.shape[2]
    names = names or [f"x{i}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "time_index", "time", *names])
        for i in range(table.n_paths):
            for k, t in enumerate(table.times):
                w.writerow([i, k, repr(float(t)), *(repr(float(v)) for v in table.values[i, k])])


# -- regression ---------------------------------------------------------------


def polynomial_features(x, degree=3, extra=()):
    """Columns ``1, x, ..., x**degree`` followed by ``extra`` columns."""
    x = np.asarray(x, dtype=float)
    cols = [np.ones_like(x)] + [x**p for p in range(1, degree + 1)] + [np.asarray(e, dtype=float) for e in extra]
    return np.column_stack(cols)


def default_basis(y, k):
    """Default regression basis at ``t_k``: cubic in ``Y_k`` plus the running minimum of ``Y``.

    At ``t_0`` the information is trivial and only the intercept remains.
    """
    if k == 0:
        return np.ones((y.shape[0], 1))
    return polynomial_features(y[:, k], 3, extra=(y[:, : k + 1].min(axis=1),))


def linear_basis(y, k):
    """``1, Y_k`` and the running minimum of ``Y``; intercept only at ``t_0``.

    Used for tests on default-indicator increments, whose rare binary
    outcomes make sandwich variances unreliable against cubic regressors.
    """
    if k == 0:
        return np.ones((y.shape[0], 1))
    return np.column_stack([np.ones(y.shape[0]), y[:, k], y[:, : k + 1].min(axis=1)])


@dataclass(frozen=True)
class Regression:
    coef: np.ndarray
    cov: np.ndarray
    fitted: np.ndarray
    residual_rms: float
    oof_mse: float

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coef

    def stderr(self):
        return np.sqrt(np.diag(self.cov))


def _wls(X, y, w):
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    coef, *_ = np.linalg.lstsq(Xw, y * sw, rcond=None)
    return coef


def regression_cond_exp(target, X, weights=None, folds=5, rank_tol=1e-10):
    """Least-squares estimate of ``E[target | span(X)]`` with an HC3 sandwich covariance.

    ``weights`` turns it into weighted least squares (for reweighted measures).
    Raises :class:`BasisError` when the design is rank deficient.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(target, dtype=float)
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    s = np.linalg.svd(Xs * np.sqrt(w)[:, None], compute_uv=False)
    if n < p or s[-1] <= rank_tol * s[0]:
        raise BasisError(f"design of rank < {p} columns")
    coef = _wls(X, y, w)
    fitted = X @ coef
    resid = y - fitted
    Xw = X * w[:, None]
    bread = np.linalg.inv(X.T @ Xw)
    lev = np.einsum("ij,jk,ik->i", Xw, bread, X)
    adj = resid / np.clip(1 - lev, 1e-8, None)
    meat = (Xw * adj[:, None] ** 2).T @ (X * w[:, None])
    cov = bread @ meat @ bread
    oof = np.nan
    if folds and n >= 2 * folds:
        err = np.empty(n)
        idx = np.arange(n) % folds
        for f in range(folds):
            tr, te = idx != f, idx == f
            c = _wls(X[tr], y[tr], w[tr])
            err[te] = y[te] - X[te] @ c
        oof = float(np.average(err**2, weights=w))
    return Regression(coef, cov, fitted, float(np.sqrt(np.average(resid**2, weights=w))), oof)


def wald_test(reg, index=None):
    """Chi-square Wald test that the selected coefficients vanish; returns ``(stat, pvalue)``."""
    idx = np.arange(len(reg.coef)) if index is None else np.asarray(index)
    b = reg.coef[idx]
    V = reg.cov[np.ix_(idx, idx)]
    stat = float(b @ np.linalg.pinv(V) @ b)
    return stat, float(stats.chi2.sf(stat, len(idx)))


@dataclass(frozen=True)
class MartingaleTest:
    pvalues: np.ndarray
    adjusted: np.ndarray
    level: float

    @property
    def reject(self):
        return bool(np.any(self.adjusted < self.level))

    @property
    def min_pvalue(self):
        return float(np.min(self.adjusted))


def holm(pvalues):
    p = np.asarray(pvalues, dtype=float)
    order = np.argsort(p, kind="stable")
    m = len(p)
    adj = np.empty(m)
    running = 0.0
    for rank, i in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[i]))
        adj[i] = running
    return adj


def statistical_martingale_test(X, features, level=0.01, weights=None, masks=None):
    """Per-step test of ``E[X_k - X_{k-1} | features_{k-1}] = 0``.

    ``features`` is a list (one design matrix per step ``k = 1..K``, built from
    information at ``t_{k-1}``) or a callable ``k -> design``.  ``masks``
    optionally restricts step ``k`` to a subset of paths.  Steps where the
    increment is identically zero are reported with p-value 1.  The family-wise
    decision uses Holm's correction.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    X = np.asarray(X, dtype=float)
    K = X.shape[1] - 1
    pv = np.ones(K)
    for k in range(1, K + 1):
        design = features(k) if callable(features) else features[k - 1]
        dx = X[:, k] - X[:, k - 1]
        w = weights
        if masks is not None:
            m = masks[k - 1]
            dx, design = dx[m], design[m]
            w = None if weights is None else np.asarray(weights)[m]
        if dx.size == 0 or np.all(dx == dx[0]) and dx[0] == 0:
            continue
        reg = regression_cond_exp(dx, design, w, folds=0)
        pv[k - 1] = wald_test(reg)[1]
    return MartingaleTest(pv, holm(pv), level)


# -- Kusuoka filtering model ---------------------------------------------------


@dataclass(frozen=True)
class KusuokaSpec:
    """Hidden ``dX = sigma1 dB1 + b dt`` and observed ``dY = sigma2 dB2 + mu(t, X_{t ^ tau}, Y) dt``.

    ``mu = coupling * X_{t ^ tau} + drift_y * Y``; ``tau`` is the first grid
    time with ``X <= 0``.  The two drivers are independent.
    """

    x0: float = 1.0
    sigma1: float = 1.0
    b: float = 0.0
    y0: float = 0.0
    sigma2: float = 1.0
    coupling: float = 1.0
    drift_y: float = 0.0
    T: float = 1.0

    def mu(self, t, x, y):
        return self.coupling * x + self.drift_y * y

    def sde(self):
        def drift(t, s):
            return np.column_stack([np.full(len(s), self.b), self.mu(t, s[:, 0], s[:, 1])])

        def diffusion(t, s):
            return np.column_stack([np.full(len(s), self.sigma1), np.full(len(s), self.sigma2)])

        return SdeSpec(drift, diffusion, (self.x0, self.y0), absorb=(0, 0.0))


@dataclass(frozen=True)
class KusuokaRun:
    spec: KusuokaSpec
    times: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    tau_index: np.ndarray
    density: np.ndarray
    seed: int

    @property
    def K(self):
        return len(self.times) - 1

    @property
    def n_paths(self):
        return len(self.tau_index)


def drift_removal_density(spec, times, X, Y, dB2):
    """Girsanov weight removing the X-dependent part of the observation drift.

    Under the reweighted measure ``Y`` has drift ``drift_y * Y`` only, the law
    of ``X`` is unchanged and ``tau`` is independent of ``Y``.
    """
    dt = np.diff(times)
    theta = (spec.mu(times[:-1], X[:, :-1], Y[:, :-1]) - spec.drift_y * Y[:, :-1]) / spec.sigma2
    log_rho = -(theta * dB2).sum(axis=1) - 0.5 * (theta**2 * dt[None, :]).sum(axis=1)
    rho = np.exp(log_rho)
    return rho / rho.mean()


def kusuoka_scenario(spec, n_steps, n_paths, seed, workers=1, bridge=False):
    if spec.sigma2 == 0:
        raise SimulationError("observation noise is degenerate: sigma2 = 0")
    times = np.linspace(0.0, spec.T, n_steps + 1)
    table = simulate_paths(spec.sde(), times, n_paths, seed, workers=workers, bridge=bridge)
    X = table.values[:, :, 0]
    Y = table.values[:, :, 1]
    rho = drift_removal_density(spec, times, X, Y, table.noise[:, :, 1])
    return KusuokaRun(spec, times, X, Y, table.hit_index, rho, seed)


@dataclass(frozen=True)
class ImmersionTest:
    """Test of ``P(tau <= t_s | F_s) = P(tau <= t_s | F_T)``: do future observations predict past default?"""

    s_index: int
    statistic: float
    pvalue: float
    level: float

    @property
    def reject(self):
        return self.pvalue < self.level


def immersion_violation_test(run, s_index=None, level=0.01, weights=None):
    """Regress ``1{tau <= t_s}`` on the F_s basis plus post-``s`` observation features and
    Wald-test the latter."""
    K = run.K
    s = K // 2 if s_index is None else s_index
    D = (run.tau_index <= s).astype(float)
    inc = run.Y[:, -1] - run.Y[:, s]
    fut_min = run.Y[:, s:].min(axis=1) - run.Y[:, s]
    base = default_basis(run.Y, s)
    design = np.column_stack([base, inc, inc**2, fut_min])
    reg = regression_cond_exp(D, design, weights, folds=0)
    stat, p = wald_test(reg, np.arange(base.shape[1], design.shape[1]))
    return ImmersionTest(s, stat, p, level)


def default_hazard(run, weights=None):
    """Step hazard ``P(tau = t_k | tau >= t_k)`` estimated from the sample (optionally weighted)."""
    w = np.ones(run.n_paths) if weights is None else weights
    K = run.K
    haz = np.zeros(K + 1)
    for k in range(1, K + 1):
        risk = run.tau_index >= k
        den = w[risk].sum()
        haz[k] = w[risk & (run.tau_index == k)].sum() / den if den > 0 else 0.0
    return haz


def compensated_default(run, hazard):
    """``N_k = 1{tau <= t_k} - sum_{j <= k, j <= tau} hazard_j`` per path."""
    k = np.arange(run.K + 1)
    at_risk = run.tau_index[:, None] >= k[None, :]
    inc = np.where(at_risk, hazard[None, :], 0.0)
    inc[:, 0] = 0
    return (run.tau_index[:, None] <= k[None, :]).astype(float) - np.cumsum(inc, axis=1)


def event_windows(tau_index, K, min_events=300):
    """Window boundaries ``0 = b_0 < ... < b_m = K`` with at least ``min_events`` defaults in each
    window ``(b_{j-1}, b_j]`` (a short tail is merged into the last full window)."""
    counts = np.bincount(np.clip(tau_index, 0, K + 1), minlength=K + 2)[: K + 1]
    bounds = [0]
    acc = 0
    for k in range(1, K + 1):
        acc += counts[k]
        if acc >= min_events:
            bounds.append(k)
            acc = 0
    if bounds[-1] != K:
        if len(bounds) > 1:
            bounds[-1] = K
        else:
            bounds.append(K)
    return np.array(bounds)


def compensated_default_test(run, level=0.01, reweight=True, min_events=300, basis=linear_basis):
    """Martingale test of the compensated default indicator in G.

    With ``reweight`` the drift-removal density is applied both to the hazard
    estimate and to the regressions; the hazard is then F-free, so the
    compensator is deterministic.  Steps are pooled into windows with at
    least ``min_events`` defaults; the increment over a window is tested
    against the observation basis at the window start, on paths alive then.
    """
    w = run.density if reweight else None
    N = compensated_default(run, default_hazard(run, w))
    b = event_windows(run.tau_index, run.K, min_events)
    masks = [run.tau_index > b[j - 1] for j in range(1, len(b))]
    feats = [basis(run.Y, b[j - 1]) for j in range(1, len(b))]
    return statistical_martingale_test(N[:, b], feats, level, w, masks)


def null_size(spec, n_steps, n_paths, seeds, level=0.01, workers=1):
    """Empirical rejection rate of the immersion test over independent replications."""
    rejections = []
    for sd in seeds:
        run = kusuoka_scenario(spec, n_steps, n_paths, sd, workers=workers)
        rejections.append(immersion_violation_test(run, level=level).reject)
    rate = float(np.mean(rejections))
    se = float(np.sqrt(level * (1 - level) / len(seeds)))
    return rate, se


def simulate_cox_times(intensity, times, seed):
    """First time the integrated ``intensity`` (shape ``(n, K + 1)``, predictable) exceeds an Exp(1) threshold."""
    n = intensity.shape[0]
    dt = np.diff(times)
    cum = np.zeros(intensity.shape)
    cum[:, 1:] = np.cumsum(intensity[:, 1:] * dt[None, :], axis=1)
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, 2**41], dtype=np.uint64)))
    e = gen.exponential(size=n)
    crossed = cum >= e[:, None]
    K = len(times) - 1
    return np.where(crossed.any(axis=1), crossed.argmax(axis=1), K + 1)


def regression_decomposition(M, dW, dN, features):
    """Fit ``dM_k ~ R_k dW_k + h_k dN_k`` with ``R``, ``h`` linear in ``features(k - 1)``.

    Returns per-step coefficient arrays and the RMS of what the two
    integrals leave unexplained.
    """
    K = M.shape[1] - 1
    resid = np.zeros(K)
    coefs = []
    for k in range(1, K + 1):
        base = features(k - 1)
        design = np.column_stack([base * dW[:, k - 1:k], base * dN[:, k - 1:k]])
        keep = np.linalg.norm(design, axis=0) > 0
        dm = M[:, k] - M[:, k - 1]
        coef, *_ = np.linalg.lstsq(design[:, keep], dm, rcond=None)
        full = np.zeros(design.shape[1])
        full[keep] = coef
        coefs.append(full)
        resid[k - 1] = float(np.sqrt(np.mean((dm - design[:, keep] @ coef) ** 2)))
    return coefs, resid


def cox_survival_check(intensity, times, seed):
    """Monte Carlo survival of a Cox time against the exact conditional survival.

    Given the intensity paths, ``P(tau > t_k | lambda) = exp(-sum_j lambda_j dt_j)``
    exactly; returns ``(mc, exact, stderr)`` curves over the grid.
    """
    K = len(times) - 1
    idx = simulate_cox_times(intensity, times, seed)
    alive = idx[:, None] > np.arange(K + 1)[None, :]
    cum = np.zeros(intensity.shape)
    cum[:, 1:] = np.cumsum(intensity[:, 1:] * np.diff(times)[None, :], axis=1)
    mc = alive.mean(axis=0)
    se = np.sqrt(np.maximum(mc * (1 - mc), 1e-300) / len(idx))
    return mc, np.exp(-cum).mean(axis=0), se


@dataclass(frozen=True)
class McRun:
    seed: int
    n_paths: int
    n_steps: int
    estimates: dict
    stderrs: dict


def kusuoka_diagnostics(spec, n_steps, n_paths, seed, null_seeds=(), level=0.01, workers=1):
    """Detector on the given dynamics, its size under decoupled dynamics and the
    compensated-default test with and without the drift-removal density."""
    run = kusuoka_scenario(spec, n_steps, n_paths, seed, workers=workers)
    det = immersion_violation_test(run, level=level)
    q = compensated_default_test(run, level, reweight=True)
    p = compensated_default_test(run, level, reweight=False)
    w = run.density
    est = {
        "default_rate": float(np.mean(run.tau_index <= run.K)),
        "detector_statistic": det.statistic,
        "detector_pvalue": det.pvalue,
        "detector_reject": det.reject,
        "q_martingale_min_adjusted_pvalue": q.min_pvalue,
        "q_martingale_reject": q.reject,
        "p_martingale_min_adjusted_pvalue": p.min_pvalue,
        "p_martingale_reject": p.reject,
        "density_ess_fraction": float(w.sum() ** 2 / (w**2).sum() / len(w)),
    }
    se = {"default_rate": float(np.sqrt(est["default_rate"] * (1 - est["default_rate"]) / n_paths))}
    if len(null_seeds):
        decoupled = KusuokaSpec(**{**spec.__dict__, "coupling": 0.0})
        rate, rse = null_size(decoupled, n_steps, n_paths, null_seeds, level, workers)
        est["null_rejection_rate"] = rate
        est["null_size_ok"] = abs(rate - level) <= 2 * rse
        se["null_rejection_rate"] = rse
    return McRun(seed, n_paths, n_steps, est, se), run
