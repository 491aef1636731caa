"""Build models from scenario configs, run suites, write reports.

A suite returns ``(summary, tables, hard_ok)``.  ``hard_ok`` covers identities
that must hold for the model at hand; structural findings such as the
absence of immersion are recorded without failing the run.
"""

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np

from . import __version__
from .config import config_hash, evaluate_expression, number
from .enlarge import (
    azema_bundle,
    compensated_default_martingale,
    enlarge_progressively,
    independent_time,
    jeulin_yor_stopped_decomposition,
)
from .errors import ConfigError, DefaultTimesError
from .finspace import Filtration, FiniteFilteredSpace, Partition, TimeGrid, is_martingale, spanning_martingales
from .hypotest import avoidance_gap, check_H, default_tol, hypothesis_report
from .measure import (
    azema_under_Q,
    build_density,
    build_FH_density,
    exponential_density,
    f_infty_invariance,
    factorize_FH,
    girsanov_transfer,
    independence_density,
    jy_condition_check,
)
from .mcmode import (
    KusuokaSpec,
    compensated_default_test,
    event_windows,
    immersion_violation_test,
    kusuoka_scenario,
)
from .refinement import (
    CONSTANT_HAZARD,
    STOCHASTIC_HAZARD,
    gamma_error,
    refinement_harness,
    regime_space,
    representation_error,
    zq_error,
)
from .represent import (
    direct_price,
    l_process,
    orthogonality_check,
    projection_formula,
    represent_general,
    represent_z_tau,
    value_defaultable,
)
from .scenarios import argmax_time, coin_space, constant_cox_model, first_passage, random_space, random_stopping_index

REPORT_SCHEMA = "defaulttimes.report"
REPORT_VERSION = 1

ENV_OUT = "DEFAULTTIMES_OUT"


def _fmt(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return _fmt(obj)


def _cell(x):
    x = _fmt(x)
    if isinstance(x, float):
        return repr(x)
    return str(x)


# -- model construction -----------------------------------------------------------


def build_space(doc, rng):
    sp = doc["space"]
    exact = doc["mode"] == "exact"
    kind = sp["kind"]
    K = sp.get("K", 2)
    if kind == "coin":
        p = number(sp["p"], exact) if "p" in sp else None
        return coin_space(K, exact=exact, p=p)
    if kind == "regime":
        if exact:
            raise ConfigError("regime spaces are float-only")
        return regime_space(K, sp.get("T", 1.0), sp.get("kappa", 1.0))
    if kind == "random":
        return random_space(rng, n=sp.get("n", 16), K=K, exact=exact)
    one = np.array([Fraction(1)], dtype=object) if exact else np.array([1.0])
    parts = tuple(Partition.trivial(1) for _ in range(K + 1))
    return FiniteFilteredSpace(one, TimeGrid.uniform(K, exact=exact), Filtration(parts))


def build_model(doc):
    """Space and random time described by ``doc``; configuration problems raise :class:`ConfigError`."""
    rng = np.random.default_rng(doc.get("seed", 0))
    exact = doc["mode"] == "exact"
    try:
        space = build_space(doc, rng)
        t = doc["tau"]
        kind = t["kind"]
        if kind == "cox":
            if "hazard" not in t:
                raise ConfigError("cox default time needs a hazard")
            return constant_cox_model(space, number(t["hazard"], exact))
        if kind == "independent":
            if "law" not in t:
                raise ConfigError("independent default time needs a law")
            law = np.array([number(x, exact) for x in t["law"]], dtype=object if exact else float)
            return independent_time(space, law)
        if space.driver is None and kind in ("argmax", "first_passage"):
            raise ConfigError(f"{kind} default time needs a space with a driver")
        if kind == "argmax":
            idx = argmax_time(space)
        elif kind == "first_passage":
            idx = first_passage(space, t.get("level", 1))
        elif kind == "stopping":
            idx = random_stopping_index(rng, space)
        else:
            idx = rng.integers(1, space.K + 2, size=space.n)
        return enlarge_progressively(space, tau_index=idx)
    except DefaultTimesError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"cannot build model: {err}") from None


def _terminal_values(expr, model):
    if model.space.driver is None:
        x = np.zeros(model.n, dtype=np.int64)
    else:
        x = np.asarray(model.space.driver)[:, -1]
    exact = model.exact
    vals = [evaluate_expression(expr, Fraction(int(v)) if exact else float(v), exact) for v in x]
    return np.array(vals, dtype=object if exact else float)


def _z_table(spec, model):
    exact = model.exact
    K = model.K
    if isinstance(spec, list):
        if len(spec) != K:
            raise ConfigError(f"z table needs {K} entries (one per step)")
        row = [number(v, exact) for v in spec]
    else:
        row = [number(spec, exact)] * K
    z = np.zeros((model.n, K + 1), dtype=object if exact else float)
    if exact:
        z[:, 0] = Fraction(0)
    z[:, 1:] = np.array(row, dtype=z.dtype)[None, :]
    return z


# -- suites -----------------------------------------------------------------------


def suite_hypothesis(doc, model, tol):
    w = model.weights
    b = azema_bundle(model)
    rep = hypothesis_report(model, tol)
    checks = {}
    checks["mu_martingale"] = is_martingale(b.mu, model.F, w, tol=tol, check=False).violation
    checks["m_martingale"] = is_martingale(b.m, model.F, w, tol=tol, check=False).violation
    checks["z_reconstruction"] = float(np.max(np.abs((b.m - b.a - b.Z).astype(float))))
    N = compensated_default_martingale(model, b)
    checks["N_martingale"] = is_martingale(N, model.G, w, tol=tol, check=False).violation
    S = spanning_martingales(model.F, w)
    jy = 0.0
    for k in range(S.shape[2]):
        Mt, _ = jeulin_yor_stopped_decomposition(S[:, :, k], model, b)
        jy = max(jy, is_martingale(Mt, model.G, w, tol=tol, check=False).violation)
    checks["jeulin_yor_martingale"] = jy
    lp = l_process(model, b)
    checks["L_martingale"] = is_martingale(lp.L, lp.filtration(model), w, tol=tol, check=False).violation
    checks = {k: float(v) for k, v in checks.items()}
    hard = all(v <= tol for v in checks.values())
    summary = {
        "immersion": rep.h_verdicts[0],
        "immersion_characterizations": list(rep.h_verdicts),
        "immersion_violations": [float(v) for v in rep.h_violations],
        "pseudo_stopping": rep.pseudo_stopping,
        "pseudo_stopping_violation": rep.pseudo_stopping_violation,
        "f_infty_measurable": rep.f_infty_measurable,
        "stopping_time": rep.is_stopping_time,
        "avoidance_gap": float(avoidance_gap(model, b)),
        "identity_violations": checks,
        "hard_ok": hard,
    }
    rows = []
    for i in range(model.n):
        for k in range(model.K + 1):
            rows.append([i, k, model.tau_index[i], b.Z[i, k], b.A[i, k], b.a[i, k], b.dLambda[i, k]])
    tables = {"azema": (["scenario", "time_index", "tau_index", "Z", "A", "a", "dLambda"], rows)}
    return summary, tables, hard


def suite_measure(doc, model, tol):
    d = doc["density"]
    fam = d["family"]
    exact = model.exact
    w = model.weights
    immersion_p = check_H(model, tol).holds
    summary = {"family": fam, "immersion_under_p": immersion_p}
    checks = {}
    if fam in ("fh", "f-infinity"):
        F = _terminal_values(d.get("F", "1"), model)
        F = F / model.space.expect(F)
    if fam == "fh":
        z = _z_table(d.get("z", 1), model)
        dens = build_FH_density(model, F, z)
        fact = factorize_FH(dens, tol)
        hq = check_H(dens.q_model, tol).holds
        jy_ok, jy_v = jy_condition_check(dens, tol)
        summary.update(immersion_under_q=hq, jy_condition=jy_ok, jy_violation=float(jy_v))
        checks["factorization_obstruction"] = float(fact.obstruction)
        checks["factorization_product_gap"] = float(fact.product_gap)
        checks["jy_matches_immersion"] = 0.0 if jy_ok == hq else 1.0
        if immersion_p:
            checks["immersion_preserved"] = 0.0 if hq else 1.0
            S = spanning_martingales(model.F, dens.q_weights)
            worst = 0.0
            for k in range(S.shape[2]):
                I = girsanov_transfer(S[:, :, k], dens, check=False)
                worst = max(worst, is_martingale(I, model.G, dens.q_weights, tol=tol, check=False).violation)
            checks["girsanov_transfer_martingale"] = float(worst)
    elif fam == "f-infinity":
        dens = build_density(model, F, family="f-infinity")
        inv = f_infty_invariance(dens, tol)
        checks["z_invariance"] = inv.z_gap
        checks["N_martingale_under_q"] = inv.n_violation
        checks["immersion_preserved"] = 0.0 if inv.immersion_q else 1.0
    elif fam == "independence":
        dens = independence_density(model)
        hq = check_H(dens.q_model, tol).holds
        summary["immersion_under_q"] = hq
        checks["immersion_under_q"] = 0.0 if hq else 1.0
    else:
        b = azema_bundle(model)
        H = np.full((model.n, model.K + 1), number(d.get("H", 0), exact), dtype=object if exact else float)
        Fp = np.full((model.n, model.K + 1), number(d.get("drift", 0), exact), dtype=object if exact else float)
        m = spanning_martingales(model.F, w)[:, :, 0]
        dens = exponential_density(model, Fp, H, m, b)
        qa = azema_under_Q(model, dens, b)
        checks["hazard_gap"] = qa.hazard_gap
        checks["NQ_martingale"] = qa.nq_violation
        checks["ZQ_product_gap"] = qa.zq_product_gap
        if qa.immersion_q is not None:
            checks["immersion_under_q"] = 0.0 if qa.immersion_q else 1.0
        zero = np.zeros_like(H)
        qa0 = azema_under_Q(model, exponential_density(model, Fp, zero, m, b), b, immersion=False)
        checks["hazard_invariant_when_H_zero"] = float(np.max(np.abs((qa0.dLambdaQ - b.dLambda).astype(float)[model.tau_index[:, None] >= np.arange(model.K + 1)[None, :]])))
        summary.update(linear_compensator_violation=qa.nq_linear_violation, zq_continuous_gap=qa.zq_continuous_gap)
    checks = {k: float(v) for k, v in checks.items()}
    hard = all(v <= tol for v in checks.values())
    summary["identity_violations"] = checks
    summary["hard_ok"] = hard
    rows = [[i, model.tau_index[i], w[i], dens.rho[i], dens.q_weights[i]] for i in range(model.n)]
    return summary, {"density": (["scenario", "tau_index", "p_weight", "density", "q_weight"], rows)}, hard


def suite_representation(doc, model, tol):
    c = doc["claim"]
    b = azema_bundle(model)
    z = _z_table(c.get("z", 1), model)
    immersion = check_H(model, tol).holds
    avoid = float(avoidance_gap(model, b)) <= tol
    checks = {}
    price = value_defaultable(z, model, b)
    checks["value_vs_direct_price"] = float(np.max(np.abs((price - direct_price(z, model)).astype(float))))
    pr = projection_formula(z, model, b, full=immersion, check=False)
    checks["projection_restricted"] = pr.restricted_gap
    if immersion:
        checks["projection_full"] = pr.full_gap
    if immersion and avoid:
        orth = orthogonality_check(z, model, b, tol)
        checks["orthogonality_projection"] = orth.projection_violation
        checks["orthogonality_product"] = orth.product_violation
    summary = {"immersion": immersion, "avoidance": avoid}
    rows = []
    if immersion:
        res = represent_z_tau(z, model, b, check=False)
        summary["z_tau"] = {"m0": res.m0, "residual": res.residual, "mean_residual": res.mean_residual}
        rows = [[i, k, res.price[i, k], res.reconstructed[i, k]] for i in range(model.n) for k in range(model.K + 1)]
        if "F" in c:
            F = _terminal_values(c["F"], model)
            gen = represent_general(F, z, model, b, check=False)
            summary["general"] = {"m0": gen.m0, "residual": gen.residual, "mean_residual": gen.mean_residual}
    else:
        summary["z_tau"] = "skipped: representation needs immersion"
    checks = {k: float(v) for k, v in checks.items()}
    hard = all(v <= tol for v in checks.values())
    summary["identity_violations"] = checks
    summary["hard_ok"] = hard
    return summary, {"representation": (["scenario", "time_index", "price", "reconstructed"], rows)}, hard


_FAMILIES = {"constant": CONSTANT_HAZARD, "stochastic": STOCHASTIC_HAZARD}
_METRICS = {
    "gamma": gamma_error,
    "zq": zq_error,
    "representation": representation_error,
    "representation_general": lambda fam, K: representation_error(fam, K, general=True),
}


def suite_refinement(doc, model, tol):
    r = doc["refinement"]
    Ks = tuple(r.get("Ks", (8, 16, 32, 64, 128)))
    min_order = r.get("min_order", 0.9)
    summary = {}
    rows = []
    hard = True
    for fname in r.get("families", ["constant", "stochastic"]):
        fam = _FAMILIES[fname]
        for mname, fn in _METRICS.items():
            tab = refinement_harness(lambda K, fn=fn, fam=fam: fn(fam, K), Ks, fam.T, min_order)
            summary[f"{fname}/{mname}"] = {"order": tab.order, "monotone": tab.monotone, "ok": tab.ok}
            hard = hard and tab.ok
            rows += [[fname, mname, dt, err] for dt, err in tab.rows()]
    summary["hard_ok"] = hard
    return summary, {"refinement": (["family", "metric", "dt", "error"], rows)}, hard


def suite_kusuoka(doc, model, tol, workers=1):
    k = doc["kusuoka"]
    seed = doc.get("seed", 0)
    level = k.get("level", 0.01)
    n_paths = k.get("n_paths", 10000)
    n_steps = k.get("n_steps", 50)
    spec = KusuokaSpec(
        x0=k.get("x0", 1.0), sigma1=k.get("sigma1", 1.0), sigma2=k.get("sigma2", 1.0),
        coupling=k.get("coupling", 1.0), T=k.get("T", 1.0),
    )
    run = kusuoka_scenario(spec, n_steps, n_paths, seed, workers=workers)
    det = immersion_violation_test(run, level=level)
    q = compensated_default_test(run, level, reweight=True)
    p = compensated_default_test(run, level, reweight=False)
    w = run.density
    summary = {
        "default_rate": float(np.mean(run.tau_index <= run.K)),
        "detector": {"statistic": det.statistic, "pvalue": det.pvalue, "reject": det.reject},
        "martingale_under_q": {"min_adjusted_pvalue": q.min_pvalue, "reject": q.reject},
        "martingale_under_p": {"min_adjusted_pvalue": p.min_pvalue, "reject": p.reject},
        "density_ess_fraction": float(w.sum() ** 2 / (w**2).sum() / len(w)),
    }
    hard = not q.reject
    if spec.coupling != 0:
        hard = hard and det.reject
    tables = {}
    bounds = event_windows(run.tau_index, run.K)
    tables["kusuoka_windows"] = (
        ["start_index", "end_index", "pvalue_q", "adjusted_q"],
        [[bounds[j], bounds[j + 1], q.pvalues[j], q.adjusted[j]] for j in range(len(bounds) - 1)],
    )
    reps = k.get("null_replications", 0)
    if reps:
        null = KusuokaSpec(**{**spec.__dict__, "coupling": 0.0})
        seeds = [seed + 1 + i for i in range(reps)]
        pv = [immersion_violation_test(kusuoka_scenario(null, n_steps, n_paths, s, workers=workers), level=level).pvalue for s in seeds]
        rate = float(np.mean(np.array(pv) < level))
        se = float(np.sqrt(level * (1 - level) / reps))
        ok = abs(rate - level) <= 2 * se
        summary["null_size"] = {"replications": reps, "rejection_rate": rate, "stderr": se, "within_2se": ok}
        hard = hard and ok
        tables["kusuoka_null"] = (["seed", "pvalue"], [[s, v] for s, v in zip(seeds, pv)])
    summary["hard_ok"] = hard
    return summary, tables, hard


SUITES = {
    "hypothesis": suite_hypothesis,
    "measure": suite_measure,
    "representation": suite_representation,
    "refinement": suite_refinement,
    "kusuoka": suite_kusuoka,
}


def _run_suite(name, doc, model, tol, workers):
    fn = SUITES[name]
    try:
        if name == "kusuoka":
            return fn(doc, model, tol, workers=workers)
        return fn(doc, model, tol)
    except DefaultTimesError as err:
        return {"error": f"{type(err).__name__}: {err}", "hard_ok": False}, {}, False


def execute(doc, tol=None, parallel=False):
    """Run every suite in ``doc``; returns ``(report, tables, ok)``.

    Configuration problems surface as :class:`ConfigError` before any suite runs.
    """
    needs_model = any(s in ("hypothesis", "measure", "representation") for s in doc["suites"])
    model = build_model(doc) if needs_model else None
    if tol is None:
        tol = doc.get("tol")
    if tol is None:
        tol = default_tol(model) if model is not None else 1e-12
    workers = 4 if parallel else 1
    names = list(doc["suites"])
    if parallel and len(names) > 1:
        with ThreadPoolExecutor(len(names)) as pool:
            results = list(pool.map(lambda n: _run_suite(n, doc, model, tol, workers), names))
    else:
        results = [_run_suite(n, doc, model, tol, workers) for n in names]
    suites, tables = {}, {}
    for n, (summary, tabs, _) in zip(names, results):
        suites[n] = summary
        tables.update(tabs)
    ok = all(r[2] for r in results)
    report = {
        "schema": REPORT_SCHEMA,
        "schema_version": REPORT_VERSION,
        "package_version": __version__,
        "scenario": doc["name"],
        "anchor": doc.get("anchor", ""),
        "config_hash": config_hash(doc),
        "seed": doc.get("seed", 0),
        "mode": doc["mode"],
        "tol": tol,
        "ok": ok,
        "suites": suites,
        "tables": sorted(f"{n}.csv" for n in tables),
    }
    if model is not None:
        report["model"] = {"n_scenarios": model.n, "K": model.K}
    return _jsonable(report), tables, ok


def write_report(report, tables, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True))
        fh.write("\n")
    for name, (header, rows) in sorted(tables.items()):
        with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for row in rows:
                wr.writerow([_cell(x) for x in row])
