"""Ready-made finite spaces and random-time models, fixed and randomized."""

from fractions import Fraction

import numpy as np

from .enlarge import cox_construct, enlarge_progressively, independent_time
from .finspace import FiniteFilteredSpace, TimeGrid, natural_filtration, normalize_weights

TAU_KINDS = ("stopping", "independent", "honest", "cox", "generic")


def coin_space(K, exact=False, p=None):
    """Binary tree of ``2**K`` paths; the driver is the ``+-1`` random walk."""
    n = 2 ** K
    steps = np.array([[1 if (i >> (K - 1 - j)) & 1 == 0 else -1 for j in range(K)] for i in range(n)])
    walk = np.zeros((n, K + 1), dtype=np.int64)
    walk[:, 1:] = np.cumsum(steps, axis=1)
    if p is None:
        p = Fraction(1, 2) if exact else 0.5
    ups = (steps == 1).sum(axis=1)
    if exact:
        p = Fraction(p)
        w = np.array([p ** int(u) * (1 - p) ** int(K - u) for u in ups], dtype=object)
    else:
        w = p ** ups * (1 - p) ** (K - ups)
    grid = TimeGrid.uniform(K, exact=exact)
    return FiniteFilteredSpace(w, grid, natural_filtration(walk), walk)


def argmax_time(space):
    """First time in ``1..K`` at which the driver attains its maximum over ``t_1..t_K``."""
    drv = np.asarray(space.driver, dtype=float)
    return 1 + np.argmax(drv[:, 1:], axis=1)


def first_passage(space, level):
    """First ``k >= 1`` with ``driver >= level`` (``K + 1`` if never)."""
    drv = np.asarray(space.driver, dtype=float)[:, 1:]
    hit = drv >= level
    return np.where(hit.any(axis=1), 1 + hit.argmax(axis=1), space.K + 1)


# -- randomized generators ----------------------------------------------------


def _random_weights(rng, n, exact):
    raw = rng.integers(1, 10, size=n)
    if exact:
        total = int(raw.sum())
        return np.array([Fraction(int(r), total) for r in raw], dtype=object)
    return normalize_weights(raw.astype(float))


def random_space(rng, n_max=64, K_max=6, exact=False, n=None, K=None, alphabet=None):
    """Random finite filtered space whose filtration is generated by a random path table.

    Values come from a small alphabet, so histories collide and scenarios
    that are never separated by F appear (room for non-F-measurable times).
    """
    K = int(rng.integers(1, K_max + 1)) if K is None else K
    n = int(rng.integers(2, n_max + 1)) if n is None else n
    alphabet = int(rng.integers(2, 4)) if alphabet is None else alphabet
    driver = np.zeros((n, K + 1), dtype=np.int64)
    driver[:, 1:] = rng.integers(0, alphabet, size=(n, K))
    grid = TimeGrid.uniform(K, exact=exact)
    return FiniteFilteredSpace(_random_weights(rng, n, exact), grid, natural_filtration(driver), driver)


def random_stopping_index(rng, space, stop_prob=0.35):
    """Random F stopping time: each F-block at ``t_k`` stops with some probability."""
    idx = np.full(space.n, space.K + 1)
    for k in range(1, space.K + 1):
        lab = space.filtration[k].labels
        flag = rng.random(lab.max() + 1) < stop_prob
        idx = np.where((idx > k) & flag[lab], k, idx)
    return idx


def random_hazard(rng, space, hmax=0.6, exact=False):
    """Random F-predictable hazard table with values in ``[0, hmax)``."""
    K = space.K
    h = np.zeros((space.n, K + 1), dtype=object if exact else float)
    for k in range(1, K + 1):
        lab = space.filtration[k - 1].labels
        if exact:
            vals = [Fraction(int(rng.integers(0, 10)), 10) * Fraction(hmax).limit_denominator(100) for _ in range(lab.max() + 1)]
            h[:, k] = np.array(vals, dtype=object)[lab]
        else:
            h[:, k] = (rng.random(lab.max() + 1) * hmax)[lab]
    return h


def random_law(rng, K, exact=False):
    raw = rng.integers(1, 10, size=K + 1)
    if exact:
        return np.array([Fraction(int(r), int(raw.sum())) for r in raw], dtype=object)
    return raw / raw.sum()


def random_model(rng, kind=None, n_max=64, K_max=6, exact=False):
    """Random random-time model of the given kind (drawn uniformly if ``None``).

    ``independent`` and ``cox`` build product spaces, so their base space is
    kept small enough for the product to stay within ``n_max`` scenarios.
    """
    kind = rng.choice(TAU_KINDS) if kind is None else kind
    if kind in ("independent", "cox"):
        K = int(rng.integers(1, K_max + 1))
        base_max = max(2, n_max // (K + 1))
        space = random_space(rng, n_max=base_max, K=K, exact=exact)
        if kind == "independent":
            return independent_time(space, random_law(rng, K, exact))
        return cox_construct(space, random_hazard(rng, space, exact=exact))
    space = random_space(rng, n_max=n_max, K_max=K_max, exact=exact)
    if kind == "stopping":
        idx = random_stopping_index(rng, space)
    elif kind == "honest":
        idx = _honest_index(rng, space)
    elif kind == "generic":
        idx = rng.integers(1, space.K + 2, size=space.n)
    else:
        raise ValueError(f"unknown random time kind {kind!r}")
    return enlarge_progressively(space, tau_index=idx)


def _honest_index(rng, space):
    """Argmax of a random running score built from the driver: F_K-measurable."""
    drv = np.asarray(space.driver, dtype=float)
    score = np.cumsum(drv[:, 1:] - drv[:, 1:].mean(), axis=1)
    return 1 + np.argmax(score + 1e-9 * np.arange(space.K), axis=1)


def random_honest_model(rng, n_max=64, K_max=6, exact=False, max_tries=200):
    """F_K-measurable time that is not an F stopping time."""
    from .hypotest import is_stopping_time

    for _ in range(max_tries):
        space = random_space(rng, n_max=n_max, K_max=K_max, exact=exact)
        if space.K < 2:
            continue
        idx = _honest_index(rng, space)
        model = enlarge_progressively(space, tau_index=idx)
        if not is_stopping_time(model):
            return model
    raise RuntimeError("could not draw a non-stopping honest time")


# -- two-step walk used throughout the examples ------------------------------


def argmax_walk_model(K=2, exact=True):
    space = coin_space(K, exact=exact)
    return enlarge_progressively(space, tau_index=argmax_time(space))


def uniform_independent_model(K=2, exact=True):
    """Default time uniform on ``{t_1, ..., t_K}`` independent of a trivial reference space."""
    grid = TimeGrid.uniform(K, exact=exact)
    one = np.array([Fraction(1)], dtype=object) if exact else np.array([1.0])
    from .finspace import Filtration, Partition

    space = FiniteFilteredSpace(one, grid, Filtration(tuple(Partition.trivial(1) for _ in range(K + 1))))
    if exact:
        law = [Fraction(1, K)] * K + [Fraction(0)]
        law = np.array(law, dtype=object)
    else:
        law = np.append(np.full(K, 1.0 / K), 0.0)
    return independent_time(space, law)


def constant_cox_model(space, p):
    hazard = np.zeros((space.n, space.K + 1), dtype=object if isinstance(p, Fraction) else float)
    hazard[:, 1:] = p
    return cox_construct(space, hazard)


def _positive_hazard(rng, space, exact):
    h = random_hazard(rng, space, hmax=0.6, exact=exact)
    if exact:
        h[:, 1:] = h[:, 1:] + Fraction(1, 20)
    else:
        h[:, 1:] = h[:, 1:] + 0.05
    return h


def random_immersion_pair(rng, n_max=64, K_max=6, exact=False):
    """A Cox model and a second Cox-type measure on the same scenarios.

    Both use strictly positive hazards, so every (base scenario, default
    index) copy is present and the two weight vectors live on one scenario
    set; immersion holds under both.  Returns ``(model, q_tilde_weights)``.
    """
    K = int(rng.integers(1, K_max + 1))
    space = random_space(rng, n_max=max(2, n_max // (K + 1)), K=K, exact=exact)
    model = cox_construct(space, _positive_hazard(rng, space, exact))
    other = cox_construct(space.with_weights(_random_weights(rng, space.n, exact)), _positive_hazard(rng, space, exact))
    assert np.array_equal(other.origin, model.origin) and np.array_equal(other.tau_index, model.tau_index)
    return model, other.weights
