"""Classic rating-injection attacks used as comparison points.

All four share the budget contract: each fake user rates the target at
r_max plus at most n filler items, and a fixed seed fixes the full output.
Per-user randomness comes from a substream keyed by (seed, user index), so
profiles are independent of generation order.
"""

from __future__ import annotations

import numpy as np

from .profiles import FakeUserProfile, discretize
from .ratings import global_stats, item_stats


def _user_rng(seed, k):
    return np.random.default_rng([seed, 0xBA5E, k])


def _uniform_fillers(rng, num_items, target, n, exclude=()):
    pool = np.setdiff1d(np.arange(num_items), np.append(np.asarray(exclude, dtype=np.int64), target))
    n = min(n, len(pool))
    return np.sort(rng.choice(pool, size=n, replace=False))


def random_attack(m, t, count, n, seed):
    """Uniform filler items; scores from a normal fit to all ratings."""
    if n >= m.num_items:
        raise ValueError("filler budget exceeds the item count")
    mean, std = global_stats(m)
    out = []
    for k in range(count):
        rng = _user_rng(seed, k)
        fillers = _uniform_fillers(rng, m.num_items, t, n)
        scores = discretize(rng.normal(mean, std, size=len(fillers)), m.r_max)
        out.append(FakeUserProfile(target=t, target_rating=m.r_max,
                                   fillers=tuple(zip(fillers.tolist(), scores.tolist()))))
    return out


def average_attack(m, t, count, n, seed):
    """Uniform filler items; scores from each item's own normal fit."""
    if n >= m.num_items:
        raise ValueError("filler budget exceeds the item count")
    stats = item_stats(m)
    out = []
    for k in range(count):
        rng = _user_rng(seed, k)
        fillers = _uniform_fillers(rng, m.num_items, t, n)
        scores = discretize(rng.normal(stats.mean[fillers], stats.std[fillers]), m.r_max)
        out.append(FakeUserProfile(target=t, target_rating=m.r_max,
                                   fillers=tuple(zip(fillers.tolist(), scores.tolist()))))
    return out


def bandwagon_attack(m, t, count, n, seed):
    """10% of fillers from the max-average-score pool, the rest uniform;
    scores from the global normal fit.

    When fewer max-average items exist than the pool share asks for, all of
    them are used and the remainder is drawn uniformly.
    """
    if n < 1:
        raise ValueError("bandwagon attack needs at least one filler")
    stats = item_stats(m)
    pool = np.setdiff1d(np.flatnonzero((stats.mean == m.r_max) & (stats.count > 0)), [t])
    mean, std = global_stats(m)
    want_popular = int(np.floor(n * 0.1 + 0.5))
    out = []
    for k in range(count):
        rng = _user_rng(seed, k)
        take = min(want_popular, len(pool))
        popular = np.sort(rng.choice(pool, size=take, replace=False)) if take else np.empty(0, dtype=np.int64)
        rest = _uniform_fillers(rng, m.num_items, t, n - take, exclude=popular)
        fillers = np.concatenate([popular, rest]).astype(np.int64)
        scores = discretize(rng.normal(mean, std, size=len(fillers)), m.r_max)
        out.append(FakeUserProfile(target=t, target_rating=m.r_max,
                                   fillers=tuple(zip(fillers.tolist(), scores.tolist()))))
    return out


def corating_counts(m, t):
    """Number of users who rated both t and each other item."""
    rated = (m.csr > 0).astype(np.float64)
    col = rated[:, t].toarray().ravel()
    counts = rated.T @ col
    counts[t] = 0
    return counts.astype(np.int64)


def global_corating_counts(m):
    """Per item, the total co-rating count against every other item."""
    rated = (m.csr > 0).astype(np.int64)
    deg = np.asarray(rated.sum(axis=1)).ravel()
    per_item = rated.T @ (deg - 1)
    return np.asarray(per_item).ravel()


def covisitation_attack(m, t, count, n, seed):
    """Fillers are the items most co-rated with the target (ties to the
    lower id); when fewer than n items co-occur with t, the remainder comes
    from the globally most co-rated items.  Scores use per-item normal fits.
    """
    co = corating_counts(m, t)
    order = np.lexsort((np.arange(m.num_items), -co))
    order = order[(order != t) & (co[order] > 0)]
    fillers = order[:n]
    if len(fillers) < n:
        gco = global_corating_counts(m)
        fallback = np.lexsort((np.arange(m.num_items), -gco))
        fallback = fallback[(fallback != t) & (~np.isin(fallback, fillers))]
        fillers = np.concatenate([fillers, fallback[:n - len(fillers)]])
    fillers = fillers.astype(np.int64)
    stats = item_stats(m)
    out = []
    for k in range(count):
        rng = _user_rng(seed, k)
        scores = discretize(rng.normal(stats.mean[fillers], stats.std[fillers]), m.r_max)
        out.append(FakeUserProfile(target=t, target_rating=m.r_max,
                                   fillers=tuple(zip(fillers.tolist(), scores.tolist()))))
    return out


BASELINES = {
    "random": random_attack,
    "average": average_attack,
    "bandwagon": bandwagon_attack,
    "covisitation": covisitation_attack,
}
