"""Top-N recommendation from stationary scores and target-item hit ratios."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import (DEFAULT_MAX_ITER, DEFAULT_TOL, StationaryDistribution,
                    build_transition, stationary_batch)
from .ratings import unrated_users


@dataclass(frozen=True)
class RecommendationList:
    user: int
    items: tuple
    scores: tuple


def rank_items(scores, rated, n):
    """Indices of the n highest-scoring unrated items, ties to the lower id.

    scores is a dense per-item vector; rated is a sorted array of item
    indices to exclude.
    """
    mask = np.ones(len(scores), dtype=bool)
    mask[rated] = False
    candidates = np.flatnonzero(mask)
    if candidates.size == 0:
        return candidates
    take = min(n, candidates.size)
    # stable under exact ties: sort by (-score, item id)
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order[:take]]


def top_n(m, dist, u, n):
    """Top-n unrated items for user u from a stationary distribution.

    dist may be a StationaryDistribution for u or a raw node-score vector.
    Returns fewer than n items when the user rated nearly everything.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    probs = dist.probs if isinstance(dist, StationaryDistribution) else np.asarray(dist)
    item_scores = probs[m.num_users:m.num_users + m.num_items]
    rated, _ = m.user_items(u)
    chosen = rank_items(item_scores, rated, n)
    return RecommendationList(user=int(u),
                              items=tuple(int(i) for i in chosen),
                              scores=tuple(float(item_scores[i]) for i in chosen))


def hit_users(m, t, n, alpha, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
              method="auto", trans=None, eligible=None):
    """(eligible normal users, boolean hits) for target item t at list size n.

    Eligible users are normal users who have not rated t.  All their walks
    are solved in one batch; per-user rankings use the shared tie rule, so
    the result does not depend on evaluation order.
    """
    if trans is None:
        trans = build_transition(m)
    if eligible is None:
        eligible = unrated_users(m, t)
    if len(eligible) == 0:
        return eligible, np.zeros(0, dtype=bool)
    p = stationary_batch(trans, eligible, alpha, tol=tol, max_iter=max_iter,
                         method=method)
    item_block = p[m.num_users:m.num_users + m.num_items, :]
    hits = np.zeros(len(eligible), dtype=bool)
    for k, u in enumerate(eligible):
        rated, _ = m.user_items(u)
        chosen = rank_items(item_block[:, k], rated, n)
        hits[k] = t in chosen
    return eligible, hits


def hit_ratio(m, t, n, alpha, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
              method="auto", trans=None):
    """Fraction of eligible normal users whose top-n list contains t.

    Fake users are excluded from numerator and denominator; an empty
    eligible set yields 0 by convention.
    """
    eligible, hits = hit_users(m, t, n, alpha, tol=tol, max_iter=max_iter,
                               method=method, trans=trans)
    if len(eligible) == 0:
        return 0.0
    return float(hits.sum() / len(eligible))


def hit_ratio_multi(m, t, n_list, alpha, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                    method="auto", trans=None):
    """Hit ratio at several list sizes from a single batched solve."""
    if trans is None:
        trans = build_transition(m)
    eligible = unrated_users(m, t)
    out = {}
    if len(eligible) == 0:
        return {n: 0.0 for n in n_list}
    p = stationary_batch(trans, eligible, alpha, tol=tol, max_iter=max_iter,
                         method=method)
    item_block = p[m.num_users:m.num_users + m.num_items, :]
    counts = {n: 0 for n in n_list}
    for k, u in enumerate(eligible):
        rated, _ = m.user_items(u)
        chosen = rank_items(item_block[:, k], rated, max(n_list))
        pos = np.flatnonzero(chosen == t)
        rank = pos[0] + 1 if pos.size else None
        for n in n_list:
            if rank is not None and rank <= n:
                counts[n] += 1
    for n in n_list:
        out[n] = counts[n] / len(eligible)
    return out
