"""Biased matrix factorization: the transfer target for black-box runs.

Observed ratings are fit by global mean + user bias + item bias + latent
dot product with per-sample stochastic gradient steps and L2 shrinkage.
Item factors start at zero so an untrained model predicts the global mean
exactly; they come alive after the first epoch of updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ratings import ValidationError
from .recommend import rank_items


class DivergenceError(RuntimeError):
    pass


@dataclass
class MFModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_mean: float

    @property
    def rank(self):
        return self.user_factors.shape[1]

    def predict(self, u, items=None):
        """Predicted scores of one user for all (or the given) items."""
        q = self.item_factors if items is None else self.item_factors[items]
        b = self.item_bias if items is None else self.item_bias[items]
        return (self.global_mean + self.user_bias[u] + b
                + q @ self.user_factors[u])


def mf_train(m, rank=16, epochs=20, lr=0.005, reg=0.02, seed=0):
    """Fit the biased factor model by per-sample SGD over observed entries.

    Deterministic for a fixed seed.  Raises DivergenceError naming the epoch
    if the running loss stops being finite.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if m.num_ratings == 0:
        raise ValidationError("cannot train on an empty matrix")
    rng = np.random.default_rng(seed)
    coo = m.csr.tocoo()
    users = coo.row.astype(np.int64)
    items = coo.col.astype(np.int64)
    vals = coo.data.astype(np.float64)
    mu = float(vals.mean())

    p = rng.normal(0.0, 0.1, size=(m.num_users, rank))
    q = np.zeros((m.num_items, rank))
    bu = np.zeros(m.num_users)
    bi = np.zeros(m.num_items)

    idx = np.arange(len(vals))
    for epoch in range(epochs):
        rng.shuffle(idx)
        sq_err = 0.0
        for j in idx:
            u, i, r = users[j], items[j], vals[j]
            pred = mu + bu[u] + bi[i] + p[u] @ q[i]
            err = r - pred
            sq_err += err * err
            bu[u] += lr * (err - reg * bu[u])
            bi[i] += lr * (err - reg * bi[i])
            pu = p[u].copy()
            p[u] += lr * (err * q[i] - reg * pu)
            q[i] += lr * (err * pu - reg * q[i])
        if not np.isfinite(sq_err):
            raise DivergenceError(f"training diverged at epoch {epoch}")
    return MFModel(user_factors=p, item_factors=q, user_bias=bu,
                   item_bias=bi, global_mean=mu)


def mf_rmse(model, m):
    """Root mean squared error over the observed entries."""
    coo = m.csr.tocoo()
    pred = (model.global_mean + model.user_bias[coo.row] + model.item_bias[coo.col]
            + np.sum(model.user_factors[coo.row] * model.item_factors[coo.col], axis=1))
    return float(np.sqrt(np.mean((coo.data - pred) ** 2)))


def mf_hit_ratio(model, m, t, n):
    """Hit ratio of item t when ranking by predicted score.

    Same eligibility contract as the walk-based hit ratio: normal users who
    have not rated t; users with no unrated items are excluded.
    """
    from .ratings import unrated_users

    eligible = unrated_users(m, t)
    if len(eligible) == 0:
        return 0.0
    hits = 0
    denom = 0
    for u in eligible:
        rated, _ = m.user_items(u)
        if len(rated) >= m.num_items:
            continue
        denom += 1
        scores = model.predict(u)
        chosen = rank_items(scores, rated, n)
        hits += int(t in chosen)
    return hits / denom if denom else 0.0
