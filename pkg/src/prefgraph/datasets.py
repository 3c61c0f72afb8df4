"""Deterministic synthetic rating datasets with real-world marginals.

The generators produce desk-scale stand-ins for the classic public rating
dumps: long-tail item popularity, lognormal user activity, integer scores
from user-bias + item-quality + noise, exact user/item/rating counts, and
every user and item rated at least once.  Files written by write_movielens /
write_ratings_csv round-trip through the corresponding loaders.
"""

from __future__ import annotations

import numpy as np

from .ratings import RatingMatrix, from_triples

_GUMBEL_CHUNK = 256


def synthesize_ratings(num_users, num_items, num_ratings, seed,
                       min_user_ratings=20, max_user_ratings=None,
                       activity_sigma=0.85, popularity_sigma=1.5,
                       popularity_clip=0.985, num_genres=18,
                       genre_focus=0.25, base_score=3.4,
                       user_bias_sigma=0.35, quality_sigma=0.5,
                       popularity_quality=0.25, noise_sigma=1.0, r_max=5):
    """Generate a reproducible sparse integer rating matrix.

    Item popularity is lognormal with a flattened head, user activity is
    lognormal, and each user mixes global popularity with a Dirichlet taste
    profile over latent genres, so rating neighborhoods have community
    structure instead of one shared hub set.  Per-user item choices are
    weighted sampling without replacement; scores are a clipped rounded sum
    of a base level, user bias, item quality (mildly correlated with
    popularity), and noise.  Counts are exact; every item gets >= 1 rating.
    """
    rng = np.random.default_rng(seed)
    if num_ratings < num_items or num_ratings < num_users * min(min_user_ratings, 1):
        raise ValueError("num_ratings too small to cover every item")

    popularity = rng.lognormal(mean=0.0, sigma=popularity_sigma, size=num_items)
    # flatten the extreme head: real catalogs top out well below full penetration
    popularity = np.minimum(popularity, np.quantile(popularity, popularity_clip))
    log_pop = np.log(popularity)

    item_genre = rng.integers(0, num_genres, size=num_items)
    taste = rng.dirichlet(np.full(num_genres, genre_focus), size=num_users)

    if max_user_ratings is None:
        max_user_ratings = min(num_items, max(8 * int(num_ratings / num_users), 2))
    activity = _exact_activity(rng, num_users, max_user_ratings, num_ratings,
                               min_user_ratings, activity_sigma)

    users, items = _sample_edges(rng, activity, log_pop, num_items,
                                 item_genre=item_genre, taste=taste)
    users, items = _ensure_item_coverage(rng, users, items, num_users, num_items)

    pop_z = (log_pop - log_pop.mean()) / max(log_pop.std(), 1e-12)
    quality = popularity_quality * pop_z + rng.normal(0.0, quality_sigma, size=num_items)
    user_bias = rng.normal(0.0, user_bias_sigma, size=num_users)
    raw = (base_score + user_bias[users] + quality[items]
           + rng.normal(0.0, noise_sigma, size=len(users)))
    scores = np.clip(np.floor(raw + 0.5), 1, r_max).astype(np.int64)

    user_labels = np.array([str(u + 1) for u in range(num_users)], dtype=object)
    item_labels = np.array([str(i + 1) for i in range(num_items)], dtype=object)
    return from_triples(users, items, scores, num_users, num_items, r_max,
                        user_labels=user_labels, item_labels=item_labels)


def _exact_activity(rng, num_users, cap, num_ratings, min_ratings, sigma):
    """Per-user rating counts with the requested total."""
    mean_target = num_ratings / num_users
    raw = rng.lognormal(mean=np.log(max(mean_target * 0.65, min_ratings)), sigma=sigma,
                        size=num_users)
    raw = np.clip(raw, min_ratings, cap)
    for _ in range(4):
        raw = np.clip(raw * (num_ratings / raw.sum()), min_ratings, cap)
    counts = np.floor(raw).astype(np.int64)
    deficit = num_ratings - int(counts.sum())
    if deficit < 0:
        order = np.argsort(-(counts - min_ratings))
        k = 0
        while deficit < 0:
            u = order[k % num_users]
            if counts[u] > min_ratings:
                counts[u] -= 1
                deficit += 1
            k += 1
    elif deficit > 0:
        frac = raw - np.floor(raw)
        order = np.lexsort((np.arange(num_users), -frac))
        k = 0
        while deficit > 0:
            u = order[k % num_users]
            if counts[u] < cap:
                counts[u] += 1
                deficit -= 1
            k += 1
    return counts


def _sample_edges(rng, activity, log_pop, num_items, item_genre=None, taste=None):
    """(Popularity x taste)-weighted sampling without replacement per user
    (Gumbel top-k), chunked to bound memory."""
    users_out, items_out = [], []
    num_users = len(activity)
    for lo in range(0, num_users, _GUMBEL_CHUNK):
        hi = min(lo + _GUMBEL_CHUNK, num_users)
        keys = log_pop[None, :] + rng.gumbel(size=(hi - lo, num_items))
        if taste is not None:
            keys += np.log(np.maximum(taste[lo:hi][:, item_genre], 1e-300))
        for off, u in enumerate(range(lo, hi)):
            k = int(activity[u])
            chosen = np.argpartition(-keys[off], k - 1)[:k]
            users_out.append(np.full(k, u, dtype=np.int64))
            items_out.append(np.sort(chosen.astype(np.int64)))
    return np.concatenate(users_out), np.concatenate(items_out)


def _ensure_item_coverage(rng, users, items, num_users, num_items):
    """Swap surplus ratings onto unrated items so every item has >= 1."""
    counts = np.bincount(items, minlength=num_items)
    uncovered = np.flatnonzero(counts == 0)
    if uncovered.size == 0:
        return users, items
    items = items.copy()
    by_user = {}
    for pos, u in enumerate(users):
        by_user.setdefault(int(u), []).append(pos)
    donor_users = rng.permutation(num_users)
    di = 0
    for j in uncovered:
        while True:
            u = int(donor_users[di % num_users])
            di += 1
            positions = by_user[u]
            # replace this user's most redundant item; never uncover another
            pos_counts = counts[items[positions]]
            best = int(np.argmax(pos_counts))
            if pos_counts[best] > 1 and j not in set(items[positions]):
                pos = positions[best]
                counts[items[pos]] -= 1
                items[pos] = j
                counts[j] += 1
                break
    return users, items


def movielens_like(seed=20180703):
    """943 users x 1,682 items x 100,000 ratings, scale 1..5."""
    return synthesize_ratings(943, 1682, 100_000, seed=seed)


def video_like(seed=20180703):
    """5,073 users x 10,843 items x 48,843 ratings, scale 1..5.

    Much sparser catalog: most users rate a handful of items.
    """
    return synthesize_ratings(5073, 10_843, 48_843, seed=seed,
                              min_user_ratings=1, activity_sigma=1.0,
                              popularity_sigma=1.2)


def write_movielens(m, path):
    """Write `user<TAB>item<TAB>rating<TAB>timestamp` lines (original labels)."""
    rows, cols, vals = m.entries()
    ts = 880_000_000
    with open(path, "w") as fh:
        for u, i, r in zip(rows, cols, vals):
            fh.write(f"{m.user_labels[u]}\t{m.item_labels[i]}\t{r}\t{ts}\n")


def write_ratings_csv(m, path, user_col="user", item_col="item", rating_col="rating"):
    """Write a header + comma-separated rating rows (original labels)."""
    rows, cols, vals = m.entries()
    with open(path, "w") as fh:
        fh.write(f"{user_col},{item_col},{rating_col}\n")
        for u, i, r in zip(rows, cols, vals):
            fh.write(f"{m.user_labels[u]},{m.item_labels[i]},{r}\n")
