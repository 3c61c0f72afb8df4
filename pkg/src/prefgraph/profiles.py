"""Fake-user rating profiles: one promoted target item plus filler items."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ratings import ValidationError


@dataclass(frozen=True)
class FakeUserProfile:
    """Ratings of one injected user: the target at target_rating plus up to
    n filler (item, rating) pairs, target excluded from the fillers."""

    target: int
    target_rating: int
    fillers: tuple

    def __post_init__(self):
        items = [i for i, _ in self.fillers]
        if self.target in items:
            raise ValidationError("target listed among filler items")
        if len(set(items)) != len(items):
            raise ValidationError("duplicate filler items")

    @property
    def num_rated(self):
        return 1 + len(self.fillers)

    def rated_items(self):
        """(items, ratings) arrays covering target and fillers, item-sorted."""
        items = np.array([self.target] + [i for i, _ in self.fillers], dtype=np.int64)
        ratings = np.array([self.target_rating] + [r for _, r in self.fillers], dtype=np.int64)
        order = np.argsort(items)
        return items[order], ratings[order]


def discretize(x, r_max):
    """Round to the nearest integer (halves up) and clamp to [1, r_max]."""
    return np.clip(np.floor(np.asarray(x, dtype=np.float64) + 0.5), 1, r_max).astype(np.int64)


# Profiles serialize as `user<TAB>item<TAB>rating<TAB>fake` triples-with-marker,
# one synthetic user index per profile, matching the snapshot triple layout.

def save_profiles(profiles, path, start_index=0):
    with open(path, "w") as fh:
        fh.write(f"{len(profiles)}\n")
        for k, prof in enumerate(profiles):
            items, ratings = prof.rated_items()
            fh.write(f"# target {prof.target}\n")
            for i, r in zip(items, ratings):
                fh.write(f"{start_index + k}\t{i}\t{r}\t1\n")


def load_profiles(path):
    with open(path) as fh:
        count = int(fh.readline())
        by_user = {}
        targets = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                targets.append(int(line.split()[-1]))
                continue
            u, i, r, _fake = line.split("\t")
            by_user.setdefault(int(u), []).append((int(i), int(r)))
    if len(targets) != count or len(by_user) not in (count, 0):
        raise ValidationError("profile file header disagrees with body")
    out = []
    for k, (u, pairs) in enumerate(sorted(by_user.items())):
        t = targets[k]
        t_rating = dict(pairs)[t]
        fillers = tuple((i, r) for i, r in pairs if i != t)
        out.append(FakeUserProfile(target=t, target_rating=t_rating, fillers=fillers))
    return out
