"""Sparse user-item rating data: ingestion, statistics, fake-user bookkeeping.

The rating matrix is the ground truth for every other module.  Users and
items carry dense 0-based indices assigned in first-seen order; the original
dataset identifiers live in side tables.  A stored rating is an integer in
{1, ..., r_max}; the absence of an entry means "did not rate".  Matrices are
immutable after construction -- mutating operations return new instances.
Users are partitioned into a normal block [0, num_normal) and an appended
fake block [num_normal, num_users).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

DEFAULT_R_MAX = 5


class ParseError(ValueError):
    """A dataset line could not be parsed."""


class SchemaError(ValueError):
    """A dataset file does not provide the required columns."""


class ValidationError(ValueError):
    """Parsed data violates a rating-matrix invariant."""


@dataclass(frozen=True)
class DatasetStats:
    num_users: int
    num_items: int
    num_ratings: int
    sparsity: float


@dataclass(frozen=True)
class ItemStats:
    """Per-item rating mean/stddev/count; unrated items fall back to the
    global mean with zero stddev so downstream sampling is total."""

    mean: np.ndarray
    std: np.ndarray
    count: np.ndarray


class RatingMatrix:
    """Immutable sparse integer rating matrix with a normal/fake partition."""

    def __init__(self, matrix, r_max, num_normal=None, user_labels=None,
                 item_labels=None):
        matrix = sp.csr_matrix(matrix, dtype=np.float64)
        matrix.sum_duplicates()
        matrix.eliminate_zeros()
        self.csr = matrix
        self.r_max = int(r_max)
        self.num_normal = matrix.shape[0] if num_normal is None else int(num_normal)
        if not 0 <= self.num_normal <= matrix.shape[0]:
            raise ValidationError(f"num_normal {self.num_normal} outside [0, {matrix.shape[0]}]")
        if user_labels is None:
            user_labels = np.array([str(u) for u in range(matrix.shape[0])], dtype=object)
        if item_labels is None:
            item_labels = np.array([str(i) for i in range(matrix.shape[1])], dtype=object)
        self.user_labels = np.asarray(user_labels, dtype=object)
        self.item_labels = np.asarray(item_labels, dtype=object)
        if len(self.user_labels) != matrix.shape[0] or len(self.item_labels) != matrix.shape[1]:
            raise ValidationError("label table size does not match matrix shape")
        self._validate_values()

    def _validate_values(self):
        data = self.csr.data
        if data.size == 0:
            return
        if np.any(data != np.rint(data)):
            bad = data[data != np.rint(data)][0]
            raise ValidationError(f"non-integer rating {bad!r}")
        if data.min() < 1 or data.max() > self.r_max:
            bad = data[(data < 1) | (data > self.r_max)][0]
            raise ValidationError(f"rating {int(bad)} outside 1..{self.r_max}")

    # -- shape ---------------------------------------------------------------

    @property
    def num_users(self):
        return self.csr.shape[0]

    @property
    def num_items(self):
        return self.csr.shape[1]

    @property
    def num_ratings(self):
        return self.csr.nnz

    @property
    def num_fake(self):
        return self.num_users - self.num_normal

    @cached_property
    def csc(self):
        return self.csr.tocsc()

    # -- access --------------------------------------------------------------

    def user_items(self, u):
        """(item indices, ratings) rated by user u, ascending item index."""
        row = self.csr
        lo, hi = row.indptr[u], row.indptr[u + 1]
        return row.indices[lo:hi], row.data[lo:hi]

    def item_raters(self, i):
        """(user indices, ratings) of item i, ascending user index."""
        col = self.csc
        lo, hi = col.indptr[i], col.indptr[i + 1]
        return col.indices[lo:hi], col.data[lo:hi]

    def rating(self, u, i):
        items, vals = self.user_items(u)
        pos = np.searchsorted(items, i)
        if pos < len(items) and items[pos] == i:
            return int(vals[pos])
        return 0

    def is_fake(self, u):
        return u >= self.num_normal

    def normal_users(self):
        return np.arange(self.num_normal)

    def entries(self):
        """Sorted (user, item, rating) triples as arrays."""
        coo = self.csr.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order].astype(np.int64)


def from_triples(users, items, values, num_users, num_items, r_max,
                 num_normal=None, user_labels=None, item_labels=None):
    """Build a RatingMatrix from parallel index/value arrays, rejecting
    duplicate (user, item) pairs."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if users.size:
        pair = users.astype(np.int64) * num_items + items
        uniq, counts = np.unique(pair, return_counts=True)
        if np.any(counts > 1):
            dup = uniq[counts > 1][0]
            u, i = int(dup // num_items), int(dup % num_items)
            lbl_u = user_labels[u] if user_labels is not None else u
            lbl_i = item_labels[i] if item_labels is not None else i
            raise ValidationError(f"duplicate rating for (user={lbl_u}, item={lbl_i})")
    mat = sp.csr_matrix((values, (users, items)), shape=(num_users, num_items))
    return RatingMatrix(mat, r_max, num_normal=num_normal,
                        user_labels=user_labels, item_labels=item_labels)


def _reindex(raw_users, raw_items, values, r_max=None):
    """Assign dense indices in first-seen order and build the matrix."""
    user_ids, user_idx = {}, []
    item_ids, item_idx = {}, []
    for u in raw_users:
        if u not in user_ids:
            user_ids[u] = len(user_ids)
        user_idx.append(user_ids[u])
    for i in raw_items:
        if i not in item_ids:
            item_ids[i] = len(item_ids)
        item_idx.append(item_ids[i])
    values = np.asarray(values, dtype=np.float64)
    if r_max is None:
        r_max = int(values.max()) if values.size else DEFAULT_R_MAX
    user_labels = np.array(list(user_ids), dtype=object)
    item_labels = np.array(list(item_ids), dtype=object)
    return from_triples(user_idx, item_idx, values, len(user_ids), len(item_ids),
                        r_max, user_labels=user_labels, item_labels=item_labels)


def load_movielens(path, r_max=None):
    """Load a tab-separated `user item rating timestamp` file.

    Timestamps are discarded.  r_max defaults to the maximum observed rating.
    """
    raw_u, raw_i, vals = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                u, i, r = int(parts[0]), int(parts[1]), int(parts[2])
                int(parts[3])
            except ValueError:
                raise ParseError(f"line {lineno}: non-integer field in {parts!r}") from None
            raw_u.append(u)
            raw_i.append(i)
            vals.append(r)
    return _reindex(raw_u, raw_i, vals, r_max=r_max)


def load_csv(path, user_col="user", item_col="item", rating_col="rating",
             r_max=None, delimiter=","):
    """Load ratings from a delimited file with a header row.

    Column names identify the user/item/rating fields; extra columns are
    ignored.  Same contract as load_movielens otherwise.
    """
    raw_u, raw_i, vals = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            return _reindex([], [], [], r_max=r_max)
        for col in (user_col, item_col, rating_col):
            if col not in reader.fieldnames:
                raise SchemaError(f"missing column {col!r}; file has {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                r = float(row[rating_col])
            except (TypeError, ValueError):
                raise ParseError(f"line {lineno}: bad rating {row[rating_col]!r}") from None
            raw_u.append(row[user_col])
            raw_i.append(row[item_col])
            vals.append(r)
    return _reindex(raw_u, raw_i, vals, r_max=r_max)


def stats(m):
    """Dataset-level counts and sparsity = 1 - ratings / (users * items)."""
    if m.num_users == 0 or m.num_items == 0:
        raise ValidationError("sparsity undefined for empty user or item set")
    sparsity = 1.0 - m.num_ratings / (m.num_users * m.num_items)
    return DatasetStats(m.num_users, m.num_items, m.num_ratings, sparsity)


def global_stats(m, normal_only=False):
    """(mean, population stddev) over all stored ratings."""
    data = m.csr[:m.num_normal].data if normal_only else m.csr.data
    if data.size == 0:
        raise ValidationError("global statistics undefined for an empty matrix")
    return float(data.mean()), float(data.std())


def item_stats(m, normal_only=False):
    """Per-item mean and population stddev over stored ratings.

    Items nobody rated get the global mean and zero stddev.
    """
    mat = m.csr[:m.num_normal].tocsc() if normal_only else m.csc
    count = np.diff(mat.indptr).astype(np.int64)
    total = np.asarray(mat.sum(axis=0)).ravel()
    sq = mat.copy()
    sq.data = sq.data ** 2
    sq_total = np.asarray(sq.sum(axis=0)).ravel()
    global_mean = float(mat.data.mean()) if mat.nnz else 0.0
    safe = np.maximum(count, 1)
    mean = np.where(count > 0, total / safe, global_mean)
    var = np.maximum(sq_total / safe - (total / safe) ** 2, 0.0)
    std = np.where(count > 0, np.sqrt(var), 0.0)
    return ItemStats(mean=mean, std=std, count=count)


def unrated_users(m, t):
    """Normal users who have not rated item t."""
    if not 0 <= t < m.num_items:
        raise ValidationError(f"item {t} out of range")
    raters, _ = m.item_raters(t)
    mask = np.ones(m.num_normal, dtype=bool)
    mask[raters[raters < m.num_normal]] = False
    return np.flatnonzero(mask)


def append_fake_users(m, profiles):
    """Return a new matrix with one fake user appended per profile.

    Normal-user entries are untouched; the normal/fake partition boundary
    stays at the current matrix's boundary.
    """
    if not profiles:
        return m
    rows, cols, vals = [], [], []
    for k, prof in enumerate(profiles):
        items, ratings = prof.rated_items()
        if len(items) and (min(items) < 0 or max(items) >= m.num_items):
            raise ValidationError(f"profile {k} rates an item outside 0..{m.num_items - 1}")
        if len(ratings) and (min(ratings) < 1 or max(ratings) > m.r_max):
            raise ValidationError(f"profile {k} rating outside 1..{m.r_max}")
        rows.extend([k] * len(items))
        cols.extend(items)
        vals.extend(ratings)
    fake_block = sp.csr_matrix((vals, (rows, cols)),
                               shape=(len(profiles), m.num_items))
    stacked = sp.vstack([m.csr, fake_block], format="csr")
    start = m.num_users
    fake_labels = np.array([f"fake:{start + k}" for k in range(len(profiles))], dtype=object)
    return RatingMatrix(stacked, m.r_max, num_normal=m.num_normal,
                        user_labels=np.concatenate([m.user_labels, fake_labels]),
                        item_labels=m.item_labels)


def without_users(m, drop):
    """Return a new matrix with the given user indices removed.

    Remaining users are re-indexed contiguously (labels preserved); the item
    set is kept intact even if some items lose all their ratings.
    """
    drop = np.asarray(sorted(set(int(u) for u in drop)), dtype=np.int64)
    if drop.size and (drop.min() < 0 or drop.max() >= m.num_users):
        raise ValidationError("user index out of range")
    keep = np.setdiff1d(np.arange(m.num_users), drop)
    sub = m.csr[keep]
    new_normal = int(np.sum(keep < m.num_normal))
    return RatingMatrix(sub, m.r_max, num_normal=new_normal,
                        user_labels=m.user_labels[keep], item_labels=m.item_labels)


# -- snapshot format ---------------------------------------------------------
#
# line 1: num_users num_items num_ratings r_max num_normal
# line 2: user labels, tab-separated (empty line when no users)
# line 3: item labels, tab-separated
# then one `user<TAB>item<TAB>rating` triple per line, sorted by (user, item);
# users at index >= num_normal are the fake block.

def save_snapshot(m, path):
    with open(path, "w") as fh:
        fh.write(f"{m.num_users} {m.num_items} {m.num_ratings} {m.r_max} {m.num_normal}\n")
        fh.write("\t".join(str(x) for x in m.user_labels) + "\n")
        fh.write("\t".join(str(x) for x in m.item_labels) + "\n")
        rows, cols, vals = m.entries()
        for u, i, r in zip(rows, cols, vals):
            fh.write(f"{u}\t{i}\t{r}\n")


def load_snapshot(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise ParseError("line 1: expected 5 header fields")
        num_users, num_items, num_ratings, r_max, num_normal = map(int, header)
        user_line = fh.readline().rstrip("\n")
        item_line = fh.readline().rstrip("\n")
        user_labels = np.array(user_line.split("\t") if user_line else [], dtype=object)
        item_labels = np.array(item_line.split("\t") if item_line else [], dtype=object)
        rows, cols, vals = [], [], []
        for lineno, line in enumerate(fh, start=4):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"line {lineno}: expected 3 fields")
            rows.append(int(parts[0]))
            cols.append(int(parts[1]))
            vals.append(int(parts[2]))
    if len(vals) != num_ratings:
        raise ValidationError(f"header claims {num_ratings} ratings, file has {len(vals)}")
    return from_triples(rows, cols, vals, num_users, num_items, r_max,
                        num_normal=num_normal, user_labels=user_labels,
                        item_labels=item_labels)
