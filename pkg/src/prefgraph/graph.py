"""User preference graph: row-normalized transitions and restart walks.

Nodes are users followed by items: user u is node u, item i is node
num_users + i.  The walk matrix Q is row-stochastic (each node spreads its
outgoing probability across rated neighbors in proportion to rating score).
Stationary scores propagate probability mass along incoming edges, i.e. the
update is p <- (1 - alpha) * Q^T p + alpha * e_start, which keeps the iterate
a probability distribution whenever the start node has at least one edge.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 1000
DENSE_NODE_LIMIT = 4500


class ConvergenceError(RuntimeError):
    """An iterative solve failed to reach its tolerance."""


class TransitionMatrix:
    """Sparse row-stochastic walk matrix over the user+item node set."""

    def __init__(self, q, num_users, num_items):
        self.q = sp.csr_matrix(q)
        self.num_users = num_users
        self.num_items = num_items
        if self.q.shape[0] != self.q.shape[1]:
            raise ValueError("transition matrix must be square")

    @property
    def num_nodes(self):
        return self.q.shape[0]

    @cached_property
    def qt(self):
        return self.q.T.tocsr()

    def item_node(self, i):
        return self.num_users + i

    def item_slice(self):
        return slice(self.num_users, self.num_users + self.num_items)


def _row_normalize(mat):
    sums = np.asarray(mat.sum(axis=1)).ravel()
    inv = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    return sp.diags(inv) @ mat


def build_transition(m):
    """Bipartite walk matrix from a rating matrix.

    Both orientations of every rated pair get an edge; each node's outgoing
    row is its rating scores divided by their sum.  Nodes without ratings
    keep an all-zero row.
    """
    r = m.csr
    upper = _row_normalize(r)
    lower = _row_normalize(r.T.tocsr())
    q = sp.bmat([[None, upper], [lower, None]], format="csr")
    q = sp.csr_matrix(q, shape=(m.num_users + m.num_items,) * 2)
    return TransitionMatrix(q, m.num_users, m.num_items)


def build_attacked_transition(m, weights, eps=1e-6):
    """Walk matrix for the graph plus one extra user holding continuous
    edge weights over items.

    The extra node is appended after the items (index num_users + num_items)
    so existing node indices are unchanged.  Weights below eps contribute no
    edge.  Item rows are re-normalized to include the new user's weight.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (m.num_items,):
        raise ValueError("weights must have one entry per item")
    live = weights >= eps
    w = np.where(live, weights, 0.0)

    r = m.csr
    nu, ni = m.num_users, m.num_items
    user_rows = _row_normalize(r)

    item_sums = np.asarray(r.sum(axis=0)).ravel() + w
    inv = np.divide(1.0, item_sums, out=np.zeros_like(item_sums), where=item_sums > 0)
    item_rows = sp.diags(inv) @ r.T.tocsr()
    item_to_v = sp.csr_matrix((w[live] * inv[live], (np.flatnonzero(live),
                                                     np.zeros(int(live.sum()), dtype=np.int64))),
                              shape=(ni, 1))
    w_total = w.sum()
    if w_total > 0:
        v_row = sp.csr_matrix((w[live] / w_total, (np.zeros(int(live.sum()), dtype=np.int64),
                                                   np.flatnonzero(live))),
                              shape=(1, ni))
    else:
        v_row = sp.csr_matrix((1, ni))
    q = sp.bmat([[None, user_rows, None],
                 [item_rows, None, item_to_v],
                 [None, v_row, None]], format="csr")
    q = sp.csr_matrix(q, shape=(nu + ni + 1,) * 2)
    return TransitionMatrix(q, nu, ni)


@dataclass
class StationaryDistribution:
    """Restart-walk scores for one start node."""

    start: int
    alpha: float
    probs: np.ndarray
    converged: bool
    iterations: int
    residual: float


def _check_alpha(alpha):
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"restart probability {alpha} outside (0, 1]")


def solve_rwr(trans, u, alpha, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Power iteration for the restart-walk fixed point started at node u.

    Iterates p <- (1 - alpha) * Q^T p + alpha * e_u from p = e_u until the
    sup-norm step falls below tol.  A result that hits max_iter first is
    returned with converged=False; the caller decides whether that matters.
    """
    _check_alpha(alpha)
    n = trans.num_nodes
    if not 0 <= u < n:
        raise ValueError(f"start node {u} out of range")
    qt = trans.qt
    p = np.zeros(n)
    p[u] = 1.0
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        nxt = (1.0 - alpha) * (qt @ p)
        nxt[u] += alpha
        delta = float(np.max(np.abs(nxt - p)))
        p = nxt
        if delta <= tol:
            converged = True
            break
    resid = (1.0 - alpha) * (qt @ p)
    resid[u] += alpha
    residual = float(np.max(np.abs(resid - p)))
    return StationaryDistribution(start=u, alpha=alpha, probs=p,
                                  converged=converged, iterations=iterations,
                                  residual=residual)


def fixed_point_batch(op, b, coef, x0=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Solve (I - coef * op) X = B column-wise by fixed-point iteration.

    op is a sparse matrix applied as op @ X.  Warm start from x0 when given.
    Returns (X, converged, iterations).
    """
    x = b.copy() if x0 is None else x0.copy()
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        nxt = coef * (op @ x) + b
        delta = float(np.max(np.abs(nxt - x))) if nxt.size else 0.0
        x = nxt
        if delta <= tol:
            converged = True
            break
    return x, converged, iterations


def stationary_batch(trans, starts, alpha, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                     method="auto"):
    """Stationary distributions for many start nodes as columns of one array.

    method 'power' runs the batched power iteration (bit-identical to
    per-start solve_rwr); 'dense' factorizes I - (1-alpha) Q^T once with
    LAPACK and back-solves every start, which is much faster for many starts
    on small graphs.  'auto' picks 'dense' when the node count allows it.
    Column order follows the given start order, so reductions over users are
    deterministic regardless of how the evaluation is batched.
    """
    _check_alpha(alpha)
    starts = np.asarray(starts, dtype=np.int64)
    n = trans.num_nodes
    if method == "auto":
        method = "dense" if n <= DENSE_NODE_LIMIT and len(starts) > 8 else "power"
    e = np.zeros((n, len(starts)))
    e[starts, np.arange(len(starts))] = 1.0
    if method == "dense":
        a = np.eye(n) - (1.0 - alpha) * trans.qt.toarray()
        lu, piv = sla.lu_factor(a, overwrite_a=True)
        p = sla.lu_solve((lu, piv), alpha * e)
        return p
    if method == "power":
        p, converged, _ = fixed_point_batch(trans.qt, alpha * e, 1.0 - alpha,
                                            x0=e, tol=tol, max_iter=max_iter)
        if not converged:
            raise ConvergenceError(f"stationary batch not converged in {max_iter} iterations")
        return p
    raise ValueError(f"unknown method {method!r}")
