"""Optimized fake-user synthesis against the restart-walk recommender.

Fake users are generated one at a time.  For each, the integer rating vector
is relaxed to continuous edge weights w in [0, r_max] attached to an extra
graph node, and

    F(w) = ||w||^2 + lam * sum_{u in S} sum_{i in L_u} g(p_ui - p_ut)

is minimized by projected gradient descent, where g is the
Wilcoxon-Mann-Whitney sigmoid of width b, S is the set of normal users who
have not rated the target t, p_u their stationary walk scores on the
weighted graph, and L_u their current top-N lists.  The weight on the target
itself is pinned to r_max throughout.  After the solve, the n heaviest
remaining items become filler items whose integer scores are sampled from
per-item normal fits to the normal users' ratings.

Differentiating through the walk uses the fixed point: with
A = I - (1-alpha) Q^T, each coordinate satisfies
dp/dw_i = (1-alpha) A^{-1} (dQ/dw_i)^T p, so a loss gradient c^T dp/dw_i
collapses to (1-alpha) p^T (dQ/dw_i) y with one adjoint solve A^T y = c per
user.  dQ/dw_i only touches the fake user's row and item i's row, so the
per-coordinate contraction is assembled for every item at once from p, y,
and the rating columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, asdict

import numpy as np
from scipy.special import expit

from .graph import (StationaryDistribution, build_attacked_transition,
                    fixed_point_batch)
from .profiles import FakeUserProfile, discretize
from .ratings import append_fake_users, item_stats, unrated_users


class OptimizationError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class AttackConfig:
    """Every knob of the optimized attack."""

    target: int
    num_fakes: int = 1
    n_fillers: int = 10
    lam: float = 0.01
    b: float = 0.01
    alpha: float = 0.3
    top_n: int = 10
    r_max: int = None
    seed: int = 0
    pgd_step: float = 0.01
    pgd_max_iter: int = 50
    pgd_tol: float = 1e-6
    solver_tol: float = 1e-8
    solver_max_iter: int = 2000
    jac_tol: float = 1e-8
    jac_max_iter: int = 2000
    active_k: int = None
    s_cap: int = 300
    eps_struct: float = 1e-6
    refresh_every: int = 1

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError("width b must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha outside (0, 1]")

    def resolved_r_max(self, m):
        return m.r_max if self.r_max is None else self.r_max

    def resolved_active_k(self):
        return 4 * self.n_fillers if self.active_k is None else self.active_k

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass(frozen=True)
class PGDIterate:
    iteration: int
    objective: float
    loss: float
    regularizer: float
    clipped: int
    step_size: float


@dataclass
class PGDTrace:
    records: list = field(default_factory=list)

    def objectives(self):
        return [r.objective for r in self.records]


def wmw(x, b):
    """Wilcoxon-Mann-Whitney sigmoid 1 / (1 + exp(-x/b))."""
    if b <= 0:
        raise ValueError("width b must be positive")
    return expit(np.asarray(x, dtype=np.float64) / b)


def wmw_grad(x, b):
    """Derivative g(x)(1 - g(x))/b of the WMW sigmoid."""
    g = wmw(x, b)
    return g * (1.0 - g) / b


def user_loss(dist, rec, t, b, num_users=None):
    """Ranking loss for one user: sum of g(p_i - p_t) over their top-N items.

    dist is a StationaryDistribution (num_users then taken from the caller)
    or any node-score vector; rec is the user's RecommendationList.
    """
    probs = dist.probs if isinstance(dist, StationaryDistribution) else np.asarray(dist)
    if num_users is not None:
        item_scores = probs[num_users:]
    else:
        item_scores = probs
    items = np.asarray(rec.items if hasattr(rec, "items") else rec, dtype=np.int64)
    return float(np.sum(wmw(item_scores[items] - item_scores[t], b)))


def _loss_targets(m, cfg):
    """Normal users eligible for the loss (non-raters of t), subsampled to
    s_cap with a stream derived only from run-level quantities so any later
    evaluation with the same config reproduces it."""
    s_full = unrated_users(m, cfg.target)
    if cfg.s_cap is None or len(s_full) <= cfg.s_cap:
        return s_full
    rng = np.random.default_rng([cfg.seed, 0x5CA9, len(s_full)])
    return np.sort(rng.choice(s_full, size=cfg.s_cap, replace=False))


class _AttackState:
    """Per-fake-user evaluation machinery on the attacked graph.

    The attacked graph appends the weight-bearing node after the items, so
    node v = num_users + num_items.  Forward and adjoint solves are batched
    over the loss users and warm-started across gradient evaluations.
    """

    def __init__(self, m, cfg):
        self.m = m
        self.cfg = cfg
        self.r_max = cfg.resolved_r_max(m)
        self.users = _loss_targets(m, cfg)
        self.nu, self.ni = m.num_users, m.num_items
        self.v = self.nu + self.ni
        self.num_nodes = self.v + 1
        self.t_node = self.nu + cfg.target
        self.item_totals = np.asarray(m.csr.sum(axis=0)).ravel()
        self.rated_masks = [m.user_items(u)[0] for u in self.users]
        e = np.zeros((self.num_nodes, len(self.users)))
        e[self.users, np.arange(len(self.users))] = 1.0
        self.restart = cfg.alpha * e
        self.warm_p = None
        self.warm_y = None

    def evaluate(self, w, need_grad=True):
        """Loss (and gradient) of the relaxed objective at weights w."""
        cfg = self.cfg
        trans = build_attacked_transition(self.m, w, eps=cfg.eps_struct)
        c = 1.0 - cfg.alpha
        p, ok, _ = fixed_point_batch(trans.qt, self.restart, c, x0=self.warm_p,
                                     tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
        if not ok:
            raise OptimizationError(self._stalled(trans.qt, self.restart, p, c, "stationary"))
        self.warm_p = p

        item_block = p[self.nu:self.nu + self.ni, :]
        n_top = cfg.top_n
        loss = 0.0
        cols = np.zeros_like(p) if need_grad else None
        tops = []
        for k in range(len(self.users)):
            scores = item_block[:, k]
            mask_idx = self.rated_masks[k]
            masked = scores.copy()
            masked[mask_idx] = -np.inf
            take = min(n_top, self.ni - len(mask_idx))
            if take <= 0:
                tops.append(np.empty(0, dtype=np.int64))
                continue
            cand = np.argpartition(-masked, take - 1)[:take]
            # deterministic tie rule: higher score first, then lower item id
            cand = cand[np.lexsort((cand, -masked[cand]))]
            tops.append(cand)
            delta = scores[cand] - scores[cfg.target]
            loss += float(np.sum(wmw(delta, cfg.b)))
            if need_grad:
                gp = wmw_grad(delta, cfg.b)
                np.add.at(cols, (self.nu + cand, np.full(len(cand), k)), gp)
                cols[self.t_node, k] -= float(gp.sum())

        if not need_grad:
            return {"loss": loss, "p": p, "tops": tops}

        y, ok, _ = fixed_point_batch(trans.q, cols, c, x0=self.warm_y,
                                     tol=cfg.jac_tol, max_iter=cfg.jac_max_iter)
        if not ok:
            raise OptimizationError(self._stalled(trans.q, cols, y, c, "adjoint"))
        self.warm_y = y

        grad_loss = self._contract(w, p, y, c)
        return {"loss": loss, "grad_loss": grad_loss, "p": p, "tops": tops}

    def _contract(self, w, p, y, c):
        """Assemble sum_u (1-alpha) p_u^T (dQ/dw_i) y_u for every item i."""
        live = w >= self.cfg.eps_struct
        w_live = np.where(live, w, 0.0)
        grad = np.zeros(self.ni)
        y_items = y[self.nu:self.nu + self.ni, :]
        p_items = p[self.nu:self.nu + self.ni, :]
        w_total = float(w_live.sum())
        if w_total > 0:
            p_v = p[self.v, :]
            s = w_live @ y_items
            term1 = (y_items * w_total - s[None, :]) * p_v[None, :] / w_total ** 2
            grad += np.where(live, term1.sum(axis=1), 0.0)
        denom = self.item_totals + w_live
        rt_y = self.m.csr.T @ y[:self.nu, :]
        y_v = y[self.v, :]
        num = self.item_totals[:, None] * y_v[None, :] - rt_y
        with np.errstate(divide="ignore", invalid="ignore"):
            term2 = np.where((denom > 0)[:, None], p_items * num / (denom ** 2)[:, None], 0.0)
        grad += np.where(live, term2.sum(axis=1), 0.0)
        return c * grad

    def _stalled(self, op, b, x, c, label):
        resid = c * (op @ x) + b - x
        worst = int(np.argmax(np.max(np.abs(resid), axis=0)))
        return (f"{label} solve not converged within budget; worst residual is "
                f"for user {int(self.users[worst])}")


def total_loss(m, w, cfg):
    """Summed WMW ranking loss over the eligible users at weights w."""
    state = _AttackState(m, cfg)
    return state.evaluate(np.asarray(w, dtype=np.float64), need_grad=False)["loss"]


def objective(m, w, cfg):
    """F(w) = ||w||^2 + lam * total_loss(w)."""
    w = np.asarray(w, dtype=np.float64)
    return float(w @ w) + cfg.lam * total_loss(m, w, cfg)


def grad_f(m, w, cfg, state=None):
    """Gradient of the relaxed objective: 2w + lam * d(loss)/dw."""
    w = np.asarray(w, dtype=np.float64)
    if state is None:
        state = _AttackState(m, cfg)
    ev = state.evaluate(w, need_grad=True)
    return 2.0 * w + cfg.lam * ev["grad_loss"], ev


def grad_q(m, w, edge, eps=1e-6):
    """Partials of one transition entry Q_xy with respect to every weight.

    Nodes use the attacked layout (users, items, then the weight node v).
    Entries not incident to v have identically zero partials.  A weight row
    that sums to zero cannot be normalized, so its partials are an error.
    """
    w = np.asarray(w, dtype=np.float64)
    nu, ni = m.num_users, m.num_items
    v = nu + ni
    x, y = edge
    out = np.zeros(ni)
    live = w >= eps
    w_live = np.where(live, w, 0.0)
    if x == v:
        if not nu <= y < v:
            raise ValueError("the weight node only has item neighbors")
        w_total = float(w_live.sum())
        if w_total == 0:
            raise ZeroDivisionError("weight row sums to zero; normalization undefined")
        j = y - nu
        if live[j]:
            out[live] -= w_live[j] / w_total ** 2
            out[j] += 1.0 / w_total
        return out
    if nu <= x < v:
        i = x - nu
        if not live[i]:
            return out
        d = float(np.asarray(m.csr[:, i].sum()))
        denom = (d + w_live[i]) ** 2
        if y == v:
            out[i] = d / denom
        elif y < nu:
            out[i] = -m.rating(y, i) / denom
        else:
            raise ValueError("item rows only connect to users and the weight node")
        return out
    return out


def grad_p(m, w, u, cfg, coords=None):
    """Jacobian columns d p_u / d w_i for a restricted coordinate set.

    Solves the fixed-point linear system per coordinate with the same walk
    orientation as the stationary solve.  coords defaults to the active set:
    the active_k heaviest weights plus the target.  Returns (coords, J,
    converged) with J of shape (num_nodes, len(coords)).
    """
    w = np.asarray(w, dtype=np.float64)
    nu, ni = m.num_users, m.num_items
    v = nu + ni
    if coords is None:
        k = min(cfg.resolved_active_k(), ni)
        order = np.lexsort((np.arange(ni), -w))
        coords = np.unique(np.append(order[:k], cfg.target))
    coords = np.asarray(coords, dtype=np.int64)
    trans = build_attacked_transition(m, w, eps=cfg.eps_struct)
    c = 1.0 - cfg.alpha
    p = _solve_single(trans, u, cfg)

    live = w >= cfg.eps_struct
    w_live = np.where(live, w, 0.0)
    w_total = float(w_live.sum())
    item_totals = np.asarray(m.csr.sum(axis=0)).ravel()
    b = np.zeros((trans.num_nodes, len(coords)))
    for col, i in enumerate(coords):
        if not live[i]:
            continue
        if w_total > 0:
            # row v of dQ/dw_i, transposed onto item nodes
            b[nu:nu + ni, col] += p[v] * (-w_live) / w_total ** 2
            b[nu + i, col] += p[v] / w_total
        d = item_totals[i]
        denom = (d + w_live[i]) ** 2
        raters, scores = m.item_raters(i)
        b[raters, col] -= p[nu + i] * scores / denom
        b[v, col] += p[nu + i] * d / denom
    j, ok, _ = fixed_point_batch(trans.qt, c * b, c, tol=cfg.jac_tol,
                                 max_iter=cfg.jac_max_iter)
    return coords, j, ok


def _solve_single(trans, u, cfg):
    e = np.zeros((trans.num_nodes, 1))
    e[u, 0] = 1.0
    p, ok, _ = fixed_point_batch(trans.qt, cfg.alpha * e, 1.0 - cfg.alpha,
                                 x0=e, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
    if not ok:
        raise OptimizationError(f"stationary solve for node {u} did not converge")
    return p[:, 0]


def initial_weights(m, cfg):
    """Uniform small weights on every item, the target pinned at r_max."""
    r_max = cfg.resolved_r_max(m)
    w = np.full(m.num_items, r_max / m.num_items)
    w[cfg.target] = r_max
    return w


def optimize_weights(m, cfg, state=None):
    """Projected gradient descent on the relaxed objective.

    Iterates w <- clip(w - eta * grad F(w), 0, r_max) with the target weight
    pinned, halving eta whenever the objective rises, until the sup-norm step
    or the iteration budget runs out.  Returns (best w seen, trace).
    """
    if state is None:
        state = _AttackState(m, cfg)
    r_max = cfg.resolved_r_max(m)
    w = initial_weights(m, cfg)
    trace = PGDTrace()
    eta = cfg.pgd_step

    grad, ev = grad_f(m, w, cfg, state=state)
    f_cur = float(w @ w) + cfg.lam * ev["loss"]
    if not np.isfinite(f_cur):
        raise OptimizationError("objective not finite at initialization", trace)
    trace.records.append(PGDIterate(0, f_cur, ev["loss"], float(w @ w), 0, eta))
    best_w, best_f = w.copy(), f_cur

    refresh = max(1, int(cfg.refresh_every))
    for it in range(1, cfg.pgd_max_iter + 1):
        raw = w - eta * grad
        w_next = np.clip(raw, 0.0, r_max)
        clipped = int(np.sum(raw != w_next))
        w_next[cfg.target] = r_max
        step = float(np.max(np.abs(w_next - w))) if len(w_next) else 0.0
        if step <= cfg.pgd_tol:
            break
        w = w_next
        if it % refresh != 0 and it != cfg.pgd_max_iter:
            # cheap step between refreshes: loss gradient frozen, quadratic exact
            grad = 2.0 * w + cfg.lam * ev["grad_loss"]
            continue
        grad, ev = grad_f(m, w, cfg, state=state)
        f_new = float(w @ w) + cfg.lam * ev["loss"]
        if not np.isfinite(f_new):
            raise OptimizationError(f"objective not finite at iteration {it}", trace)
        trace.records.append(PGDIterate(it, f_new, ev["loss"], float(w @ w), clipped, eta))
        if f_new > f_cur:
            eta *= 0.5
        if f_new < best_f:
            best_f, best_w = f_new, w.copy()
        f_cur = f_new
    return best_w, trace


def synthesize_profile(m, w, cfg, rng):
    """Integer profile from solved weights: target at r_max, the n heaviest
    other items as fillers, scores sampled from per-item normal fits to the
    normal users' ratings."""
    w = np.asarray(w, dtype=np.float64)
    r_max = cfg.resolved_r_max(m)
    order = np.lexsort((np.arange(m.num_items), -w))
    order = order[order != cfg.target]
    n = min(cfg.n_fillers, m.num_items - 1)
    chosen = order[:n]
    stats = item_stats(m, normal_only=True)
    raw = rng.normal(stats.mean[chosen], stats.std[chosen])
    scores = discretize(raw, r_max)
    fillers = tuple((int(i), int(r)) for i, r in zip(chosen, scores))
    return FakeUserProfile(target=cfg.target, target_rating=r_max, fillers=fillers)


def run_attack(m, cfg):
    """Generate cfg.num_fakes fake users sequentially.

    Each user's weights are optimized against the matrix holding all earlier
    fake users, then converted to integer ratings and injected before the
    next solve.  Warm starts carry across users after realigning for the
    extra row the injection adds.
    """
    profiles = []
    current = m
    prev_state = None
    for k in range(cfg.num_fakes):
        state = _AttackState(current, cfg)
        if prev_state is not None:
            state.warm_p = _realign_warm(prev_state.warm_p, current)
            state.warm_y = _realign_warm(prev_state.warm_y, current)
        w, _trace = optimize_weights(current, cfg, state=state)
        rng = np.random.default_rng([cfg.seed, 0x9A7, k])
        prof = synthesize_profile(current, w, cfg, rng)
        profiles.append(prof)
        current = append_fake_users(current, [prof])
        prev_state = state
    return profiles


def _realign_warm(x, m_new):
    """Map a warm-start block from the previous attacked layout (old users,
    items, v) to the new one (old users + v as a real user, items, new v)."""
    if x is None:
        return None
    nu_new = m_new.num_users
    nu_old = nu_new - 1
    out = np.zeros((x.shape[0] + 1, x.shape[1]))
    out[:nu_old] = x[:nu_old]
    out[nu_old] = x[-1]
    out[nu_new:-1] = x[nu_old:-1]
    return out
