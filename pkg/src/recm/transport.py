"""Symmetrized distributions and exact 1-Wasserstein distances on finite supports.

These are the oracles behind the modulation guarantees: for an update net
whose output coordinates are B-Lipschitz,

    |E_p[l_theta]_i| <= 2 B W1(p, p_G)

and, with a rich enough family, E_p[l_theta] can be pushed up to a constant
times W1(p, p_C) where p_C averages p over the generators only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from . import tensor as T
from .exceptions import BudgetError, ContractError, ShapeError
from .groups import haar_sample
from .layer import UpdateNet, expected_l

MERGE_TOL = 1e-9
MAX_SUPPORT = 2000
GELU_LIPSCHITZ = float(T.gelu_grad(np.sqrt(2.0)))


class EmpiricalDistribution:
    """Weighted atoms in Q = Z x Y; columns are z coordinates then y coordinates."""

    def __init__(self, points, weights=None, approximate=False):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ShapeError("points must be a nonempty (n, dim) array")
        w = np.full(pts.shape[0], 1.0 / pts.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
        if w.shape != (pts.shape[0],):
            raise ShapeError("one weight per atom required")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise ContractError("weights must be nonnegative and sum to 1")
        self.points = pts
        self.weights = w
        self.approximate = approximate

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def __repr__(self):
        return f"EmpiricalDistribution(n={len(self)}, dim={self.dim})"

    def split(self, z_dim):
        return self.points[:, :z_dim], self.points[:, z_dim:]

    def merged(self, tol=MERGE_TOL):
        """Same measure with atoms closer than ``tol`` (sup norm) combined."""
        labels = _cluster(self.points, tol)
        k = labels.max() + 1
        w = np.bincount(labels, weights=self.weights, minlength=k)
        first = np.full(k, -1)
        for i in range(len(labels) - 1, -1, -1):
            first[labels[i]] = i
        out = EmpiricalDistribution.__new__(EmpiricalDistribution)
        out.points, out.weights, out.approximate = self.points[first], w / w.sum(), self.approximate
        return out

    def pushforward(self, g, rep_in, rep_out):
        """Law of T_g(q) for q ~ self."""
        z, y = self.split(rep_in.dim)
        pts = np.concatenate([z @ rep_in(g).T, y @ rep_out(g).T], axis=1)
        out = EmpiricalDistribution.__new__(EmpiricalDistribution)
        out.points, out.weights, out.approximate = pts, self.weights.copy(), self.approximate
        return out


def _cluster(points, tol):
    n = points.shape[0]
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if n > 1:
        for i, j in cKDTree(points).query_pairs(tol, p=np.inf):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


def _mixture(dists, tol=MERGE_TOL):
    pts = np.concatenate([d.points for d in dists])
    w = np.concatenate([d.weights for d in dists]) / len(dists)
    approx = any(d.approximate for d in dists)
    return EmpiricalDistribution(pts, w / w.sum(), approximate=approx).merged(tol)


def symmetrize_full(p, group, rep_in, rep_out, n_samples=None, rng=None):
    """Group average of p: exact for finite groups, Monte-Carlo (flagged) otherwise."""
    if group.is_finite:
        return _mixture([p.pushforward(g, rep_in, rep_out) for g in group.elements])
    if not n_samples:
        raise ContractError("continuous group needs a Monte-Carlo sample budget (n_samples)")
    rng = np.random.default_rng(0) if rng is None else rng
    out = _mixture([p.pushforward(haar_sample(group, rng), rep_in, rep_out) for _ in range(n_samples)])
    out.approximate = True
    return out


def symmetrize_generators(p, generating_set, rep_in, rep_out):
    """(1/|C|) sum_{g in C} of the pushforward of p by T_g."""
    if len(generating_set) == 0:
        raise ContractError("empty generating set")
    return _mixture([p.pushforward(g, rep_in, rep_out) for g in generating_set])


def total_variation(p, q, tol=MERGE_TOL):
    """Half the L1 distance between the weight vectors on the merged support."""
    if p.dim != q.dim:
        raise ShapeError("distributions live in different dimensions")
    pts = np.concatenate([p.points, q.points])
    labels = _cluster(pts, tol)
    k = labels.max() + 1
    n = len(p)
    wp = np.bincount(labels[:n], weights=p.weights, minlength=k)
    wq = np.bincount(labels[n:], weights=q.weights, minlength=k)
    return 0.5 * float(np.abs(wp - wq).sum())


# ---------------------------------------------------------------- optimal transport


@dataclass
class TransportPlan:
    source: EmpiricalDistribution
    target: EmpiricalDistribution
    pairs: list = field(default_factory=list)
    total_cost: float = 0.0

    def marginals(self):
        rows = np.zeros(len(self.source))
        cols = np.zeros(len(self.target))
        for i, j, m in self.pairs:
            rows[i] += m
            cols[j] += m
        return rows, cols


def _common_denominator(weights, limit):
    den = 1
    for w in weights:
        frac = Fraction(float(w)).limit_denominator(limit)
        if abs(float(frac) - w) > 1e-12:
            return None
        den = lcm(den, frac.denominator)
        if den > limit:
            return None
    return den


def _plan_by_assignment(p, q, cost, n):
    rep_p = np.repeat(np.arange(len(p)), np.rint(p.weights * n).astype(int))
    rep_q = np.repeat(np.arange(len(q)), np.rint(q.weights * n).astype(int))
    if len(rep_p) != n or len(rep_q) != n:
        return None
    rows, cols = linear_sum_assignment(cost[np.ix_(rep_p, rep_q)])
    flow = {}
    for r, c in zip(rows, cols):
        key = (int(rep_p[r]), int(rep_q[c]))
        flow[key] = flow.get(key, 0.0) + 1.0 / n
    return [(i, j, m) for (i, j), m in sorted(flow.items())]


def _plan_by_lp(p, q, cost):
    n, m = cost.shape
    eye_n, eye_m = sparse.identity(n, format="csr"), sparse.identity(m, format="csr")
    a_eq = sparse.vstack(
        [sparse.kron(eye_n, np.ones((1, m))), sparse.kron(np.ones((1, n)), eye_m)], format="csr"
    )
    b_eq = np.concatenate([p.weights, q.weights])
    res = linprog(
        cost.ravel(),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    x = res.x.reshape(n, m)
    return [(int(i), int(j), float(x[i, j])) for i, j in zip(*np.nonzero(x > 1e-15))]


def transport_plan(p, q, max_support=MAX_SUPPORT):
    """Exact optimal plan for the Euclidean ground metric.

    Uniform-rational weights reduce to a square assignment problem; anything
    else goes to a dual simplex solve of the transport LP.
    """
    if p.dim != q.dim:
        raise ContractError(f"dimension mismatch: {p.dim} vs {q.dim}")
    p, q = p.merged(), q.merged()
    if max(len(p), len(q)) > max_support:
        raise BudgetError(f"support sizes ({len(p)}, {len(q)}) exceed exact budget {max_support}")
    cost = cdist(p.points, q.points)
    pairs = None
    den = _common_denominator(np.concatenate([p.weights, q.weights]), max_support)
    if den is not None:
        pairs = _plan_by_assignment(p, q, cost, den)
    if pairs is None:
        pairs = _plan_by_lp(p, q, cost)
    total = float(sum(m * cost[i, j] for i, j, m in pairs))
    return TransportPlan(p, q, pairs, total)


def wasserstein1(p, q, max_support=MAX_SUPPORT):
    return transport_plan(p, q, max_support).total_cost


# ---------------------------------------------------------------- Lipschitz bounds


def spectral_norm(w):
    w = np.asarray(w.data if isinstance(w, T.Tensor) else w, dtype=np.float64)
    if w.size == 0:
        return 0.0
    return float(np.linalg.norm(w, 2))


def lipschitz_upper(update_net):
    """Product of layer spectral norms times the GeLU constant per activation."""
    b = 1.0
    for w in update_net.weights:
        b *= spectral_norm(w)
    return b * GELU_LIPSCHITZ ** (len(update_net.weights) - 1)


@dataclass
class UpperBoundReport:
    lhs: np.ndarray
    lipschitz: float
    w1: float
    rhs: float
    alpha_bound: float
    passed: bool

    def record(self):
        return {
            "lhs_max": float(self.lhs.max()),
            "rhs": self.rhs,
            "B": self.lipschitz,
            "W1": self.w1,
            "alpha_bound": self.alpha_bound,
            "pass": self.passed,
        }


def expectation_of_l(p, update_net, generating_set, rep_in, rep_out):
    """Exact E_p[l_theta] over the finite support of p."""
    z, y = p.split(rep_in.dim)
    return expected_l(update_net, z, y, generating_set, rep_in, rep_out, weights=p.weights).data


def verify_upper_bound(p, update_net, group, generating_set, rep_in, rep_out, slack=1e-8):
    """Check |E_p[l]_i| <= 2 B W1(p, p_G) coordinate-wise for a finite group."""
    if not group.is_finite:
        raise ContractError("exact verification needs a finite group")
    lhs = np.abs(expectation_of_l(p, update_net, generating_set, rep_in, rep_out))
    b = lipschitz_upper(update_net)
    w1 = wasserstein1(p, symmetrize_full(p, group, rep_in, rep_out))
    rhs = 2.0 * b * w1
    m = update_net.n_out
    return UpperBoundReport(lhs, b, w1, rhs, 2.0 * np.sqrt(m) * b * w1, bool((lhs <= rhs + slack).all()))


@dataclass
class KantorovichResult:
    achieved: float
    w1: float
    budget: float
    ratio: float
    lipschitz: float


def _rescale_to_budget(net, budget):
    b = lipschitz_upper(net)
    if b > budget:
        f = (budget / b) ** (1.0 / len(net.weights))
        for w in net.weights:
            w.data = w.data * f


def _linear_warm_start(net, direction, shift=3.0):
    """One hidden unit in GeLU's near-linear range along ``direction``; rest zero."""
    for w, b_ in zip(net.weights, net.biases):
        w.data = np.zeros_like(w.data)
        b_.data = np.zeros_like(b_.data)
    net.weights[0].data[0] = direction / max(np.linalg.norm(direction), 1e-300)
    net.biases[0].data[0] = shift
    net.weights[-1].data[0, 0] = 1.0


def _ascend(net, objective, budget, steps, lr):
    from .optim import Adam, cosine_lr

    _rescale_to_budget(net, budget)
    opt = Adam(net.parameters(), lr=lr)
    best = float(objective().data)
    for step in range(steps):
        opt.zero_grad()
        T.backward(T.neg(objective()))
        opt.lr = cosine_lr(lr, step, steps)
        opt.step()
        _rescale_to_budget(net, budget)
        best = max(best, float(objective().data))
    return best


def kantorovich_lower(
    p, generating_set, rep_in, rep_out, budget, steps=2000, rng=None, hidden=(16,), lr=0.01
):
    """Gradient ascent on E_p[l_theta] for a scalar r_theta with Lipschitz bound <= budget.

    Two ascents of ``steps`` each, from a random start and from a linear warm
    start along E_p[q] - E_{p_C}[q]; returns the best expectation reached and
    its ratio to budget * W1(p, p_C).
    """
    if budget <= 0:
        raise ContractError("Lipschitz budget must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    z, y = p.split(rep_in.dim)
    p_gen = symmetrize_generators(p, generating_set, rep_in, rep_out)
    w1 = wasserstein1(p, p_gen)
    mean_gap = p.weights @ p.points - p_gen.weights @ p_gen.points

    best, best_net = -np.inf, None
    for start in ("random", "linear"):
        net = UpdateNet(p.dim, hidden, 1, rng=rng)
        if start == "random":
            for b_ in net.biases[:-1]:
                b_.data = rng.standard_normal(b_.shape)
        elif np.linalg.norm(mean_gap) > 0 and len(net.weights) > 1:
            _linear_warm_start(net, mean_gap)
        else:
            continue

        def objective(net=net):
            return T.index(expected_l(net, z, y, generating_set, rep_in, rep_out, weights=p.weights), 0)

        got = _ascend(net, objective, budget, steps, lr)
        if got > best:
            best, best_net = got, net
    ratio = best / (budget * w1) if w1 > 0 else float("nan")
    return KantorovichResult(best, w1, budget, ratio, lipschitz_upper(best_net))


def _closed_under(p, group, rep_in, rep_out, tol=MERGE_TOL):
    tree = cKDTree(p.points)
    for g in group.elements:
        moved = p.pushforward(g, rep_in, rep_out).points
        d, _ = tree.query(moved, p=np.inf)
        if (d > tol).any():
            return False
    return True


def check_fixed_point(p, generating_set, group, rep_in, rep_out, tol=1e-10):
    """(p == p_C, p invariant under all of G), both judged by total variation."""
    if not group.is_finite:
        raise ContractError("fixed-point check needs a finite group")
    p = p.merged()
    if not _closed_under(p, group, rep_in, rep_out):
        raise ContractError("support is not closed under the group action")
    gen_fixed = total_variation(p, symmetrize_generators(p, generating_set, rep_in, rep_out)) < tol
    invariant = all(total_variation(p, p.pushforward(g, rep_in, rep_out)) < tol for g in group.elements)
    return gen_fixed, invariant


__all__ = [
    "EmpiricalDistribution",
    "TransportPlan",
    "UpperBoundReport",
    "KantorovichResult",
    "symmetrize_full",
    "symmetrize_generators",
    "total_variation",
    "transport_plan",
    "wasserstein1",
    "spectral_norm",
    "lipschitz_upper",
    "expectation_of_l",
    "verify_upper_bound",
    "kantorovich_lower",
    "check_fixed_point",
    "GELU_LIPSCHITZ",
]
