import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr
from scipy.stats import norm

from recm.exceptions import BudgetError, ContractError, ShapeError
from recm.groups import Representation, copies_rep, get_group, standard_rep
from recm.layer import UpdateNet
from recm.transport import (
    GELU_LIPSCHITZ,
    EmpiricalDistribution,
    check_fixed_point,
    kantorovich_lower,
    lipschitz_upper,
    symmetrize_full,
    symmetrize_generators,
    total_variation,
    transport_plan,
    verify_upper_bound,
    wasserstein1,
)
from recm.verify import random_instance

NONE = Representation(0, lambda g: np.zeros((0, 0)), True, "empty")
C4 = get_group("C4")
STD4 = standard_rep(C4)


def delta(*pt):
    return EmpiricalDistribution([list(pt)])


def brute_force_w1(a, b):
    """Uniform equal-size supports: best permutation by exhaustion."""
    n = len(a)
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return min(cost[np.arange(n), list(perm)].mean() for perm in itertools.permutations(range(n)))


def cdf_w1(xa, wa, xb, wb):
    """Weighted distributions on the line: integral of |F_a - F_b|."""
    grid = np.sort(np.concatenate([xa, xb]))
    fa = np.array([wa[xa <= x].sum() for x in grid[:-1]])
    fb = np.array([wb[xb <= x].sum() for x in grid[:-1]])
    return float(np.sum(np.abs(fa - fb) * np.diff(grid)))


def test_distribution_contract():
    with pytest.raises(ContractError):
        EmpiricalDistribution([[0.0], [1.0]], [0.7, 0.7])
    with pytest.raises(ContractError):
        EmpiricalDistribution([[0.0], [1.0]], [1.5, -0.5])
    with pytest.raises(ShapeError):
        EmpiricalDistribution([[0.0], [1.0]], [1.0])


def test_merge_combines_close_atoms():
    p = EmpiricalDistribution([[0.0, 0.0], [1e-12, 0.0], [1.0, 0.0]], [0.25, 0.25, 0.5]).merged()
    assert len(p) == 2 and np.allclose(sorted(p.weights), [0.5, 0.5])


def test_symmetrize_full_orbit_average():
    ps = symmetrize_full(delta(1.0, 0.0), C4, STD4, NONE)
    assert len(ps) == 4 and np.allclose(ps.weights, 0.25)
    expected = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], float)
    for e in expected:
        assert np.abs(ps.points - e).max(axis=1).min() < 1e-12


def test_symmetrize_full_two_atoms_under_swap():
    s2 = get_group("S2")
    rep = standard_rep(s2)
    p = EmpiricalDistribution([[1.0, 2.0], [3.0, 3.0]], [0.3, 0.7])
    ps = symmetrize_full(p, s2, rep, NONE)
    # by hand: (1,2) and (2,1) get 0.15 each; (3,3) is fixed and keeps 0.7
    got = {tuple(np.round(x, 9)): w for x, w in zip(ps.points, ps.weights)}
    assert got == pytest.approx({(1.0, 2.0): 0.15, (2.0, 1.0): 0.15, (3.0, 3.0): 0.7})


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_symmetrize_full_idempotent_and_invariant(seed):
    rng = np.random.default_rng(seed)
    p, g, rep_in, rep_out = random_instance(("C4", "S3")[seed % 2], rng)
    ps = symmetrize_full(p, g, rep_in, rep_out)
    assert total_variation(symmetrize_full(ps, g, rep_in, rep_out), ps) < 1e-12
    for el in g.elements:
        assert total_variation(ps, ps.pushforward(el, rep_in, rep_out)) < 1e-12


def test_continuous_symmetrization_needs_budget():
    so2 = get_group("SO2")
    with pytest.raises(ContractError):
        symmetrize_full(delta(1.0, 0.0), so2, standard_rep(so2), NONE)
    ps = symmetrize_full(delta(1.0, 0.0), so2, standard_rep(so2), NONE, n_samples=10)
    assert ps.approximate and len(ps) == 10


def test_continuous_symmetrization_converges():
    so2 = get_group("SO2")
    rep = standard_rep(so2)
    p = delta(1.0, 0.0)
    gaps = []
    for m in (25, 100, 400):
        errs = []
        for seed in range(4):
            a = symmetrize_full(p, so2, rep, NONE, n_samples=m, rng=np.random.default_rng(seed))
            b = symmetrize_full(p, so2, rep, NONE, n_samples=4 * m, rng=np.random.default_rng(100 + seed))
            errs.append(wasserstein1(a, b))
        gaps.append(np.mean(errs))
    assert gaps[0] > gaps[1] > gaps[2]


def test_symmetrize_generators_examples():
    p = delta(1.0, 0.0)
    pc = symmetrize_generators(p, C4.generating_set, STD4, NONE)
    assert np.abs(pc.points - [[0.0, 1.0]]).max() < 1e-12
    assert total_variation(p, pc) == 1.0
    inv = symmetrize_full(p, C4, STD4, NONE)
    assert total_variation(symmetrize_generators(inv, C4.generating_set, STD4, NONE), inv) < 1e-12
    c2 = get_group("C2")
    q = EmpiricalDistribution([[2.0], [5.0]], [0.4, 0.6])
    qc = symmetrize_generators(q, c2.generating_set, standard_rep(c2), NONE)
    assert total_variation(qc, EmpiricalDistribution([[-2.0], [-5.0]], [0.4, 0.6])) < 1e-12


def test_wasserstein_examples():
    assert wasserstein1(delta(0.0, 0.0), delta(3.0, 4.0)) == pytest.approx(5.0, abs=1e-12)
    p = delta(1.0, 0.0)
    orbit = symmetrize_full(p, C4, STD4, NONE)
    assert wasserstein1(p, orbit) == pytest.approx((2 + 2 * np.sqrt(2)) / 4, abs=1e-12)
    assert wasserstein1(orbit, orbit) == 0.0
    with pytest.raises(ContractError):
        wasserstein1(delta(0.0), delta(0.0, 1.0))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 6))
def test_wasserstein_uniform_against_permutations(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, n, 3))
    assert wasserstein1(EmpiricalDistribution(a), EmpiricalDistribution(b)) == pytest.approx(brute_force_w1(a, b), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_wasserstein_weighted_against_cdf_formula(seed):
    rng = np.random.default_rng(seed)
    na, nb = rng.integers(1, 8, size=2)
    xa, xb = rng.standard_normal(na), rng.standard_normal(nb)
    wa, wb = rng.dirichlet(np.ones(na)), rng.dirichlet(np.ones(nb))
    wa, wb = wa / wa.sum(), wb / wb.sum()
    got = wasserstein1(EmpiricalDistribution(xa[:, None], wa), EmpiricalDistribution(xb[:, None], wb))
    assert got == pytest.approx(cdf_w1(xa, wa, xb, wb), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_wasserstein_metric_axioms(seed):
    rng = np.random.default_rng(seed)

    def draw():
        n = int(rng.integers(1, 6))
        w = rng.dirichlet(np.ones(n))
        return EmpiricalDistribution(rng.standard_normal((n, 2)), w / w.sum())

    p, q, r = draw(), draw(), draw()
    pq, qp = wasserstein1(p, q), wasserstein1(q, p)
    assert pq == pytest.approx(qp, abs=1e-9)
    assert pq <= wasserstein1(p, r) + wasserstein1(r, q) + 1e-8
    assert wasserstein1(p, p) < 1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_plan_marginals_and_cost(seed):
    rng = np.random.default_rng(seed)
    w1, w2 = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(5))
    p = EmpiricalDistribution(rng.standard_normal((4, 2)), w1 / w1.sum())
    q = EmpiricalDistribution(rng.standard_normal((5, 2)), w2 / w2.sum())
    plan = transport_plan(p, q)
    rows, cols = plan.marginals()
    assert np.abs(rows - plan.source.weights).max() < 1e-9
    assert np.abs(cols - plan.target.weights).max() < 1e-9
    cost = sum(m * np.linalg.norm(plan.source.points[i] - plan.target.points[j]) for i, j, m in plan.pairs)
    assert cost == pytest.approx(plan.total_cost, abs=1e-9)


def test_budget_error():
    rng = np.random.default_rng(0)
    big = EmpiricalDistribution(rng.standard_normal((50, 2)))
    with pytest.raises(BudgetError):
        wasserstein1(big, big, max_support=10)


def test_total_variation_examples():
    p = symmetrize_full(delta(1.0, 0.0), C4, STD4, NONE)
    assert total_variation(p, p) == 0.0
    assert total_variation(delta(0.0, 0.0), delta(1.0, 0.0)) == 1.0
    assert total_variation(p, delta(1.0, 0.0)) == pytest.approx(0.75, abs=1e-12)


def test_gelu_constant_against_grid():
    x = np.arange(-5.0, 5.0 + 1e-12, 1e-5)
    grid_max = float(np.max(ndtr(x) + x * norm.pdf(x)))
    assert GELU_LIPSCHITZ == pytest.approx(grid_max, abs=1e-9)
    assert GELU_LIPSCHITZ == pytest.approx(1.1289, abs=1e-4)


def test_lipschitz_upper_examples():
    lin = UpdateNet(2, (), 2, weights=[(2 * np.eye(2), np.zeros(2))])
    assert lipschitz_upper(lin) == pytest.approx(2.0, abs=1e-12)
    zero = UpdateNet(3, (4,), 2, weights=[(np.zeros((4, 3)), np.ones(4)), (np.zeros((2, 4)), np.ones(2))])
    assert lipschitz_upper(zero) == 0.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_lipschitz_upper_bounds_observed_slopes(seed):
    rng = np.random.default_rng(seed)
    net = UpdateNet(3, (8,), 4, rng=rng, init_scale=2.0)
    b = lipschitz_upper(net)
    x, y = rng.standard_normal((2, 200, 3))
    fx, fy = net.forward_numpy(x), net.forward_numpy(y)
    slopes = np.abs(fx - fy).max(axis=1) / np.linalg.norm(x - y, axis=1)
    assert slopes.max() <= b + 1e-12


def test_upper_bound_invariant_and_constant_cases():
    rng = np.random.default_rng(1)
    p, g, rep_in, rep_out = random_instance("S3", rng, invariant=True)
    net = UpdateNet(p.dim, (16,), 16, rng=rng)
    rep = verify_upper_bound(p, net, g, g.generating_set, rep_in, rep_out)
    assert rep.w1 < 1e-12 and rep.lhs.max() < 1e-10 and rep.passed
    p2, g2, ri2, ro2 = random_instance("C4", rng)
    const = UpdateNet(p2.dim, (16,), 16, rng=rng)
    for w in const.weights:
        w.data = np.zeros_like(w.data)
    const.biases[-1].data = np.ones(16)
    rep2 = verify_upper_bound(p2, const, g2, g2.generating_set, ri2, ro2)
    assert rep2.lhs.max() < 1e-15 and rep2.passed


def test_kantorovich_examples():
    inv = symmetrize_full(delta(1.0, 0.0), C4, STD4, NONE)
    res = kantorovich_lower(inv, C4.generating_set, STD4, NONE, 1.0, steps=200)
    assert abs(res.achieved) < 1e-6
    p = delta(1.0, 0.0)
    res = kantorovich_lower(p, C4.generating_set, STD4, NONE, 1.0, steps=2000)
    assert res.w1 == pytest.approx(np.sqrt(2), abs=1e-12)
    assert res.ratio >= 0.5 and res.lipschitz <= 1.0 + 1e-12
    doubled = kantorovich_lower(p, C4.generating_set, STD4, NONE, 2.0, steps=2000)
    assert doubled.achieved / res.achieved == pytest.approx(2.0, rel=0.1)


def test_fixed_point_examples():
    orbit = symmetrize_full(delta(1.0, 0.0), C4, STD4, NONE)
    assert check_fixed_point(orbit, C4.generating_set, C4, STD4, NONE) == (True, True)
    lone = EmpiricalDistribution(orbit.points, [1.0, 0.0, 0.0, 0.0])
    assert check_fixed_point(lone, C4.generating_set, C4, STD4, NONE) == (False, False)
    with pytest.raises(ContractError):
        check_fixed_point(delta(1.0, 0.0), C4.generating_set, C4, STD4, NONE)


def test_fixed_point_random_s3_weightings():
    s3 = get_group("S3")
    rep = standard_rep(s3)
    rng = np.random.default_rng(3)
    base = rng.standard_normal(3)
    pts = np.array([e @ base for e in s3.elements])
    for _ in range(100):
        w = rng.dirichlet(np.ones(6)) if rng.random() < 0.5 else np.full(6, 1 / 6)
        p = EmpiricalDistribution(pts, w / w.sum())
        gen_fixed, invariant = check_fixed_point(p, s3.generating_set, s3, rep, NONE)
        assert gen_fixed == invariant


def test_targets_in_standard_rep():
    rep2 = copies_rep(STD4, 1)
    p = EmpiricalDistribution([[1.0, 0.0, 0.0, 1.0]])
    ps = symmetrize_full(p, C4, STD4, rep2)
    assert len(ps) == 4
    assert check_fixed_point(ps, C4.generating_set, C4, STD4, rep2) == (True, True)
