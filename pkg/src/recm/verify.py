"""Randomized verification suites.

Every suite maps (trials, seed) to a list of flat records, one per trial, and
an overall verdict.  Trial ``i`` draws from ``default_rng([seed, i])`` so any
single trial can be replayed on its own.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .equivariant import ChannelMixLayer, LinearIntertwiner, UnconstrainedTerm, check_equivariance
from .experiments.lemma41 import closed_form_constant, lemma41_harness, recursion
from .groups import copies_rep, get_group, standard_rep, trivial_rep
from .layer import RecmLayer, UpdateNet, state_update
from .transport import (
    EmpiricalDistribution,
    check_fixed_point,
    kantorovich_lower,
    symmetrize_full,
    symmetrize_generators,
    total_variation,
    verify_upper_bound,
)

SUITES = ("lemma41", "thm42-upper", "thm42-lower", "lemma43", "equivariance", "gradcheck")
LOWER_RATIO = 0.5
LOWER_REQUIRED = 0.8
GRAD_TOL = 1e-6


@dataclass
class SuiteResult:
    suite: str
    records: list
    passed: bool
    elapsed: float

    @property
    def n_pass(self):
        return sum(bool(r["pass"]) for r in self.records)

    def summary(self):
        return f"{self.suite}: {self.n_pass}/{len(self.records)} trials pass ({'ok' if self.passed else 'FAIL'}, {self.elapsed:.1f}s)"

    def write_csv(self, path):
        keys = []
        for r in self.records:
            keys.extend(k for k in r if k not in keys)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for r in self.records:
                w.writerow({k: f"{v:.17g}" if isinstance(v, float) else v for k, v in r.items()})


def trial_rng(seed, i):
    return np.random.default_rng([seed, i])


# ---------------------------------------------------------------- random instances


def random_instance(group_name, rng, invariant=False, max_base=3):
    """Random finite p on orbits of C4 (plane) or S3 (permuted coordinates).

    Each base point contributes a random subset of its orbit; targets live in a
    trivial or a standard representation.
    """
    group = get_group(group_name)
    rep_in = standard_rep(group)
    rep_out = trivial_rep(1) if rng.random() < 0.5 else standard_rep(group)
    pts = []
    for _ in range(int(rng.integers(1, max_base + 1))):
        z = rng.standard_normal(rep_in.dim)
        y = rng.standard_normal(rep_out.dim)
        for g in group.elements:
            if rng.random() < 0.5 or not pts:
                pts.append(np.concatenate([rep_in(g) @ z, rep_out(g) @ y]))
    w = rng.dirichlet(np.ones(len(pts)))
    p = EmpiricalDistribution(np.array(pts), w / w.sum())
    if invariant:
        p = symmetrize_full(p, group, rep_in, rep_out)
    return p, group, rep_in, rep_out


def closed_orbit_instance(group_name, rng):
    """Union of full orbits; weights uniform per orbit (invariant) or generic."""
    group = get_group(group_name)
    rep_in, rep_out = standard_rep(group), trivial_rep(1)
    pts, weights = [], []
    uniform = rng.random() < 0.5
    for _ in range(int(rng.integers(1, 4))):
        z, y = rng.standard_normal(rep_in.dim), rng.standard_normal(1)
        mass = rng.random() + 0.1
        orbit_w = np.full(group.order, mass) if uniform else mass * rng.dirichlet(np.ones(group.order))
        for g, wg in zip(group.elements, orbit_w):
            pts.append(np.concatenate([rep_in(g) @ z, y]))
            weights.append(wg)
    w = np.array(weights)
    return EmpiricalDistribution(np.array(pts), w / w.sum()), group, rep_in, rep_out, uniform


def random_update_net(n_in, rng, n_out=16):
    scale = float(np.exp(rng.uniform(np.log(0.3), np.log(3.0))))
    net = UpdateNet(n_in, (16,), n_out, rng=rng, init_scale=scale)
    for b in net.biases:
        b.data = rng.standard_normal(b.shape)
    return net


# ---------------------------------------------------------------- suites


def suite_thm42_upper(trials, seed, invariant=False):
    records = []
    for i in range(trials):
        rng = trial_rng(seed, i)
        name = ("C4", "S3")[i % 2]
        p, group, rep_in, rep_out = random_instance(name, rng, invariant=invariant)
        net = random_update_net(p.dim, rng)
        rep = verify_upper_bound(p, net, group, group.generating_set, rep_in, rep_out)
        rec = {"trial": i, "group": name, "atoms": len(p), **rep.record()}
        if invariant:
            rec["pass"] = bool(rep.lhs.max() < 1e-10)
        records.append(rec)
    return records, all(r["pass"] for r in records)


def suite_thm42_lower(trials, seed, steps=2000, budget=1.0):
    records = []
    for i in range(trials):
        rng = trial_rng(seed, i)
        name = ("C4", "S3")[i % 2]
        while True:
            p, group, rep_in, rep_out = random_instance(name, rng, max_base=2)
            p_gen = symmetrize_generators(p, group.generating_set, rep_in, rep_out)
            if total_variation(p, p_gen) > 1e-10:
                break
        res = kantorovich_lower(p, group.generating_set, rep_in, rep_out, budget, steps=steps, rng=rng)
        records.append(
            {
                "trial": i,
                "group": name,
                "atoms": len(p),
                "achieved": res.achieved,
                "W1_gen": res.w1,
                "budget": budget,
                "ratio": res.ratio,
                "B_final": res.lipschitz,
                "pass": bool(res.ratio >= LOWER_RATIO),
            }
        )
    n_ok = sum(r["pass"] for r in records)
    return records, n_ok >= LOWER_REQUIRED * trials


def suite_lemma43(trials, seed, groups=("C4", "S3")):
    records = []
    for name in groups:
        for i in range(trials):
            rng = trial_rng(seed, i + (0 if name == groups[0] else 10_000))
            p, group, rep_in, rep_out, uniform = closed_orbit_instance(name, rng)
            gen_fixed, invariant = check_fixed_point(p, group.generating_set, group, rep_in, rep_out)
            records.append(
                {
                    "trial": i,
                    "group": name,
                    "atoms": len(p),
                    "uniform_orbits": uniform,
                    "generator_fixed": gen_fixed,
                    "invariant": invariant,
                    "pass": gen_fixed == invariant,
                }
            )
    return records, all(r["pass"] for r in records)


def suite_lemma41(trials, seed, T_steps=100_000, ref_samples=1_000_000):
    records = []
    for i in range(trials):
        s = seed * 1000 + i
        stat = lemma41_harness(1.0, 1.0, T_steps, ref_samples, seed=s)
        dec = lemma41_harness(
            1.0,
            1.0,
            T_steps,
            ref_samples,
            seed=s,
            drift=lambda r, n: r.normal(loc=(3.0, 3.0), scale=0.5, size=(n, 2)),
            perturbation=np.array([5.0, -5.0, 2.0]),
        )
        rng = trial_rng(seed, i)
        h0, c = rng.standard_normal(3), rng.standard_normal(3)
        h_rec = recursion(np.tile(c, (T_steps, 1)), 1.0, 1.0, h0)
        cf_err = float(np.abs(h_rec - closed_form_constant(h0, c, 1.0, 1.0, T_steps)).max())
        for label, rep in (("stationary", stat), ("decaying", dec)):
            records.append(
                {
                    "trial": i,
                    "case": label,
                    "max_deviation": float(rep.deviation.max()),
                    "max_z_combined": float(rep.z_scores.max()),
                    "max_z_reference_only": float((rep.deviation / rep.ref_stderr).max()),
                    "pass": rep.passed(3.0),
                }
            )
        records.append({"trial": i, "case": "constant", "max_deviation": cf_err, "pass": cf_err < 1e-12})
    return records, all(r["pass"] for r in records)


def _random_layer_check(name, rng):
    group = get_group(name)
    c_in, c_out = (int(k) for k in rng.integers(1, 4, size=2))
    std = standard_rep(group)
    if group.is_finite:
        layer = LinearIntertwiner(copies_rep(std, c_in), copies_rep(std, c_out), group, rng=rng)
    else:
        layer = ChannelMixLayer(c_in, c_out, group.dim, rng=rng)
    w = layer.projected

    def f(v):
        return v @ w.T

    return check_equivariance(f, group, copies_rep(std, c_in), copies_rep(std, c_out), n_samples=100, rng=rng)


def suite_equivariance(trials, seed, groups=("C2", "C4", "S2", "S3", "SO2", "SO3")):
    records = []
    for i in range(trials):
        for k, name in enumerate(groups):
            err = _random_layer_check(name, trial_rng(seed, i * len(groups) + k))
            records.append({"trial": i, "group": name, "max_error": err, "pass": err < 1e-10})
    return records, all(r["pass"] for r in records)


# ---------------------------------------------------------------- gradients


def _op_cases(rng):
    """(name, fn, params) for every differentiable primitive on random shapes."""
    n, k = (int(v) for v in rng.integers(2, 5, size=2))

    def leaf(*shape, positive=False):
        x = rng.standard_normal(shape)
        return T.tensor(np.abs(x) + 0.5 if positive else x, requires_grad=True)

    a, b = leaf(n, k), leaf(n, k)
    s = leaf()
    pos = leaf(n, k, positive=True)
    m1, m2 = leaf(n, k), leaf(k, 3)
    v1, v2 = leaf(k), leaf(k)
    mix = leaf(2, 3)
    x2 = leaf(n, 2 * k)
    bias = leaf(k)
    proj = T.tensor(rng.standard_normal((n, k)))
    labels = rng.integers(k, size=n)
    target = rng.standard_normal((n, k))

    def red(x):
        return T.tsum(T.mul(x, proj)) if x.shape == proj.shape else T.tsum(T.mul(x, x))

    return [
        ("add", lambda: red(T.add(a, b)), [a, b]),
        ("add_scalar", lambda: red(T.add(a, s)), [a, s]),
        ("sub", lambda: red(T.sub(a, b)), [a, b]),
        ("mul", lambda: red(T.mul(a, b)), [a, b]),
        ("mul_scalar", lambda: red(T.mul(s, a)), [a, s]),
        ("neg", lambda: red(T.neg(a)), [a]),
        ("square", lambda: red(T.square(a)), [a]),
        ("sqrt", lambda: red(T.sqrt(pos)), [pos]),
        ("exp", lambda: red(T.exp(a)), [a]),
        ("log", lambda: red(T.log(pos)), [pos]),
        ("tanh", lambda: red(T.tanh(a)), [a]),
        ("gelu", lambda: red(T.gelu(a)), [a]),
        ("matmul", lambda: red(T.matmul(m1, m2)), [m1, m2]),
        ("dot", lambda: T.mul(T.dot(v1, v2), T.dot(v1, v1)), [v1, v2]),
        ("transpose", lambda: red(T.transpose(T.transpose(a))), [a]),
        ("reshape", lambda: red(T.reshape(T.reshape(a, (-1,)), (n, k))), [a]),
        ("kron_eye", lambda: red(T.kron_eye(mix, 2)), [mix]),
        ("tsum_axis", lambda: red(T.tsum(a, axis=0)), [a]),
        ("mean", lambda: red(T.mean(a, axis=1)), [a]),
        ("concat", lambda: red(T.concat([a, b], axis=1)), [a, b]),
        ("stack", lambda: red(T.stack([v1, v2])), [v1, v2]),
        ("index", lambda: T.mul(T.index(v1, 0), T.index(v1, k - 1)), [v1]),
        ("add_bias", lambda: red(T.add_bias(a, bias)), [a, bias]),
        ("vector_squash", lambda: red(T.vector_squash(x2, 2)), [x2]),
        ("group_norms", lambda: red(T.group_norms(x2, 2)), [x2]),
        ("cross_entropy", lambda: T.cross_entropy(a, labels), [a]),
        ("mse", lambda: T.mse(a, target), [a]),
    ]


def _recm_step_case(rng):
    """Loss of one relaxed layer right after a state update, w.r.t. all its parameters."""
    group = get_group(("C4", "S3")[int(rng.integers(2))])
    std = standard_rep(group)
    c_in, c_out = 1, 2
    rep_z, rep_y = copies_rep(std, c_in), trivial_rep(3)
    eq = LinearIntertwiner(rep_z, copies_rep(std, c_out), group, rng=rng)
    terms = [UnconstrainedTerm(kind, rep_z.dim, eq.weight.shape[0], rng=rng) for kind in ("dense", "bias", "noise")]
    layer = RecmLayer(eq, terms, group.generating_set, rep_z, rep_y, a=0.5, m=4, hidden=(5,), rng=rng, w_init=0.9)
    layer.state.h = rng.standard_normal(4)
    layer.state.t = int(rng.integers(0, 20))
    h0, t0 = layer.state.h.copy(), layer.state.t
    n_points, batch = 3, 2
    z_prev = rng.standard_normal((batch, rep_z.dim))
    y_prev = np.eye(3)[rng.integers(3, size=batch)]
    z = T.tensor(rng.standard_normal((batch * n_points, rep_z.dim)))
    proj = T.tensor(rng.standard_normal((batch * n_points, eq.weight.shape[0])))

    def fn():
        layer.state.h, layer.state.t = h0.copy(), t0
        layer._h_live = state_update(layer.state, z_prev, y_prev, layer.update_net, group.generating_set, rep_z, rep_y)
        out = layer.forward(z, rng=np.random.default_rng(3), training=True, n_points=n_points)
        return T.tsum(T.mul(T.tanh(out), proj))

    return fn, layer.parameters()


def suite_gradcheck(trials, seed, step=1e-5):
    records = []
    for i in range(trials):
        rng = trial_rng(seed, i)
        for name, fn, params in _op_cases(rng):
            err = T.gradcheck(fn, params, step)
            records.append({"trial": i, "op": name, "rel_error": err, "pass": err < GRAD_TOL})
        fn, params = _recm_step_case(rng)
        err = T.gradcheck(fn, params, step)
        records.append({"trial": i, "op": "recm_step", "rel_error": err, "pass": err < GRAD_TOL})
    return records, all(r["pass"] for r in records)


_RUNNERS = {
    "lemma41": suite_lemma41,
    "thm42-upper": suite_thm42_upper,
    "thm42-lower": suite_thm42_lower,
    "lemma43": suite_lemma43,
    "equivariance": suite_equivariance,
    "gradcheck": suite_gradcheck,
}


def run_suite(name, trials, seed=0, **kwargs):
    if name not in _RUNNERS:
        raise KeyError(name)
    start = time.perf_counter()
    records, ok = _RUNNERS[name](trials, seed, **kwargs)
    return SuiteResult(name, records, ok, time.perf_counter() - start)
