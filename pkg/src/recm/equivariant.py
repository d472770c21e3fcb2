"""Exactly equivariant linear maps and the unconstrained relaxation terms."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .exceptions import ContractError, ShapeError
from .groups import haar_sample

TERM_KINDS = ("dense", "bias", "noise")


def reynolds_operator(rep_in, rep_out, group):
    """Matrix P with vec(W_eq) = P vec(W) (row-major vec) for a finite group.

    W_eq = 1/|G| sum_g rho_out(g^-1) W rho_in(g).
    """
    if not group.is_finite:
        raise ContractError("Reynolds projection needs a finite group; use ChannelMixLayer")
    n_out, n_in = rep_out.dim, rep_in.dim
    p = np.zeros((n_out * n_in, n_out * n_in))
    elems = group.elements
    for i, g in enumerate(elems):
        g_inv = elems[group.inverse(i)]
        p += np.kron(rep_out(g_inv), rep_in(g).T)
    return p / group.order


def reynolds_project(w, rep_in, rep_out, group):
    """Project ``w`` (rep_out.dim x rep_in.dim) onto the intertwiner space."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (rep_out.dim, rep_in.dim):
        raise ShapeError(f"weight shape {w.shape} does not match reps ({rep_out.dim}, {rep_in.dim})")
    if not group.is_finite:
        raise ContractError("Reynolds projection needs a finite group; use ChannelMixLayer")
    out = np.zeros_like(w)
    elems = group.elements
    for i, g in enumerate(elems):
        out += rep_out(elems[group.inverse(i)]) @ w @ rep_in(g)
    return out / group.order


def _linear(x, w):
    return T.matmul(x, T.transpose(w))


class LinearIntertwiner:
    """Linear layer whose raw weight is Reynolds-projected on every call."""

    def __init__(self, rep_in, rep_out, group, rng=None, weight=None):
        self.rep_in, self.rep_out, self.group = rep_in, rep_out, group
        self.operator = reynolds_operator(rep_in, rep_out, group)
        if weight is None:
            rng = np.random.default_rng(0) if rng is None else rng
            weight = rng.standard_normal((rep_out.dim, rep_in.dim)) / np.sqrt(rep_in.dim)
        self.weight = T.tensor(weight, requires_grad=True, name="W_eq")
        self._op = T.tensor(self.operator)

    @property
    def projected(self):
        """Current W_eq as an array."""
        return (self.operator @ self.weight.data.reshape(-1)).reshape(self.weight.shape)

    def weight_eq(self):
        flat = T.reshape(self.weight, (-1, 1))
        return T.reshape(T.matmul(self._op, flat), self.weight.shape)

    def __call__(self, x):
        return _linear(x, self.weight_eq())

    def parameters(self):
        return [self.weight]

    def n_free_parameters(self):
        return int(round(np.trace(self.operator)))


class ChannelMixLayer:
    """Mixes the channel axis of (channels x d) vector features: F -> M F.

    Any rotation acting on the d-axis commutes with it, so the layer is exactly
    SO(d)-equivariant.  Inputs are flattened to rows of length c_in * d.
    """

    def __init__(self, c_in, c_out, d, rng=None, mix=None):
        self.c_in, self.c_out, self.d = c_in, c_out, d
        if mix is None:
            rng = np.random.default_rng(0) if rng is None else rng
            mix = rng.standard_normal((c_out, c_in)) / np.sqrt(c_in)
        self.weight = T.tensor(mix, requires_grad=True, name="mix")

    @property
    def projected(self):
        return np.kron(self.weight.data, np.eye(self.d))

    def weight_eq(self):
        return T.kron_eye(self.weight, self.d)

    def __call__(self, x):
        return _linear(x, self.weight_eq())

    def parameters(self):
        return [self.weight]

    def n_free_parameters(self):
        return self.weight.size


class UnconstrainedTerm:
    """One candidate non-equivariant term: dense W_un z, constant bias b, or noise.

    The noise term outputs sigma * eps with eps ~ N(0, I) redrawn on every
    training call; at evaluation it returns its mean, zero.
    """

    def __init__(self, kind, n_in, n_out, norm_bound=1.0, rng=None, init_scale=0.5, params=None):
        if kind not in TERM_KINDS:
            raise ContractError(f"unknown term kind {kind!r}")
        self.kind, self.n_in, self.n_out, self.norm_bound = kind, n_in, n_out, float(norm_bound)
        if params is None:
            rng = np.random.default_rng(0) if rng is None else rng
            if kind == "dense":
                params = rng.standard_normal((n_out, n_in))
            elif kind == "bias":
                params = rng.standard_normal(n_out)
            else:
                params = np.array(1.0)
            if kind != "noise":
                params = params * (init_scale * norm_bound / np.linalg.norm(params))
            else:
                params = params * norm_bound
        self.params = T.tensor(params, requires_grad=True, name=kind)

    def __call__(self, x, rng=None, training=True):
        n = x.shape[0]
        if self.kind == "dense":
            return _linear(x, self.params)
        if self.kind == "bias":
            return T.add_bias(T.tensor(np.zeros((n, self.n_out))), self.params)
        if not training:
            return T.tensor(np.zeros((n, self.n_out)))
        eps = rng.standard_normal((n, self.n_out))
        return T.mul(self.params, T.tensor(eps))

    def parameters(self):
        return [self.params]

    def n_parameters(self):
        return self.params.size


def clamp_norm(term):
    """Rescale term parameters onto the Frobenius ball of radius ``norm_bound``."""
    p = term.params.data
    if term.kind == "noise" and p < 0:
        p = np.abs(p)
    nrm = float(np.linalg.norm(p))
    if nrm > term.norm_bound:
        p = p * (term.norm_bound / nrm)
    term.params.data = np.asarray(p, dtype=np.float64)


def apply_relaxed(eq_out, un_outs, beta, alphas):
    """beta * eq_out + sum_i alphas[i] * un_outs[i]."""
    if len(alphas) != len(un_outs):
        raise ContractError(f"{len(alphas)} modulation weights for {len(un_outs)} terms")
    out = T.mul(beta, eq_out)
    for a, u in zip(alphas, un_outs):
        out = T.add(out, T.mul(a, u))
    return out


def check_equivariance(f, group, rep_in, rep_out, n_samples=100, rng=None, batch=None):
    """Worst |f(rho_in(g) v) - rho_out(g) f(v)|_inf over sampled (g, v).

    ``f`` maps an (n, rep_in.dim) array of row vectors to (n, rep_out.dim).
    """
    if n_samples < 1:
        raise ContractError("n_samples must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for _ in range(n_samples):
        g = haar_sample(group, rng)
        v = rng.standard_normal((batch or 1, rep_in.dim))
        lhs = np.asarray(f(v @ rep_in(g).T))
        rhs = np.asarray(f(v)) @ rep_out(g).T
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst
