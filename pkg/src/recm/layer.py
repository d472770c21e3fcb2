"""Recurrent equivariant constraint modulation.

A relaxed layer computes ``beta * f_eq(z) + sum_i alpha_i * f_un_i(z)``.  The
modulation weights are read out of a per-layer state vector ``h`` that is not
trained by gradient descent; instead each optimizer step folds in the
symmetry-gap signal ``l_theta`` of the previous step's (input, target) pair::

    h_t = (1 - c_t) h_{t-1} + c_t * l_theta(z_{t-1}, y_{t-1}),  c_t = a / (b + a t)
    alpha_i = gelu(w_alpha_i . h_t),  beta = 1 + tanh(w_beta . h_t)

``l_theta`` subtracts from an MLP ``r_theta`` its average over the generators
of the group, so its expectation vanishes on invariant distributions.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .equivariant import apply_relaxed, clamp_norm
from .exceptions import ContractError, ShapeError

STATE_DIM = 16
HIDDEN_DIM = 16


class UpdateNet:
    """MLP r_theta: linear layers with exact GeLU in between.

    ``hidden=(16,)`` gives the usual two-layer perceptron; ``hidden=()`` a
    single affine map.
    """

    def __init__(self, n_in, hidden=(HIDDEN_DIM,), n_out=STATE_DIM, rng=None, init_scale=1.0, weights=None):
        self.n_in, self.n_out = n_in, n_out
        dims = [n_in, *hidden, n_out]
        if weights is None:
            rng = np.random.default_rng(0) if rng is None else rng
            weights = []
            for a, b in zip(dims[:-1], dims[1:]):
                weights.append((init_scale * rng.standard_normal((b, a)) / np.sqrt(a), np.zeros(b)))
        self.weights = [T.tensor(w, requires_grad=True, name="theta_W") for w, _ in weights]
        self.biases = [T.tensor(b, requires_grad=True, name="theta_b") for _, b in weights]

    def __call__(self, q):
        x = T.as_tensor(q)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = T.add_bias(T.matmul(x, T.transpose(w)), b)
            if i < last:
                x = T.gelu(x)
        return x

    def forward_numpy(self, q):
        x = np.asarray(q, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w.data.T + b.data
            if i < last:
                x = T.gelu_np(x)
        return x

    def parameters(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def n_parameters(self):
        return sum(p.size for p in self.parameters())


def _pairs(z, y):
    z = np.asarray(z.data if isinstance(z, T.Tensor) else z, dtype=np.float64)
    y = np.asarray(y.data if isinstance(y, T.Tensor) else y, dtype=np.float64)
    single = z.ndim == 1
    z, y = np.atleast_2d(z), np.atleast_2d(y)
    if z.shape[0] != y.shape[0]:
        raise ShapeError(f"{z.shape[0]} inputs but {y.shape[0]} targets")
    return z, y, single


def _transformed_batch(z, y, generating_set, rep_in, rep_out):
    if len(generating_set) == 0:
        raise ContractError("empty generating set")
    if z.shape[1] != rep_in.dim or y.shape[1] != rep_out.dim:
        raise ShapeError(
            f"pair dims ({z.shape[1]}, {y.shape[1]}) do not match reps ({rep_in.dim}, {rep_out.dim})"
        )
    blocks = [np.concatenate([z, y], axis=1)]
    for g in generating_set:
        blocks.append(np.concatenate([z @ rep_in(g).T, y @ rep_out(g).T], axis=1))
    return np.concatenate(blocks, axis=0)


def l_theta(update_net, z, y, generating_set, rep_in, rep_out):
    """Per-pair r(z, y) - mean_{g in C} r(rho_in(g) z, rho_out(g) y).

    ``z``/``y`` are single vectors or row batches; the output has matching
    leading shape and ``update_net.n_out`` columns.  Differentiable in theta.
    """
    z, y, single = _pairs(z, y)
    n, k = z.shape[0], len(generating_set)
    r = update_net(T.tensor(_transformed_batch(z, y, generating_set, rep_in, rep_out)))
    mix = np.concatenate([np.eye(n)] + [-np.eye(n) / k] * k, axis=1)
    out = T.matmul(T.tensor(mix), r)
    return T.reshape(out, (update_net.n_out,)) if single else out


def expected_l(update_net, z, y, generating_set, rep_in, rep_out, weights=None):
    """Weighted mean of l_theta over a batch (uniform weights by default)."""
    z, y, _ = _pairs(z, y)
    n, k = z.shape[0], len(generating_set)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeError("one weight per pair required")
    r = update_net(T.tensor(_transformed_batch(z, y, generating_set, rep_in, rep_out)))
    mix = np.concatenate([w] + [-w / k] * k)[None, :]
    return T.reshape(T.matmul(T.tensor(mix), r), (update_net.n_out,))


def pool_points(z, n_points):
    """Mean over the points of each sample: (batch * n_points, k) -> (batch, k)."""
    z = np.asarray(z.data if isinstance(z, T.Tensor) else z, dtype=np.float64)
    if z.shape[0] % n_points:
        raise ShapeError(f"{z.shape[0]} rows are not a multiple of {n_points} points")
    return z.reshape(z.shape[0] // n_points, n_points, -1).mean(axis=1)


@dataclass
class RecmState:
    """Optimization state of one relaxed layer."""

    h: np.ndarray
    w_alpha: T.Tensor
    w_beta: T.Tensor
    a: float
    b: float = 1.0
    t: int = 0
    prev_pair: tuple | None = None

    @classmethod
    def initial(cls, n_terms, a, b=1.0, m=STATE_DIM, rng=None, w_init=0.5):
        rng = np.random.default_rng(0) if rng is None else rng

        def draw(shape):
            v = rng.standard_normal(shape)
            return w_init * v / np.linalg.norm(v, axis=-1, keepdims=True)

        return cls(
            h=np.zeros(m),
            w_alpha=T.tensor(draw((n_terms, m)), requires_grad=True, name="w_alpha"),
            w_beta=T.tensor(draw(m), requires_grad=True, name="w_beta"),
            a=float(a),
            b=float(b),
        )

    @property
    def m(self):
        return self.h.shape[0]

    def mixing_weight(self, t=None):
        t = self.t if t is None else t
        return self.a / (self.b + self.a * t)

    def project_readouts(self):
        """Pull w_alpha rows and w_beta back into the unit ball."""
        wa = self.w_alpha.data
        nrm = np.linalg.norm(wa, axis=1, keepdims=True)
        self.w_alpha.data = wa / np.maximum(nrm, 1.0)
        wb = self.w_beta.data
        self.w_beta.data = wb / max(float(np.linalg.norm(wb)), 1.0)


def state_update(state, z_prev, y_prev, update_net, generating_set, rep_in, rep_out):
    """Advance ``t`` and fold the batch-mean l_theta into ``h``.

    Returns h_t as a tensor that is differentiable in theta only; the previous
    state enters as a constant.
    """
    if state.a <= 0 or state.b <= 0:
        raise ContractError("decay constants a and b must be positive")
    state.t += 1
    c = state.mixing_weight()
    lbar = expected_l(update_net, z_prev, y_prev, generating_set, rep_in, rep_out)
    h = T.add(T.tensor((1.0 - c) * state.h), T.mul(c, lbar))
    state.h = h.data.copy()
    return h


def modulation(state, h=None):
    """(alphas, beta) for state vector ``h`` (defaults to the stored state)."""
    h = T.tensor(state.h) if h is None else h
    m = state.m
    proj = T.reshape(T.matmul(state.w_alpha, T.reshape(h, (m, 1))), (state.w_alpha.shape[0],))
    alphas = T.gelu(proj)
    beta = T.add(1.0, T.tanh(T.dot(state.w_beta, h)))
    return alphas, beta


def modulation_values(state):
    """Numpy (alphas, beta) at the stored state."""
    alphas, beta = modulation(state)
    return alphas.data.copy(), float(beta.data)


@dataclass
class PruneReport:
    alphas: np.ndarray
    beta: float
    retained: list
    removed: list
    n_equivariant: int
    n_retained_unconstrained: int
    eps: float = 0.01

    @property
    def n_inference(self):
        return self.n_equivariant + self.n_retained_unconstrained


class RecmLayer:
    """Relaxed layer with its recurrent modulation state.

    ``rep_z``/``rep_y`` describe how the group acts on the (pooled) layer
    input and on the supervision target; they drive l_theta only.
    """

    def __init__(
        self,
        eq_path,
        un_terms,
        generating_set,
        rep_z,
        rep_y,
        a,
        b=1.0,
        m=STATE_DIM,
        hidden=(HIDDEN_DIM,),
        rng=None,
        w_init=0.5,
        theta_scale=1.0,
        name="layer",
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        self.name = name
        self.eq_path = eq_path
        self.un_terms = list(un_terms)
        self.generating_set = generating_set
        self.rep_z, self.rep_y = rep_z, rep_y
        self.update_net = UpdateNet(rep_z.dim + rep_y.dim, hidden, m, rng=rng, init_scale=theta_scale)
        self.state = RecmState.initial(len(self.un_terms), a, b, m, rng=rng, w_init=w_init)
        self.frozen = None
        self._h_live = None
        self._pooled = None
        self.last_alphas = np.zeros(len(self.un_terms))
        self.last_beta = 1.0

    @property
    def term_kinds(self):
        return [t.kind for t in self.un_terms]

    def current_h(self):
        return self._h_live if self._h_live is not None else T.tensor(self.state.h)

    def forward(self, z, rng=None, training=True, n_points=1):
        z = T.as_tensor(z)
        eq_out = self.eq_path(z)
        if self.frozen is not None:
            alphas = [T.tensor(a) for a in self.frozen["alphas"]]
            beta = T.tensor(self.frozen["beta"])
        else:
            a_vec, beta = modulation(self.state, self.current_h())
            alphas = [T.index(a_vec, i) for i in range(len(self.un_terms))]
            self.last_alphas = a_vec.data.copy()
            self.last_beta = float(beta.data)
        un = [term(z, rng, training) for term in self.un_terms]
        out = apply_relaxed(eq_out, un, beta, alphas)
        if training and self.frozen is None:
            self._pooled = pool_points(z, n_points)
        return out

    __call__ = forward

    def step_hooks(self, y_prev):
        """Post-optimizer bookkeeping: state update, readout projection, norm clamps."""
        if self.frozen is not None:
            return
        if self._pooled is None:
            raise ContractError("step_hooks called before a training forward pass")
        y_prev = np.atleast_2d(np.asarray(y_prev, dtype=np.float64))
        self.state.prev_pair = (self._pooled, y_prev)
        self._h_live = state_update(
            self.state, self._pooled, y_prev, self.update_net, self.generating_set, self.rep_z, self.rep_y
        )
        self.state.project_readouts()
        for term in self.un_terms:
            clamp_norm(term)

    def modulation_values(self):
        if self.frozen is not None:
            return np.asarray(self.frozen["alphas"]), float(self.frozen["beta"])
        return modulation_values(self.state)

    def modulation_parameters(self):
        return [self.state.w_alpha, self.state.w_beta, *self.update_net.parameters()]

    def parameters(self):
        ps = list(self.eq_path.parameters())
        for t in self.un_terms:
            ps.extend(t.parameters())
        if self.frozen is None:
            ps.extend(self.modulation_parameters())
        return ps

    def n_parameters(self):
        n = self.eq_path.n_free_parameters() + sum(t.n_parameters() for t in self.un_terms)
        if self.frozen is None:
            n += sum(p.size for p in self.modulation_parameters())
        return n

    def freeze_equivariant(self):
        """Drop all relaxation: beta = 1, no unconstrained terms (the equivariant baseline)."""
        self.un_terms = []
        self.frozen = {"alphas": np.zeros(0), "beta": 1.0}
        self.last_alphas = np.zeros(0)
        return self


def prune(layer, eps=0.01):
    """Copy of ``layer`` without terms whose final |alpha| < eps, modulation frozen."""
    alphas, beta = layer.modulation_values()
    keep = np.abs(alphas) >= eps
    out = copy.deepcopy(layer)
    out.un_terms = [t for t, k in zip(out.un_terms, keep) if k]
    out.frozen = {"alphas": alphas[keep].copy(), "beta": beta}
    out._h_live = None
    report = PruneReport(
        alphas=alphas,
        beta=beta,
        retained=[t.kind for t, k in zip(layer.un_terms, keep) if k],
        removed=[t.kind for t, k in zip(layer.un_terms, keep) if not k],
        n_equivariant=layer.eq_path.n_free_parameters(),
        n_retained_unconstrained=sum(t.n_parameters() for t, k in zip(layer.un_terms, keep) if k),
        eps=eps,
    )
    return out, report


__all__ = [
    "UpdateNet",
    "RecmState",
    "RecmLayer",
    "PruneReport",
    "l_theta",
    "expected_l",
    "state_update",
    "modulation",
    "modulation_values",
    "pool_points",
    "prune",
]
