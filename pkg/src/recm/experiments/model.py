"""Stacks of relaxed layers over per-point vector features."""

from __future__ import annotations

import copy

import numpy as np

from .. import tensor as T
from ..equivariant import TERM_KINDS, ChannelMixLayer, LinearIntertwiner, UnconstrainedTerm, check_equivariance
from ..exceptions import ContractError
from ..groups import copies_rep, standard_rep
from ..layer import HIDDEN_DIM, STATE_DIM, RecmLayer, pool_points, prune

D = 2


class InvariantHead:
    """Channel norms, mean over points, then an affine map to the outputs."""

    def __init__(self, channels, n_out, rng):
        self.weight = T.tensor(rng.standard_normal((n_out, channels)) / np.sqrt(channels), requires_grad=True)
        self.bias = T.tensor(np.zeros(n_out), requires_grad=True)

    def pooled_norms(self, feats, n_samples, n_points):
        return T.matmul(T.tensor(_pool_matrix(n_samples, n_points)), T.group_norms(feats, D))

    def __call__(self, feats, n_samples, n_points):
        pooled = self.pooled_norms(feats, n_samples, n_points)
        return T.add_bias(T.matmul(pooled, T.transpose(self.weight)), self.bias)

    def parameters(self):
        return [self.weight, self.bias]

    def n_parameters(self):
        return self.weight.size + self.bias.size


def _pool_matrix(n_samples, n_points):
    return np.kron(np.eye(n_samples), np.full((1, n_points), 1.0 / n_points))


class RecmModel:
    """Relaxed layers interleaved with norm-gated vector nonlinearities.

    Classification models end in an invariant head; regression models return
    the last layer's vector channels directly (one point per sample).
    """

    def __init__(self, layers, head, kind, dataset_meta):
        self.layers = layers
        self.head = head
        self.kind = kind
        self.meta = dataset_meta

    @property
    def group(self):
        return self.meta["group"]

    def _trunk(self, X, rng, training):
        X = np.asarray(X, dtype=np.float64)
        n, p = X.shape[0], X.shape[1]
        x = T.tensor(X.reshape(n * p, -1))
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, rng, training, n_points=p)
            if i < last or self.head is not None:
                x = T.vector_squash(x, D)
        return x, n, p

    def forward(self, X, rng=None, training=True):
        x, n, p = self._trunk(X, rng, training)
        if self.head is not None:
            return self.head(x, n, p)
        return x

    def embed(self, X):
        """Inference-mode features fed to the head (pooled channel norms), or the outputs."""
        x, n, p = self._trunk(X, None, False)
        if self.head is not None:
            return self.head.pooled_norms(x, n, p).data
        return x.data

    __call__ = forward

    def layer_inputs(self, X):
        """Point-pooled input of every layer under the inference-mode pass."""
        X = np.asarray(X, dtype=np.float64)
        n, p = X.shape[0], X.shape[1]
        x = T.tensor(X.reshape(n * p, -1))
        pooled = []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            pooled.append(pool_points(x, p))
            x = layer.forward(x, training=False, n_points=p)
            if i < last or self.head is not None:
                x = T.vector_squash(x, D)
        return pooled

    def predict_raw(self, X):
        return self.forward(X, training=False).data

    def step_hooks(self, y_enc):
        for layer in self.layers:
            layer.step_hooks(y_enc)

    def parameters(self):
        ps = [p for layer in self.layers for p in layer.parameters()]
        if self.head is not None:
            ps.extend(self.head.parameters())
        return ps

    def n_parameters(self):
        return sum(layer.n_parameters() for layer in self.layers) + self._head_params()

    def _head_params(self):
        return 0 if self.head is None else self.head.n_parameters()

    def n_equivariant_parameters(self):
        return sum(layer.eq_path.n_free_parameters() for layer in self.layers) + self._head_params()

    def n_inference_parameters(self):
        """Parameters needed after pruning (modulation and r_theta are dropped)."""
        n = self._head_params()
        for layer in self.layers:
            n += layer.eq_path.n_free_parameters() + sum(t.n_parameters() for t in layer.un_terms)
        return n

    def modulation_snapshot(self):
        return [layer.modulation_values() for layer in self.layers]

    def pruned(self, eps=0.01):
        out = copy.copy(self)
        out.layers, reports = [], []
        for layer in self.layers:
            pl, rep = prune(layer, eps)
            out.layers.append(pl)
            reports.append(rep)
        out.head = copy.deepcopy(self.head)
        return out, reports

    def freeze_equivariant(self):
        for layer in self.layers:
            layer.freeze_equivariant()
        return self

    def equivariance_error(self, n_samples=100, rng=None):
        """Worst violation of f(g X) = rho_out(g) f(X) over sampled g and inputs."""
        p, width = self.meta["n_points"], self.meta["in_width"]
        rep_in = copies_rep(standard_rep(self.group), p * width // D)
        rep_out = self.meta["rep_out"]

        def f(v):
            return self.predict_raw(v.reshape(v.shape[0], p, width))

        return check_equivariance(f, self.group, rep_in, rep_out, n_samples=n_samples, rng=rng, batch=4)


def build_model(
    dataset,
    layer_count=3,
    widths=None,
    *,
    a=1e-3,
    b=1.0,
    m=STATE_DIM,
    hidden=(HIDDEN_DIM,),
    terms=TERM_KINDS,
    norm_bound=1.0,
    w_init=0.5,
    term_init=0.5,
    rng=None,
):
    """Relaxed model for ``dataset``.  ``widths`` lists channel counts per layer output."""
    rng = np.random.default_rng(0) if rng is None else rng
    widths = [8] * layer_count if widths is None else list(widths)
    if len(widths) != layer_count or layer_count < 1 or any(int(w) < 1 for w in widths):
        raise ContractError(f"need {layer_count} positive widths, got {widths}")
    for kind in terms:
        if kind not in TERM_KINDS:
            raise ContractError(f"unknown term kind {kind!r}")
    group = dataset.group
    std = standard_rep(group)
    if dataset.kind == "regression":
        out_channels = dataset.y_test.shape[1] // D
        if widths[-1] != out_channels:
            raise ContractError(f"last width must equal {out_channels} target channels")
    chans = [dataset.channels, *widths]
    layers = []
    for i, (c_in, c_out) in enumerate(zip(chans[:-1], chans[1:])):
        if group.is_finite:
            eq = LinearIntertwiner(copies_rep(std, c_in), copies_rep(std, c_out), group, rng=rng)
        else:
            eq = ChannelMixLayer(c_in, c_out, D, rng=rng)
        un = [UnconstrainedTerm(k, c_in * D, c_out * D, norm_bound, rng=rng, init_scale=term_init) for k in terms]
        layers.append(
            RecmLayer(
                eq,
                un,
                group.generating_set,
                copies_rep(std, c_in),
                dataset.rep_target,
                a=a,
                b=b,
                m=m,
                hidden=hidden,
                rng=rng,
                w_init=w_init,
                name=f"layer{i}",
            )
        )
    head = InvariantHead(widths[-1], dataset.n_outputs, rng) if dataset.kind == "classification" else None
    meta = {
        "group": group,
        "n_points": dataset.n_points,
        "in_width": dataset.channels * D,
        "rep_out": dataset.rep_target,
        "task": dataset.spec.to_dict(),
        "build": {
            "layer_count": layer_count,
            "widths": [int(w) for w in widths],
            "a": float(a),
            "b": float(b),
            "m": int(m),
            "hidden": [int(k) for k in hidden],
            "terms": list(terms),
            "norm_bound": float(norm_bound),
            "w_init": float(w_init),
            "term_init": float(term_init),
        },
    }
    return RecmModel(layers, head, dataset.kind, meta)
