"""Check trained modulation values against the transport bound on alpha."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..transport import EmpiricalDistribution, lipschitz_upper, symmetrize_full, wasserstein1


@dataclass
class AlphaBoundReport:
    layer: str
    alphas: np.ndarray
    lipschitz: float
    w1: float
    w1_stderr: float
    m: int

    @property
    def bound(self):
        return 2.0 * np.sqrt(self.m) * self.lipschitz * self.w1 + 3.0 * self.w1_stderr

    @property
    def passed(self):
        return bool((np.abs(self.alphas) <= self.bound).all())


def input_target_distributions(model, dataset, n_samples, rng):
    """Per layer: the empirical law of (pooled layer input, encoded target)."""
    X, y = dataset.sample(rng, n_samples)
    y_enc = dataset.encode_targets(y)
    return [EmpiricalDistribution(np.concatenate([z, y_enc], axis=1)) for z in model.layer_inputs(X)]


def alpha_bounds(model, dataset, n_samples=500, n_draws=5, seed=0):
    """|alpha_i| <= 2 sqrt(m) B W1(p, p_G) + 3 stderr(W1), one report per layer.

    W1 comes from the first draw; its stderr is the spread over ``n_draws``
    independent draws of the same size.  Finite groups only.
    """
    group = model.group
    rngs = np.random.default_rng(seed).spawn(n_draws)
    draws = [input_target_distributions(model, dataset, n_samples, r) for r in rngs]
    reports = []
    for i, layer in enumerate(model.layers):
        w1s = []
        for dists in draws:
            p = dists[i]
            w1s.append(wasserstein1(p, symmetrize_full(p, group, layer.rep_z, layer.rep_y)))
        stderr = float(np.std(w1s, ddof=1)) if n_draws > 1 else 0.0
        reports.append(
            AlphaBoundReport(
                layer.name,
                np.asarray(layer.modulation_values()[0]),
                lipschitz_upper(layer.update_net),
                w1s[0],
                stderr,
                layer.state.m,
            )
        )
    return reports
