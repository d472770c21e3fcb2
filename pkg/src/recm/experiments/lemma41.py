"""Convergence of the raw state recursion with no learning in the loop.

``h_t = (1 - c_t) h_{t-1} + c_t l_t(q_t)`` with ``c_t = a / (b + a t)`` puts
the same weight a / (b + aT) on every sample, so h_T is a shrunk sample mean
and its own sampling error is of order sigma / sqrt(T).  The report therefore
carries both the reference Monte-Carlo error and the error of h_T itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ConvergenceReport:
    h_T: np.ndarray
    reference: np.ndarray
    ref_stderr: np.ndarray
    h_stderr: np.ndarray
    T: int

    @property
    def deviation(self):
        return np.abs(self.h_T - self.reference)

    @property
    def stderr(self):
        """Standard error of h_T - reference (independent estimates)."""
        return np.sqrt(self.ref_stderr**2 + self.h_stderr**2)

    @property
    def z_scores(self):
        return self.deviation / self.stderr

    def passed(self, k=3.0):
        return bool((self.deviation < k * self.stderr).all())


def recursion(values, a, b, h0):
    """Run the update over the rows of ``values`` (T, m); returns h_T."""
    h = np.array(h0, dtype=np.float64)
    for t, v in enumerate(values, start=1):
        c = a / (b + a * t)
        h = (1.0 - c) * h + c * v
    return h


def closed_form_constant(h0, c, a, b, T):
    lam = b / (b + a * T)
    return lam * np.asarray(h0, dtype=np.float64) + (1.0 - lam) * np.asarray(c, dtype=np.float64)


def default_target(q):
    """A fixed nonlinear l*(q) with three outputs."""
    w = np.array([[1.0, -0.5], [0.3, 0.8], [-0.7, 0.2]])
    return np.tanh(q @ w.T) + 0.1 * q[:, :1] ** 2


def stationary_sampler(rng, n):
    return rng.normal(loc=(0.5, -0.25), scale=1.0, size=(n, 2))


def lemma41_harness(
    a=1.0,
    b=1.0,
    T=100_000,
    ref_samples=1_000_000,
    seed=0,
    target=default_target,
    sampler=stationary_sampler,
    drift=None,
    perturbation=None,
    h0=None,
):
    """h_T from the recursion against a Monte-Carlo estimate of E_p[l*].

    ``drift(rng, n)`` supplies samples from a nuisance law mixed in with
    probability 0.9^t; ``perturbation`` is a vector added to l* scaled by 0.9^t.
    Both vanish, so the limit is still E_p[l*].
    """
    rng_run, rng_ref = np.random.default_rng(seed).spawn(2)
    q = sampler(rng_run, T)
    decay = 0.9 ** np.arange(1, T + 1)
    if drift is not None:
        swap = rng_run.random(T) < decay
        if swap.any():
            q[swap] = drift(rng_run, int(swap.sum()))
    vals = target(q)
    if perturbation is not None:
        vals = vals + decay[:, None] * np.asarray(perturbation)[None, :]
    m = vals.shape[1]
    h = recursion(vals, a, b, np.zeros(m) if h0 is None else h0)

    ref_vals = target(sampler(rng_ref, ref_samples))
    ref = ref_vals.mean(axis=0)
    ref_se = ref_vals.std(axis=0, ddof=1) / np.sqrt(ref_samples)
    h_se = a / (b + a * T) * np.sqrt(T) * vals.std(axis=0, ddof=1)
    return ConvergenceReport(h, ref, ref_se, h_se, T)
