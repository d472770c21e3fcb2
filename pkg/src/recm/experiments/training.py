"""Training loop with per-step modulation logging and final pruning."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import tensor as T
from ..exceptions import ContractError, NonFiniteLossError
from ..optim import cosine_lr, make_optimizer

CSV_HEADER = ("step", "loss", "layer", "term", "alpha", "beta", "h_norm")
A_GRID = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_size: int = 32
    lr: float = 0.05
    schedule: str = "cosine"
    a: float = 1e-3
    b: float = 1.0
    seed: int = 0
    prune_eps: float = 0.01
    optimizer: str = "sgd"
    momentum: float = 0.9

    def validate(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ContractError("steps and batch_size must be positive")
        if not self.lr > 0:
            raise ContractError("learning rate must be positive")
        if self.schedule not in ("cosine", "constant"):
            raise ContractError(f"unknown schedule {self.schedule!r}")
        if self.a <= 0 or self.b <= 0:
            raise ContractError("a and b must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")
        return self

    def lr_at(self, step):
        # the update made at step t uses the rate for t+1, so the last one is exactly 0
        if self.schedule == "constant":
            return self.lr
        return cosine_lr(self.lr, step + 1, self.steps)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractError(f"unknown train fields: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class TrajectoryLog:
    """One record per optimizer step: loss and, per layer, alphas, beta and |h|."""

    layer_names: list
    term_kinds: list
    steps: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    h_norms: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def append(self, step, loss, snapshot, h_norms):
        self.steps.append(step)
        self.loss.append(loss)
        self.alphas.append([np.asarray(a, dtype=np.float64).copy() for a, _ in snapshot])
        self.betas.append([float(b) for _, b in snapshot])
        self.h_norms.append(list(h_norms))

    def __len__(self):
        return len(self.steps)

    def alpha_series(self, layer, term):
        li = self.layer_names.index(layer)
        ti = self.term_kinds[li].index(term)
        return np.array([row[li][ti] for row in self.alphas])

    def final_alphas(self):
        return {name: self.alphas[-1][i].copy() for i, name in enumerate(self.layer_names)}

    def iter_rows(self):
        for k, step in enumerate(self.steps):
            for li, name in enumerate(self.layer_names):
                for ti, kind in enumerate(self.term_kinds[li]):
                    yield step, self.loss[k], name, kind, self.alphas[k][li][ti], self.betas[k][li], self.h_norms[k][li]

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for step, loss, name, kind, alpha, beta, hn in self.iter_rows():
            w.writerow([step, f"{loss:.17g}", name, kind, f"{alpha:.17g}", f"{beta:.17g}", f"{hn:.17g}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _loss(model, out, y):
    if model.kind == "classification":
        return T.cross_entropy(out, np.asarray(y, dtype=int))
    return T.mse(out, np.asarray(y, dtype=np.float64))


def evaluate(model, X, y):
    out = model.forward(X, training=False)
    metrics = {"loss": float(_loss(model, out, y).data)}
    if model.kind == "classification":
        metrics["accuracy"] = float(np.mean(out.data.argmax(axis=1) == y))
    return metrics


def _streams(seed):
    data, noise = np.random.default_rng(seed).spawn(2)
    return data, noise


def train(model, dataset, config, progress=None):
    """Fit ``model`` on fresh batches from ``dataset``; returns (log, pruned model).

    Each step: forward with the current modulation, loss, backward, optimizer
    step, then every layer folds this step's (pooled input, target) into h.
    """
    config.validate()
    data_rng, noise_rng = _streams(config.seed)
    opt = make_optimizer(config.optimizer, model.parameters(), config.lr, config.momentum)
    log = TrajectoryLog([lay.name for lay in model.layers], [lay.term_kinds for lay in model.layers])
    for step in range(config.steps):
        X, y = dataset.sample(data_rng, config.batch_size)
        out = model.forward(X, noise_rng, training=True)
        loss = _loss(model, out, y)
        lval = float(loss.data)
        if not np.isfinite(lval):
            record = {"step": step, "loss": lval, "modulation": model.modulation_snapshot()}
            raise NonFiniteLossError(f"non-finite loss {lval} at step {step}", record)
        opt.zero_grad()
        T.backward(loss)
        opt.lr = config.lr_at(step)
        opt.step()
        model.step_hooks(dataset.encode_targets(y))
        log.append(
            step,
            lval,
            model.modulation_snapshot(),
            [float(np.linalg.norm(lay.state.h)) for lay in model.layers],
        )
        if progress is not None:
            progress(step, lval)

    pruned, reports = model.pruned(config.prune_eps)
    pre = evaluate(model, dataset.X_test, dataset.y_test)
    post = evaluate(pruned, dataset.X_test, dataset.y_test)
    n_eq = model.n_equivariant_parameters()
    n_inf = pruned.n_inference_parameters()
    log.final = {
        "test_pre_prune": pre,
        "test_post_prune": post,
        "n_parameters_training": model.n_parameters(),
        "n_parameters_equivariant": n_eq,
        "n_parameters_pre_prune": model.n_inference_parameters(),
        "n_parameters_post_prune": n_inf,
        "overhead_post_prune": (n_inf - n_eq) / n_eq,
        "retained": {name: rep.retained for name, rep in zip(log.layer_names, reports)},
        "final_alphas": {name: a.tolist() for name, a in log.final_alphas().items()},
        "final_betas": dict(zip(log.layer_names, log.betas[-1])),
    }
    return log, pruned


def format_summary(final):
    """Flat ``key = value`` lines for the final metrics."""
    lines = []

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k in obj:
                walk(f"{prefix}.{k}" if prefix else str(k), obj[k])
        elif isinstance(obj, float):
            lines.append(f"{prefix} = {obj:.17g}")
        else:
            lines.append(f"{prefix} = {obj}")

    walk("", final)
    return "\n".join(lines) + "\n"
