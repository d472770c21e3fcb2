"""Synthetic tasks with a switchable symmetry.

Shape classification: 16-point planar clouds in three classes.  Class 1 is
class 0 turned by a quarter turn, so once samples are randomly rotated the two
are indistinguishable and nothing is gained by breaking equivariance.  In the
aligned variant they differ only by orientation, which an equivariant model
cannot see.

Two-body regression: two charged particles integrated with velocity Verlet.
The free system commutes with rotations; a constant external field breaks it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..exceptions import ContractError
from ..groups import copies_rep, get_group, haar_sample, rotation2d, standard_rep, trivial_rep


@dataclass
class TaskSpec:
    name: str = "shapes"
    group: str = "C4"
    symmetric: bool = True
    n_points: int = 16
    n_classes: int = 3
    n_train: int | None = None
    n_test: int = 600
    jitter: float = 0.05
    seed: int = 0
    force: tuple = (0.5, 0.0)
    n_steps: int = 100
    dt: float = 0.01

    def to_dict(self):
        d = asdict(self)
        d["force"] = list(self.force)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "force" in d:
            d["force"] = tuple(d["force"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContractError(f"unknown task fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Dataset:
    """Test split plus a sampler for fresh training batches.

    ``X`` has shape (n, points, channels * 2); targets are class indices or
    (n, 4) final positions.
    """

    spec: TaskSpec
    kind: str
    channels: int
    X_test: np.ndarray
    y_test: np.ndarray
    sampler: Callable = field(repr=False)
    X_train: np.ndarray | None = None
    y_train: np.ndarray | None = None

    @property
    def group(self):
        return get_group(self.spec.group)

    @property
    def n_points(self):
        return self.X_test.shape[1]

    @property
    def n_outputs(self):
        return self.spec.n_classes if self.kind == "classification" else self.y_test.shape[1]

    @property
    def rep_point(self):
        """Group action on one point's features (channels copies of the plane)."""
        return copies_rep(standard_rep(self.group), self.channels)

    @property
    def rep_target(self):
        if self.kind == "classification":
            return trivial_rep(self.spec.n_classes)
        return copies_rep(standard_rep(self.group), self.y_test.shape[1] // 2)

    def sample(self, rng, n):
        if self.X_train is None:
            return self.sampler(rng, n)
        idx = rng.integers(self.X_train.shape[0], size=n)
        return self.X_train[idx], self.y_train[idx]

    def encode_targets(self, y):
        """Targets as float rows: one-hot labels or the regression vector."""
        if self.kind == "classification":
            return np.eye(self.spec.n_classes)[np.asarray(y, dtype=int)]
        return np.asarray(y, dtype=np.float64)


# ---------------------------------------------------------------- shapes


def shape_templates(n_points=16):
    """(3, n_points, 2): off-centre segment on +x, the same on +y, centred triangle."""
    r = np.linspace(0.2, 1.2, n_points)
    seg_x = np.stack([r, np.zeros_like(r)], axis=1)
    seg_y = seg_x @ rotation2d(np.pi / 2).T
    corners = np.stack([rotation2d(k * 2 * np.pi / 3) @ np.array([0.0, 1.0]) for k in range(3)])
    s = np.arange(n_points) * 3.0 / n_points
    k = s.astype(int)
    frac = (s - k)[:, None]
    tri = (1 - frac) * corners[k] + frac * corners[(k + 1) % 3]
    return np.stack([seg_x, seg_y, tri])


def _shape_sampler(spec, group):
    templates = shape_templates(spec.n_points)

    def draw(rng, n, labels=None):
        y = rng.integers(spec.n_classes, size=n) if labels is None else labels
        x = templates[y] + spec.jitter * rng.standard_normal((n, spec.n_points, 2))
        if spec.symmetric:
            rots = np.stack([haar_sample(group, rng) for _ in range(n)])
            x = np.einsum("nij,npj->npi", rots, x)
        return x, y

    return draw


def gen_shape_classification(spec, rng=None):
    if spec.group not in ("C4", "SO2"):
        raise ContractError(f"shape task supports C4 or SO2, got {spec.group!r}")
    if spec.n_classes != 3:
        raise ContractError("shape task has exactly three classes")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    draw = _shape_sampler(spec, get_group(spec.group))
    labels = np.resize(np.arange(spec.n_classes), spec.n_test)
    x_test, y_test = draw(rng, spec.n_test, labels)
    ds = Dataset(spec, "classification", 1, x_test, y_test, lambda r, n: draw(r, n))
    if spec.n_train:
        ds.X_train, ds.y_train = draw(rng, spec.n_train)
    return ds


# ---------------------------------------------------------------- two-body


def _accelerations(x1, x2, force, soft=0.1):
    r = x1 - x2
    inv = (np.sum(r * r, axis=-1, keepdims=True) + soft**2) ** -1.5
    f = r * inv
    return f + force, -f + force


def integrate_twobody(state, force=(0.0, 0.0), n_steps=100, dt=0.01):
    """Velocity Verlet for two unit charges; state rows are [x1, x2, v1, v2] (8 values)."""
    s = np.asarray(state, dtype=np.float64)
    x1, x2, v1, v2 = s[..., 0:2], s[..., 2:4], s[..., 4:6], s[..., 6:8]
    f = np.asarray(force, dtype=np.float64)
    a1, a2 = _accelerations(x1, x2, f)
    for _ in range(n_steps):
        v1 = v1 + 0.5 * dt * a1
        v2 = v2 + 0.5 * dt * a2
        x1 = x1 + dt * v1
        x2 = x2 + dt * v2
        a1, a2 = _accelerations(x1, x2, f)
        v1 = v1 + 0.5 * dt * a1
        v2 = v2 + 0.5 * dt * a2
    return np.concatenate([x1, x2], axis=-1)


def gen_twobody(spec, rng=None):
    if spec.group != "SO2":
        raise ContractError(f"two-body task supports SO2 only, got {spec.group!r}")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    force = (0.0, 0.0) if spec.symmetric else spec.force

    def draw(r, n):
        s = np.concatenate([r.standard_normal((n, 4)), 0.5 * r.standard_normal((n, 4))], axis=1)
        return s[:, None, :], integrate_twobody(s, force, spec.n_steps, spec.dt)

    x_test, y_test = draw(rng, spec.n_test)
    ds = Dataset(spec, "regression", 4, x_test, y_test, draw)
    if spec.n_train:
        ds.X_train, ds.y_train = draw(rng, spec.n_train)
    return ds


def make_dataset(spec, rng=None):
    builders = {"shapes": gen_shape_classification, "twobody": gen_twobody}
    if spec.name not in builders:
        raise ContractError(f"unknown task {spec.name!r}; expected one of {sorted(builders)}")
    return builders[spec.name](spec, rng)
