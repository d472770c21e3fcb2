"""scikit-learn style wrappers around the relaxed models.

Inputs are planar vector features flattened row-wise: a sample with P points
of C channels is a row of length P * C * 2 (``n_points`` tells them apart).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ContractError
from .experiments.model import build_model
from .experiments.tasks import Dataset, TaskSpec
from .experiments.training import TrainConfig, train


def _fixed_dataset(X, y, kind, group, n_points, channels, n_classes=0):
    spec = TaskSpec(name="custom", group=group, n_points=n_points, n_classes=n_classes, n_train=len(X))
    ds = Dataset(spec, kind, channels, X, y, sampler=None)
    ds.X_train, ds.y_train = X, y
    return ds


class _RecmBase(BaseEstimator):
    def __init__(
        self,
        group="C4",
        widths=(8, 8, 8),
        n_points=1,
        a=1e-3,
        b=1.0,
        steps=2000,
        batch_size=32,
        lr=0.05,
        optimizer="sgd",
        prune_eps=0.01,
        terms=("dense", "bias", "noise"),
        random_state=0,
    ):
        self.group = group
        self.widths = widths
        self.n_points = n_points
        self.a = a
        self.b = b
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.optimizer = optimizer
        self.prune_eps = prune_eps
        self.terms = terms
        self.random_state = random_state

    def _shape_inputs(self, X):
        width = X.shape[1]
        if self.n_points < 1 or width % (2 * self.n_points):
            raise ContractError(f"{width} features do not split into {self.n_points} points of planar channels")
        return X.reshape(X.shape[0], self.n_points, width // self.n_points), width // (2 * self.n_points)

    def _fit(self, dataset, widths):
        seed = int(self.random_state or 0)
        model = build_model(
            dataset,
            len(widths),
            widths,
            a=self.a,
            b=self.b,
            terms=tuple(self.terms),
            rng=np.random.default_rng(seed),
        )
        cfg = TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            lr=self.lr,
            a=self.a,
            b=self.b,
            seed=seed,
            prune_eps=self.prune_eps,
            optimizer=self.optimizer,
        )
        self.log_, self.model_ = train(model, dataset, cfg)
        self.alphas_ = self.log_.final_alphas()
        self.n_features_in_ = dataset.X_train.shape[1] * dataset.X_train.shape[2]
        return self

    def _checked(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self._shape_inputs(X)[0]

    def _raw(self, X):
        return self.model_.predict_raw(self._checked(X))

    def transform(self, X):
        """Invariant per-sample features for classifiers; predicted vectors for regressors."""
        return self.model_.embed(self._checked(X))


class RECMClassifier(ClassifierMixin, _RecmBase):
    """Invariant point-cloud classifier (fit on fixed data with minibatch resampling)."""

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        Xs, channels = self._shape_inputs(X)
        ds = _fixed_dataset(
            Xs, self.label_encoder_.transform(y), "classification", self.group, self.n_points, channels, len(self.classes_)
        )
        return self._fit(ds, list(self.widths))

    def decision_function(self, X):
        return self._raw(X)

    def predict_proba(self, X):
        z = self._raw(X)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[self._raw(X).argmax(axis=1)]


class RECMRegressor(RegressorMixin, _RecmBase):
    """Equivariant vector regressor: targets are planar vectors, one sample per row.

    The last entry of ``widths`` is replaced by the number of target vectors.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y = y.reshape(len(y), -1).astype(np.float64)
        if y.shape[1] % 2:
            raise ContractError("targets must be planar vectors (even column count)")
        Xs, channels = self._shape_inputs(X)
        if self.n_points != 1:
            raise ContractError("regression expects a single point per sample")
        ds = _fixed_dataset(Xs, y, "regression", self.group, 1, channels)
        self.n_targets_ = y.shape[1]
        widths = [*list(self.widths)[:-1], y.shape[1] // 2]
        return self._fit(ds, widths)

    def predict(self, X):
        return self._raw(X)
