"""scikit-learn compatible wrappers around the functional core.

These estimators make the trainers and the whitening transform compose with
pipelines, grid search, and the rest of the sklearn ecosystem.  Constructor
arguments are stored verbatim (so ``get_params``/``set_params``/``clone``
work) and all state learned from data lives in trailing-underscore
attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import init as _init
from .data import ClassBatch, Dataset, input_second_moment
from .errors import RankDeficiencyError
from .linear import FlowConfig, covariance, end_to_end, run_training
from .relu import glorot_beta_for_relu, relu_forward_batch, run_relu_training

__all__ = ["CovarianceWhitener", "DeepLinearRegressor", "MaskedReluClassifier"]


def _as_2d(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D (samples, features), got {x.shape}")
    return x


class CovarianceWhitener(BaseEstimator, TransformerMixin):
    """Transform inputs so their uncentered covariance is the identity.

    Fits the symmetric inverse square root of ``(1/m) X.T @ X`` and applies
    it to new data.  Note this deliberately does not remove the mean: the
    downstream dynamics are stated in terms of the raw second moment.

    Attributes:
        transform_: (d, d) symmetric whitening matrix.
    """

    def fit(self, X, y=None):
        X = _as_2d(X, "X")
        cov = input_second_moment(X)
        eigvals, eigvecs = np.linalg.eigh(cov)
        if eigvals.min() <= 1e-10:
            raise RankDeficiencyError(
                "input covariance is numerically singular: smallest eigenvalue "
                f"{eigvals.min():.3e}"
            )
        self.transform_ = (eigvecs / np.sqrt(eigvals)) @ eigvecs.T
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        return _as_2d(X, "X") @ self.transform_


class DeepLinearRegressor(BaseEstimator, RegressorMixin):
    """Linear regression fit by gradient descent through a deep factorization.

    The end-to-end map is a product of ``len(hidden_dims) + 1`` weight
    matrices trained jointly by full-batch descent on whitened inputs.  The
    point of the depth is not capacity (the model stays linear) but the
    training dynamics, which the fitted ``trajectory_`` records.

    Parameters:
        hidden_dims: widths of the interior layers.
        scheme: "glorot", "balanced_orthogonal", or "saxe_aligned".
        beta: Glorot scale; every layer starts with E[|W|_F^2] = beta.
        sigma_profile: shared singular spectrum for balanced_orthogonal;
            defaults to all ones at the maximal common rank.
        sigma0: starting mode strength(s) for saxe_aligned.
        eta: step size.
        steps: number of descent steps.
        record_every: snapshot stride for the trajectory log.
        seed: RNG seed for the initializer.

    Attributes:
        net_: fitted weight stack.
        coef_: fitted end-to-end matrix (targets, features).
        trajectory_: TrajectoryRecord of the training run.
        whitener_: fitted CovarianceWhitener applied before the net.
        alignment_: ModeAlignment when scheme="saxe_aligned".
    """

    def __init__(
        self,
        hidden_dims=(6,),
        scheme="glorot",
        beta=1.0,
        sigma_profile=None,
        sigma0=0.5,
        eta=1e-3,
        steps=5000,
        record_every=50,
        seed=0,
    ):
        self.hidden_dims = hidden_dims
        self.scheme = scheme
        self.beta = beta
        self.sigma_profile = sigma_profile
        self.sigma0 = sigma0
        self.eta = eta
        self.steps = steps
        self.record_every = record_every
        self.seed = seed

    def _build_net(self, dims, cov):
        if self.scheme == "glorot":
            return _init.glorot_init(dims, beta=self.beta, seed=self.seed), None
        if self.scheme == "balanced_orthogonal":
            profile = self.sigma_profile
            if profile is None:
                rank = min(min(a, b) for a, b in zip(dims[:-1], dims[1:]))
                profile = np.ones(rank)
            return _init.balanced_orthogonal_init(dims, profile, seed=self.seed), None
        if self.scheme == "saxe_aligned":
            return _init.saxe_aligned_init(dims, cov, self.sigma0, seed=self.seed)
        raise ValueError(f"unknown init scheme {self.scheme!r}")

    def fit(self, X, y):
        X = _as_2d(X, "X")
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        self.whitener_ = CovarianceWhitener().fit(X)
        Xw = self.whitener_.transform(X)
        data = Dataset(inputs=Xw, targets=y, whitened=True)
        cov = covariance(data)
        dims = (X.shape[1], *self.hidden_dims, y.shape[1])
        net, self.alignment_ = self._build_net(dims, cov)
        cfg = FlowConfig(
            eta=self.eta, steps=self.steps, record_every=self.record_every
        )
        self.trajectory_, self.net_ = run_training(
            net, data, cfg, alignment=self.alignment_
        )
        self.coef_ = end_to_end(self.net_)
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        Xw = self.whitener_.transform(_as_2d(X, "X"))
        out = Xw @ self.coef_.T
        return out[:, 0] if out.shape[1] == 1 else out


class MaskedReluClassifier(BaseEstimator, ClassifierMixin):
    """Softmax classifier through a bias-free ReLU stack.

    Trains by full-batch descent on cross-entropy; the activation pattern
    of every sample at every layer is recomputed each step, and the fitted
    ``trajectory_`` keeps the growth-symmetry and mask-agreement series the
    dynamics analyses consume.

    Attributes:
        classes_: sorted class labels.
        net_: fitted weight stack.
        trajectory_: TrajectoryRecord of the training run.
    """

    def __init__(self, hidden_units=(32, 32), beta=None, eta=0.1, steps=500,
                 record_every=10, seed=0):
        self.hidden_units = hidden_units
        self.beta = beta
        self.eta = eta
        self.steps = steps
        self.record_every = record_every
        self.seed = seed

    def fit(self, X, y):
        X = _as_2d(X, "X")
        y = np.asarray(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        targets = np.zeros((X.shape[0], self.classes_.size))
        targets[np.arange(X.shape[0]), encoded] = 1.0
        batch = ClassBatch(inputs=X, targets=targets)
        dims = (X.shape[1], *self.hidden_units, self.classes_.size)
        beta = self.beta if self.beta is not None else glorot_beta_for_relu(dims)
        net = _init.glorot_init(dims, beta=beta, seed=self.seed)
        cfg = FlowConfig(eta=self.eta, steps=self.steps,
                         record_every=self.record_every)
        self.trajectory_, self.net_ = run_relu_training(net, batch, cfg)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        probs, _ = relu_forward_batch(self.net_, _as_2d(X, "X"))
        return probs

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
