"""Estimator-style wrappers: fit/transform/predict objects over the
functional core, compatible with pipeline tooling that expects
get_params/set_params and fitted-attribute conventions.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, require_finite
from .distill.trainer import DistillConfig, run_distillation
from .evalbench import knn_predict_batch, pca_fit, pca_transform


class EmbeddingDistiller(TransformerMixin, BaseEstimator):
    """Learns a projection head (and optionally a small student network)
    mapping one embedding space onto another.

    fit(X, Y) trains on row-aligned source embeddings X and target
    embeddings Y; transform(X) applies the trained student+head in eval
    mode (running batch statistics, no updates).
    """

    def __init__(
        self,
        alpha: int = 4,
        eps_loss: float = 1e-12,
        batch_size: int = 32,
        lr_start: float = 1e-4,
        lr_end: float = 1e-6,
        wd_start: float = 0.05,
        wd_end: float = 0.5,
        total_steps: int | None = None,
        window: int = 100,
        max_violations: int = 10,
        violation_mode: str = "cumulative",
        student_arch: str = "identity",
        student_hidden: tuple = (256,),
        seed: int = 0,
    ):
        self.alpha = alpha
        self.eps_loss = eps_loss
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.wd_start = wd_start
        self.wd_end = wd_end
        self.total_steps = total_steps
        self.window = window
        self.max_violations = max_violations
        self.violation_mode = violation_mode
        self.student_arch = student_arch
        self.student_hidden = student_hidden
        self.seed = seed

    def _config(self) -> DistillConfig:
        return DistillConfig(
            alpha=self.alpha,
            eps_loss=self.eps_loss,
            batch_size=self.batch_size,
            lr_start=self.lr_start,
            lr_end=self.lr_end,
            wd_start=self.wd_start,
            wd_end=self.wd_end,
            total_steps=self.total_steps,
            window=self.window,
            max_violations=self.max_violations,
            violation_mode=self.violation_mode,
            student_arch=self.student_arch,
            student_hidden=tuple(self.student_hidden),
            seed=self.seed,
        )

    def fit(self, X, Y):
        X = as_matrix(X, "source embeddings")
        Y = as_matrix(Y, "target embeddings")
        result = run_distillation(X, Y, self._config())
        self.head_ = result.head
        self.student_ = result.student
        self.losses_ = result.losses
        self.n_steps_ = result.steps
        self.stopped_early_ = result.stopped_early
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "head_")
        X = as_matrix(X, "source embeddings")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, fit saw {self.n_features_in_}")
        return self.head_(self.student_(X), train=False)


class PcaReducer(TransformerMixin, BaseEstimator):
    """Mean-centering PCA with a deterministic component sign convention."""

    def __init__(self, n_components: int = 50):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = as_matrix(X, "features")
        require_finite(X, "features")
        self.model_ = pca_fit(X, self.n_components)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return pca_transform(self.model_, X)

    @property
    def components_(self):
        check_is_fitted(self, "model_")
        return self.model_.components

    @property
    def explained_variance_(self):
        check_is_fitted(self, "model_")
        return self.model_.explained_variance


class KnnVoteClassifier(ClassifierMixin, BaseEstimator):
    """Majority-vote k-nearest-neighbor classifier with deterministic ties
    (distance ties prefer the lower training index, vote ties the smaller
    label id)."""

    def __init__(self, k: int = 15):
        self.k = k

    def fit(self, X, y):
        X = as_matrix(X, "training features")
        require_finite(X, "training features")
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if np.any(y < 0):
            raise ValueError("labels must be non-negative integers")
        self.train_X_ = X
        self.train_y_ = y
        self.classes_ = np.unique(y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "train_X_")
        return knn_predict_batch(self.train_X_, self.train_y_, X, self.k)
