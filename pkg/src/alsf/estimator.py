"""scikit-learn estimator wrapping the trainer and the residual classifier."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .classifier import predict_classes
from .model import RESIDUAL_MODES, Hyperparams, TrainingSet
from .trainer import train


class AlsfClassifier(BaseEstimator, ClassifierMixin):
    """Patch classifier with per-class dictionary pairs and a shared low-rank pair.

    fit learns, per class, a synthesis dictionary and an analysis operator,
    plus one shared pair capturing class-common structure; predict labels a
    sample by the smallest class reconstruction residual. No per-sample
    optimization happens at predict time.

    Parameters mirror :class:`alsf.model.Hyperparams`; `mode` selects the
    residual ("shared-subtracted" removes the shared component first,
    "plain" does not) and `random_state` seeds the initialization.

    Attributes after fit: `classes_`, `model_` (the learned AlsfModel),
    `report_` (objective trace and per-block diagnostics), `n_features_in_`.
    """

    def __init__(self, k_per_class=40, k_shared=10, eta=0.1, eta1=1e-3,
                 tau=1.0, lambda1=1e-2, lambda2=1e-2, lambda3=1e-2,
                 max_iters=30, rel_tol=1e-4, code_sweeps=1, ridge_a0=1e-6,
                 joint_code_solve=False, mode="shared-subtracted",
                 random_state=0):
        self.k_per_class = k_per_class
        self.k_shared = k_shared
        self.eta = eta
        self.eta1 = eta1
        self.tau = tau
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.max_iters = max_iters
        self.rel_tol = rel_tol
        self.code_sweeps = code_sweeps
        self.ridge_a0 = ridge_a0
        self.joint_code_solve = joint_code_solve
        self.mode = mode
        self.random_state = random_state

    def _hyperparams(self) -> Hyperparams:
        return Hyperparams(
            k_per_class=self.k_per_class, k_shared=self.k_shared, eta=self.eta,
            eta1=self.eta1, tau=self.tau, lambda1=self.lambda1,
            lambda2=self.lambda2, lambda3=self.lambda3,
            max_iters=self.max_iters, rel_tol=self.rel_tol,
            code_sweeps=self.code_sweeps, ridge_a0=self.ridge_a0,
            joint_code_solve=self.joint_code_solve,
            seed=self.random_state if self.random_state is not None else 0,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if self.mode not in RESIDUAL_MODES:
            raise ValueError(f"mode must be one of {RESIDUAL_MODES}")
        self.classes_ = np.unique(y)
        per_class = [np.ascontiguousarray(X[y == lab].T) for lab in self.classes_]
        data = TrainingSet(per_class)
        labels = [str(lab) for lab in self.classes_]
        self.model_, self.report_ = train(data, self._hyperparams(), labels=labels)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        idx = predict_classes(X, self.model_, self.mode)
        return self.classes_[idx]

    def decision_function(self, X):
        """Residual-gap scores: for binary problems a 1-D score favoring
        classes_[1]; otherwise negated residuals, one column per class."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        from .classifier import _residual_matrix

        res = _residual_matrix(X, self.model_, self.mode)
        if res.shape[1] == 2:
            return res[:, 0] - res[:, 1]
        return -res
