"""scikit-learn compatible wrappers around training, selection and distillation."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .model import init_model, model_forward
from .pipeline import split_stratified
from .preprocessing import Standardizer
from .selection import FeatureSelectionConfig, build_grid, select_features
from .splines import SplineConfig
from .symbolic import SymbolicFitConfig, distill, render, symbolic_forward
from .training import TrainConfig, attribution, train


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _encode(y):
    classes, y_enc = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise ValueError("need samples of at least two classes")
    return classes, y_enc


class KANClassifier(ClassifierMixin, BaseEstimator):
    """Shallow KAN trained with full-batch Adam on z-scored inputs.

    Parameters
    ----------
    hidden : tuple of int
        Widths of hidden layers; empty gives a single-layer network.
    G, k, grid_eps : spline grid intervals, order and uniform/quantile mix.
    lam : weight of the attribution sparsity penalty.
    adaptive : rebuild grids from layer inputs during training.
    """

    def __init__(self, hidden=(), G=5, k=3, grid_eps=0.05, epochs=80, learning_rate=0.05,
                 lam=0.0, adaptive=False, grid_update_every=10, grid_update_until=None,
                 random_state=0):
        self.hidden = hidden
        self.G = G
        self.k = k
        self.grid_eps = grid_eps
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lam = lam
        self.adaptive = adaptive
        self.grid_update_every = grid_update_every
        self.grid_update_until = grid_update_until
        self.random_state = random_state

    def _train_config(self):
        until = self.grid_update_until
        if until is None:
            until = min(150, self.epochs)
        return TrainConfig(
            epochs=self.epochs, learning_rate=self.learning_rate, lam=self.lam,
            adaptive=self.adaptive, grid_update_every=self.grid_update_every,
            grid_update_until=until, seed=int(self.random_state or 0),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_, y_enc = _encode(y)
        self.n_features_in_ = X.shape[1]
        self.standardizer_ = Standardizer().fit(X)
        Z = self.standardizer_.transform(X)
        cfg = self._train_config()
        spline = SplineConfig(k=self.k, G=self.G, grid_eps=self.grid_eps)
        widths = [X.shape[1], *self.hidden, self.classes_.size]
        model = init_model(widths, spline, seed=cfg.seed, samples=Z, standardizer=self.standardizer_)
        self.model_, self.history_ = train(model, Z, y_enc, cfg)
        self.feature_importances_ = attribution(self.model_, Z).normalized_input_scores()
        return self

    def _z(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.standardizer_.transform(X)

    def logits(self, X):
        z = self._z(X)
        return model_forward(self.model_, z)

    def predict_proba(self, X):
        return _softmax(self.logits(X))

    def predict(self, X):
        winners = np.argmax(self.logits(X), axis=1)
        return self.classes_[winners]


class SymbolicKANClassifier(ClassifierMixin, BaseEstimator):
    """Closed-form surrogate of a KAN: every edge replaced by a library fit."""

    def __init__(self, estimator=None, alpha=0.05, beta=1.5, max_samples=512):
        self.estimator = estimator
        self.alpha = alpha
        self.beta = beta
        self.max_samples = max_samples

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        base = self.estimator if self.estimator is not None else KANClassifier()
        self.estimator_ = clone(base).fit(X, y)
        self.classes_ = self.estimator_.classes_
        self.n_features_in_ = X.shape[1]
        cfg = SymbolicFitConfig(alpha=self.alpha, beta=self.beta, max_samples=self.max_samples)
        self.symbolic_ = distill(self.estimator_.model_, self.estimator_._z(X), cfg)
        return self

    def logits(self, X):
        check_is_fitted(self, "symbolic_")
        return symbolic_forward(self.symbolic_, self.estimator_._z(X))

    def predict(self, X):
        winners = np.argmax(self.logits(X), axis=1)
        return self.classes_[winners]

    def expressions(self, precision=2, names=None):
        check_is_fitted(self, "symbolic_")
        return render(self.symbolic_, precision, names)


class KANFeatureSelector(SelectorMixin, BaseEstimator):
    """Keep the features a sparsity-penalized KAN finds important.

    A stratified validation split scores each (lambda, tau) selection; the
    selection is picked from the Pareto front of F1 against feature count.
    """

    def __init__(self, lambda_range=(0.001, 0.01), tau_range=(0.01, 0.1), grid_count=20,
                 G=5, k=3, grid_eps=0.05, selection_epochs=80, retrain_epochs=80,
                 learning_rate=0.05, max_features=10, validation_fraction=0.2, random_state=0):
        self.lambda_range = lambda_range
        self.tau_range = tau_range
        self.grid_count = grid_count
        self.G = G
        self.k = k
        self.grid_eps = grid_eps
        self.selection_epochs = selection_epochs
        self.retrain_epochs = retrain_epochs
        self.learning_rate = learning_rate
        self.max_features = max_features
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_, y_enc = _encode(y)
        self.n_features_in_ = X.shape[1]
        f = self.validation_fraction
        if not 0 < f < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        seed = int(self.random_state or 0)
        tr, va, _ = split_stratified(y_enc, (1 - f, f, 0.0), seed)
        st = Standardizer().fit(X[tr])
        cfg = FeatureSelectionConfig(
            lambda_values=tuple(build_grid(*self.lambda_range, self.grid_count)),
            tau_values=tuple(build_grid(*self.tau_range, self.grid_count)),
            spline=SplineConfig(k=self.k, G=self.G, grid_eps=self.grid_eps),
            selection_epochs=self.selection_epochs,
            retrain_epochs=self.retrain_epochs,
            learning_rate=self.learning_rate,
            max_features=self.max_features,
        )
        self.result_ = select_features(
            st.transform(X[tr]), y_enc[tr], st.transform(X[va]), y_enc[va],
            self.classes_.size, cfg, seed,
        )
        self.support_ = np.zeros(X.shape[1], dtype=bool)
        self.support_[list(self.result_.chosen.selected)] = True
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_
