"""Per-feature z-scoring with a guard for constant columns."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

MIN_STD = 1e-12


class Standardizer(TransformerMixin, BaseEstimator):
    """Z-score using training mean and population std.

    Columns whose std falls below ``MIN_STD`` map to 0 everywhere, for the
    training rows and for any row transformed later.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        live = self.scale_ >= MIN_STD
        out = np.zeros_like(X)
        out[:, live] = (X[:, live] - self.mean_[live]) / self.scale_[live]
        return out

    def subset(self, columns) -> "Standardizer":
        check_is_fitted(self, "mean_")
        return Standardizer.from_arrays(self.mean_[columns], self.scale_[columns])

    @classmethod
    def from_arrays(cls, mean, scale) -> "Standardizer":
        st = cls()
        st.mean_ = np.asarray(mean, dtype=float).copy()
        st.scale_ = np.asarray(scale, dtype=float).copy()
        st.n_features_in_ = st.mean_.size
        return st

    def to_dict(self) -> dict:
        return {"mean": self.mean_.tolist(), "std": self.scale_.tolist()}


def standardize_fit_apply(train, *others):
    """Fit on ``train``; return the standardizer and every matrix transformed."""
    st = Standardizer().fit(train)
    return (st, st.transform(train), *(st.transform(o) for o in others))
