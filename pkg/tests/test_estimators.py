import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.metrics import f1_score
from sklearn.model_selection import StratifiedKFold, cross_val_score
from sklearn.pipeline import make_pipeline

from kanfault.estimators import KANClassifier, KANFeatureSelector, SymbolicKANClassifier
from kanfault.model import model_forward

from conftest import INFORMATIVE, separable_dataset


@pytest.fixture(scope="module")
def data():
    X, y = separable_dataset(n=200)
    labels = np.where(y == 1, "faulty", "healthy")
    return X, labels


@pytest.fixture(scope="module")
def fitted(data):
    return KANClassifier(epochs=40, random_state=2).fit(*data)


class TestKANClassifier:
    def test_params_roundtrip(self):
        est = KANClassifier(hidden=(3,), G=8, lam=0.01)
        assert est.get_params()["G"] == 8
        twin = clone(est)
        assert twin.get_params() == est.get_params() and twin is not est
        assert est.set_params(G=10).G == 10

    def test_fit_predict(self, data, fitted):
        X, y = data
        assert list(fitted.classes_) == ["faulty", "healthy"]
        assert f1_score(y, fitted.predict(X), average="macro") == 1.0
        assert fitted.score(X, y) == 1.0

    def test_probabilities(self, data, fitted):
        p = fitted.predict_proba(data[0][:20])
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(fitted.classes_[p.argmax(axis=1)], fitted.predict(data[0][:20]))

    def test_logits_are_model_on_zscores(self, data, fitted):
        X = data[0][:10]
        z = (X - fitted.standardizer_.mean_) / fitted.standardizer_.scale_
        np.testing.assert_allclose(fitted.logits(X), model_forward(fitted.model_, z), atol=1e-12)

    def test_importances_favour_informative(self, fitted):
        imp = fitted.feature_importances_
        assert imp.sum() == pytest.approx(1.0) and imp.argmax() == INFORMATIVE

    def test_deterministic(self, data, fitted):
        again = KANClassifier(epochs=40, random_state=2).fit(*data)
        assert again.logits(data[0]).tobytes() == fitted.logits(data[0]).tobytes()

    def test_hidden_layer(self, data):
        est = KANClassifier(hidden=(2,), epochs=30).fit(*data)
        assert est.model_.widths == [10, 2, 2]

    def test_not_fitted(self, data):
        with pytest.raises(NotFittedError):
            KANClassifier().predict(data[0])

    def test_feature_count_checked(self, data, fitted):
        with pytest.raises(ValueError):
            fitted.predict(data[0][:, :4])

    def test_single_class_rejected(self, data):
        with pytest.raises(ValueError):
            KANClassifier(epochs=1).fit(data[0], np.zeros(len(data[0])))

    def test_cross_validation_matches_manual_folds(self, data):
        X, y = data
        est = KANClassifier(epochs=25)
        scores = cross_val_score(est, X, y, cv=StratifiedKFold(3))
        manual = [
            clone(est).fit(X[tr], y[tr]).score(X[te], y[te]) for tr, te in StratifiedKFold(3).split(X, y)
        ]
        np.testing.assert_array_equal(scores, manual)


class TestSymbolic:
    def test_fit_predict(self, data):
        X, y = data
        sym = SymbolicKANClassifier(KANClassifier(epochs=40, random_state=2)).fit(X, y)
        assert f1_score(y, sym.predict(X), average="macro") >= 0.98
        assert len(sym.expressions()) == 2
        assert clone(sym).get_params()["estimator"].get_params()["epochs"] == 40

    def test_not_fitted(self, data):
        with pytest.raises(NotFittedError):
            SymbolicKANClassifier().expressions()


@pytest.fixture(scope="module")
def selector(data):
    sel = KANFeatureSelector(grid_count=3, selection_epochs=40, retrain_epochs=30, random_state=1)
    return sel.fit(*data)


class TestSelector:
    def test_support(self, selector):
        assert np.flatnonzero(selector.get_support()).tolist() == [INFORMATIVE]

    def test_transform(self, data, selector):
        np.testing.assert_array_equal(selector.transform(data[0]), data[0][:, [INFORMATIVE]])
        assert selector.get_feature_names_out().tolist() == [f"x{INFORMATIVE}"]

    def test_pipeline(self, data):
        pipe = make_pipeline(
            KANFeatureSelector(grid_count=3, selection_epochs=40, retrain_epochs=30, random_state=1),
            KANClassifier(epochs=40),
        )
        pipe.fit(*data)
        assert pipe.score(*data) == 1.0
        assert pipe[-1].n_features_in_ == 1

    @pytest.mark.parametrize("f", [0.0, 1.0])
    def test_bad_fraction(self, data, f):
        with pytest.raises(ValueError):
            KANFeatureSelector(validation_fraction=f).fit(*data)
