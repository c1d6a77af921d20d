import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score as sk_f1

from kanfault.errors import NumericalError
from kanfault.model import edge_outputs, init_model, layer_inputs, model_forward, regrid_layer
from kanfault.splines import SplineConfig
from kanfault.training import (
    Adam,
    AttributionReport,
    TrainConfig,
    attribution,
    confusion_matrix,
    cross_entropy,
    edge_std,
    f1_score,
    fit_kan,
    loss_and_grad,
    predict,
    regularization,
    total_loss,
    train,
)


def interior_model(widths, seed, n=8):
    """Random model whose every layer input lies strictly inside its grid span."""
    rng = np.random.default_rng(seed)
    wide = rng.normal(size=(200, widths[0]))
    cfg = SplineConfig(k=3, G=5, grid_eps=1.0)
    model = init_model(widths, cfg, seed=seed, samples=wide)
    h = wide
    for l in range(model.depth):
        layer = model.layers[l]
        layer.c_r[...] = rng.normal(size=layer.c_r.shape)
        layer.c_B[...] = rng.uniform(0.5, 1.5, size=layer.c_B.shape)
        layer.coef[...] = rng.normal(size=layer.coef.shape)
        h = edge_outputs(layer, h).sum(axis=1)
        if l + 1 < model.depth:
            # pad the span so small perturbations never touch the clamp
            model.layers[l + 1] = regrid_layer(model.layers[l + 1], np.vstack([h * 1.5, h]), cfg)
    X = np.clip(rng.normal(size=(n, widths[0])), -1.5, 1.5)
    X *= 0.5 * np.abs(wide).max() / np.abs(X).max()
    y = rng.integers(0, widths[-1], size=n)
    return model, X, y


def numeric_grads(model, X, y, lam, h=1e-5):
    out = []
    for layer in model.layers:
        triple = []
        for arr in (layer.c_r, layer.c_B, layer.coef):
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = total_loss(model, X, y, lam)
                arr[idx] = old - h
                down = total_loss(model, X, y, lam)
                arr[idx] = old
                g[idx] = (up - down) / (2 * h)
            triple.append(g)
        out.append(triple)
    return out


def relative_error(a, b):
    # central differences leave ~1e-10 absolute noise; that floor keeps
    # vanishing gradients from turning rounding into "relative" error
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


def attribution_loop(model, X):
    """Backward recursion written with explicit loops and a two-pass std."""
    xs = layer_inputs(model, X)
    stds = []
    for layer, x in zip(model.layers, xs):
        E = np.zeros((layer.n_in, layer.n_out))
        for i in range(layer.n_in):
            for j in range(layer.n_out):
                vals = [
                    float(edge_outputs(layer, x[s : s + 1])[0, i, j]) for s in range(x.shape[0])
                ]
                mu = sum(vals) / len(vals)
                E[i, j] = math.sqrt(sum((v - mu) ** 2 for v in vals) / len(vals))
        stds.append(E)
    A = [None] * (len(stds) + 1)
    A[-1] = [1.0] * stds[-1].shape[1]
    for l in range(len(stds) - 1, -1, -1):
        E = stds[l]
        A[l] = []
        for i in range(E.shape[0]):
            total = 0.0
            for j in range(E.shape[1]):
                col = sum(E[p, j] for p in range(E.shape[0]))
                if col > 0:
                    total += E[i, j] * A[l + 1][j] / col
            A[l].append(total)
    return stds, [np.array(a) for a in A]


class TestCrossEntropy:
    def test_saturated(self):
        assert cross_entropy(np.array([[1000.0, 0.0]]), np.array([0])) == pytest.approx(0.0, abs=1e-12)

    def test_uniform(self):
        assert cross_entropy(np.zeros((3, 2)), np.array([0, 1, 0])) == pytest.approx(math.log(2), abs=1e-15)

    def test_naive_oracle(self, rng):
        logits = rng.normal(size=(4, 3))
        y = np.array([0, 2, 1, 2])
        p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        want = -np.mean(np.log(p[np.arange(4), y]))
        assert cross_entropy(logits, y) == pytest.approx(want, abs=1e-10)

    @pytest.mark.parametrize(
        "logits,labels",
        [(np.zeros((0, 2)), np.zeros(0)), (np.zeros((2, 1)), np.zeros(2)), (np.zeros((2, 2)), np.array([0, 2]))],
    )
    def test_errors(self, logits, labels):
        with pytest.raises(ValueError):
            cross_entropy(logits, labels)


class TestEdgeStd:
    def test_zero_edge(self, rng):
        model, X, _ = interior_model([2, 2], 0)
        layer = model.layers[0]
        layer.c_r[0, 1] = layer.c_B[0, 1] = 0.0
        assert edge_std(layer, X)[0, 1] == 0.0

    def test_single_sample(self, rng):
        model, X, _ = interior_model([3, 2], 1)
        np.testing.assert_array_equal(edge_std(model.layers[0], X[:1]), 0.0)

    def test_two_pass_oracle(self):
        model, X, _ = interior_model([2, 3], 2, n=10)
        stds, _ = attribution_loop(model, X)
        np.testing.assert_allclose(edge_std(model.layers[0], X), stds[0], atol=1e-10)


class TestAttribution:
    @pytest.mark.parametrize("shape", [(1, 1), (2, 1), (3, 2), (5, 4), (4, 5)])
    def test_single_layer_closed_form(self, shape):
        model, X, _ = interior_model(list(shape), sum(shape), n=20)
        rep = attribution(model, X)
        E = rep.edge_std[0]
        np.testing.assert_allclose(rep.input_scores, (E / E.sum(axis=0)).sum(axis=1), atol=1e-10)
        np.testing.assert_array_equal(rep.node_scores[-1], np.ones(shape[1]))

    @pytest.mark.parametrize("widths", [[3, 2], [2, 3, 2], [4, 3, 3, 2]])
    def test_loop_oracle(self, widths):
        model, X, _ = interior_model(widths, 3, n=12)
        _, A = attribution_loop(model, X)
        rep = attribution(model, X)
        for got, want in zip(rep.node_scores, A):
            np.testing.assert_allclose(got, want, atol=1e-10)

    def test_dead_edge(self):
        model, X, _ = interior_model([2, 1], 4)
        model.layers[0].c_r[0, 0] = model.layers[0].c_B[0, 0] = 0.0
        rep = attribution(model, X)
        np.testing.assert_allclose(rep.input_scores, [0.0, 1.0], atol=1e-15)

    def test_all_dead_column_contributes_nothing(self):
        model, X, _ = interior_model([2, 2], 5)
        model.layers[0].c_r[:, 1] = model.layers[0].c_B[:, 1] = 0.0
        rep = attribution(model, X)
        assert rep.input_scores.sum() == pytest.approx(1.0)

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_nonnegative(self, seed):
        model, X, _ = interior_model([3, 2, 2], seed)
        assert all(np.all(a >= 0) for a in attribution(model, X).node_scores)

    def test_normalized(self):
        model, X, _ = interior_model([4, 2], 6)
        assert attribution(model, X).normalized_input_scores().sum() == pytest.approx(1.0, abs=1e-12)


class TestRegularization:
    @staticmethod
    def report(scores):
        a = np.asarray(scores, dtype=float)
        return AttributionReport([np.zeros((a.size, 1))], [a, np.ones(1)], [a.sum(), 1.0])

    def test_zero_lambda(self):
        assert regularization(self.report([0.3, 0.7]), 0.0) == 0.0

    def test_point_mass(self):
        assert regularization(self.report([0.0, 0.8, 0.0]), 0.1) == pytest.approx(0.1 * 0.8, abs=1e-15)

    def test_two_equal(self):
        a, lam = 0.37, 0.02
        assert regularization(self.report([a, a]), lam) == pytest.approx(lam * (2 * a + math.log(2)), abs=1e-15)

    def test_dead_level(self):
        assert regularization(self.report([0.0, 0.0]), 0.5) == 0.0

    def test_lambda_zero_equals_cross_entropy(self):
        model, X, y = interior_model([3, 2], 7)
        assert total_loss(model, X, y, 0.0) == pytest.approx(cross_entropy(model_forward(model, X), y), abs=1e-12)


class TestGradients:
    @pytest.mark.parametrize("widths", [[2, 2], [3, 2], [2, 3, 2]])
    @pytest.mark.parametrize("lam", [0.0, 0.01])
    def test_finite_differences(self, widths, lam):
        model, X, y = interior_model(widths, 11)
        _, _, _, grads = loss_and_grad(model, X, y, lam)
        num = numeric_grads(model, X, y, lam)
        for analytic, numeric in zip(grads, num):
            for a, n in zip(analytic, numeric):
                assert relative_error(a, n).max() < 1e-4

    def test_loss_parts(self):
        model, X, y = interior_model([3, 2], 12)
        total, ce, reg, _ = loss_and_grad(model, X, y, 0.01)
        assert ce == pytest.approx(cross_entropy(model_forward(model, X), y), abs=1e-14)
        assert reg == pytest.approx(regularization(attribution(model, X), 0.01), abs=1e-14)
        assert total == pytest.approx(ce + reg, abs=1e-14)


class TestAdam:
    def test_first_step_is_signed_lr(self):
        p = np.array([1.0, -2.0, 0.5])
        Adam([p], lr=0.1).step([np.array([3.0, -0.2, 1e-3])])
        np.testing.assert_allclose(p, [0.9, -1.9, 0.4], atol=1e-5)

    def test_matches_reference_update(self, rng):
        p = rng.normal(size=4)
        ref = p.copy()
        opt = Adam([p], lr=0.05)
        m = v = np.zeros(4)
        for t in range(1, 6):
            g = rng.normal(size=4)
            opt.step([g])
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p, ref, atol=1e-14)


def toy_clusters(n=60, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = (np.where(y == 1, 2.0, -2.0) + 0.3 * rng.normal(size=n))[:, None]
    return X, y


class TestTrain:
    def test_separable_toy(self):
        X, y = toy_clusters()
        model, hist = fit_kan(X, y, 2, SplineConfig(k=3, G=5), TrainConfig(epochs=40))
        first = np.array(hist.loss[:10])
        assert np.all(np.diff(first) <= 1e-12)
        assert f1_score(predict(model, X), y, 2) == 1.0

    def test_zero_epochs_returns_same_model(self):
        X, y = toy_clusters()
        model = init_model([1, 2], SplineConfig(), samples=X)
        out, hist = train(model, X, y, TrainConfig(epochs=0))
        assert len(hist) == 0
        assert out is not model
        assert model_forward(out, X).tobytes() == model_forward(model, X).tobytes()

    def test_input_untouched(self):
        X, y = toy_clusters()
        model = init_model([1, 2], SplineConfig(), samples=X)
        before = model.to_json()
        train(model, X, y, TrainConfig(epochs=5))
        assert model.to_json() == before

    def test_deterministic(self, separable):
        X, y = separable
        cfg = TrainConfig(epochs=15, lam=0.005, seed=3)
        spline = SplineConfig(k=3, G=5)
        a = fit_kan(X, y, 2, spline, cfg, X, y)[1]
        b = fit_kan(X, y, 2, spline, cfg, X, y)[1]
        assert a.to_csv() == b.to_csv()
        assert len(a) == 15

    def test_adaptive_schedule(self):
        cfg = TrainConfig(epochs=200, adaptive=True, grid_update_every=10, grid_update_until=150)
        assert cfg.grid_update_epochs() == list(range(0, 150, 10))
        assert TrainConfig(epochs=5).grid_update_epochs() == []

    def test_adaptive_run_regrids(self):
        X, y = toy_clusters()
        model = init_model([1, 2], SplineConfig(k=3, G=5, grid_eps=0.0))
        out, _ = train(model, X, y, TrainConfig(epochs=3, adaptive=True, grid_update_until=3))
        assert out.layers[0].grid(0).span == pytest.approx((X.min(), X.max()))

    @pytest.mark.parametrize(
        "kw", [{"epochs": -1}, {"lam": -0.1}, {"epochs": 10, "adaptive": True, "grid_update_until": 20}]
    )
    def test_config_errors(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    def test_non_finite_aborts(self):
        X, y = toy_clusters()
        model = init_model([1, 2], SplineConfig(), samples=X)
        model.layers[0].c_r[0, 0] = np.inf
        with pytest.raises(NumericalError):
            train(model, X, y, TrainConfig(epochs=2))

    def test_history_csv(self):
        X, y = toy_clusters()
        _, hist = fit_kan(X, y, 2, SplineConfig(), TrainConfig(epochs=3))
        lines = hist.to_csv().splitlines()
        assert lines[0] == "epoch,loss,reg,val_f1"
        assert len(lines) == 4


class TestPredict:
    def test_argmax_and_tie(self, monkeypatch):
        import kanfault.training as tr

        monkeypatch.setattr(tr, "model_forward", lambda m, x: np.asarray(x, dtype=float))
        np.testing.assert_array_equal(predict(None, [[3, 1], [2, 2], [0, 5]]), [0, 0, 1])

    def test_row_loop_oracle(self):
        model, X, _ = interior_model([3, 4], 13, n=30)
        logits = model_forward(model, X)
        want = [max(range(4), key=lambda c: (logits[s, c], -c)) for s in range(30)]
        np.testing.assert_array_equal(predict(model, X), want)


class TestF1:
    def test_perfect(self):
        assert f1_score([0, 1, 2, 1], [0, 1, 2, 1], 3) == 1.0

    def test_all_positive(self):
        assert f1_score([1, 1, 1, 1], [0, 0, 1, 1], 2) == pytest.approx(1 / 3, abs=1e-15)

    @given(st.integers(0, 100_000), st.integers(2, 6), st.integers(1, 80))
    @settings(max_examples=80, deadline=None)
    def test_sklearn_oracle(self, seed, C, n):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, C, size=n)
        preds = rng.integers(0, C, size=n)
        want = sk_f1(labels, preds, labels=np.unique(labels), average="macro", zero_division=0)
        assert f1_score(preds, labels, C) == pytest.approx(want, abs=1e-12)

    def test_confusion_loop(self, rng):
        labels = rng.integers(0, 3, 50)
        preds = rng.integers(0, 3, 50)
        cm = np.zeros((3, 3), dtype=int)
        for a, b in zip(labels, preds):
            cm[a, b] += 1
        np.testing.assert_array_equal(confusion_matrix(labels, preds, 3), cm)

    @pytest.mark.parametrize("p,l", [([], []), ([0, 1], [0])])
    def test_errors(self, p, l):
        with pytest.raises(ValueError):
            f1_score(p, l, 2)
