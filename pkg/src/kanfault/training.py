"""Full-batch Adam training with the attribution-based sparsity penalty.

The penalty is differentiated exactly: edge standard deviations are smooth
functions of the edge outputs, so its gradient flows back through the
attribution recursion into every edge parameter.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .model import (
    KanModel,
    edge_outputs,
    init_model,
    layer_inputs,
    model_forward,
    regrid_layer,
)
from .splines import SplineConfig, basis_batch, silu, silu_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    learning_rate: float = 0.05
    lam: float = 0.0
    adaptive: bool = False
    grid_update_every: int = 10
    grid_update_until: int = 150
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.adaptive:
            if self.grid_update_every < 1:
                raise ValueError("grid_update_every must be >= 1")
            if self.grid_update_until > self.epochs:
                raise ValueError("grid_update_until cannot exceed epochs")

    def grid_update_epochs(self) -> list[int]:
        if not self.adaptive:
            return []
        return list(range(0, self.grid_update_until, self.grid_update_every))


@dataclass
class AttributionReport:
    """Edge deviations E (per layer), node scores A (L + 1 levels), level sums."""

    edge_std: list[np.ndarray]
    node_scores: list[np.ndarray]
    layer_sums: list[float]

    @property
    def input_scores(self) -> np.ndarray:
        return self.node_scores[0]

    def normalized_input_scores(self) -> np.ndarray:
        a = self.node_scores[0]
        total = a.sum()
        return a / total if total > 0 else np.zeros_like(a)


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    reg: list[float] = field(default_factory=list)
    val_f1: list[float | None] = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "loss", "reg", "val_f1"])
        for e, (lo, rg, vf) in enumerate(zip(self.loss, self.reg, self.val_f1)):
            writer.writerow([e, repr(lo), repr(rg), "" if vf is None else repr(vf)])
        return buf.getvalue()


# ---------------------------------------------------------------- losses


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels) -> float:
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if logits.shape[0] == 0:
        raise ValueError("cross entropy of an empty batch")
    if logits.shape[1] < 2:
        raise ValueError("need at least two classes")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("labels out of range")
    return float(-_log_softmax(logits)[np.arange(labels.size), labels].mean())


def edge_std(layer, inputs) -> np.ndarray:
    """Population std over the batch of every edge activation, shape (n_in, n_out)."""
    return edge_outputs(layer, inputs).std(axis=0)


def _scores_from_std(stds):
    L = len(stds)
    scores = [None] * (L + 1)
    scores[L] = np.ones(stds[-1].shape[1])
    for l in range(L - 1, -1, -1):
        S = stds[l].sum(axis=0)
        w = np.divide(scores[l + 1], S, out=np.zeros_like(S), where=S > 0)
        scores[l] = stds[l] @ w
    return scores


def attribution(model: KanModel, inputs) -> AttributionReport:
    """Backward score recursion from unit output scores down to the inputs."""
    stds = [edge_std(layer, x) for layer, x in zip(model.layers, layer_inputs(model, inputs))]
    scores = _scores_from_std(stds)
    return AttributionReport(stds, scores, [float(a.sum()) for a in scores])


def _level_penalty(a) -> float:
    total = a.sum()
    if total <= 0:
        return 0.0
    r = a[a > 0] / total
    return float(total - np.sum(r * np.log(r)))


def regularization(report: AttributionReport, lam: float) -> float:
    """``lam * sum_l [A_l + entropy(A_{l,i} / A_l)]`` over the L input levels."""
    if lam == 0:
        return 0.0
    L = len(report.edge_std)
    return lam * sum(_level_penalty(report.node_scores[l]) for l in range(L))


# ---------------------------------------------------------------- gradients


class _InputBasis:
    """First-layer basis and SiLU values, reused while the grid is unchanged."""

    def __init__(self):
        self.knots = None

    def get(self, layer, X):
        if self.knots is None or not np.array_equal(self.knots, layer.knots):
            self.knots = layer.knots.copy()
            self.B = basis_batch(X, layer.knots, layer.k)
            self.r = silu(X)
        return self.B, self.r


def _forward_cache(model, X, first=None):
    caches = []
    x = X
    for l, layer in enumerate(model.layers):
        if l > 0:
            B, dB = basis_batch(x, layer.knots, layer.k, derivative=True)
            r = silu(x)
        elif first is not None:
            (B, r), dB = first.get(layer, x), None
        else:
            B, dB, r = basis_batch(x, layer.knots, layer.k), None, silu(x)
        spline = np.einsum("snb,nob->sno", B, layer.coef)
        phi = layer.c_r * r[:, :, None] + layer.c_B * spline
        caches.append((x, B, dB, r, spline, phi))
        x = phi.sum(axis=1)
    return x, caches


def _penalty_grads(stds, lam):
    """d penalty / d E for every layer."""
    L = len(stds)
    scores = _scores_from_std(stds)
    g_scores = [np.zeros_like(a) for a in scores]
    g_std = [None] * L
    value = 0.0
    for l in range(L):
        a = scores[l]
        total = a.sum()
        g = np.ones_like(a)
        if total > 0:
            pos = a > 0
            r = a[pos] / total
            H = -np.sum(r * np.log(r))
            value += total + H
            # d entropy / d A_i = (-ln r_i - H) / total; zero scores take the 0 subgradient
            g[pos] += (-np.log(r) - H) / total
        g_scores[l] += lam * g
        S = stds[l].sum(axis=0)
        live = S > 0
        w = np.divide(scores[l + 1], S, out=np.zeros_like(S), where=live)
        ga = g_scores[l]
        gE = np.outer(ga, w)
        u = ga @ stds[l]
        gE[:, live] -= (u[live] * scores[l + 1][live] / S[live] ** 2)[None, :]
        g_scores[l + 1][live] += u[live] / S[live]
        g_std[l] = gE
    return lam * value, g_std


def loss_and_grad(model: KanModel, X, y, lam: float = 0.0, _first=None):
    """Total loss, its cross-entropy and penalty parts, and per-layer gradients.

    Gradients are returned as ``[(g_c_r, g_c_B, g_coef), ...]`` per layer.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    N = X.shape[0]
    logits, caches = _forward_cache(model, X, _first)
    logp = _log_softmax(logits)
    ce = float(-logp[np.arange(N), y].mean())
    gy = np.exp(logp)
    gy[np.arange(N), y] -= 1.0
    gy /= N

    reg = 0.0
    g_phi_reg = [None] * model.depth
    if lam > 0:
        phis = [c[5] for c in caches]
        stds = [phi.std(axis=0) for phi in phis]
        reg, g_std = _penalty_grads(stds, lam)
        for l, (phi, E, gE) in enumerate(zip(phis, stds, g_std)):
            scale = np.divide(gE, N * E, out=np.zeros_like(E), where=E > 0)
            g_phi_reg[l] = (phi - phi.mean(axis=0)) * scale

    grads = [None] * model.depth
    for l in range(model.depth - 1, -1, -1):
        layer = model.layers[l]
        x, B, dB, r, spline, phi = caches[l]
        g_phi = np.broadcast_to(gy[:, None, :], phi.shape)
        if g_phi_reg[l] is not None:
            g_phi = g_phi + g_phi_reg[l]
        g_cr = np.einsum("sio,si->io", g_phi, r)
        g_cb = np.einsum("sio,sio->io", g_phi, spline)
        g_coef = np.einsum("sio,sib->iob", g_phi * layer.c_B, B)
        grads[l] = (g_cr, g_cb, g_coef)
        if l > 0:
            d_spline = np.einsum("sib,iob->sio", dB, layer.coef)
            d_phi = layer.c_r * silu_grad(x)[:, :, None] + layer.c_B * d_spline
            gy = np.einsum("sio,sio->si", g_phi, d_phi)
    return ce + reg, ce, reg, grads


def total_loss(model: KanModel, X, y, lam: float = 0.0) -> float:
    logits = model_forward(model, X)
    value = cross_entropy(logits, y)
    if lam > 0:
        value += regularization(attribution(model, X), lam)
    return value


# ---------------------------------------------------------------- optimizer


class Adam:
    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _params(model):
    return [arr for layer in model.layers for arr in (layer.c_r, layer.c_B, layer.coef)]


def _regrid_in_place(model, X):
    x = X
    for layer in model.layers:
        new = regrid_layer(layer, x, model.config)
        layer.knots[...] = new.knots
        layer.coef[...] = new.coef
        x = (
            layer.c_r * silu(x)[:, :, None]
            + layer.c_B * np.einsum("snb,nob->sno", basis_batch(x, layer.knots, layer.k), layer.coef)
        ).sum(axis=1)


def train(model: KanModel, features, labels, config: TrainConfig, X_val=None, y_val=None):
    """Minimize cross-entropy plus the weighted penalty with full-batch Adam.

    Returns a trained copy of ``model`` and its history; the input model is
    left untouched. Adaptive runs rebuild every layer grid from its current
    inputs at the scheduled epochs before taking that epoch's step.
    """
    model = model.copy()
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    history = TrainHistory()
    if config.epochs == 0:
        return model, history
    params = _params(model)
    opt = Adam(params, lr=config.learning_rate)
    regrid_at = set(config.grid_update_epochs())
    first = _InputBasis()
    n_classes = model.widths[-1]
    for epoch in range(config.epochs):
        if epoch in regrid_at:
            _regrid_in_place(model, X)
        loss, _, reg, grads = loss_and_grad(model, X, y, config.lam, first)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss {loss} at epoch {epoch}")
        opt.step([g for triple in grads for g in triple])
        val = None
        if X_val is not None:
            val = f1_score(predict(model, X_val), y_val, n_classes)
        history.loss.append(float(loss))
        history.reg.append(float(reg))
        history.val_f1.append(val)
    if not all(np.all(np.isfinite(p)) for p in params):
        raise NumericalError("non-finite parameters after training")
    return model, history


def fit_kan(X, y, n_classes, spline: SplineConfig, config: TrainConfig, X_val=None, y_val=None):
    """Initialize a shallow model on ``X`` and train it."""
    X = np.asarray(X, dtype=float)
    model = init_model([X.shape[1], n_classes], spline, seed=config.seed, samples=X)
    return train(model, X, y, config, X_val, y_val)


# ---------------------------------------------------------------- evaluation


def predict(model: KanModel, features) -> np.ndarray:
    # argmax returns the first maximum, so ties go to the lowest class index
    return np.argmax(model_forward(model, features), axis=1)


def confusion_matrix(labels, predictions, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (np.asarray(labels, dtype=int), np.asarray(predictions, dtype=int)), 1)
    return cm


def f1_score(predictions, labels, n_classes: int) -> float:
    """Macro F1 over the classes present in ``labels``."""
    predictions = np.asarray(predictions, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise ValueError("F1 of an empty set")
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    cm = confusion_matrix(labels, predictions, n_classes)
    tp = np.diag(cm).astype(float)
    denom = 2 * tp + (cm.sum(axis=0) - tp) + (cm.sum(axis=1) - tp)
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    present = np.unique(labels)
    return float(per_class[present].mean())
