"""Grid searches over (lambda, tau) for features and (G, g_e) for the model.

Both searches rank their cells with a two-objective Pareto front and break
ties with fixed rules, so a given seed always yields the same choice.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import KanFaultError
from .model import init_model
from .preprocessing import Standardizer
from .splines import SplineConfig
from .symbolic import SymbolicFitConfig, SymbolicModel, distill, symbolic_predict
from .training import (
    AttributionReport,
    TrainConfig,
    attribution,
    confusion_matrix,
    f1_score,
    predict,
    train,
)

log = logging.getLogger(__name__)


def build_grid(lo: float, hi: float, count: int) -> list[float]:
    """``count`` equidistant values from ``lo`` to ``hi`` inclusive."""
    if count < 2 or not lo < hi:
        raise ValueError("a grid needs count >= 2 and lo < hi")
    return [lo + j * (hi - lo) / (count - 1) for j in range(count)]


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# ---------------------------------------------------------------- Pareto


@dataclass(frozen=True)
class ParetoPoint:
    objectives: tuple[float, ...]
    payload: Any = None


def pareto_front(points: Sequence[ParetoPoint], senses=("max", "min")) -> list[ParetoPoint]:
    """Non-dominated points in input order; exact objective duplicates keep the first."""
    if not points:
        return []
    sign = np.array([1.0 if s == "max" else -1.0 for s in senses])
    if any(s not in ("max", "min") for s in senses):
        raise ValueError("senses must be 'max' or 'min'")
    V = np.array([p.objectives for p in points], dtype=float) * sign
    if V.shape[1] != sign.size:
        raise ValueError("every point needs one objective per sense")
    ge = (V[:, None, :] >= V[None, :, :]).all(axis=2)
    gt = (V[:, None, :] > V[None, :, :]).any(axis=2)
    dominated = (ge & gt).any(axis=0)  # column j dominated by some row i
    equal = (V[:, None, :] == V[None, :, :]).all(axis=2)
    earlier_twin = np.tril(equal, k=-1).any(axis=1)
    return [p for p, d, t in zip(points, dominated, earlier_twin) if not d and not t]


# ---------------------------------------------------------------- configs


@dataclass(frozen=True)
class FeatureSelectionConfig:
    lambda_values: tuple[float, ...] = tuple(build_grid(0.001, 0.01, 20))
    tau_values: tuple[float, ...] = tuple(build_grid(0.01, 0.1, 20))
    spline: SplineConfig = SplineConfig(k=3, G=5, grid_eps=0.05)
    selection_epochs: int = 80
    retrain_epochs: int = 80
    learning_rate: float = 0.05
    max_features: int = 10
    hidden: tuple[int, ...] = ()

    def __post_init__(self):
        for name in ("lambda_values", "tau_values"):
            vals = getattr(self, name)
            if len(vals) == 0 or any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{name} must be nonempty and strictly increasing")
        if self.max_features < 1:
            raise ValueError("max_features must be >= 1")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["spline"] = self.spline.to_dict()
        return doc


@dataclass(frozen=True)
class ModelSelectionConfig:
    G_values: tuple[int, ...] = (8, 10, 12, 15, 20, 30, 40, 50)
    ge_values: tuple[float, ...] = tuple(round(0.05 * j, 2) for j in range(21))
    k: int = 4
    epochs: int = 200
    learning_rate: float = 0.05
    grid_update_every: int = 10
    grid_update_until: int = 150
    hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.G_values or not self.ge_values:
            raise ValueError("model-selection grids must be nonempty")
        if self.grid_update_until > self.epochs:
            raise ValueError("grid_update_until cannot exceed epochs")

    def spline(self, G: int, grid_eps: float) -> SplineConfig:
        return SplineConfig(k=self.k, G=G, grid_eps=grid_eps)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            adaptive=True,
            grid_update_every=self.grid_update_every,
            grid_update_until=self.grid_update_until,
            seed=seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- results


@dataclass
class CandidateResult:
    lam: float
    tau: float
    lam_index: int
    tau_index: int
    selected: tuple[int, ...]
    validation_f1: float
    on_front: bool = False

    @property
    def n_features(self) -> int:
        return len(self.selected)

    def to_dict(self, names=None) -> dict:
        doc = asdict(self)
        doc["selected"] = list(self.selected)
        if names is not None:
            doc["selected_names"] = [names[i] for i in self.selected]
        return doc


@dataclass
class FeatureSelectionResult:
    candidates: list[CandidateResult]
    chosen: CandidateResult
    attributions: np.ndarray  # (n_lambda, K) input scores of the penalized runs
    feature_names: list[str] | None = None

    @property
    def front(self) -> list[CandidateResult]:
        return [c for c in self.candidates if c.on_front]

    def to_dict(self) -> dict:
        return {
            "candidates": [c.to_dict(self.feature_names) for c in self.candidates],
            "chosen": self.chosen.to_dict(self.feature_names),
            "attributions": self.attributions.tolist(),
            "feature_names": self.feature_names,
        }


@dataclass
class ModelCell:
    G: int
    grid_eps: float
    regular_f1: float
    symbolic_f1: float
    on_front: bool = False

    @property
    def average(self) -> float:
        return 0.5 * (self.regular_f1 + self.symbolic_f1)


@dataclass
class ModelSelectionResult:
    cells: list[ModelCell]
    chosen: ModelCell

    def to_dict(self) -> dict:
        return {"cells": [asdict(c) for c in self.cells], "chosen": asdict(self.chosen)}


@dataclass
class FinalReport:
    regular_f1: float
    symbolic_f1: float
    confusion_regular: np.ndarray
    confusion_symbolic: np.ndarray
    attributions: np.ndarray  # normalized, sums to 1
    model: Any
    symbolic: SymbolicModel
    columns: list[int] = field(default_factory=list)
    feature_names: list[str] | None = None


# ---------------------------------------------------------------- helpers


def _check_xy(X, y, n_classes):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"features {X.shape} and labels {y.shape} disagree")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return X, y


def _fit_scored(X_tr, y_tr, X_va, y_va, n_classes, hidden, spline, tcfg):
    widths = [X_tr.shape[1], *hidden, n_classes]
    model = init_model(widths, spline, seed=tcfg.seed, samples=X_tr)
    model, _ = train(model, X_tr, y_tr, tcfg)
    return model, f1_score(predict(model, X_va), y_va, n_classes)


# ---------------------------------------------------------------- phase 1


def choose_candidate(candidates: list[CandidateResult], max_features: int) -> CandidateResult:
    """Mark the Pareto front over (max F1, min count) and apply the tie-break."""
    pool = [c for c in candidates if c.n_features > 0]
    if not pool:
        raise KanFaultError("no (lambda, tau) cell kept any feature")
    front = pareto_front(
        [ParetoPoint((c.validation_f1, c.n_features), c) for c in pool], ("max", "min")
    )
    for p in front:
        p.payload.on_front = True
    members = [p.payload for p in front]
    if len(members) == 1:
        return members[0]
    capped = [c for c in members if c.n_features <= max_features]
    if capped:
        return max(capped, key=lambda c: c.validation_f1)
    return min(members, key=lambda c: c.n_features)


def select_features(
    X_train,
    y_train,
    X_val,
    y_val,
    n_classes: int,
    config: FeatureSelectionConfig = FeatureSelectionConfig(),
    seed: int = 0,
    feature_names=None,
) -> FeatureSelectionResult:
    """Threshold attributions of penalized runs and retrain on each selection.

    Inputs must already be standardized with training statistics. One
    penalized training per lambda is shared by every tau; retrains are
    cached per distinct feature subset.
    """
    X_tr, y_tr = _check_xy(X_train, y_train, n_classes)
    X_va, y_va = _check_xy(X_val, y_val, n_classes)
    K = X_tr.shape[1]
    started = time.perf_counter()
    retrained: dict[tuple[int, ...], float] = {}
    candidates = []
    scores = np.zeros((len(config.lambda_values), K))
    for li, lam in enumerate(config.lambda_values):
        tcfg = TrainConfig(
            epochs=config.selection_epochs,
            learning_rate=config.learning_rate,
            lam=lam,
            seed=_derive_seed(seed, 1, li),
        )
        model = init_model([K, *config.hidden, n_classes], config.spline, tcfg.seed, X_tr)
        model, _ = train(model, X_tr, y_tr, tcfg)
        scores[li] = attribution(model, X_tr).input_scores
        for ti, tau in enumerate(config.tau_values):
            subset = tuple(int(i) for i in np.flatnonzero(scores[li] >= tau))
            if not subset:
                f1 = 0.0
            elif subset in retrained:
                f1 = retrained[subset]
            else:
                rcfg = TrainConfig(
                    epochs=config.retrain_epochs,
                    learning_rate=config.learning_rate,
                    seed=_derive_seed(seed, 2, *subset),
                )
                _, f1 = _fit_scored(
                    X_tr[:, subset], y_tr, X_va[:, subset], y_va, n_classes,
                    config.hidden, config.spline, rcfg,
                )
                retrained[subset] = f1
            candidates.append(CandidateResult(lam, tau, li, ti, subset, f1))
        log.info("lambda %d/%d done (%d distinct subsets so far)",
                 li + 1, len(config.lambda_values), len(retrained))
    chosen = choose_candidate(candidates, config.max_features)
    log.info("feature selection: %d features, F1 %.4f (%.1fs)",
             chosen.n_features, chosen.validation_f1, time.perf_counter() - started)
    names = None if feature_names is None else list(feature_names)
    return FeatureSelectionResult(candidates, chosen, scores, names)


# ---------------------------------------------------------------- phase 2


def choose_cell(cells: list[ModelCell]) -> ModelCell:
    front = pareto_front(
        [ParetoPoint((c.regular_f1, c.symbolic_f1), c) for c in cells], ("max", "max")
    )
    for p in front:
        p.payload.on_front = True
    members = [p.payload for p in front]
    # max keeps the first maximum, i.e. grid order among equal averages
    return max(members, key=lambda c: c.average)


def select_model(
    X_train,
    y_train,
    X_val,
    y_val,
    n_classes: int,
    config: ModelSelectionConfig = ModelSelectionConfig(),
    symbolic_config: SymbolicFitConfig = SymbolicFitConfig(),
    seed: int = 0,
) -> ModelSelectionResult:
    """Score every (G, g_e) on validation F1 of the trained and distilled model."""
    X_tr, y_tr = _check_xy(X_train, y_train, n_classes)
    X_va, y_va = _check_xy(X_val, y_val, n_classes)
    started = time.perf_counter()
    cells = []
    for gi, G in enumerate(config.G_values):
        for ei, ge in enumerate(config.ge_values):
            tcfg = config.train_config(_derive_seed(seed, 3, gi, ei))
            model, reg_f1 = _fit_scored(
                X_tr, y_tr, X_va, y_va, n_classes, config.hidden, config.spline(G, ge), tcfg
            )
            try:
                sym = distill(model, X_tr, symbolic_config)
                sym_f1 = f1_score(symbolic_predict(sym, X_va), y_va, n_classes)
            except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                log.warning("symbolic fit failed for G=%s g_e=%s: %s", G, ge, exc)
                sym_f1 = 0.0
            cells.append(ModelCell(int(G), float(ge), reg_f1, sym_f1))
    chosen = choose_cell(cells)
    log.info("model selection: G=%d g_e=%.2f (regular %.4f, symbolic %.4f, %.1fs)",
             chosen.G, chosen.grid_eps, chosen.regular_f1, chosen.symbolic_f1,
             time.perf_counter() - started)
    return ModelSelectionResult(cells, chosen)


# ---------------------------------------------------------------- phase 3


def finalize(
    X_train,
    y_train,
    X_val,
    y_val,
    X_eval,
    y_eval,
    n_classes: int,
    G: int,
    grid_eps: float,
    config: ModelSelectionConfig = ModelSelectionConfig(),
    symbolic_config: SymbolicFitConfig = SymbolicFitConfig(),
    seed: int = 0,
    feature_names=None,
) -> FinalReport:
    """Train on train + validation and evaluate both model forms.

    Inputs are raw (unstandardized) feature columns; the union is
    standardized with its own statistics, which the returned models carry.
    """
    X_fit = np.vstack([np.asarray(X_train, float), np.asarray(X_val, float)])
    y_fit = np.concatenate([np.asarray(y_train, int), np.asarray(y_val, int)])
    X_fit, y_fit = _check_xy(X_fit, y_fit, n_classes)
    X_ev, y_ev = _check_xy(X_eval, y_eval, n_classes)
    st = Standardizer().fit(X_fit)
    Z_fit, Z_ev = st.transform(X_fit), st.transform(X_ev)
    tcfg = config.train_config(_derive_seed(seed, 4))
    model = init_model(
        [Z_fit.shape[1], *config.hidden, n_classes], config.spline(G, grid_eps), tcfg.seed, Z_fit,
        standardizer=st,
    )
    model, _ = train(model, Z_fit, y_fit, tcfg)
    names = None if feature_names is None else list(feature_names)
    model.feature_names = names
    sym = distill(model, Z_fit, symbolic_config)
    reg_pred = predict(model, Z_ev)
    sym_pred = symbolic_predict(sym, Z_ev)
    report: AttributionReport = attribution(model, Z_fit)
    return FinalReport(
        regular_f1=f1_score(reg_pred, y_ev, n_classes),
        symbolic_f1=f1_score(sym_pred, y_ev, n_classes),
        confusion_regular=confusion_matrix(y_ev, reg_pred, n_classes),
        confusion_symbolic=confusion_matrix(y_ev, sym_pred, n_classes),
        attributions=report.normalized_input_scores(),
        model=model,
        symbolic=sym,
        feature_names=names,
    )
