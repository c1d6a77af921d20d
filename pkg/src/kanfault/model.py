"""KAN layers and models built from SiLU + B-spline activation edges.

Each edge computes ``phi(x) = c_r * silu(x) + c_B * sum_m c_m B_m(x)``; a layer
sums its edges over inputs and a model composes layers. Parameters are stored
as dense arrays per layer so forward and backward passes stay vectorized.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .preprocessing import Standardizer
from .splines import (
    SplineConfig,
    SplineGrid,
    basis_batch,
    fit_coefficients,
    make_grid,
    silu,
)

DEFAULT_SPAN = (-1.0, 1.0)


@dataclass
class ActivationEdge:
    c_r: float
    c_B: float
    coef: np.ndarray
    grid: SplineGrid

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=float)
        if self.coef.shape != (self.grid.G + self.grid.k,):
            raise ValueError(
                f"edge needs {self.grid.G + self.grid.k} coefficients, got {self.coef.shape}"
            )


@dataclass
class KanLayer:
    knots: np.ndarray  # (n_in, G + 2k + 1), one grid per input
    c_r: np.ndarray  # (n_in, n_out)
    c_B: np.ndarray  # (n_in, n_out)
    coef: np.ndarray  # (n_in, n_out, G + k)
    k: int

    def __post_init__(self):
        n_in, n_out, nb = self.coef.shape
        if self.knots.shape != (n_in, nb + self.k + 1):
            raise ValueError("knot table does not match the coefficient table")
        if self.c_r.shape != (n_in, n_out) or self.c_B.shape != (n_in, n_out):
            raise ValueError("edge weight tables must have shape (n_in, n_out)")

    @property
    def n_in(self) -> int:
        return self.coef.shape[0]

    @property
    def n_out(self) -> int:
        return self.coef.shape[1]

    @property
    def G(self) -> int:
        return self.coef.shape[2] - self.k

    def grid(self, i: int) -> SplineGrid:
        return SplineGrid(self.knots[i], self.k)

    def edge(self, i: int, j: int) -> ActivationEdge:
        return ActivationEdge(
            float(self.c_r[i, j]), float(self.c_B[i, j]), self.coef[i, j].copy(), self.grid(i)
        )

    def set_edge(self, i: int, j: int, edge: ActivationEdge) -> None:
        if not np.array_equal(edge.grid.knots, self.knots[i]):
            raise ValueError(f"edge grid differs from the grid shared by input {i}")
        self.c_r[i, j] = edge.c_r
        self.c_B[i, j] = edge.c_B
        self.coef[i, j] = edge.coef

    def copy(self) -> "KanLayer":
        return copy.deepcopy(self)


@dataclass
class KanModel:
    widths: list[int]
    layers: list[KanLayer]
    config: SplineConfig
    standardizer: Standardizer | None = None
    feature_names: list[str] | None = field(default=None)

    def __post_init__(self):
        if len(self.widths) < 2 or len(self.layers) != len(self.widths) - 1:
            raise ValueError("a model needs L >= 1 layers and L + 1 widths")
        for l, layer in enumerate(self.layers):
            if (layer.n_in, layer.n_out) != (self.widths[l], self.widths[l + 1]):
                raise ValueError(f"layer {l} shape does not match widths {self.widths}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    def copy(self) -> "KanModel":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "widths": [int(w) for w in self.widths],
            "spline": self.config.to_dict(),
            "layers": [
                {
                    "knots": layer.knots.tolist(),
                    "c_r": layer.c_r.tolist(),
                    "c_B": layer.c_B.tolist(),
                    "coef": layer.coef.tolist(),
                }
                for layer in self.layers
            ],
            "standardizer": None if self.standardizer is None else self.standardizer.to_dict(),
            "feature_names": self.feature_names,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "KanModel":
        config = SplineConfig(**doc["spline"])
        layers = [
            KanLayer(
                knots=np.array(ld["knots"], dtype=float),
                c_r=np.array(ld["c_r"], dtype=float),
                c_B=np.array(ld["c_B"], dtype=float),
                coef=np.array(ld["coef"], dtype=float),
                k=config.k,
            )
            for ld in doc["layers"]
        ]
        st = doc.get("standardizer")
        standardizer = None if st is None else Standardizer.from_arrays(st["mean"], st["std"])
        return cls(list(doc["widths"]), layers, config, standardizer, doc.get("feature_names"))

    def to_json(self) -> str:
        # repr-based float output is the shortest string that round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "KanModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "KanModel":
        return cls.from_json(Path(path).read_text())


def eval_edge(edge: ActivationEdge, x):
    x = np.asarray(x, dtype=float)
    B = basis_batch(x.reshape(-1, 1), edge.grid.knots[None, :], edge.grid.k)[:, 0, :]
    out = edge.c_r * silu(x.ravel()) + edge.c_B * (B @ edge.coef)
    return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)


def edge_outputs(layer: KanLayer, batch: np.ndarray) -> np.ndarray:
    """Per-edge activations, shape (N, n_in, n_out)."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != layer.n_in:
        raise ValueError(f"layer expects {layer.n_in} input columns, got shape {batch.shape}")
    B = basis_batch(batch, layer.knots, layer.k)
    spline = np.einsum("snb,nob->sno", B, layer.coef)
    return layer.c_r * silu(batch)[:, :, None] + layer.c_B * spline


def layer_forward(layer: KanLayer, batch) -> np.ndarray:
    return edge_outputs(layer, batch).sum(axis=1)


def model_forward(model: KanModel, batch, standardize: bool = False) -> np.ndarray:
    """Logits of ``batch``; set ``standardize`` when passing raw features."""
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.widths[0]:
        raise ValueError(f"model expects {model.widths[0]} input columns, got shape {x.shape}")
    if standardize:
        if model.standardizer is None:
            raise ValueError("model carries no standardizer")
        x = model.standardizer.transform(x)
    for layer in model.layers:
        x = layer_forward(layer, x)
    return x


def layer_inputs(model: KanModel, batch) -> list[np.ndarray]:
    """Inputs seen by each layer (the first entry is ``batch`` itself)."""
    xs = [np.asarray(batch, dtype=float)]
    for layer in model.layers[:-1]:
        xs.append(layer_forward(layer, xs[-1]))
    return xs


def _grid_knots(samples, config: SplineConfig) -> np.ndarray:
    if samples is None:
        lo, hi = DEFAULT_SPAN
        return make_grid(np.array([lo, hi]), SplineConfig(config.k, config.G, 1.0)).knots
    return make_grid(samples, config).knots


def init_layer(n_in, n_out, config: SplineConfig, rng, samples=None) -> KanLayer:
    """Fresh layer with small edges.

    c_r ~ U(-1/sqrt(n_in), 1/sqrt(n_in)), c_B = 1/sqrt(n_in), spline
    coefficients ~ N(0, 0.1 / (G + k)).
    """
    knots = np.stack(
        [_grid_knots(None if samples is None else samples[:, i], config) for i in range(n_in)]
    )
    nb = config.n_basis
    scale = 1.0 / np.sqrt(n_in)
    return KanLayer(
        knots=knots,
        c_r=rng.uniform(-scale, scale, size=(n_in, n_out)),
        c_B=np.full((n_in, n_out), scale),
        coef=rng.normal(0.0, 0.1 / nb, size=(n_in, n_out, nb)),
        k=config.k,
    )


def init_model(widths, config: SplineConfig, seed=0, samples=None, standardizer=None) -> KanModel:
    """Build a model whose grids cover ``samples`` layer by layer.

    Without samples every grid spans [-1, 1].
    """
    rng = np.random.default_rng(seed)
    widths = [int(w) for w in widths]
    layers = []
    x = None if samples is None else np.asarray(samples, dtype=float)
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        layer = init_layer(n_in, n_out, config, rng, x)
        layers.append(layer)
        if x is not None:
            x = layer_forward(layer, x)
    return KanModel(widths, layers, config, standardizer)


def refit_edge_to_grid(edge: ActivationEdge, new_grid: SplineGrid, samples) -> ActivationEdge:
    """Move an edge onto ``new_grid`` keeping its spline part close on ``samples``."""
    samples = np.asarray(samples, dtype=float).ravel()
    old_B = basis_batch(samples[:, None], edge.grid.knots[None, :], edge.grid.k)[:, 0, :]
    coef = fit_coefficients(samples, old_B @ edge.coef, new_grid)
    return ActivationEdge(edge.c_r, edge.c_B, coef, new_grid)


def regrid_layer(layer: KanLayer, inputs, config: SplineConfig) -> KanLayer:
    """Rebuild every input grid from ``inputs`` and refit all edges onto it."""
    inputs = np.asarray(inputs, dtype=float)
    old_B = basis_batch(inputs, layer.knots, layer.k)
    knots = np.empty((layer.n_in, config.G + 2 * config.k + 1))
    coef = np.empty((layer.n_in, layer.n_out, config.n_basis))
    for i in range(layer.n_in):
        grid = make_grid(inputs[:, i], config)
        targets = old_B[:, i, :] @ layer.coef[i].T  # (N, n_out)
        knots[i] = grid.knots
        coef[i] = fit_coefficients(inputs[:, i], targets, grid).T
    return KanLayer(knots, layer.c_r.copy(), layer.c_B.copy(), coef, config.k)
