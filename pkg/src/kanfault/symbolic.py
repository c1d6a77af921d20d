"""Distill trained activations into affine-wrapped closed-form functions.

Every edge is replaced by ``c * f(a * x + b) + d`` with ``f`` drawn from a
fixed library of 24 univariate functions. ``(a, b)`` are found by a
coarse-to-fine lattice search, ``(c, d)`` by ordinary least squares, and the
winning function minimizes ``exp(alpha * C) + beta * ln(1 - R^2)``. The
winner's ``(a, b)`` is then polished off-lattice by bounded least squares.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit

from .model import KanModel, edge_outputs, layer_inputs
from .preprocessing import Standardizer

log = logging.getLogger(__name__)

DOMAIN_EPS = 1e-8


@dataclass(frozen=True)
class SymbolicFunction:
    name: str
    complexity: int
    fn: Callable[[np.ndarray], np.ndarray]
    template: str  # format string with {z}
    domain: str = "all"  # "all", "positive", "nonnegative" or "nonzero"
    parity: str = ""  # "even" / "odd" symmetry used when rendering

    def feasible(self, z) -> np.ndarray:
        """Boolean mask over the last axis reduced: True where every sample is in the domain."""
        if self.domain == "positive":
            ok = z > DOMAIN_EPS
        elif self.domain == "nonnegative":
            ok = z >= 0
        elif self.domain == "nonzero":
            ok = np.abs(z) > DOMAIN_EPS
        else:
            return np.ones(z.shape[:-1], dtype=bool)
        return ok.all(axis=-1)

    def clamp(self, z):
        """Project ``z`` onto the domain boundary; returns (z, number of clamped entries)."""
        if self.domain == "positive":
            bad = z <= DOMAIN_EPS
            z = np.where(bad, DOMAIN_EPS, z)
        elif self.domain == "nonnegative":
            bad = z < 0
            z = np.where(bad, 0.0, z)
        elif self.domain == "nonzero":
            bad = np.abs(z) <= DOMAIN_EPS
            z = np.where(bad, np.where(z < 0, -DOMAIN_EPS, DOMAIN_EPS), z)
        else:
            return z, 0
        return z, int(np.count_nonzero(bad))

    def __call__(self, z):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self.fn(np.asarray(z, dtype=float))


def _pow(n):
    def f(z):
        out = z * z
        for _ in range(n - 2):
            out = out * z
        return out
    return f


def _inv_pow(n):
    def f(z):
        return 1.0 / (_pow(n)(z) if n > 1 else z)
    return f


LIBRARY: list[SymbolicFunction] = [
    SymbolicFunction("zero", 1, lambda z: np.zeros_like(z), "0"),
    SymbolicFunction("x", 1, lambda z: z, "{z}", parity="odd"),
    SymbolicFunction("exp", 2, np.exp, "exp({z})"),
    SymbolicFunction("log", 2, np.log, "log({z})", domain="positive"),
    SymbolicFunction("abs", 2, np.abs, "abs({z})", parity="even"),
    SymbolicFunction("sin", 2, np.sin, "sin({z})", parity="odd"),
    SymbolicFunction("cos", 2, np.cos, "cos({z})", parity="even"),
    SymbolicFunction("tanh", 2, np.tanh, "tanh({z})", parity="odd"),
    SymbolicFunction("sgn", 2, np.sign, "sgn({z})", parity="odd"),
    SymbolicFunction("arctan", 2, np.arctan, "arctan({z})", parity="odd"),
    SymbolicFunction("cosh", 2, np.cosh, "cosh({z})", parity="even"),
    SymbolicFunction("sqrt", 3, np.sqrt, "sqrt({z})", domain="nonnegative"),
    SymbolicFunction("x^2", 3, _pow(2), "({z})^2", parity="even"),
    SymbolicFunction("x^3", 3, _pow(3), "({z})^3", parity="odd"),
    SymbolicFunction("x^4", 3, _pow(4), "({z})^4", parity="even"),
    SymbolicFunction("x^5", 3, _pow(5), "({z})^5", parity="odd"),
    SymbolicFunction("1/x", 3, _inv_pow(1), "1/({z})", domain="nonzero", parity="odd"),
    SymbolicFunction("1/x^2", 5, _inv_pow(2), "1/({z})^2", domain="nonzero", parity="even"),
    SymbolicFunction("1/x^3", 5, _inv_pow(3), "1/({z})^3", domain="nonzero", parity="odd"),
    SymbolicFunction("1/x^4", 5, _inv_pow(4), "1/({z})^4", domain="nonzero", parity="even"),
    SymbolicFunction("1/x^5", 5, _inv_pow(5), "1/({z})^5", domain="nonzero", parity="odd"),
    SymbolicFunction("1/sqrt(x)", 5, lambda z: 1.0 / np.sqrt(z), "1/sqrt({z})", domain="positive"),
    SymbolicFunction("gaussian", 6, lambda z: np.exp(-z * z), "exp(-({z})^2)", parity="even"),
    SymbolicFunction("sigmoid", 6, expit, "sigmoid({z})"),
]
FUNCTIONS = {f.name: f for f in LIBRARY}


@dataclass(frozen=True)
class SymbolicFitConfig:
    alpha: float = 0.05
    beta: float = 1.5
    ab_bound: float = 10.0
    lattice: int = 21
    rounds: int = 3
    shrink: float = 5.0
    r2_floor: float = 1e-12
    max_samples: int | None = 512
    search_samples: int | None = 128  # lattice search only; (c, d) and R^2 use max_samples
    refine: bool = True  # off-lattice polish of the winning (a, b)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.lattice < 2 or self.rounds < 1:
            raise ValueError("lattice needs >= 2 points and >= 1 round")


@dataclass
class FittedEdge:
    function: SymbolicFunction
    a: float
    b: float
    c: float
    d: float
    r2: float
    cost: float

    def __call__(self, x, diagnostics: dict | None = None):
        z = self.a * np.asarray(x, dtype=float) + self.b
        z, clamped = self.function.clamp(z)
        if clamped and diagnostics is not None:
            diagnostics["clamped"] = diagnostics.get("clamped", 0) + clamped
        return self.c * self.function(z) + self.d

    def to_dict(self) -> dict:
        return {
            "function": self.function.name,
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "d": self.d,
            "r2": self.r2,
            "complexity": self.function.complexity,
            "cost": self.cost,
        }


@dataclass
class SymbolicModel:
    widths: list[int]
    edges: list[list[list[FittedEdge]]]  # edges[l][i][j]
    standardizer: Standardizer | None = None
    feature_names: list[str] | None = field(default=None)

    def __post_init__(self):
        if len(self.edges) != len(self.widths) - 1:
            raise ValueError("symbolic model needs one edge table per layer")
        for l, layer in enumerate(self.edges):
            if len(layer) != self.widths[l] or any(len(r) != self.widths[l + 1] for r in layer):
                raise ValueError(f"edge table {l} does not match widths {self.widths}")

    def to_dict(self) -> dict:
        return {
            "widths": [int(w) for w in self.widths],
            "edges": [
                {"layer": l, "i": i, "j": j, **e.to_dict()}
                for l, layer in enumerate(self.edges)
                for i, row in enumerate(layer)
                for j, e in enumerate(row)
            ],
            "standardizer": None if self.standardizer is None else self.standardizer.to_dict(),
            "feature_names": self.feature_names,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "SymbolicModel":
        widths = list(doc["widths"])
        edges = [
            [[None] * widths[l + 1] for _ in range(widths[l])] for l in range(len(widths) - 1)
        ]
        for e in doc["edges"]:
            edges[e["layer"]][e["i"]][e["j"]] = FittedEdge(
                FUNCTIONS[e["function"]], e["a"], e["b"], e["c"], e["d"], e["r2"], e["cost"]
            )
        st = doc.get("standardizer")
        standardizer = None if st is None else Standardizer.from_arrays(st["mean"], st["std"])
        return cls(widths, edges, standardizer, doc.get("feature_names"))

    @classmethod
    def from_json(cls, text: str) -> "SymbolicModel":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- fitting


def cost(complexity: int, r2: float, config: SymbolicFitConfig = SymbolicFitConfig()) -> float:
    return math.exp(config.alpha * complexity) + config.beta * math.log(
        max(1.0 - r2, config.r2_floor)
    )


def _lattice_r2(F, y):
    """R^2 of the best affine map of each row of ``F`` onto ``y``; also (c, d)."""
    fm = F.mean(axis=-1, keepdims=True)
    Fc = F - fm
    yc = y - y.mean()
    var_f = np.einsum("...n,...n->...", Fc, Fc)
    cov = Fc @ yc
    ss_tot = yc @ yc
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(var_f > 0, cov / var_f, 0.0)
        r2 = np.where(var_f > 0, cov * c / ss_tot, 0.0)
    d = y.mean() - c * fm[..., 0]
    return r2, c, d


def _is_constant(y) -> bool:
    yc = y - y.mean()
    return float(yc @ yc) < 1e-12


def _solve_cd(f_vals, y):
    """Exact least-squares (c, d) and R^2 for one candidate."""
    if _is_constant(y):
        # every candidate reproduces a constant exactly with c = 0
        return 0.0, float(y.mean()), 1.0
    A = np.column_stack([f_vals, np.ones_like(f_vals)])
    (c, d), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (c * f_vals + d)
    ss_res = float(resid @ resid)
    yc = y - y.mean()
    ss_tot = float(yc @ yc)
    return float(c), float(d), 1.0 - ss_res / ss_tot


def _search_ab(func: SymbolicFunction, x, y, config: SymbolicFitConfig):
    """Coarse-to-fine lattice search for (a, b); returns the best pair or None."""
    center = np.zeros(2)
    half = config.ab_bound
    best = None
    for _ in range(config.rounds):
        # refined boxes stay inside the outer search bounds
        bound = config.ab_bound
        a_vals = np.unique(np.clip(np.linspace(center[0] - half, center[0] + half, config.lattice), -bound, bound))
        b_vals = np.unique(np.clip(np.linspace(center[1] - half, center[1] + half, config.lattice), -bound, bound))
        A, Bv = np.meshgrid(a_vals, b_vals, indexing="ij")
        A, Bv = A.ravel(), Bv.ravel()
        Z = A[:, None] * x[None, :] + Bv[:, None]
        keep = func.feasible(Z)
        if not keep.all():
            A, Bv, Z = A[keep], Bv[keep], Z[keep]
        F = func(Z)
        finite = np.isfinite(F).all(axis=1)
        if not finite.all():
            A, Bv, F = A[finite], Bv[finite], F[finite]
        if A.size == 0:
            if best is None:
                return None
            break
        r2, _, _ = _lattice_r2(F, y)
        r2 = np.where(np.isfinite(r2), r2, -np.inf)
        k = int(np.argmax(r2))
        cand_a, cand_b = A[k], Bv[k]
        if best is None or r2[k] >= best[2]:
            best = (cand_a, cand_b, r2[k])
        center = np.array([best[0], best[1]])
        half /= config.shrink
    return best[0], best[1]


def _subsample(x, y, limit):
    if limit is None or x.size <= limit:
        return x, y
    order = np.argsort(x, kind="stable")
    pick = order[np.linspace(0, x.size - 1, limit).round().astype(int)]
    return x[pick], y[pick]


def fit_function(func: SymbolicFunction, xs, ys, config: SymbolicFitConfig = SymbolicFitConfig()):
    """Best affine-wrapped fit of one library function, or None when infeasible."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if func.name == "zero":
        r2 = 1.0 if _is_constant(y) else 0.0
        return FittedEdge(func, 0.0, 0.0, 0.0, float(y.mean()), r2, cost(func.complexity, r2, config))
    if func.name == "x":
        ab = (1.0, 0.0)
    else:
        ab = _search_ab(func, *_subsample(x, y, config.search_samples), config)
        if ab is None:
            return None
    a, b = float(ab[0]), float(ab[1])
    f_vals = func(a * x + b)
    if not np.all(np.isfinite(f_vals)):
        return None
    c, d, r2 = _solve_cd(f_vals, y)
    return FittedEdge(func, a, b, c, d, r2, cost(func.complexity, r2, config))


def fit_edge(xs, ys, config: SymbolicFitConfig = SymbolicFitConfig(), library=None) -> FittedEdge:
    """Minimum-cost library fit of the samples ``(xs, ys)``."""
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    if x.shape != y.shape or x.size < 4:
        raise ValueError("fit_edge needs matching xs, ys with at least 4 samples")
    if _is_constant(y):
        return FittedEdge(FUNCTIONS["zero"], 0.0, 0.0, 0.0, float(y.mean()), 1.0,
                          cost(FUNCTIONS["zero"].complexity, 1.0, config))
    x, y = _subsample(x, y, config.max_samples)
    best = None
    for func in library or LIBRARY:
        fit = fit_function(func, x, y, config)
        if fit is not None and (best is None or fit.cost < best.cost):
            best = fit
    if best is None:
        log.warning("no feasible symbolic candidate; falling back to linear")
        best = fit_function(FUNCTIONS["x"], x, y, config)
    if config.refine:
        best = _refine(best, x, y, config)
    return best


def _refine(fit: FittedEdge, x, y, config: SymbolicFitConfig) -> FittedEdge:
    """Polish ``(a, b)`` by variable projection; keep the result only if R^2 improves."""
    func = fit.function
    if func.name in ("zero", "x") or fit.r2 >= 1.0:
        return fit
    bound = config.ab_bound
    scale = float(np.abs(y - y.mean()).max())
    # stay within one final-round lattice cell: the polish removes quantization,
    # it must not slide towards a degenerate limit (a -> 0 with c -> inf)
    step = 2 * bound / config.shrink ** (config.rounds - 1) / (config.lattice - 1)
    lo = np.maximum([fit.a - step, fit.b - step], -bound)
    hi = np.minimum([fit.a + step, fit.b + step], bound)

    def residual(ab):
        z = ab[0] * x + ab[1]
        f = func(z)
        if not (func.feasible(z[None, :])[0] and np.all(np.isfinite(f))):
            return np.full(x.size, scale)
        c, d, _ = _solve_cd(f, y)
        return y - (c * f + d)

    start = np.clip([fit.a, fit.b], lo, hi)
    try:
        sol = least_squares(residual, start, bounds=(lo, hi), xtol=1e-12, ftol=1e-12, max_nfev=200)
    except ValueError:
        return fit
    a, b = (float(v) for v in sol.x)
    z = a * x + b
    f_vals = func(z)
    if not (func.feasible(z[None, :])[0] and np.all(np.isfinite(f_vals))):
        return fit
    c, d, r2 = _solve_cd(f_vals, y)
    if not r2 > fit.r2:
        return fit
    return FittedEdge(func, a, b, c, d, r2, cost(func.complexity, r2, config))


def candidate_costs(xs, ys, config: SymbolicFitConfig = SymbolicFitConfig()) -> dict[str, FittedEdge]:
    """Per-function best fits, keyed by function name (infeasible ones omitted)."""
    x = np.asarray(xs, dtype=float).ravel()
    y = np.asarray(ys, dtype=float).ravel()
    x, y = _subsample(x, y, config.max_samples)
    out = {}
    for func in LIBRARY:
        fit = fit_function(func, x, y, config)
        if fit is not None:
            out[func.name] = fit
    return out


def distill(model: KanModel, inputs, config: SymbolicFitConfig = SymbolicFitConfig()) -> SymbolicModel:
    """Fit every edge on the activations it produces for ``inputs``."""
    edges = []
    for layer, x in zip(model.layers, layer_inputs(model, inputs)):
        phi = edge_outputs(layer, x)
        edges.append(
            [[fit_edge(x[:, i], phi[:, i, j], config) for j in range(layer.n_out)]
             for i in range(layer.n_in)]
        )
    return SymbolicModel(list(model.widths), edges, model.standardizer, model.feature_names)


# ---------------------------------------------------------------- evaluation


def symbolic_forward(model: SymbolicModel, batch, diagnostics: dict | None = None) -> np.ndarray:
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.widths[0]:
        raise ValueError(f"symbolic model expects {model.widths[0]} columns, got {x.shape}")
    for layer in model.edges:
        out = np.zeros((x.shape[0], len(layer[0])))
        for i, row in enumerate(layer):
            for j, edge in enumerate(row):
                out[:, j] += edge(x[:, i], diagnostics)
        x = out
    if diagnostics is not None and diagnostics.get("clamped"):
        log.warning("%d symbolic evaluations clamped to a domain boundary", diagnostics["clamped"])
    return x


def symbolic_predict(model: SymbolicModel, batch) -> np.ndarray:
    return np.argmax(symbolic_forward(model, batch), axis=1)


def decision_boundary_1d(model: SymbolicModel, interval=(-3.0, 5.0), n_scan: int = 10_000,
                         tol: float = 1e-10) -> list[float]:
    """Roots of ``y_1 - y_2`` for a one-input, two-output symbolic model."""
    if model.widths[0] != 1 or model.widths[-1] != 2:
        raise ValueError("decision_boundary_1d needs a model with 1 input and 2 outputs")

    def gap(x):
        y = symbolic_forward(model, np.atleast_1d(np.asarray(x, dtype=float))[:, None])
        return y[:, 0] - y[:, 1]

    xs = np.linspace(interval[0], interval[1], n_scan)
    g = gap(xs)
    if np.all(g == 0):
        log.warning("outputs coincide on the whole interval; no boundary defined")
        return []
    roots = []
    for k in np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0):
        lo, hi, glo = xs[k], xs[k + 1], g[k]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            gm = gap(mid)[0]
            if gm == 0:
                lo = hi = mid
                break
            if np.sign(gm) == np.sign(glo):
                lo, glo = mid, gm
            else:
                hi = mid
        roots.append(float(0.5 * (lo + hi)))
    roots.extend(float(xs[k]) for k in np.flatnonzero(g[1:-1] == 0) + 1)
    return sorted(roots)


# ---------------------------------------------------------------- rendering


def _num(v: float, precision: int) -> str:
    s = f"{abs(v):.{precision}f}"
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return s


def _is_zero(v, precision):
    return _num(v, precision) == "0"


def _affine(a, b, var, precision):
    """Text for ``b + a*var`` in the order used by hand-written formulas."""
    if _is_zero(a, precision):
        return _signed_const(b, precision)
    av = var if _num(a, precision) == "1" else f"{_num(a, precision)}*{var}"
    if _is_zero(b, precision):
        return f"-{av}" if a < 0 else av
    return f"{_signed_const(b, precision)} {'-' if a < 0 else '+'} {av}"


def _signed_const(v, precision):
    return ("-" if v < 0 and not _is_zero(v, precision) else "") + _num(v, precision)


def _normalized(edge: FittedEdge):
    a, b, c = edge.a, edge.b, edge.c
    if a < 0 and edge.function.parity == "even":
        a, b = -a, -b
    elif a < 0 and edge.function.parity == "odd" and edge.function.name != "x":
        a, b, c = -a, -b, -c
    return a, b, c


def render_edge_terms(edge: FittedEdge, var: str, precision: int):
    """Return (constant, term text or None) for one edge."""
    name = edge.function.name
    if name == "zero" or _is_zero(edge.c, precision):
        return edge.d, None
    if name == "x":
        slope, const = edge.c * edge.a, edge.c * edge.b + edge.d
        if _is_zero(slope, precision):
            return const, None
        coef = _num(slope, precision)
        return const, (slope < 0, var if coef == "1" else f"{coef}*{var}")
    a, b, c = _normalized(edge)
    body = edge.function.template.format(z=_affine(a, b, var, precision))
    coef = _num(c, precision)
    return edge.d, (c < 0, body if coef == "1" else f"{coef}*{body}")


def _render_sum(const, terms, precision):
    parts = []
    if not _is_zero(const, precision) or not terms:
        parts.append(_signed_const(const, precision))
    for neg, text in terms:
        if not parts:
            parts.append(f"-{text}" if neg else text)
        else:
            parts.append(f"{'-' if neg else '+'} {text}")
    return " ".join(parts)


def render(model: SymbolicModel, precision: int = 2, names=None) -> list[str]:
    """One human-readable expression per output node."""
    names = names or [f"x{i + 1}" for i in range(model.widths[0])]
    exprs = list(names)
    for l, layer in enumerate(model.edges):
        n_out = len(layer[0])
        out = []
        for j in range(n_out):
            const, terms = 0.0, []
            for i in range(len(layer)):
                var = exprs[i] if l == 0 else f"({exprs[i]})"
                c0, term = render_edge_terms(layer[i][j], var, precision)
                const += c0
                if term is not None:
                    terms.append(term)
            out.append(_render_sum(const, terms, precision))
        exprs = out
    return exprs


def render_text(model: SymbolicModel, precision: int = 2, names=None) -> str:
    return "\n".join(f"y{j + 1} = {e}" for j, e in enumerate(render(model, precision, names))) + "\n"
