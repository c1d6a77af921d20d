"""B-spline machinery: SiLU residual, Cox-de Boor basis, knot grids.

Knot vectors follow the extended-grid convention: ``G + 1`` interior break
points spanning the data, plus ``k`` extra knots on each side at the uniform
boundary spacing, giving ``G + 2k + 1`` knots and ``G + k`` basis functions
of degree ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEGENERATE_WIDTH = 1e-6


@dataclass(frozen=True)
class SplineConfig:
    """Spline order ``k``, interval count ``G`` and grid adaptivity ``g_e``."""

    k: int = 3
    G: int = 5
    grid_eps: float = 0.05

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"spline order k must be an integer >= 1, got {self.k}")
        if int(self.G) != self.G or self.G < 1:
            raise ValueError(f"grid_intervals G must be an integer >= 1, got {self.G}")
        if not 0.0 <= self.grid_eps <= 1.0:
            raise ValueError(f"grid_eps must lie in [0, 1], got {self.grid_eps}")

    @property
    def n_basis(self) -> int:
        return self.G + self.k

    def to_dict(self) -> dict:
        return {"k": int(self.k), "G": int(self.G), "grid_eps": float(self.grid_eps)}


@dataclass(frozen=True)
class SplineGrid:
    knots: np.ndarray
    k: int

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1:
            raise ValueError("knots must be one-dimensional")
        if knots.size < 2 * self.k + 2:
            raise ValueError(
                f"{knots.size} knots cannot carry order {self.k} (need at least {2 * self.k + 2})"
            )
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        object.__setattr__(self, "knots", knots)

    @property
    def G(self) -> int:
        return self.knots.size - 2 * self.k - 1

    @property
    def span(self) -> tuple[float, float]:
        return float(self.knots[self.k]), float(self.knots[-self.k - 1])

    @property
    def breakpoints(self) -> np.ndarray:
        return self.knots[self.k : self.knots.size - self.k]


def silu(x):
    """``x / (1 + exp(-x))``; scalars in, float out."""
    arr = np.asarray(x, dtype=float)
    out = arr * _sigmoid(arr)
    return float(out) if out.ndim == 0 else out


def silu_grad(x):
    arr = np.asarray(x, dtype=float)
    s = _sigmoid(arr)
    return s * (1.0 + arr * (1.0 - s))


def _sigmoid(x):
    # exp of a nonpositive argument only, so nothing overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _safe_inv(den):
    # x/0 -> 0 for repeated knots (tied adaptive break points)
    den = np.asarray(den, dtype=float)
    out = np.zeros_like(den)
    np.divide(1.0, den, out=out, where=den != 0)
    return out


def clamp_to_span(x, knots, k):
    """Clamp ``x`` (..., n_in) into each input's interior span ``[t_k, t_{G+k})``.

    The upper end is pulled one ulp inside so the last interval's half-open
    indicator still covers the right boundary.
    """
    lo = knots[..., k]
    hi = knots[..., knots.shape[-1] - k - 1]
    return np.clip(x, lo, np.nextafter(hi, -np.inf))


def basis_batch(x, knots, k, derivative=False):
    """Vectorized Cox-de Boor recursion.

    ``x`` has shape (N, n_in) and ``knots`` shape (n_in, M); returns basis
    values of shape (N, n_in, M - k - 1). Inputs are clamped to the span.
    With ``derivative=True`` returns ``(values, d values / dx)``; the
    derivative is zero where the input was clamped.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(knots, dtype=float)
    xc = clamp_to_span(x, t, k)[..., None]
    B = ((xc >= t[:, :-1]) & (xc < t[:, 1:])).astype(float)
    prev = B
    for d in range(1, k + 1):
        prev = B
        left = (xc - t[:, : -(d + 1)]) * _safe_inv(t[:, d:-1] - t[:, : -(d + 1)])
        right = (t[:, d + 1 :] - xc) * _safe_inv(t[:, d + 1 :] - t[:, 1:-d])
        B = left * prev[..., :-1] + right * prev[..., 1:]
    if not derivative:
        return B
    if k == 0:
        return B, np.zeros_like(B)
    lo = t[:, k]
    hi = t[:, t.shape[1] - k - 1]
    inside = ((x > lo) & (x < hi))[..., None]
    wl = k * _safe_inv(t[:, k:-1] - t[:, : -(k + 1)])
    wr = k * _safe_inv(t[:, k + 1 :] - t[:, 1:-k])
    dB = wl * prev[..., :-1] - wr * prev[..., 1:]
    return B, np.where(inside, dB, 0.0)


def bspline_basis(x: float, grid: SplineGrid, k: int) -> np.ndarray:
    """Return the ``G + k`` order-``k`` basis values at scalar ``x``."""
    if k != grid.k:
        raise ValueError(f"order {k} is inconsistent with a grid built for order {grid.k}")
    return basis_batch(np.array([[x]], dtype=float), grid.knots[None, :], k)[0, 0]


def make_grid(samples, config: SplineConfig) -> SplineGrid:
    """Mix a uniform and a quantile partition of the sample range.

    ``grid_eps = 1`` gives the uniform grid over ``[min, max]``, ``grid_eps = 0``
    the empirical quantiles at levels ``j / G``.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0 or not np.all(np.isfinite(samples)):
        raise ValueError("grid samples must be nonempty and finite")
    G, k, ge = config.G, config.k, config.grid_eps
    lo, hi = float(samples.min()), float(samples.max())
    uniform_levels = np.arange(G + 1) / G
    if hi - lo <= 0:
        lo -= DEGENERATE_WIDTH / 2
        hi += DEGENERATE_WIDTH / 2
        uniform = lo + (hi - lo) * uniform_levels
        adaptive = uniform
    else:
        uniform = lo + (hi - lo) * uniform_levels
        adaptive = np.quantile(samples, uniform_levels, method="linear")
        adaptive[0], adaptive[-1] = lo, hi
    breaks = ge * uniform + (1.0 - ge) * adaptive
    h = (hi - lo) / G
    ext = h * np.arange(1, k + 1)
    knots = np.concatenate([breaks[0] - ext[::-1], breaks, breaks[-1] + ext])
    return SplineGrid(knots=knots, k=k)


def fit_coefficients(x, y, grid: SplineGrid) -> np.ndarray:
    """Least-squares spline coefficients for targets ``y`` (N,) or (N, m).

    Rank-deficient systems get the minimal-norm solution.
    """
    x = np.asarray(x, dtype=float).ravel()
    B = basis_batch(x[:, None], grid.knots[None, :], grid.k)[:, 0, :]
    coef, *_ = np.linalg.lstsq(B, np.asarray(y, dtype=float), rcond=None)
    return coef
