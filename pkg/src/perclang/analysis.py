"""Transition-point detection and curve-collapse scoring.

Metric curves are fit with a continuous two-segment line in (log10 x, y)
space; the knot is the empirical transition point. Breakpoints versus a scale
variable are fit as power laws on log-log axes. A family of curves labeled by
a scale variable is scored for collapse under x -> x / label^alpha (and
optionally y -> y / label^beta): the score is the cross-curve variance on a
shared rescaled grid, minimized over the exponent grid. All fits are
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

__all__ = [
    "Curve", "BilinearFit", "PowerLawFit", "CollapseResult",
    "DegenerateCurveError", "NoOverlapError",
    "bilinear_fit", "powerlaw_fit", "collapse_scan",
    "DEFAULT_EXPONENT_GRID",
]

DEFAULT_EXPONENT_GRID = tuple(np.arange(0.0, 2.5 + 1e-9, 0.25))


class DegenerateCurveError(ValueError):
    """Curve carries no signal to fit (constant y)."""


class NoOverlapError(ValueError):
    """Rescaled x ranges share no common interval for any grid cell."""


@dataclass(frozen=True)
class Curve:
    """A metric trace: y over positive x (iterations), labeled by a scale."""

    x: np.ndarray
    y: np.ndarray
    label: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape:
            raise ValueError("x and y must be 1-d arrays of equal length")
        if (x <= 0).any():
            raise ValueError("x values must be positive")
        if (np.diff(x) <= 0).any():
            raise ValueError("x must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class BilinearFit:
    breakpoint: float  # in x units (not log)
    left_slope: float  # per decade of x
    right_slope: float
    intercept: float  # y at the knot
    mse: float


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    residual: float  # mean squared log residual


def _bilinear_mse(u: np.ndarray, y: np.ndarray, knot: float):
    """LSQ of y = a + b*u + c*max(u - knot, 0); returns (mse, coef)."""
    ramp = np.maximum(u - knot, 0.0)
    A = np.column_stack([np.ones_like(u), u, ramp])
    coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(np.mean(resid**2)), coef


def bilinear_fit(curve: Curve) -> BilinearFit:
    """Continuous two-segment least-squares line in (log10 x, y).

    The knot is located by a coarse scan over interior grid positions
    followed by golden-section refinement of the in-between minimum, so
    exactly piecewise-linear data recovers its knot with zero error.
    """
    if len(curve.x) < 8:
        raise ValueError("need at least 8 points for a bilinear fit")
    u = np.log10(curve.x)
    y = curve.y
    if float(np.ptp(y)) <= 1e-12:
        raise DegenerateCurveError("y is constant; no breakpoint to fit")

    # Knot candidates: interior data points plus a uniform fill-in
    candidates = np.unique(np.concatenate([u[2:-2], np.linspace(u[1], u[-2], 64)]))
    scores = np.array([_bilinear_mse(u, y, k)[0] for k in candidates])
    best = int(np.argmin(scores))
    lo = candidates[max(0, best - 1)]
    hi = candidates[min(len(candidates) - 1, best + 1)]
    if hi > lo:
        res = minimize_scalar(
            lambda k: _bilinear_mse(u, y, k)[0],
            bracket=None,
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-10},
        )
        knot = float(res.x)
        if _bilinear_mse(u, y, knot)[0] > scores[best]:
            knot = float(candidates[best])
    else:
        knot = float(candidates[best])

    mse, coef = _bilinear_mse(u, y, knot)
    a, b, c = coef
    return BilinearFit(
        breakpoint=float(10.0**knot),
        left_slope=float(b),
        right_slope=float(b + c),
        intercept=float(a + b * knot),
        mse=mse,
    )


def powerlaw_fit(points: Sequence[tuple[float, float]]) -> PowerLawFit:
    """Least squares for y = prefactor * x^exponent on log-log axes."""
    if len(points) < 3:
        raise ValueError("need at least 3 points for a power-law fit")
    arr = np.asarray(points, dtype=float)
    if (arr <= 0).any():
        raise ValueError("power-law fit needs strictly positive points")
    lx, ly = np.log(arr[:, 0]), np.log(arr[:, 1])
    exponent, log_pref = np.polyfit(lx, ly, 1)
    resid = ly - (exponent * lx + log_pref)
    return PowerLawFit(
        exponent=float(exponent),
        prefactor=float(np.exp(log_pref)),
        residual=float(np.mean(resid**2)),
    )


@dataclass(frozen=True)
class CollapseResult:
    alpha: float
    beta: float
    score: float
    # rows: (alpha, beta, score); inf marks grid cells with no x overlap
    table: tuple[tuple[float, float, float], ...]


def collapse_scan(
    curves: Sequence[Curve],
    alpha_grid: Sequence[float] = DEFAULT_EXPONENT_GRID,
    beta_grid: Sequence[float] | None = None,
    grid_points: int = 50,
) -> CollapseResult:
    """Find the exponents that best collapse a labeled curve family.

    For each (alpha, beta) the curves are rescaled, interpolated onto a
    log-spaced grid over the common rescaled-x overlap, and scored by the
    mean across the grid of the cross-curve variance. Returns the argmin
    along with the full score table.
    """
    if len(curves) < 2:
        raise ValueError("collapse needs at least 2 curves")
    labels = [c.label for c in curves]
    if len(set(labels)) < 2:
        raise ValueError("curves must carry distinct labels")
    if any(l <= 0 for l in labels):
        raise ValueError("labels must be positive")
    betas = [0.0] if beta_grid is None else list(beta_grid)

    table: list[tuple[float, float, float]] = []
    best: tuple[float, float, float] | None = None
    for alpha in alpha_grid:
        for beta in betas:
            score = _collapse_score(curves, float(alpha), float(beta), grid_points)
            table.append((float(alpha), float(beta), score))
            if np.isfinite(score) and (best is None or score < best[2]):
                best = (float(alpha), float(beta), score)
    if best is None:
        raise NoOverlapError("rescaled x ranges are disjoint for every exponent")
    return CollapseResult(alpha=best[0], beta=best[1], score=best[2], table=tuple(table))


def _collapse_score(curves: Sequence[Curve], alpha: float, beta: float, grid_points: int) -> float:
    los, his = [], []
    rescaled = []
    for c in curves:
        xs = c.x / c.label**alpha
        ys = c.y / c.label**beta
        rescaled.append((np.log(xs), ys))
        los.append(xs[0])
        his.append(xs[-1])
    lo, hi = max(los), min(his)
    if not lo < hi:
        return float("inf")
    grid = np.linspace(np.log(lo), np.log(hi), grid_points)
    values = np.stack([np.interp(grid, lx, ys) for lx, ys in rescaled])
    return float(np.mean(values.var(axis=0)))
