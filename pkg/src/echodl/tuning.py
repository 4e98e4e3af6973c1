"""Greedy L-curve selection of ``lam`` and ``gamma``.

For each candidate the problem is solved on a short budget and the pair
(data residual, regularizer value) is recorded. The corner of the log-log
curve is the interior point of largest discrete (Menger) curvature. ``lam``
is tuned first with ``gamma`` at the grid median, then ``gamma`` at the
chosen ``lam``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from .dictlearn import SolverConfig, data_residual, model_terms, solve

TUNE_ITERS = 10


class DegenerateCurveWarning(UserWarning):
    """The L-curve had no usable corner; the grid median was used."""


@dataclass(frozen=True)
class TuneGrid:
    lambda_values: tuple
    gamma_values: tuple
    fixed: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        for name in ("lambda_values", "gamma_values"):
            vals = tuple(sorted(float(v) for v in getattr(self, name)))
            if not vals:
                raise ValueError(f"{name} must be non-empty")
            if vals[0] <= 0:
                raise ValueError(f"{name} must be strictly positive")
            if len(set(vals)) != len(vals):
                raise ValueError(f"{name} contains duplicates")
            object.__setattr__(self, name, vals)


@dataclass(frozen=True)
class TunePoint:
    stage: str
    lam: float
    gamma: float
    residual: float
    regularizer: float
    curvature: float = math.nan
    degenerate: bool = False


def menger_curvature(x, y):
    """Signed curvature of the circle through each interior triple of points.

    Positive for a left turn, which is how a convex L-curve bends when its
    points are ordered by increasing residual.
    """
    x, y = np.asarray(x, float), np.asarray(y, float)
    k = np.full(x.size, np.nan)
    for i in range(1, x.size - 1):
        ax, ay = x[i] - x[i - 1], y[i] - y[i - 1]
        bx, by = x[i + 1] - x[i], y[i + 1] - y[i]
        cx, cy = x[i + 1] - x[i - 1], y[i + 1] - y[i - 1]
        denom = math.hypot(ax, ay) * math.hypot(bx, by) * math.hypot(cx, cy)
        k[i] = 2.0 * (ax * by - ay * bx) / denom if denom > 0 else 0.0
    return k


def lcurve_corner(residuals, regularizers, eps=1e-9):
    """Index of the L-curve corner and whether the curve was degenerate.

    Inputs are ordered by the tuned parameter. A curve with fewer than three
    points, or with no interior point of positive curvature above ``eps``,
    is degenerate: the median index is returned and flagged.
    """
    n = len(residuals)
    median = (n - 1) // 2
    if n < 3:
        return median, n > 1, np.full(n, np.nan)
    r = np.log(np.maximum(np.asarray(residuals, float), 1e-300))
    g = np.log(np.maximum(np.asarray(regularizers, float), 1e-300))
    k = menger_curvature(r, g)
    interior = k[1:-1]
    if not np.any(interior > eps):
        return median, True, k
    return int(np.nanargmax(k)), False, k


def _short_solve_evaluator(d):
    def evaluate(cfg, stage):
        _, _, state = solve(d, cfg, return_state=True)
        fits, reg = model_terms(state)
        if stage == "lambda":
            weights = (1.0,) + cfg.mus
            value = sum(w * f for w, f in zip(weights, fits)) + cfg.gamma * reg
        else:
            value = reg
        return data_residual(state), value

    return evaluate


def lcurve_tune(grid: TuneGrid, d=None, evaluate=None, records=None) -> SolverConfig:
    """Pick ``lam`` then ``gamma`` at the L-curve corners.

    ``evaluate(cfg, stage) -> (residual, regularizer)`` overrides the default
    short-budget solve on ``d``. When ``records`` is a list, every evaluated
    candidate is appended to it as a :class:`TunePoint`.
    """
    if evaluate is None:
        if d is None:
            raise ValueError("need acquired data or an evaluate callback")
        evaluate = _short_solve_evaluator(d)
    base = dataclasses.replace(grid.fixed, outer_iters=min(grid.fixed.outer_iters, TUNE_ITERS))
    gammas, lams = grid.gamma_values, grid.lambda_values
    gamma = gammas[(len(gammas) - 1) // 2]

    def sweep(stage, values, make):
        if len(values) == 1:
            return values[0]
        pts = []
        for v in values:
            cfg = make(v)
            res, reg = evaluate(cfg, stage)
            pts.append((cfg.lam, cfg.gamma, res, reg))
        idx, flagged, curv = lcurve_corner([p[2] for p in pts], [p[3] for p in pts])
        if flagged:
            warnings.warn(f"degenerate {stage} L-curve, using grid median", DegenerateCurveWarning, stacklevel=3)
        if records is not None:
            records.extend(TunePoint(stage, *p, float(c), flagged) for p, c in zip(pts, curv))
        return values[idx]

    lam = sweep("lambda", lams, lambda v: dataclasses.replace(base, lam=v, gamma=gamma))
    gamma = sweep("gamma", gammas, lambda v: dataclasses.replace(base, lam=lam, gamma=v))
    return dataclasses.replace(grid.fixed, lam=lam, gamma=gamma)


def format_tune_table(records) -> str:
    lines = [f"{'stage':<7} {'lambda':>10} {'gamma':>10} {'residual':>12} {'regularizer':>12} {'curvature':>10}"]
    for p in records:
        curv = "-" if math.isnan(p.curvature) else f"{p.curvature:.4f}"
        lines.append(
            f"{p.stage:<7} {p.lam:>10.4g} {p.gamma:>10.4g} {p.residual:>12.5g} {p.regularizer:>12.5g} {curv:>10}"
        )
    return "\n".join(lines)
