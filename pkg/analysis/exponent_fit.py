from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from core.models import ExponentFit, SurvivalCurve
from core.sim_config import ScalingKind

Regressor = Callable[[np.ndarray], np.ndarray]


def sqrt_log_loglog(t: np.ndarray) -> np.ndarray:
    """sqrt(t) log t log log t, defined for t > e."""
    t = np.asarray(t, dtype=float)
    return np.sqrt(t) * np.log(t) * np.log(np.log(t))


def _log_points(curve: SurvivalCurve, t_min: float = 0.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    t = np.asarray(curve.t_grid, dtype=float)
    est = curve.values
    se = curve.stderrs
    keep = t > t_min
    t, est, se = t[keep], est[keep], se[keep]
    if np.any(est <= 0.0):
        bad = t[est <= 0.0].tolist()
        raise ValueError(f"zero survival estimates at t={bad}; sample more or fill the tail with splitting")
    y = -np.log(est)
    var = (se / est) ** 2          # delta method for -log(est)
    if np.all(var == 0.0):
        w = np.ones_like(var)
    else:
        w = np.empty_like(var)
        pos = var > 0.0
        w[pos] = 1.0 / var[pos]
        w[~pos] = w[pos].max()
    return t, y, w, var


def weighted_line(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> Tuple[float, float, float, np.ndarray, float]:
    """Weighted least squares y ~ a + b x. Returns (b, a, r2, residuals, stderr_b)."""
    X = np.column_stack([np.ones_like(x), x])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    a, b = float(coef[0]), float(coef[1])
    resid = y - (a + b * x)
    ss_res = float(np.sum(w * resid ** 2))
    ybar = float(np.sum(w * y) / np.sum(w))
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    n = x.size
    sigma2 = ss_res / (n - 2) if n > 2 else 0.0
    cov = np.linalg.pinv(X.T @ (X * w[:, None]))
    se_b = math.sqrt(max(sigma2 * cov[1, 1], 0.0))
    return b, a, r2, resid, se_b


def fit_against(curve: SurvivalCurve, regressor: Regressor, name: str, t_min: float = 0.0,
                min_points: int = 4) -> ExponentFit:
    t, y, w, _ = _log_points(curve, t_min)
    if t.size < min_points:
        raise ValueError(f"need >= {min_points} points with t > {t_min:g}, got {t.size}")
    x = np.asarray(regressor(t), dtype=float)
    slope, intercept, r2, resid, se = weighted_line(x, y, w)
    if not math.isfinite(slope):
        raise ValueError(f"non-finite slope fitting against {name}")
    return ExponentFit(
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        residuals=resid.tolist(),
        weights=w.tolist(),
        slope_stderr=se,
        regressor=name,
        t=t.tolist(),
    )


def fit_exponent(curve: SurvivalCurve, d: int) -> ExponentFit:
    """
    WLS of -log P(T > t) against t / Psi_d(t); for d = 1 a second fit against
    sqrt(t) log t log log t over the points with t > e is attached as `alternative`.
    """
    if len(curve.t_grid) < 4:
        raise ValueError(f"need >= 4 curve points, got {len(curve.t_grid)}")
    scaling = ScalingKind(d)
    # Psi_2 needs t > 1
    t_min = 1.0 if d == 2 else 0.0
    fit = fit_against(curve, scaling.regressor, "t/psi", t_min=t_min, min_points=3)
    if d == 1:
        try:
            fit.alternative = fit_against(curve, sqrt_log_loglog, "sqrt(t)*log(t)*loglog(t)", t_min=math.e, min_points=3)
        except ValueError as e:
            logging.info("[FIT] d=1 alternative regressor skipped: %s", e)
    logging.info("[FIT] d=%d slope=%.4g +- %.2g r2=%.4f", d, fit.slope, fit.slope_stderr, fit.r_squared)
    return fit


def compare_regressors(curve: SurvivalCurve, regressors: Optional[Dict[str, Regressor]] = None) -> Dict[str, ExponentFit]:
    """Fits the same curve against each regressor; defaults to t and sqrt(t)."""
    if regressors is None:
        regressors = {"t": lambda t: t, "sqrt(t)": np.sqrt}
    return {name: fit_against(curve, fn, name) for name, fn in regressors.items()}


@dataclass
class BracketRow:
    t: float
    y: float           # -log P(T > t)
    sigma: float
    lower: float       # a sqrt(t), a fitted at t_ref
    upper: float       # inflation * b sqrt(t) log t log log t, b fitted at t_ref
    lower_ok: bool
    upper_ok: bool


def d1_bracket(curve: SurvivalCurve, t_ref: Optional[float] = None, inflation: float = 1.5,
               n_sigma: float = 2.0) -> List[BracketRow]:
    """
    Checks that -log P grows faster than sqrt(t) and slower than
    inflation * sqrt(t) log t log log t, both anchored at t_ref.
    """
    t, y, _, var = _log_points(curve, math.e)
    if t.size < 2:
        raise ValueError("need at least two points with t > e")
    t_ref = float(t[0]) if t_ref is None else float(t_ref)
    ref = np.flatnonzero(np.isclose(t, t_ref))
    if ref.size == 0:
        raise ValueError(f"t_ref={t_ref} is not a grid point above e")
    y_ref = float(y[ref[0]])
    a = y_ref / math.sqrt(t_ref)
    b = y_ref / float(sqrt_log_loglog(t_ref))
    sigma = np.sqrt(var)
    rows = []
    for ti, yi, si in zip(t, y, sigma):
        if ti <= t_ref:
            continue
        lower = a * math.sqrt(ti)
        upper = inflation * b * float(sqrt_log_loglog(ti))
        rows.append(BracketRow(
            t=float(ti),
            y=float(yi),
            sigma=float(si),
            lower=lower,
            upper=upper,
            lower_ok=bool(yi + n_sigma * si > lower),
            upper_ok=bool(yi - n_sigma * si < upper),
        ))
    return rows
