import math

import numpy as np
import pytest

from analysis.exponent_fit import (
    compare_regressors,
    d1_bracket,
    fit_against,
    fit_exponent,
    sqrt_log_loglog,
    weighted_line,
)
from core.models import Estimate, SurvivalCurve
from core.sim_config import ScalingKind


def _curve(t, y, rel_se=0.01):
    points = []
    for yi in y:
        p = math.exp(-yi)
        se = rel_se * p
        points.append(Estimate(p, se, 10_000, (p - 2 * se, p + 2 * se), "direct"))
    return SurvivalCurve(tuple(float(x) for x in t), tuple(points), "isolation")


def test_weighted_line_exact():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    slope, intercept, r2, resid, se = weighted_line(x, 2.0 + 3.0 * x, np.ones(4))
    assert slope == pytest.approx(3.0)
    assert intercept == pytest.approx(2.0)
    assert r2 == pytest.approx(1.0)
    assert np.allclose(resid, 0.0)
    assert se == pytest.approx(0.0, abs=1e-9)


def test_recovers_slope_d3():
    t = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    fit = fit_exponent(_curve(t, 0.1 + 3.0 * t), 3)
    assert fit.slope == pytest.approx(3.0, rel=1e-6)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.regressor == "t/psi"
    assert fit.alternative is None


def test_d2_drops_t_at_most_one():
    t = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    x = ScalingKind(2).regressor(t[1:])
    y = np.concatenate([[0.05], 0.2 + 0.5 * x])
    fit = fit_exponent(_curve(t, y), 2)
    assert fit.t == [2.0, 4.0, 8.0, 16.0]
    assert fit.slope == pytest.approx(0.5, rel=1e-6)


def test_noisy_slope_within_stderr():
    rng = np.random.default_rng(0)
    t = np.linspace(1.0, 10.0, 10)
    y = 0.2 + 0.7 * t + rng.normal(0.0, 0.01, size=t.size)
    fit = fit_exponent(_curve(t, y), 3)
    assert abs(fit.slope - 0.7) < 5.0 * fit.slope_stderr + 1e-3
    assert 0.99 < fit.r_squared <= 1.0


def test_d1_alternative_fit():
    t = np.array([1.0, 4.0, 9.0, 16.0, 25.0])
    fit = fit_exponent(_curve(t, 0.3 * np.sqrt(t)), 1)
    assert fit.slope == pytest.approx(0.3, rel=1e-6)
    assert fit.alternative is not None
    assert fit.alternative.t == [4.0, 9.0, 16.0, 25.0]


def test_zero_estimate_rejected():
    curve = _curve([1.0, 2.0, 3.0, 4.0], [0.1, 0.2, 0.3, 0.4])
    zero = Estimate(0.0, 0.0, 100, (0.0, 0.03), "direct", successes=0)
    curve = SurvivalCurve(curve.t_grid, curve.points[:3] + (zero,), "isolation")
    with pytest.raises(ValueError, match="zero survival"):
        fit_exponent(curve, 3)


def test_too_few_points():
    with pytest.raises(ValueError):
        fit_exponent(_curve([1.0, 2.0, 3.0], [0.1, 0.2, 0.3]), 3)
    with pytest.raises(ValueError):
        fit_against(_curve([1.0, 2.0, 3.0], [0.1, 0.2, 0.3]), lambda t: t, "t")


def test_compare_regressors_prefers_linear():
    t = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    fits = compare_regressors(_curve(t, 0.5 * t))
    assert fits["t"].r_squared > fits["sqrt(t)"].r_squared


def test_bracket_holds_between_rates():
    t = np.array([4.0, 9.0, 16.0, 36.0, 64.0, 100.0])
    rows = d1_bracket(_curve(t, 0.5 * np.sqrt(t) * np.log(t)))
    assert [r.t for r in rows] == [9.0, 16.0, 36.0, 64.0, 100.0]
    assert all(r.lower_ok and r.upper_ok for r in rows)


def test_bracket_flags_linear_growth():
    t = np.array([4.0, 16.0, 64.0, 256.0, 1024.0])
    rows = d1_bracket(_curve(t, 0.02 * t), t_ref=16.0, inflation=1.0)
    assert not rows[-1].upper_ok


def test_sqrt_log_loglog():
    assert float(sqrt_log_loglog(math.e ** math.e)) == pytest.approx(math.e ** (math.e / 2) * math.e)
