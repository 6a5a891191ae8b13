import math

import numpy as np
import pytest
from scipy import integrate, stats

from core.models import INSIDE, OUTSIDE, UNCERTAIN, NodePath, SimConfig
from core.paths import (
    OUT,
    UNC,
    bridge_crossing_probability,
    bridge_midpoint,
    bridge_stay_probability,
    build_grid,
    check_grid,
    envelope,
    fill_bridges,
    hit_probability_bounds,
    insert_knot,
    interval_stay_probability,
    refine_bridge,
    sample_batch,
    sample_increments,
    segment_state,
    segment_verdict,
    stay_probability_lower,
)
from core.sets import Annulus, Box, SetFamily


def _path(origin, disp, times=None):
    disp = np.asarray(disp, dtype=float)
    times = np.arange(disp.shape[0], dtype=float) if times is None else np.asarray(times, dtype=float)
    return NodePath(0, np.asarray(origin, dtype=float), times, disp)


@pytest.mark.parametrize("grid", [[0.1, 0.2], [0.0, 0.5, 0.5], [0.0, 1.0, 0.5], []])
def test_check_grid_rejects(grid):
    with pytest.raises(ValueError):
        check_grid(grid)


def test_build_grid_inserts_times():
    cfg = SimConfig(d=1, lam=1.0, r=1.0, horizon=1.0, step=0.25)
    assert build_grid(cfg).tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    grid = build_grid(cfg, [0.3, 5.0])
    assert 0.3 in grid.tolist()
    assert grid[-1] == 1.0 and grid.size == 6


def test_single_knot_path(rng):
    path = sample_increments([1.0, 2.0], [0.0], rng)
    assert path.disp.shape == (1, 2)
    assert np.all(path.disp == 0.0)


def test_increment_variance(rng):
    batch = sample_batch(np.zeros((20_000, 1)), [0.0, 2.0], rng)
    assert np.var(batch.disp[:, 1, 0]) == pytest.approx(2.0, abs=0.1)


def test_bridge_midpoint_variance(rng):
    mids = bridge_midpoint(np.zeros(20_000), np.zeros(20_000), 1.0, rng)
    assert np.mean(mids) == pytest.approx(0.0, abs=0.02)
    assert np.var(mids) == pytest.approx(0.25, abs=0.015)


def test_fill_bridges_keeps_coarse_knots(rng):
    times = np.linspace(0.0, 2.0, 9)
    idx = np.array([0, 4, 8])
    coarse = np.zeros((5, 3, 2))
    coarse[:, 1:] = rng.standard_normal((5, 2, 2))
    full = fill_bridges(times, idx, coarse, rng)
    assert full.shape == (5, 9, 2)
    assert np.allclose(full[:, idx], coarse)


def test_refine_bridge():
    path = _path([0.0], [[0.0], [1.0], [3.0]])
    rng = np.random.default_rng(0)
    finer = refine_bridge(path, (0.0, 1.0), rng)
    assert finer.times.tolist() == [0.0, 0.5, 1.0, 2.0]
    assert finer.disp[[0, 2, 3], 0].tolist() == [0.0, 1.0, 3.0]
    with pytest.raises(ValueError):
        refine_bridge(path, (0.0, 2.0), rng)


def test_insert_knot():
    path = _path([0.0], [[0.0], [1.0]])
    rng = np.random.default_rng(0)
    assert insert_knot(path, 1.0, rng) is path
    assert insert_knot(path, 0.25, rng).times.tolist() == [0.0, 0.25, 1.0]
    with pytest.raises(ValueError):
        insert_knot(path, 2.0, rng)


def test_envelope():
    assert float(envelope(1.0, 1, 1e-3)) == pytest.approx(math.sqrt(math.log(2e3) / 2.0))
    assert float(envelope(0.0, 3, 1e-3)) == 0.0


def test_crossing_formula():
    assert float(bridge_crossing_probability(1.0, 1.0, 2.0)) == pytest.approx(math.exp(-1.0))
    assert float(bridge_crossing_probability(1.0, 1.0, 0.0)) == 0.0
    assert float(bridge_crossing_probability(0.0, 1.0, 1.0)) == 1.0


def test_bridge_stay_one_sided_limit():
    # far upper wall: only the lower one matters
    p = float(bridge_stay_probability(0.0, 0.0, 1.0, -1.0, 100.0))
    assert p == pytest.approx(1.0 - math.exp(-2.0), abs=1e-9)
    assert float(bridge_stay_probability(2.0, 0.0, 1.0, -1.0, 1.0)) == 0.0


def test_interval_stay_limits():
    assert float(interval_stay_probability(0.5, 1.0, 0.0)) == 1.0
    assert float(interval_stay_probability(1.5, 1.0, 0.0)) == 0.0
    vals = [float(interval_stay_probability(0.0, 1.0, u)) for u in (0.1, 0.5, 1.0, 4.0)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert float(interval_stay_probability(0.3, 1.0, 1.0)) == pytest.approx(
        float(interval_stay_probability(-0.3, 1.0, 1.0))
    )


def test_exit_time_mean():
    # E[exit time of (-a, a) from y] = a^2 - y^2
    mean, _ = integrate.quad(lambda u: float(interval_stay_probability(0.5, 1.0, u)), 0.0, 40.0, limit=200)
    assert mean == pytest.approx(0.75, abs=1e-2)


def test_verdicts_general_family():
    fam = SetFamily.static_ball(1.0, 2)
    far = _path([10.0, 0.0], [[0.0, 0.0], [0.0, 0.0]])
    assert segment_verdict(far, (0.0, 1.0), fam).status == OUTSIDE
    inside = _path([0.0, 0.0], [[0.0, 0.0], [5.0, 0.0]])
    assert segment_verdict(inside, (0.0, 1.0), fam).status == INSIDE
    chord = _path([-3.0, 0.0], [[0.0, 0.0], [6.0, 0.0]])
    verdict = segment_verdict(chord, (0.0, 1.0), fam)
    assert verdict.status == UNCERTAIN
    assert verdict.probability is None
    assert verdict.bound > 0.0


def test_verdicts_exact_d1():
    fam = SetFamily.static_ball(1.0, 1)
    across = segment_verdict(_path([-3.0], [[0.0], [6.0]]), (0.0, 1.0), fam)
    assert across.status == INSIDE
    assert across.probability == 1.0
    near = segment_verdict(_path([2.0], [[0.0], [0.0]]), (0.0, 1.0), fam)
    assert near.status == UNCERTAIN
    assert near.probability == pytest.approx(math.exp(-2.0))
    far = segment_verdict(_path([20.0], [[0.0], [0.0]]), (0.0, 1.0), fam)
    assert far.status == OUTSIDE


def test_verdict_rejects():
    fam = SetFamily.static_ball(1.0, 1)
    path = _path([0.0], [[0.0], [0.0], [0.0]])
    with pytest.raises(ValueError):
        segment_verdict(path, (0.0, 2.0), fam)
    with pytest.raises(ValueError):
        segment_verdict(path, (0.0, 1.0), fam, slack=-1.0)


def _bridge_positions(start, h, n, steps, rng):
    """n discretized Brownian bridges from `start` back to `start` over [0, h]."""
    d = len(start)
    w = np.cumsum(rng.standard_normal((n, steps, d)) * math.sqrt(h / steps), axis=1)
    s = np.arange(1, steps + 1) / steps
    return np.asarray(start, dtype=float) + w - s[None, :, None] * w[:, -1:, :]


def test_half_space_bound_is_crossing_probability():
    fam = SetFamily.static_ball(1.0, 2)
    pa = np.array([[3.0, 0.0]])
    lower, upper = hit_probability_bounds(fam, 0.0, 1.0, pa, pa, 1e-3)
    assert upper[0] == pytest.approx(math.exp(-8.0))
    assert lower[0] == 0.0


def test_hit_bounds_bracket_simulated_bridges():
    fam = SetFamily.static_ball(1.0, 2)
    pa = np.array([[1.05, 0.0]])
    lower, upper = hit_probability_bounds(fam, 0.0, 0.01, pa, pa, 1e-3)
    assert 0.0 < lower[0] < upper[0] < 1.0
    pos = _bridge_positions([1.05, 0.0], 0.01, 4000, 400, np.random.default_rng(11))
    hit = np.mean(np.any(np.linalg.norm(pos, axis=-1) <= 1.0, axis=1))
    se = math.sqrt(0.25 / 4000)
    assert lower[0] - 4.0 * se <= hit <= upper[0] + 4.0 * se


def test_far_segment_outside_by_half_space():
    # the chord is within the envelope of the ball, the crossing bound is not
    fam = SetFamily.static_ball(1.0, 2)
    t_a, t_b = np.array([0.0]), np.array([1.0])
    far = np.array([[3.5, 0.0]])
    assert 2.5 < float(envelope(1.0, 2, 1e-3))
    assert segment_state(fam, t_a, t_b, far, far, 1e-3)[0][0] == OUT
    near = np.array([[1.5, 0.0]])
    assert segment_state(fam, t_a, t_b, near, near, 1e-3)[0][0] == UNC


def test_support_bounds_for_box_and_annulus():
    box = SetFamily.general([(0.0, Box((0.0, 0.0), (1.0, 1.0)))])
    pa = np.array([[3.0, 0.5]])
    lower, upper = hit_probability_bounds(box, 0.0, 1.0, pa, pa, 1e-3)
    assert upper[0] == pytest.approx(math.exp(-8.0))
    assert lower[0] == 0.0
    ring = SetFamily.general([(0.0, Annulus((0.0, 0.0), 0.5, 1.0))])
    pa = np.array([[3.0, 0.0]])
    assert hit_probability_bounds(ring, 0.0, 1.0, pa, pa, 1e-3)[1][0] == pytest.approx(math.exp(-8.0))


def test_stay_lower_bound():
    fam = SetFamily.static_ball(1.0, 2)
    center = np.array([[0.0, 0.0]])
    p = stay_probability_lower(fam, 0.0, 0.25, center, center)[0]
    # inscribed square of half-width 1/sqrt(2), four faces
    assert p == pytest.approx(1.0 - 4.0 * math.exp(-4.0))
    pos = _bridge_positions([0.0, 0.0], 0.25, 4000, 200, np.random.default_rng(12))
    stay = np.mean(np.all(np.linalg.norm(pos, axis=-1) < 1.0, axis=1))
    assert p <= stay + 4.0 * math.sqrt(p * (1.0 - p) / 4000)
    outside = np.array([[1.5, 0.0]])
    assert stay_probability_lower(fam, 0.0, 0.25, outside, center)[0] == 0.0


def test_refinement_matches_direct_sampling():
    # W(2) drawn directly, then two bisections: W(0.5) must be N(0, 0.5)
    rng = np.random.default_rng(13)
    quarter, half = [], []
    for _ in range(2000):
        path = _path([0.0], [[0.0], [rng.normal(0.0, math.sqrt(2.0))]], [0.0, 2.0])
        path = refine_bridge(path, (0.0, 2.0), rng)
        path = refine_bridge(path, (0.0, 1.0), rng)
        quarter.append(path.disp[1, 0])
        half.append(path.disp[2, 0])
    assert stats.kstest(quarter, "norm", args=(0.0, math.sqrt(0.5))).pvalue > 1e-3
    assert stats.kstest(half, "norm", args=(0.0, 1.0)).pvalue > 1e-3
    # independent increments: cov(W(0.5), W(1) - W(0.5)) = 0
    q, h = np.asarray(quarter), np.asarray(half)
    assert np.corrcoef(q, h - q)[0, 1] == pytest.approx(0.0, abs=0.08)
