import math

import numpy as np
import pytest

from core.events import (
    EntryScan,
    Resolution,
    detection_time,
    discrete_coverage,
    first_entry_times,
    isolation_time,
    occupation_time,
    scan_entries,
    total_occupation,
    trapezoid_weights,
)
from core.models import NodePath, Region
from core.paths import PathBatch, sample_batch
from core.sets import Ball, SetFamily


def _path(node_id, origin, disp, times):
    return NodePath(node_id, np.asarray(origin, dtype=float), np.asarray(times, dtype=float),
                    np.asarray(disp, dtype=float))


def _empty(d):
    return PathBatch(np.zeros(0, dtype=int), np.zeros((0, d)), np.array([0.0, 1.0]), np.zeros((0, 2, d)))


def test_detection_at_time_zero():
    fam = SetFamily.static_ball(1.0, 2)
    paths = [_path(0, [0.5, 0.0], [[0.0, 0.0], [4.0, 0.0]], [0.0, 1.0])]
    T = detection_time(paths, fam, 1.0)
    assert T.value == 0.0
    assert T.definite


def test_no_nodes():
    fam = SetFamily.static_ball(1.0, 2)
    assert detection_time(_empty(2), fam, 1.0).censored
    assert isolation_time(_empty(2), fam, 1.0).value == 0.0


def test_detection_entry_inside_segment():
    fam = SetFamily.static_ball(1.0, 1)
    paths = [_path(0, [3.0], [[0.0], [-2.5], [-2.5]], [0.0, 1.0, 2.0])]
    T = detection_time(paths, fam, 2.0, stream=np.random.default_rng(1))
    assert 0.0 < T.value <= 1.0
    coarse = detection_time(paths, fam, 2.0, resolution=Resolution(refine_depth=0))
    assert coarse.value == 1.0


def test_detection_before_horizon_only():
    fam = SetFamily.static_ball(1.0, 1)
    paths = [_path(0, [30.0], [[0.0], [0.0], [-30.0]], [0.0, 1.0, 2.0])]
    assert detection_time(paths, fam, 1.0).censored
    with pytest.raises(ValueError):
        detection_time(paths, fam, 3.0)


def test_first_entry_times():
    fam = SetFamily.static_ball(1.0, 2)
    batch = sample_batch(np.array([[0.0, 0.0], [50.0, 0.0]]), np.linspace(0.0, 1.0, 11), np.random.default_rng(2))
    entries = first_entry_times(batch, fam, 1.0)
    assert entries[0] == 0.0
    assert math.isinf(entries[1])


def test_isolation_zero_when_uncovered():
    fam = SetFamily.static_ball(1.0, 1)
    paths = [_path(0, [5.0], np.zeros((3, 1)), [0.0, 0.5, 1.0])]
    assert isolation_time(paths, fam, 1.0).value == 0.0


def test_isolation_censored_for_resting_node():
    fam = SetFamily.static_ball(1.0, 1)
    times = np.linspace(0.0, 1.0, 21)
    paths = [_path(0, [0.0], np.zeros((times.size, 1)), times)]
    T = isolation_time(paths, fam, 1.0)
    assert T.censored
    assert T.exceeds(1.0)


def test_isolation_when_last_node_leaves():
    fam = SetFamily.static_ball(1.0, 1)
    times = [0.0, 1.0, 2.0]
    paths = [_path(0, [0.0], [[0.0], [40.0], [40.0]], times)]
    T = isolation_time(paths, fam, 2.0, resolution=Resolution(refine_depth=0))
    assert T.value == 1.0


def test_detection_is_earliest_entry():
    fam = SetFamily.static_ball(1.0, 2)
    rng = np.random.default_rng(3)
    batch = sample_batch(rng.uniform(-3.0, 3.0, size=(30, 2)), np.linspace(0.0, 1.0, 21), rng)
    res = Resolution(refine_depth=0)
    entries = first_entry_times(batch, fam, 1.0, resolution=res)
    T = detection_time(batch, fam, 1.0, resolution=res)
    if np.isfinite(entries).any():
        assert T.value == entries.min()
    else:
        assert T.censored


def test_trapezoid_weights_sum_to_window():
    times = np.linspace(0.0, 2.0, 9)
    assert trapezoid_weights(times, (0.5, 1.5)).sum() == pytest.approx(1.0)
    assert trapezoid_weights(times, (1.0, 1.0)).sum() == 0.0


def test_total_occupation_resting_nodes():
    batch = PathBatch(np.arange(2), np.array([[0.0, 0.0], [5.0, 0.0]]), np.linspace(0.0, 1.0, 5), np.zeros((2, 5, 2)))
    assert total_occupation(batch, Region.ball(1.0, 2), (0.0, 1.0)) == pytest.approx(1.0)


def test_occupation_time_window():
    path = _path(0, [0.0], np.zeros((3, 1)), [0.0, 1.0, 2.0])
    occ = occupation_time(path, Region.ball(1.0, 1), (0.5, 1.5), stream=np.random.default_rng(5))
    assert 0.0 <= occ.value <= 1.0
    assert occ.value + occ.error >= 0.0
    assert occupation_time(path, Region.ball(1.0, 1), (1.0, 1.0)).value == 0.0
    with pytest.raises(ValueError):
        occupation_time(path, Region.ball(1.0, 1), (0.0, 3.0))


def test_discrete_coverage():
    times = [0.0, 1.0, 2.0]
    a = _path(0, [0.0, 0.0], [[0.0, 0.0], [0.0, 0.0], [9.0, 0.0]], times)
    b = _path(1, [9.0, 0.0], [[0.0, 0.0], [-9.0, 0.0], [-9.0, 0.0]], times)
    fam = SetFamily.static_ball(1.0, 2)
    assert discrete_coverage([a, b], fam, times)
    assert not discrete_coverage([a], fam, times)
    assert discrete_coverage([a], fam, [0.0, 1.0])
    per_node = [fam, SetFamily.general([(0.0, Ball((9.0, 0.0), 1.0))])]
    assert discrete_coverage([a, b], per_node, [0.0])
    with pytest.raises(ValueError):
        discrete_coverage([a], fam, [1.0, 0.0])


def test_entry_scan_counts_settled_nodes():
    scan = EntryScan(np.array([0.5, np.inf, 0.2]), np.array([True, False, True]))
    assert scan.pessimistic == 2


def test_policy_gap_is_bounded_by_settled_nodes():
    # per node the cover and miss runs share draws until the first policy call
    fam = SetFamily.static_ball(1.0, 2)
    grid = np.linspace(0.0, 1.0, 21)
    rng = np.random.default_rng(21)
    n = 300
    radius = rng.uniform(2.0, 3.0, n)
    angle = rng.uniform(0.0, 2.0 * math.pi, n)
    origins = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    cover = miss = settled = 0
    for i in range(n):
        batch = sample_batch(origins[i:i + 1], grid, np.random.default_rng(1000 + i))
        a = scan_entries(batch, fam, 1.0, np.random.default_rng(5000 + i), Resolution(policy="cover"))
        b = scan_entries(batch, fam, 1.0, np.random.default_rng(5000 + i), Resolution(policy="miss"))
        cover += int(np.isfinite(a.times[0]))
        miss += int(np.isfinite(b.times[0]))
        settled += a.pessimistic
        if a.pessimistic:
            assert np.isfinite(a.times[0])
    assert miss <= cover <= miss + settled
    assert cover - miss <= 0.03 * n


def test_d1_entry_matches_reflection():
    # P(a node at distance a - r reaches the ball by t) = 2 P(N(0, t) >= a - r)
    fam = SetFamily.static_ball(1.0, 1)
    n = 4000
    batch = sample_batch(np.full((n, 1), 2.0), np.linspace(0.0, 1.0, 21), np.random.default_rng(22))
    entries = first_entry_times(batch, fam, 1.0, stream=np.random.default_rng(23))
    hit = np.mean(np.isfinite(entries))
    exact = math.erfc(1.0 / math.sqrt(2.0))
    assert hit == pytest.approx(exact, abs=4.0 * math.sqrt(exact * (1.0 - exact) / n))


def test_single_node_isolation_is_exit_time():
    # one node at the origin: T_isol is the exit time of (-1, 1), mean 1
    fam = SetFamily.static_ball(1.0, 1)
    grid = np.linspace(0.0, 8.0, 161)
    values = []
    for i in range(1000):
        batch = sample_batch(np.zeros((1, 1)), grid, np.random.default_rng(3000 + i))
        T = isolation_time(batch, fam, 8.0, stream=np.random.default_rng(7000 + i))
        values.append(8.0 if T.censored else T.value)
    se = math.sqrt(2.0 / 3.0 / len(values))
    assert np.mean(values) == pytest.approx(1.0, abs=4.0 * se)
