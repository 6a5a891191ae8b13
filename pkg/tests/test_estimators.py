import math

import numpy as np
import pytest

from analysis.estimators import (
    SurvivalTally,
    binomial_ci,
    detection_levels,
    direct_estimate,
    estimate_survival,
    fill_tail_with_splitting,
    isotonic_nonincreasing,
    mean_estimate,
    mean_total_occupation,
    merge,
    occupation_identity,
    policy_budget,
    sausage_volume,
    shell_report,
    splitting_estimate,
    tally_survival,
    truncation_soundness,
)
from core.models import EventSpec, SimConfig
from core.seeds import SeedSchedule
from core.sets import SetFamily
from core.sim_config import validate_config


def _events(cfg):
    fam = SetFamily.static_ball(cfg.r, cfg.d)
    return [EventSpec("isolation", fam), EventSpec("detection", fam)]


def test_clopper_pearson_closed_forms():
    lo, hi = binomial_ci(0, 10)
    assert lo == 0.0
    assert hi == pytest.approx(1.0 - 0.025 ** 0.1)
    lo, hi = binomial_ci(1, 1)
    assert lo == pytest.approx(0.025)
    assert hi == 1.0


def test_clopper_pearson_mirror():
    lo, hi = binomial_ci(3, 10)
    lo2, hi2 = binomial_ci(7, 10)
    assert lo == pytest.approx(1.0 - hi2)
    assert hi == pytest.approx(1.0 - lo2)


@pytest.mark.parametrize("k,n,level", [(0, 0, 0.95), (5, 4, 0.95), (1, 4, 1.0)])
def test_clopper_pearson_rejects(k, n, level):
    with pytest.raises(ValueError):
        binomial_ci(k, n, level)


def test_direct_estimate_scaled():
    est = direct_estimate(25, 100, scale=4.0)
    assert est.value == pytest.approx(1.0)
    assert est.stderr == pytest.approx(4.0 * math.sqrt(0.25 * 0.75 / 100))
    assert est.ci[0] < 1.0 < est.ci[1]


def test_mean_estimate():
    est = mean_estimate(6.0, 14.0, 3)
    assert est.value == pytest.approx(2.0)
    assert est.stderr == pytest.approx(math.sqrt(1.0 / 3.0))


def test_isotonic_projection():
    assert isotonic_nonincreasing([0.5, 0.7, 0.3]).tolist() == pytest.approx([0.6, 0.6, 0.3])
    assert isotonic_nonincreasing([0.9, 0.4]).tolist() == [0.9, 0.4]


def test_merge_pools_counts():
    a = direct_estimate(3, 10, descriptor="x")
    b = direct_estimate(5, 20, descriptor="x")
    ab, ba = merge([a, b]), merge([b, a])
    assert ab.successes == ba.successes == 8
    assert ab.n == 30
    assert ab.value == pytest.approx(ba.value)
    assert merge([a]) is a


def test_merge_rejects_mixed_experiments():
    with pytest.raises(ValueError):
        merge([direct_estimate(1, 2, descriptor="x"), direct_estimate(1, 2, descriptor="y")])
    with pytest.raises(ValueError):
        merge([])


def test_void_probabilities_at_time_zero(schedule):
    cfg = validate_config(SimConfig(d=2, lam=1.0, r=1.0, horizon=1.0, n_samples=400))
    tally = tally_survival(cfg, _events(cfg), [0.0], schedule)
    p_empty = math.exp(-math.pi)
    n = tally.n
    iso, det = tally.curve(0).points[0], tally.curve(1).points[0]
    tol = 5.0 * math.sqrt(p_empty * (1.0 - p_empty) / n)
    assert iso.value == pytest.approx(1.0 - p_empty, abs=tol)
    assert det.value == pytest.approx(p_empty, abs=tol)
    # at t = 0 the two events are complements on every world
    assert tally.exceed[0, 0] + tally.exceed[1, 0] == n
    assert tally.discord[1, 0] == n


def test_shards_merge_to_full_run(schedule):
    cfg = validate_config(SimConfig(d=2, lam=1.0, r=1.0, horizon=1.0, n_samples=120))
    events = _events(cfg)[:1]
    full = tally_survival(cfg, events, [0.0], schedule)
    parts = [tally_survival(cfg, events, [0.0], schedule, a, b) for a, b in ((60, 120), (0, 60))]
    merged = merge(parts)
    assert merged.n == full.n
    assert np.array_equal(merged.exceed, full.exceed)
    assert merged.curve(0).values.tolist() == full.curve(0).values.tolist()


def test_tally_rejects_bad_grid(small_config, schedule):
    with pytest.raises(ValueError):
        tally_survival(small_config, _events(small_config), [1.0, 0.5], schedule)
    with pytest.raises(ValueError):
        tally_survival(small_config, _events(small_config), [5.0], schedule)


def test_paired_self_comparison():
    tally = SurvivalTally(
        t_grid=(1.0,),
        labels=("a", "b"),
        n=10,
        exceed=np.array([[4], [4]]),
        discord=np.array([[0], [0]]),
        pessimistic=np.zeros(2, dtype=int),
    )
    margin, z = tally.paired(1)
    assert margin.tolist() == [0.0]
    assert z.tolist() == [0.0]


def test_single_stage_splitting_equals_direct():
    cfg = validate_config(SimConfig(d=2, lam=1.0, r=1.0, horizon=0.2, step=0.05, n_samples=40))
    event = EventSpec("detection", SetFamily.static_ball(1.0, 2))
    stream = SeedSchedule(3, "split")
    split = splitting_estimate(cfg, event, 0.2, [0.0], 40, stream)
    tally = tally_survival(cfg, [event], [0.2], stream, 0, 40)
    assert split.method == "splitting"
    assert split.successes == int(tally.exceed[0, 0])


def test_multistage_splitting_interval():
    cfg = validate_config(SimConfig(d=2, lam=0.5, r=1.0, horizon=0.4, step=0.05, n_samples=30))
    event = EventSpec("detection", SetFamily.static_ball(1.0, 2))
    est = splitting_estimate(cfg, event, 0.4, [0.0, 0.2], 30, SeedSchedule(4, "split"))
    assert 0.0 <= est.ci[0] <= est.value <= est.ci[1] <= 1.0


@pytest.mark.parametrize("levels", [[0.3, 0.1], [0.0, 0.5], [], [-0.1]])
def test_splitting_rejects_levels(levels):
    cfg = validate_config(SimConfig(d=2, lam=1.0, r=1.0, horizon=0.5, step=0.05))
    event = EventSpec("detection", SetFamily.static_ball(1.0, 2))
    with pytest.raises(ValueError):
        splitting_estimate(cfg, event, 0.5, levels, 10, SeedSchedule(1, "x"))


def test_tail_fill_leaves_large_points(small_config, schedule):
    tally = SurvivalTally((0.5, 1.0), ("isolation",), 10, np.array([[9, 8]]), np.zeros((1, 2), dtype=int),
                          np.zeros(1, dtype=int))
    curve = tally.curve(0)
    event = _events(small_config)[0]
    filled = fill_tail_with_splitting(curve, small_config, event, schedule)
    assert filled.values.tolist() == curve.values.tolist()


def test_sausage_d1_matches_range_formula():
    # E vol W(t) = 2r + E range = 2r + sqrt(8t/pi) in d = 1
    base = SimConfig(d=1, lam=1.0, r=0.5, horizon=1.0, step=0.05, refine_depth=4)
    est = sausage_volume(1, 0.5, 1.0, 2000, SeedSchedule(8, "sausage"), config=base)
    exact = 1.0 + math.sqrt(8.0 / math.pi)
    assert est.n == 2000
    assert abs(est.value - exact) < 5.0 * est.stderr


def test_sausage_shards_align_to_blocks():
    with pytest.raises(ValueError):
        sausage_volume(1, 0.5, 1.0, 2000, SeedSchedule(8, "sausage"), start=10, stop=1000)


def test_sausage_reports_policy_settled_nodes():
    base = SimConfig(d=2, lam=1.0, r=1.0, horizon=0.5, step=0.05)
    est = sausage_volume(2, 1.0, 0.5, 1000, SeedSchedule(9, "sausage"), config=base)
    # under the default cover policy a settled node counts as a hit
    assert 0 <= est.pessimistic <= est.successes
    assert est.to_dict()["pessimistic"] == est.pessimistic
    exact_d1 = sausage_volume(1, 0.5, 1.0, 1000, SeedSchedule(8, "sausage"))
    assert exact_d1.pessimistic == 0


def test_policy_budget(caplog):
    ok = policy_budget(0, 1000, 0.2, 1e-4)
    assert ok["exceeded"] is False
    assert ok["pessimistic_share"] == 0.0
    over = policy_budget(5, 1000, 0.2, 1e-4, "sausage t=1")
    assert over["exceeded"] is True
    assert over["allowed_share"] == pytest.approx(2e-5)
    assert "[BUDGET]" in caplog.text
    # a zero estimate is floored at 1/n
    assert policy_budget(0, 100, 0.0, 0.5)["allowed_share"] == pytest.approx(0.005)


def test_detection_levels():
    assert detection_levels(1, 1.0, 4.0, 4) == pytest.approx([0.0, 0.25, 1.0, 2.25], abs=1e-5)
    assert detection_levels(3, 1.0, 3.0, 3) == pytest.approx([0.0, 1.0, 2.0])
    lv = detection_levels(2, 1.0, 5.0)
    assert lv[0] == 0.0
    assert all(b > a for a, b in zip(lv, lv[1:]))
    assert lv[-1] < 5.0
    with pytest.raises(ValueError):
        detection_levels(2, 1.0, 5.0, 0)


def test_splitting_agrees_with_direct():
    cfg = validate_config(SimConfig(d=2, lam=0.2, r=1.0, horizon=0.5, step=0.05, n_samples=2000))
    event = EventSpec("detection", SetFamily.static_ball(1.0, 2))
    direct = estimate_survival(cfg, event, [0.5], SeedSchedule(31, "direct")).points[0]
    levels = detection_levels(2, 1.0, 0.5, 3)
    split = splitting_estimate(cfg, event, 0.5, levels, 1000, SeedSchedule(31, "split"))
    assert split.value > 0.0
    assert abs(split.value - direct.value) <= 4.0 * math.hypot(split.stderr, direct.stderr)


def test_detection_superposition():
    # independent clouds superpose: P_2lam(T_det > t) = P_lam(T_det > t)^2
    t = 0.25
    event = EventSpec("detection", SetFamily.static_ball(1.0, 2))
    p = {}
    for lam in (0.25, 0.5):
        cfg = validate_config(SimConfig(d=2, lam=lam, r=1.0, horizon=t, step=0.05, n_samples=2000))
        p[lam] = estimate_survival(cfg, event, [t], SeedSchedule(32, f"lam{lam:g}")).points[0]
    half, full = p[0.25], p[0.5]
    se = math.hypot(full.stderr, 2.0 * half.value * half.stderr)
    assert abs(full.value - half.value ** 2) <= 4.0 * se


def test_survival_monotone_in_radius():
    t_grid = [0.25, 0.5]
    curves = {}
    for r in (0.5, 1.0):
        cfg = validate_config(SimConfig(d=2, lam=1.0, r=r, horizon=0.5, step=0.05, n_samples=400))
        tally = tally_survival(cfg, _events(cfg), t_grid, SeedSchedule(33, f"r{r:g}"))
        curves[r] = (tally.curve(0).values, tally.curve(1).values)
    iso_small, det_small = curves[0.5]
    iso_big, det_big = curves[1.0]
    # a larger ball is covered longer and found sooner
    assert np.all(iso_big > iso_small)
    assert np.all(det_big < det_small)


def test_total_occupation_identity():
    # E sum_i |{s in [0,t]: |x_i(s)| <= r}| = lam |B(0,r)| t
    cfg = validate_config(SimConfig(d=2, lam=1.0, r=1.0, horizon=2.0, step=0.05, n_samples=200))
    est = mean_total_occupation(cfg, (0.0, 2.0), SeedSchedule(34, "occupation"))
    report = occupation_identity(est, cfg, (0.0, 2.0))
    assert report["expected"] == pytest.approx(2.0 * math.pi)
    assert report["worlds"] == 200
    assert abs(report["z"]) <= 4.0


def test_truncation_shell_is_sound(small_config):
    fam = SetFamily.static_ball(small_config.r, small_config.d)
    est = truncation_soundness(small_config, fam, 100, SeedSchedule(35, "shell"))
    report = shell_report(est, small_config.trunc_eps)
    assert est.n == 100
    assert report["sound"] is True
    assert est.value <= small_config.trunc_eps + 3.0 * est.stderr


def test_shell_report_flags_excess():
    bad = mean_estimate(50.0, 50.0, 100)
    assert shell_report(bad, 1e-3)["sound"] is False
