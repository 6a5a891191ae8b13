import pytest

from analysis import occupation_tail
from analysis.estimators import SamplingError
from analysis.occupation_tail import confined_node_floor, occupation_tail_report
from core.seeds import SeedSchedule


def test_confined_floor_decreases_with_time():
    values = [confined_node_floor(2, 1.0, 1.0, t) for t in (0.1, 1.0, 4.0)]
    assert all(0.0 < v < 1.0 for v in values)
    assert values[0] > values[1] > values[2]


def test_rejects_small_scaling():
    with pytest.raises(ValueError):
        occupation_tail_report(2, 1.0, 2.0, 100, SeedSchedule(1, "occ"))
    with pytest.raises(ValueError):
        occupation_tail_report(3, 1.0, 2.0, 100, SeedSchedule(1, "occ"), start="interior")


def test_boundary_report():
    report = occupation_tail_report(3, 1.0, 2.0, 600, SeedSchedule(2, "occ"), step=0.05)
    assert report.psi == 1.0
    assert report.n == report.attempts == 600
    assert report.rejection_rate == 0.0
    assert 0.0 < report.mean.value < 2.0
    tails = [e.value for e in report.tail]
    assert all(b <= a for a, b in zip(tails, tails[1:]))
    assert report.levels == [1.0]
    assert report.thresholds == pytest.approx([1.0])


def test_levels_at_or_above_t_are_dropped():
    report = occupation_tail_report(3, 1.0, 2.0, 200, SeedSchedule(4, "occ"), levels=(0.5, 1, 1.5, 2, 3), step=0.1)
    assert report.levels == [0.5, 1.0, 1.5]
    assert report.thresholds == pytest.approx([0.5, 1.0, 1.5])
    assert len(report.tail) == 3


def test_default_scale_is_psi():
    report = occupation_tail_report(3, 1.0, 8.0, 200, SeedSchedule(5, "occ"), step=0.2)
    assert report.psi == 1.0
    assert report.thresholds == pytest.approx([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])


def test_thinned_rejection_limit(monkeypatch):
    monkeypatch.setattr(occupation_tail, "OCC_MAX_REJECTION_RATE", 0.0)
    with pytest.raises(SamplingError):
        occupation_tail_report(3, 1.0, 1.0, 1000, SeedSchedule(3, "occ"), start="thinned", step=0.1)
