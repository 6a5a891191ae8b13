from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from config import PROBE_SERIES_TERMS, PROBE_TIME_FACTOR, PROBE_WINDOW, SAMPLE_BLOCK
from analysis.estimators import mean_estimate
from core.models import Estimate, Region
from core.paths import interval_stay_probability
from core.pointprocess import sample_poisson
from core.seeds import SeedSchedule


@dataclass
class ProbeRow:
    t: float
    expected_count: float      # lambda sqrt(t)
    count_mean: float
    count_var: float
    count_z: float             # (mean - expected) / sqrt(expected / n)
    cover: Estimate            # p(t)
    scaled: float              # p(t) sqrt(t)
    scaled_stderr: float


@dataclass
class ProbeReport:
    rows: List[ProbeRow]

    @property
    def band(self) -> tuple:
        vals = [r.scaled for r in self.rows]
        return min(vals), max(vals)

    @property
    def band_ratio(self) -> float:
        lo, hi = self.band
        return math.inf if lo <= 0.0 else hi / lo


def _count_moments(lam: float, t: float, n: int, stream: SeedSchedule):
    """Counts of a Poisson cloud on [-sqrt t, sqrt t] that fall in [-sqrt t/2, sqrt t/2]."""
    half = math.sqrt(t)
    region = Region.interval(-half, half)
    s = s2 = 0.0
    for block in range(-(-n // SAMPLE_BLOCK)):
        rng = stream.stream(block)
        for _ in range(min(SAMPLE_BLOCK, n - block * SAMPLE_BLOCK)):
            cloud = sample_poisson(lam, region, rng)
            m = float(np.count_nonzero(np.abs(cloud.points[:, 0]) <= half / 2.0))
            s += m
            s2 += m * m
    mean = s / n
    var = max(s2 / n - mean * mean, 0.0) * n / (n - 1) if n > 1 else 0.0
    return mean, var


def _cover_probability(r: float, t: float, n: int, stream: SeedSchedule, level: float) -> Estimate:
    """
    p(t) for a node born uniform in [-sqrt t/2, sqrt t/2]: given its position y
    at s = PROBE_TIME_FACTOR * t, the chance of staying within r of the origin
    for PROBE_WINDOW is the exact interval stay probability.
    """
    half = math.sqrt(t) / 2.0
    s_time = PROBE_TIME_FACTOR * t
    total = total2 = 0.0
    for block in range(-(-n // SAMPLE_BLOCK)):
        rng = stream.stream(block)
        m = min(SAMPLE_BLOCK, n - block * SAMPLE_BLOCK)
        x = rng.uniform(-half, half, size=m)
        y = x + math.sqrt(s_time) * rng.standard_normal(m)
        stay = interval_stay_probability(y, r, PROBE_WINDOW, PROBE_SERIES_TERMS)
        total += float(stay.sum())
        total2 += float(np.dot(stay, stay))
    return mean_estimate(total, total2, n, level)


def d1_coverage_probe(
    t_list: Sequence[float],
    lam: float,
    r: float,
    n_samples: int,
    stream: SeedSchedule,
    level: float = 0.95,
) -> ProbeReport:
    """Poisson count check and p(t) sqrt(t) for each t in `t_list` (d = 1)."""
    for t in t_list:
        if not math.sqrt(t) > 2.0 * r:
            raise ValueError(f"t={t} too small: need sqrt(t) > 2r = {2.0 * r}")
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    rows = []
    for i, t in enumerate(t_list):
        expected = lam * math.sqrt(t)
        mean, var = _count_moments(lam, t, n_samples, stream.child(f"count{i}"))
        z = (mean - expected) / math.sqrt(expected / n_samples)
        cover = _cover_probability(r, t, n_samples, stream.child(f"cover{i}"), level)
        root = math.sqrt(t)
        rows.append(ProbeRow(
            t=float(t),
            expected_count=expected,
            count_mean=mean,
            count_var=var,
            count_z=z,
            cover=cover,
            scaled=cover.value * root,
            scaled_stderr=cover.stderr * root,
        ))
        logging.info(
            "[PROBE] t=%.0f M mean=%.3f (expected %.3f, z=%.2f) p=%.4g p*sqrt(t)=%.4f",
            t, mean, expected, z, cover.value, cover.value * root,
        )
    return ProbeReport(rows)
