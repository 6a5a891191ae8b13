from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from config import SAMPLE_BLOCK, SUITE_HARD_SIGMA, SUITE_SOFT_SIGMA
from analysis.estimators import SuiteFailure, direct_estimate
from core.events import coverage_indicators
from core.models import InequalityReport, Region
from core.seeds import SeedSchedule
from core.sets import Annulus, Ball, Box, Shape, matched_ball

Families = Sequence[Sequence[Shape]]


def _check_case(k: int, R: float, times: Sequence[float], families: Families) -> int:
    if k < 1:
        raise ValueError(f"need at least one node, got k={k}")
    if not R > 0.0:
        raise ValueError(f"birth radius must be > 0, got {R}")
    if any(t < 0.0 for t in times) or any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be sorted and nonnegative")
    if len(families) != k:
        raise ValueError(f"{len(families)} set lists for {k} nodes")
    dims = set()
    for i, sets in enumerate(families):
        if len(sets) != len(times):
            raise ValueError(f"node {i}: {len(sets)} sets for {len(times)} times")
        dims.update(s.d for s in sets)
    if len(dims) > 1:
        raise ValueError(f"sets of mixed dimensions {sorted(dims)}")
    return dims.pop() if dims else 1


def sample_positions(k: int, R: float, times: Sequence[float], d: int, n: int,
                     rng: np.random.Generator) -> np.ndarray:
    """(n, k, m, d) positions of k nodes born uniform in B(0,R) at the listed times."""
    births = Region.ball(R, d).sample_uniform(n * k, rng).reshape(n, k, d)
    if not len(times):
        return np.zeros((n, k, 0, d))
    gaps = np.diff(np.concatenate([[0.0], np.asarray(times, dtype=float)]))
    steps = rng.standard_normal((n, k, gaps.size, d)) * np.sqrt(gaps)[None, None, :, None]
    return births[:, :, None, :] + np.cumsum(steps, axis=2)


def rearrangement_case(
    k: int,
    R: float,
    times: Sequence[float],
    families: Families,
    n_samples: int,
    stream: SeedSchedule,
    level: float = 0.95,
) -> InequalityReport:
    """
    Discrete-time coverage probability for the given per-node sets against
    the same probability with every set replaced by the centered ball of equal
    volume. Both sides are evaluated on the same sampled positions.
    """
    times = [float(t) for t in times]
    d = _check_case(k, R, times, families)
    balls = [[matched_ball(s) for s in sets] for sets in families]

    hits_g = hits_b = discord = 0
    for block in range(-(-n_samples // SAMPLE_BLOCK)):
        m = min(SAMPLE_BLOCK, n_samples - block * SAMPLE_BLOCK)
        pos = sample_positions(k, R, times, d, m, stream.stream(block))
        ind_g = coverage_indicators(pos, families)
        ind_b = coverage_indicators(pos, balls)
        hits_g += int(ind_g.sum())
        hits_b += int(ind_b.sum())
        discord += int(np.count_nonzero(ind_g != ind_b))

    p_general = direct_estimate(hits_g, n_samples, level)
    p_balls = direct_estimate(hits_b, n_samples, level)
    margin = (hits_g - hits_b) / n_samples
    var = max(discord / n_samples - margin ** 2, 0.0)
    se = math.sqrt(var / n_samples)
    z = margin / se if se > 0.0 else 0.0
    return InequalityReport(
        p_general=p_general,
        p_balls=p_balls,
        margin=margin,
        z=z,
        volumes=[[s.volume() for s in sets] for sets in families],
        families=[[s.kind for s in sets] for sets in families],
    )


# -------- random instances --------

def _center_within(rng: np.random.Generator, d: int, max_norm: float) -> Tuple[float, ...]:
    if max_norm <= 0.0:
        return (0.0,) * d
    return tuple(Region.ball(max_norm, d).sample_uniform(1, rng)[0].tolist())


def random_shape(rng: np.random.Generator, d: int, R: float) -> Shape:
    """A ball, box or annulus contained in B(0,R), mostly off-center."""
    kind = rng.choice(["ball", "box", "annulus"])
    if kind == "ball":
        rho = R * rng.uniform(0.1, 0.5)
        return Ball(_center_within(rng, d, R - rho), rho)
    if kind == "box":
        half = R * rng.uniform(0.05, 0.35, size=d)
        return Box(_center_within(rng, d, R - float(np.linalg.norm(half))), tuple(half.tolist()))
    outer = R * rng.uniform(0.15, 0.5)
    inner = outer * rng.uniform(0.2, 0.8)
    return Annulus(_center_within(rng, d, R - outer), inner, outer)


@dataclass
class Instance:
    k: int
    R: float
    times: List[float]
    families: List[List[Shape]]

    @property
    def d(self) -> int:
        return self.families[0][0].d if self.times else 1


def random_instance(rng: np.random.Generator, d: int, R: float = 3.0, max_k: int = 5, max_times: int = 8) -> Instance:
    k = int(rng.integers(1, max_k + 1))
    m = int(rng.integers(1, max_times + 1))
    times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 1.0, size=m - 1))]).tolist()
    families = [[random_shape(rng, d, R) for _ in range(m)] for _ in range(k)]
    return Instance(k, R, times, families)


# -------- quadrature oracle --------

def two_time_oracle(R: float, first: Box, second: Box, gap: float = 1.0, order: int = 64) -> float:
    """
    P(x in first, x + xi(gap) in second) for one node born uniform in [-R, R],
    by Gauss-Legendre quadrature over the birth point.
    """
    lo0, hi0 = first.interval()
    lo1, hi1 = second.interval()
    lo0, hi0 = max(lo0, -R), min(hi0, R)
    if hi0 <= lo0:
        return 0.0
    nodes, weights = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (hi0 - lo0) * nodes + 0.5 * (hi0 + lo0)
    scale = math.sqrt(gap)
    inner = stats.norm.cdf((hi1 - x) / scale) - stats.norm.cdf((lo1 - x) / scale)
    return float(0.5 * (hi0 - lo0) * np.dot(weights, inner) / (2.0 * R))


def oracle_instance(R: float = 4.0, shift: float = 2.0, half_width: float = 1.0) -> Instance:
    """k=1, times {0, 1}, d=1: the same interval displaced by `shift` at both times."""
    box = Box((shift,), (half_width,))
    return Instance(1, R, [0.0, 1.0], [[box, box]])


# -------- suite --------

@dataclass
class SuiteRow:
    index: int
    d: int
    k: int
    n_times: int
    report: InequalityReport

    @property
    def status(self) -> str:
        if self.report.hard_violation:
            return "hard-violation"
        if self.report.z > SUITE_SOFT_SIGMA:
            return "soft-violation"
        return "ok"


def run_suite(
    n_instances: int,
    n_samples: int,
    stream: SeedSchedule,
    dims: Sequence[int] = (1, 2),
    R: float = 3.0,
) -> List[SuiteRow]:
    """Randomized instances alternating over `dims`; instance i uses its own stream."""
    shapes_rng = stream.child("instances")
    rows = []
    for i in range(n_instances):
        d = dims[i % len(dims)]
        inst = random_instance(shapes_rng.stream(i), d, R)
        rep = rearrangement_case(inst.k, inst.R, inst.times, inst.families, n_samples, stream.child(f"case{i}"))
        row = SuiteRow(i, d, inst.k, len(inst.times), rep)
        logging.info(
            "[REARRANGE] #%d d=%d k=%d m=%d general=%.4f balls=%.4f z=%.2f %s",
            i, d, inst.k, len(inst.times), rep.p_general.value, rep.p_balls.value, rep.z, row.status,
        )
        rows.append(row)
    return rows


def oracle_check(n_samples: int, stream: SeedSchedule, inst: Optional[Instance] = None) -> Tuple[InequalityReport, float, float]:
    """MC of the quadrature-oracle instance; returns (report, oracle p_general, z against the oracle)."""
    inst = inst or oracle_instance()
    rep = rearrangement_case(inst.k, inst.R, inst.times, inst.families, n_samples, stream.child("oracle"))
    box0, box1 = inst.families[0]
    exact = two_time_oracle(inst.R, box0, box1, inst.times[1] - inst.times[0])
    se = math.sqrt(exact * (1.0 - exact) / n_samples)
    z = (rep.p_general.value - exact) / se if se > 0.0 else 0.0
    logging.info("[REARRANGE] oracle instance: mc=%.5f quadrature=%.5f z=%.2f", rep.p_general.value, exact, z)
    return rep, exact, z


def suite_verdict(rows: Sequence[SuiteRow], oracle_z: Optional[float] = None) -> None:
    """Raises SuiteFailure on any hard violation or an oracle miss beyond the soft threshold."""
    hard = [r for r in rows if r.report.hard_violation]
    if hard:
        raise SuiteFailure(
            f"{len(hard)} rearrangement instance(s) beyond {SUITE_HARD_SIGMA:g} sigma: "
            + ", ".join(f"#{r.index} z={r.report.z:.2f}" for r in hard),
            hard,
        )
    if oracle_z is not None and abs(oracle_z) > SUITE_SOFT_SIGMA:
        raise SuiteFailure(f"oracle instance off by {oracle_z:.2f} sigma")
