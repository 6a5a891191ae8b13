from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from config import (
    DEFAULT_STEP,
    OCC_MAX_REJECTION_RATE,
    OCC_TAIL_LEVELS,
    OCC_TAIL_SCALE,
    SAMPLE_BLOCK,
)
from analysis.estimators import SamplingError, direct_estimate, mean_estimate
from analysis.exponent_fit import weighted_line
from core.events import occupation_by_node
from core.models import Estimate, Region, SimConfig
from core.paths import PathBatch, interval_stay_probability, sample_batch
from core.pointprocess import truncation_radius
from core.seeds import SeedSchedule
from core.sets import SetFamily, unit_ball_volume
from core.sim_config import psi
from core.world import sample_world

START_MODES = ("boundary", "thinned")


@dataclass
class OccupationTailReport:
    d: int
    r: float
    t: float
    psi: float
    start: str
    n: int
    attempts: int
    mean: Estimate                 # E S_1
    levels: List[float]            # m
    thresholds: List[float]        # m * scale * psi
    tail: List[Estimate]           # P(S_1 > threshold)
    slope: float = math.nan        # d log P / d m
    intercept: float = math.nan
    r_squared: float = math.nan
    floor: float = 0.0             # confined-node lower bound on P(T_isol > t)
    fitted_levels: List[float] = field(default_factory=list)

    @property
    def rejection_rate(self) -> float:
        return 1.0 - self.n / self.attempts if self.attempts else 0.0


def confined_node_floor(d: int, lam: float, r: float, t: float) -> float:
    """
    P(some node starts within r/2 of the origin and stays in the cube of
    half-width r/(2 sqrt d) around its start up to t); such a node keeps the
    origin covered, so this bounds P(T_isol > t) from below.
    """
    stay = float(interval_stay_probability(0.0, r / (2.0 * math.sqrt(d)), t)) ** d
    return -math.expm1(-lam * unit_ball_volume(d) * (r / 2.0) ** d * stay)


def _sphere_points(n: int, d: int, r: float, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return r * g / norms


def _boundary_occupations(cfg: SimConfig, grid: np.ndarray, n: int, stream: SeedSchedule) -> np.ndarray:
    ball = Region.ball(cfg.r, cfg.d)
    out = []
    for block in range(-(-n // SAMPLE_BLOCK)):
        rng = stream.stream(block)
        m = min(SAMPLE_BLOCK, n - block * SAMPLE_BLOCK)
        batch = sample_batch(_sphere_points(m, cfg.d, cfg.r, rng), grid, rng, first_id=block * SAMPLE_BLOCK)
        out.append(occupation_by_node(batch, ball, (0.0, cfg.horizon)))
    return np.concatenate(out)


def _thinned_occupations(cfg: SimConfig, grid: np.ndarray, n: int, stream: SeedSchedule):
    """Uniform starts in B(0, trunc_radius) kept only if they meet B(0,r) before the horizon."""
    ball = Region.ball(cfg.r, cfg.d)
    region = Region.ball(cfg.trunc_radius, cfg.d)
    family = SetFamily.static_ball(cfg.r, cfg.d)
    max_attempts = int(math.ceil(n / (1.0 - OCC_MAX_REJECTION_RATE)))
    out: List[np.ndarray] = []
    accepted = attempts = block = 0
    while accepted < n:
        rng = stream.stream(block)
        block += 1
        world = sample_world(cfg, grid, rng, reach=cfg.r, origins=region.sample_uniform(SAMPLE_BLOCK, rng))
        attempts += SAMPLE_BLOCK
        hit = np.isfinite(world.first_entries(family))
        if hit.any():
            p = world.paths
            kept = PathBatch(p.node_ids[hit], p.origins[hit], p.times, p.disp[hit])
            occ = occupation_by_node(kept, ball, (0.0, cfg.horizon))[: n - accepted]
            out.append(occ)
            accepted += occ.size
        if attempts >= max_attempts and accepted < n:
            rate = 1.0 - accepted / attempts
            raise SamplingError(
                f"rejection rate {rate:.4%} above {OCC_MAX_REJECTION_RATE:.1%} with bounding radius "
                f"{cfg.trunc_radius:.2f}; use boundary starts or a smaller horizon"
            )
    return np.concatenate(out), attempts


def occupation_tail_report(
    d: int,
    r: float,
    t: float,
    n_samples: int,
    stream: SeedSchedule,
    start: str = "boundary",
    levels: Sequence[float] = OCC_TAIL_LEVELS,
    scale: float = OCC_TAIL_SCALE,
    step: float = DEFAULT_STEP,
    lam: float = 1.0,
    level: float = 0.95,
) -> OccupationTailReport:
    """
    Samples S_1, the time a path that meets B(0,r) spends in it during [0,t],
    and fits log P(S_1 > m * scale * Psi_d(t)) against m.
    """
    if start not in START_MODES:
        raise ValueError(f"start must be one of {START_MODES}, got {start!r}")
    scaling = psi(d, t)
    if scaling < 1.0:
        raise ValueError(f"Psi_{d}({t}) = {scaling:.3f} < 1; use a larger t")
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")

    cfg = SimConfig(d=d, lam=1.0, r=r, horizon=t, step=min(step, t))
    grid = cfg.grid()
    if start == "boundary":
        occ = _boundary_occupations(cfg, grid, n_samples, stream)
        attempts = n_samples
    else:
        cfg = SimConfig(d=d, lam=1.0, r=r, horizon=t, step=cfg.step,
                        trunc_radius=truncation_radius(cfg, 0.0, 1e-3))
        occ, attempts = _thinned_occupations(cfg, grid, n_samples, stream)
    occ = np.clip(occ, 0.0, t)

    mean = mean_estimate(float(occ.sum()), float(np.dot(occ, occ)), occ.size, level)
    # S_1 <= t, so a threshold at or above t has zero tail
    kept = [float(m) for m in levels if m * scale * scaling < t]
    if len(kept) < len(levels):
        logging.warning("[OCCUPATION] dropped %d levels with threshold >= t=%g", len(levels) - len(kept), t)
    if not kept:
        raise ValueError(f"every tail threshold is >= t={t}; use smaller levels or scale")
    levels = kept
    thresholds = [m * scale * scaling for m in levels]
    tail = [direct_estimate(int(np.count_nonzero(occ > u)), occ.size, level) for u in thresholds]

    report = OccupationTailReport(
        d=d, r=r, t=t, psi=scaling, start=start, n=occ.size, attempts=attempts, mean=mean,
        levels=[float(m) for m in levels], thresholds=thresholds, tail=tail,
        floor=confined_node_floor(d, lam, r, t),
    )
    usable = [(m, e) for m, e in zip(report.levels, tail) if e.successes]
    if len(usable) >= 3:
        m_arr = np.asarray([m for m, _ in usable])
        p = np.asarray([e.value for _, e in usable])
        k = np.asarray([e.successes for _, e in usable], dtype=float)
        # var(log p_hat) ~ (1 - p) / k
        w = k / np.maximum(1.0 - p, 1e-12)
        slope, intercept, r2, _, _ = weighted_line(m_arr, np.log(p), w)
        report.slope, report.intercept, report.r_squared = slope, intercept, r2
        report.fitted_levels = m_arr.tolist()
    else:
        logging.warning("[OCCUPATION] only %d nonzero tail levels, no fit", len(usable))
    logging.info(
        "[OCCUPATION] d=%d t=%.1f start=%s mean=%.3f slope=%.3f r2=%.3f rejection=%.2f%%",
        d, t, start, mean.value, report.slope, report.r_squared, 100.0 * report.rejection_rate,
    )
    return report
