from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, stats

from config import (
    CI_LEVEL,
    SAMPLE_BLOCK,
    SAUSAGE_TRUNC_EPS,
    SPLITTING_DEFAULT_EFFORT,
    SPLITTING_DEFAULT_LEVELS,
    SPLITTING_SWITCH_P,
    SUITE_SOFT_SIGMA,
)
from core.models import Estimate, EventSpec, Region, SimConfig, SurvivalCurve
from core.paths import build_grid
from core.pointprocess import sample_poisson, truncation_radius
from core.seeds import SeedSchedule
from core.sets import SetFamily
from core.world import sample_world


class SamplingError(RuntimeError):
    """Rejection sampling accepted too few candidates to continue."""


class SuiteFailure(RuntimeError):
    """A statistical suite found a violation beyond its hard threshold."""

    def __init__(self, message: str, failures: Sequence = ()):
        super().__init__(message)
        self.failures = list(failures)


# -------- confidence intervals and point estimates --------

def binomial_ci(successes: int, n: int, level: float = CI_LEVEL) -> Tuple[float, float]:
    """Clopper-Pearson interval."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 <= successes <= n:
        raise ValueError(f"successes must lie in [0, {n}], got {successes}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    alpha = 1.0 - level
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(alpha / 2.0, successes, n - successes + 1))
    hi = 1.0 if successes == n else float(stats.beta.ppf(1.0 - alpha / 2.0, successes + 1, n - successes))
    return lo, hi


def direct_estimate(
    successes: int,
    n: int,
    level: float = CI_LEVEL,
    scale: float = 1.0,
    method: str = "direct",
    descriptor: str = "",
    pessimistic: int = 0,
) -> Estimate:
    p = successes / n
    lo, hi = binomial_ci(successes, n, level)
    return Estimate(
        value=scale * p,
        stderr=scale * math.sqrt(p * (1.0 - p) / n),
        n=n,
        ci=(scale * lo, scale * hi),
        method=method,
        successes=int(successes),
        level=level,
        descriptor=descriptor,
        scale=scale,
        pessimistic=int(pessimistic),
    )


def policy_budget(pessimistic: int, n: int, estimate: float, budget: float, label: str = "") -> Dict[str, Any]:
    """
    Share of samples settled by the uncertain-segment policy against the
    allowed share, `budget` times the estimated probability (floored at 1/n).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    share = pessimistic / n
    allowed = budget * max(estimate, 1.0 / n)
    exceeded = share > allowed
    if exceeded:
        logging.warning(
            "[BUDGET] %s: %d/%d samples settled by policy (%.3g), budget %.3g",
            label or "run", pessimistic, n, share, allowed,
        )
    return {"pessimistic_samples": int(pessimistic), "pessimistic_share": share,
            "allowed_share": allowed, "exceeded": bool(exceeded)}


def mean_estimate(sum_x: float, sum_x2: float, n: int, level: float = CI_LEVEL, descriptor: str = "") -> Estimate:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    mean = sum_x / n
    var = max(sum_x2 / n - mean * mean, 0.0) * n / (n - 1) if n > 1 else 0.0
    se = math.sqrt(var / n)
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    return Estimate(
        value=mean,
        stderr=se,
        n=n,
        ci=(mean - z * se, mean + z * se),
        method="mean",
        level=level,
        descriptor=descriptor,
        sums=(sum_x, sum_x2),
    )


def isotonic_nonincreasing(values: Sequence[float], weights: Optional[Sequence[float]] = None) -> np.ndarray:
    res = optimize.isotonic_regression(np.asarray(values, dtype=float), weights=weights, increasing=False)
    return np.asarray(res.x, dtype=float)


def _check_t_grid(t_grid: Sequence[float], horizon: float) -> Tuple[float, ...]:
    grid = tuple(float(t) for t in t_grid)
    if not grid:
        raise ValueError("t_grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("t_grid must be strictly increasing")
    if grid[0] < 0.0 or grid[-1] > horizon + 1e-12:
        raise ValueError(f"t_grid must lie in [0, horizon={horizon}]")
    return grid


def _descriptor(kind: str, config: SimConfig, extra: str, stream: SeedSchedule) -> str:
    return (
        f"{kind}|d={config.d}|lam={config.lam:g}|r={config.r:g}|R={config.trunc_radius:g}"
        f"|h={config.step:g}|depth={config.refine_depth}|policy={config.uncertain_policy}"
        f"|{extra}|seed={stream.master_seed}|exp={stream.experiment_id}"
    )


def _curve_from_points(
    t_grid: Tuple[float, ...],
    points: List[Estimate],
    event: str,
    descriptor: str,
    pessimistic: int,
) -> SurvivalCurve:
    raw = [p.value for p in points]
    mono = isotonic_nonincreasing(raw, [p.n for p in points])
    projected = []
    for p, v in zip(points, mono):
        v = float(v)
        if v != p.value:
            p = replace(p, value=v, ci=(min(p.ci[0], v), max(p.ci[1], v)))
        projected.append(p)
    return SurvivalCurve(
        t_grid=t_grid,
        points=tuple(projected),
        event=event,
        raw=tuple(raw),
        isotonic=True,
        descriptor=descriptor,
        pessimistic=pessimistic,
    )


# -------- survival --------

@dataclass
class SurvivalTally:
    """Per-t exceedance counts for several events evaluated on common worlds."""

    t_grid: Tuple[float, ...]
    labels: Tuple[str, ...]
    n: int
    exceed: np.ndarray        # (E, T) samples with event time > t
    discord: np.ndarray       # (E, T) samples where event e and event 0 disagree at t
    pessimistic: np.ndarray   # (E,) samples with a policy-resolved segment
    level: float = CI_LEVEL
    descriptor: str = ""

    def merge(self, other: "SurvivalTally") -> "SurvivalTally":
        if (self.descriptor, self.labels, self.t_grid) != (other.descriptor, other.labels, other.t_grid):
            raise ValueError("cannot merge tallies of different experiments")
        return SurvivalTally(
            self.t_grid,
            self.labels,
            self.n + other.n,
            self.exceed + other.exceed,
            self.discord + other.discord,
            self.pessimistic + other.pessimistic,
            self.level,
            self.descriptor,
        )

    def curve(self, e: int = 0) -> SurvivalCurve:
        points = [
            direct_estimate(int(c), self.n, self.level, descriptor=self.descriptor)
            for c in self.exceed[e]
        ]
        return _curve_from_points(self.t_grid, points, self.labels[e], self.descriptor, int(self.pessimistic[e]))

    def paired(self, e: int) -> Tuple[np.ndarray, np.ndarray]:
        """Per-t margin (event e minus event 0) and its paired z-score."""
        margin = (self.exceed[e] - self.exceed[0]) / self.n
        second = self.discord[e] / self.n
        var = np.maximum(second - margin ** 2, 0.0)
        se = np.sqrt(var / self.n)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0.0, margin / se, 0.0)
        return margin, z


def tally_survival(
    config: SimConfig,
    events: Sequence[EventSpec],
    t_grid: Sequence[float],
    stream: SeedSchedule,
    start: int = 0,
    stop: Optional[int] = None,
) -> SurvivalTally:
    """Evaluates every event on the same worlds start..stop-1 (common random numbers)."""
    grid_t = _check_t_grid(t_grid, config.horizon)
    stop = config.n_samples if stop is None else stop
    if not 0 <= start < stop:
        raise ValueError(f"empty sample range [{start}, {stop})")
    horizon = grid_t[-1]
    grid = build_grid(config, grid_t, horizon=horizon)
    reach = max([config.set_bound + config.r] + [e.family.bound for e in events])
    labels = tuple(e.name for e in events)

    E, T = len(events), len(grid_t)
    exceed = np.zeros((E, T), dtype=np.int64)
    discord = np.zeros((E, T), dtype=np.int64)
    pessimistic = np.zeros(E, dtype=np.int64)
    ts = np.asarray(grid_t)
    report_every = max(1, (stop - start) // 10)
    for i in range(start, stop):
        world = sample_world(config, grid, stream.stream(i), reach=reach)
        rows = [world.event_time(e) for e in events]
        ind = np.asarray([[T_e.exceeds(t) for t in ts] for T_e in rows], dtype=bool)
        exceed += ind
        discord += ind != ind[0]
        pessimistic += np.asarray([T_e.pessimistic > 0 for T_e in rows], dtype=np.int64)
        if (i - start + 1) % report_every == 0:
            logging.info("[SURVIVAL] %s worlds %d/%d", "/".join(labels), i - start + 1, stop - start)

    if pessimistic.any():
        logging.warning("[SURVIVAL] samples with policy-resolved segments: %s", pessimistic.tolist())
    grid_desc = "t=" + ",".join(f"{t:g}" for t in grid_t)
    return SurvivalTally(
        t_grid=grid_t,
        labels=labels,
        n=stop - start,
        exceed=exceed,
        discord=discord,
        pessimistic=pessimistic,
        level=config.ci_level,
        descriptor=_descriptor("/".join(labels), config, grid_desc, stream),
    )


def estimate_survival(
    config: SimConfig,
    event: EventSpec,
    t_grid: Sequence[float],
    stream: SeedSchedule,
    start: int = 0,
    stop: Optional[int] = None,
) -> SurvivalCurve:
    """P(T > t) on t_grid from independent worlds, one world per sample evaluated at every t."""
    return tally_survival(config, [event], t_grid, stream, start, stop).curve(0)


# -------- Wiener sausage --------

def _block_range(start: int, stop: int, n_samples: int):
    if start % SAMPLE_BLOCK or (stop % SAMPLE_BLOCK and stop != n_samples):
        raise ValueError(f"sample range [{start}, {stop}) must align to blocks of {SAMPLE_BLOCK}")
    for block in range(start // SAMPLE_BLOCK, -(-stop // SAMPLE_BLOCK)):
        lo = block * SAMPLE_BLOCK
        yield block, min(lo + SAMPLE_BLOCK, stop) - lo


def sausage_config(d: int, r: float, t: float, base: Optional[SimConfig] = None) -> SimConfig:
    """Unit-intensity config whose truncation ball bounds the sausage volume duality integral."""
    base = base or SimConfig(d=d, lam=1.0, r=r, horizon=t)
    cfg = SimConfig(
        d=d,
        lam=1.0,
        r=r,
        horizon=t,
        step=min(base.step, t),
        refine_depth=base.refine_depth,
        error_budget=base.error_budget,
        uncertain_policy=base.uncertain_policy,
        ci_level=base.ci_level,
        trunc_eps=SAUSAGE_TRUNC_EPS,
        master_seed=base.master_seed,
    )
    return replace(cfg, trunc_radius=truncation_radius(cfg, 0.0, SAUSAGE_TRUNC_EPS), auto_trunc=True)


def sausage_volume(
    d: int,
    r: float,
    t: float,
    n_samples: int,
    stream: SeedSchedule,
    config: Optional[SimConfig] = None,
    start: int = 0,
    stop: Optional[int] = None,
) -> Estimate:
    """
    E vol W_0(t) by duality: the volume equals the integral over x of
    P(a Brownian motion from x meets B(0,r) before t).
    """
    if not t > 0.0:
        raise ValueError(f"sausage time must be > 0, got {t}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    stop = n_samples if stop is None else stop
    cfg = sausage_config(d, r, t, config)
    region = Region.ball(cfg.trunc_radius, d)
    family = SetFamily.static_ball(r, d)
    grid = build_grid(cfg, horizon=t)

    hits = settled = 0
    for block, m in _block_range(start, stop, n_samples):
        rng = stream.stream(block)
        origins = region.sample_uniform(m, rng)
        world = sample_world(cfg, grid, rng, reach=r, origins=origins)
        scan = world.scan_entries(family)
        hits += int(np.count_nonzero(np.isfinite(scan.times)))
        settled += scan.pessimistic
    n = stop - start
    logging.info("[SAUSAGE] d=%d r=%.2f t=%.2f hits=%d/%d R=%.2f policy-settled=%d",
                 d, r, t, hits, n, cfg.trunc_radius, settled)
    return direct_estimate(
        hits,
        n,
        cfg.ci_level,
        scale=region.volume(),
        descriptor=_descriptor("sausage", cfg, f"t={t:g}|n={n_samples}", stream),
        pessimistic=settled,
    )


# -------- multilevel splitting --------

def splitting_estimate(
    config: SimConfig,
    event: EventSpec,
    t: float,
    levels: Sequence[float],
    effort: int,
    stream: SeedSchedule,
) -> Estimate:
    """
    Fixed-effort splitting on elapsed event-free time.

    Stage j runs `effort` worlds over [b_j, b_{j+1}] (b = 0, levels, t); stage
    0 worlds are fresh, later ones restart from the node positions of the
    survivors of the previous stage, cloned as evenly as possible.
    """
    levels = [float(x) for x in levels]
    if not levels or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be a non-empty strictly increasing sequence, got {levels}")
    if levels[0] < 0.0 or (t > 0.0 and levels[-1] >= t) or (t == 0.0 and levels != [0.0]):
        raise ValueError(f"levels must lie in [0, t={t})")
    if effort < 1:
        raise ValueError("effort must be >= 1")
    if t > config.horizon + 1e-12:
        raise ValueError(f"t={t} beyond the configured horizon {config.horizon}")

    bounds = sorted(set([0.0] + levels + [float(t)]))
    stages = list(zip(bounds[:-1], bounds[1:])) or [(0.0, 0.0)]
    reach = max(config.set_bound + config.r, event.family.bound)
    descriptor = _descriptor(
        f"split-{event.name}", config, f"t={t:g}|levels={','.join(f'{x:g}' for x in levels)}|effort={effort}", stream
    )

    states: List[np.ndarray] = []
    probs: List[float] = []
    survivors = 0
    for j, (b0, b1) in enumerate(stages):
        grid = build_grid(config, horizon=b1 - b0)
        family = event.family.shifted(b0) if b0 > 0.0 else event.family
        spec = EventSpec(event.kind, family, event.label)
        last = j == len(stages) - 1
        if j == 0:
            worlds = ((stream.stream(i), None) for i in range(effort))
        else:
            base, extra = divmod(effort, len(states))
            clones = stream.child(f"stage{j}")
            plan = [s for k, s in enumerate(states) for _ in range(base + (1 if k < extra else 0))]
            worlds = ((clones.stream(slot), state) for slot, state in enumerate(plan))

        next_states: List[np.ndarray] = []
        survivors = 0
        for rng, origins in worlds:
            world = sample_world(config, grid, rng, reach=reach, origins=origins)
            if world.event_time(spec).exceeds(b1 - b0):
                survivors += 1
                if not last:
                    next_states.append(world.final_positions)
        p = survivors / effort
        probs.append(p)
        logging.info("[SPLITTING] stage %d [%.3f, %.3f] p=%.4f", j, b0, b1, p)
        if survivors == 0:
            break
        states = next_states

    if len(stages) == 1:
        return direct_estimate(survivors, effort, config.ci_level, method="splitting", descriptor=descriptor)

    value = float(np.prod(probs))
    if value == 0.0:
        prior = float(np.prod(probs[:-1])) if len(probs) > 1 else 1.0
        hi = prior * binomial_ci(0, effort, config.ci_level)[1]
        return Estimate(0.0, 0.0, effort, (0.0, hi), "splitting", level=config.ci_level, descriptor=descriptor)
    rel = math.sqrt(sum((1.0 - p) / (effort * p) for p in probs))
    z = float(stats.norm.ppf(0.5 + config.ci_level / 2.0))
    return Estimate(
        value=value,
        stderr=value * rel,
        n=effort,
        ci=(value * math.exp(-z * rel), min(1.0, value * math.exp(z * rel))),
        method="splitting",
        level=config.ci_level,
        descriptor=descriptor,
    )


def detection_levels(d: int, r: float, t: float, stages: int = SPLITTING_DEFAULT_LEVELS) -> List[float]:
    """
    Stage starts for detection splitting.

    The log survival of a detection event grows like the volume swept by the
    target, so stages are spaced at equal increments of that growth shape:
    sqrt(s) in d=1, s / log(e + s/r^2) in d=2 and s in d >= 3.
    """
    if stages < 1:
        raise ValueError("stages must be >= 1")
    if not t > 0.0:
        return [0.0]
    s = np.linspace(0.0, t, 4097)
    if d == 1:
        shape = np.sqrt(s)
    elif d == 2:
        shape = s / np.log(math.e + s / (r * r))
    else:
        shape = s
    targets = np.linspace(0.0, shape[-1], stages + 1)[:-1]
    return [float(x) for x in np.interp(targets, shape, s)]


def fill_tail_with_splitting(
    curve: SurvivalCurve,
    config: SimConfig,
    event: EventSpec,
    stream: SeedSchedule,
    levels: Optional[Sequence[float]] = None,
    effort: Optional[int] = None,
    threshold: float = SPLITTING_SWITCH_P,
) -> SurvivalCurve:
    """Replaces points whose direct estimate is below `threshold` by splitting estimates."""
    points = list(curve.points)
    for idx, (t, point) in enumerate(zip(curve.t_grid, points)):
        if t <= 0.0 or point.value >= threshold:
            continue
        if levels is not None:
            lv = list(levels)
        elif event.kind == "detection":
            lv = detection_levels(config.d, config.r, t)
        else:
            lv = list(np.linspace(0.0, t, SPLITTING_DEFAULT_LEVELS + 1)[:-1])
        lv = [x for x in lv if x < t]
        est = splitting_estimate(
            config, event, t, lv, effort or SPLITTING_DEFAULT_EFFORT, stream.child(f"tail-{idx}")
        )
        logging.info("[SPLITTING] t=%.2f direct=%.3g -> splitting=%.3g", t, point.value, est.value)
        points[idx] = replace(est, descriptor=curve.descriptor)
    return _curve_from_points(curve.t_grid, points, curve.event, curve.descriptor, curve.pessimistic)


# -------- merging --------

Partial = Union[Estimate, SurvivalCurve, SurvivalTally]


def _merge_estimates(parts: List[Estimate]) -> Estimate:
    first = parts[0]
    if any(p.method != first.method or p.scale != first.scale or p.level != first.level for p in parts):
        raise ValueError("cannot merge estimates of different methods")
    if first.successes is not None and first.method != "mean":
        return direct_estimate(
            sum(p.successes for p in parts),
            sum(p.n for p in parts),
            first.level,
            scale=first.scale,
            method=first.method,
            descriptor=first.descriptor,
            pessimistic=sum(p.pessimistic for p in parts),
        )
    ordered = sorted(parts, key=lambda p: (p.n, p.value, p.stderr))
    n = sum(p.n for p in ordered)
    if first.method == "mean":
        s = sum(p.sums[0] for p in ordered)
        s2 = sum(p.sums[1] for p in ordered)
        return mean_estimate(s, s2, n, first.level, first.descriptor)
    value = sum(p.n * p.value for p in ordered) / n
    se = math.sqrt(sum((p.n * p.stderr) ** 2 for p in ordered)) / n
    z = float(stats.norm.ppf(0.5 + first.level / 2.0))
    lo = max(0.0, min(value - z * se, value))
    hi = min(1.0, max(value + z * se, value))
    return Estimate(value, se, n, (lo, hi), first.method, level=first.level, descriptor=first.descriptor,
                    pessimistic=sum(p.pessimistic for p in ordered))


def merge(partials: Sequence[Partial]) -> Partial:
    """Pools shard results of one experiment; the result does not depend on shard order."""
    parts = list(partials)
    if not parts:
        raise ValueError("nothing to merge")
    if len({p.descriptor for p in parts}) != 1:
        raise ValueError("cannot merge partials with different experiment descriptors")
    kinds = {type(p) for p in parts}
    if len(kinds) != 1:
        raise ValueError("cannot merge different result types")
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    if isinstance(first, SurvivalTally):
        out = first
        for p in parts[1:]:
            out = out.merge(p)
        return out
    if isinstance(first, Estimate):
        return _merge_estimates(parts)
    if any(p.t_grid != first.t_grid or p.event != first.event for p in parts):
        raise ValueError("cannot merge curves over different grids or events")
    points = [_merge_estimates([p.points[k] for p in parts]) for k in range(len(first.t_grid))]
    return _curve_from_points(
        first.t_grid, points, first.event, first.descriptor, sum(p.pessimistic for p in parts)
    )


# -------- diagnostics --------

def mean_total_occupation(
    config: SimConfig,
    window: Tuple[float, float],
    stream: SeedSchedule,
    start: int = 0,
    stop: Optional[int] = None,
) -> Estimate:
    """Mean over worlds of the summed in-ball time of all nodes during `window`."""
    stop = config.n_samples if stop is None else stop
    grid = build_grid(config, window, horizon=window[1])
    ball = Region.ball(config.r, config.d)
    s = s2 = 0.0
    for i in range(start, stop):
        world = sample_world(config, grid, stream.stream(i), reach=config.r)
        x = world.total_occupation(ball, window)
        s += x
        s2 += x * x
    return mean_estimate(
        s, s2, stop - start, config.ci_level,
        _descriptor("occupation-total", config, f"window={window[0]:g},{window[1]:g}", stream),
    )


def truncation_soundness(
    config: SimConfig,
    family: SetFamily,
    n_runs: int,
    stream: SeedSchedule,
) -> Estimate:
    """
    Mean number of nodes born in the shell R(eps) < |x| <= R(eps/10) that
    meet the family before the horizon.
    """
    R1 = config.trunc_radius
    R2 = truncation_radius(config, config.set_bound, config.trunc_eps / 10.0)
    grid = build_grid(config)
    reach = max(config.set_bound + config.r, family.bound)
    s = s2 = 0.0
    for i in range(n_runs):
        rng = stream.stream(i)
        cloud = sample_poisson(config.lam, Region.ball(R2, config.d), rng)
        shell = cloud.points[np.linalg.norm(cloud.points, axis=1) > R1]
        world = sample_world(config, grid, rng, reach=reach, origins=shell)
        x = float(np.count_nonzero(np.isfinite(world.first_entries(family))))
        s += x
        s2 += x * x
    est = mean_estimate(s, s2, n_runs, config.ci_level, _descriptor("shell", config, f"R2={R2:g}", stream))
    logging.info("[TRUNCATION] shell (%.2f, %.2f] detecting nodes per run %.3g +- %.2g", R1, R2, est.value, est.stderr)
    return est


def shell_report(est: Estimate, eps: float, sigma: float = SUITE_SOFT_SIGMA) -> Dict[str, Any]:
    """Verdict on a truncation shell count: sound while its mean is within `sigma` errors of eps."""
    sound = est.value - sigma * est.stderr <= eps
    if not sound:
        logging.warning("[TRUNCATION] shell count %.3g +- %.2g exceeds eps=%g", est.value, est.stderr, eps)
    return {"mean": est.value, "stderr": est.stderr, "runs": est.n, "eps": eps, "sound": bool(sound)}


def occupation_identity(est: Estimate, config: SimConfig, window: Tuple[float, float]) -> Dict[str, Any]:
    """Compares the mean total occupation with lam * |B(0,r)| * (b - a)."""
    expected = config.lam * Region.ball(config.r, config.d).volume() * (window[1] - window[0])
    z = (est.value - expected) / est.stderr if est.stderr > 0.0 else 0.0
    return {"mean": est.value, "stderr": est.stderr, "expected": expected, "z": z, "worlds": est.n}
