from __future__ import annotations

import logging
import math
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from config import TRUNC_GRID_STEP, TRUNC_MAX_GRID_POINTS
from core.events import Resolution, first_entry_times
from core.models import NodePath, PointCloud, Region, SimConfig
from core.sets import unit_ball_volume


def sample_poisson(lam: float, region: Region, stream: np.random.Generator) -> PointCloud:
    """Poisson process of intensity `lam` restricted to `region`."""
    volume = region.volume()
    if not math.isfinite(volume) or volume <= 0.0:
        raise ValueError(f"region volume must be positive and finite, got {volume!r}")
    if lam < 0.0 or not math.isfinite(lam):
        raise ValueError(f"intensity must be finite and >= 0, got {lam!r}")
    n = int(stream.poisson(lam * volume))
    points = region.sample_uniform(n, stream)
    return PointCloud(d=region.d, points=points, region=region, intensity=lam)


# -------- truncation --------

def reach_tail_bound(t: float, a) -> np.ndarray:
    """
    Upper bound on P(a Brownian motion started at distance reach + a from the
    origin enters B(0, reach) by t). Entering needs the displacement along
    the start direction to reach -a, a one-dimensional Brownian motion, so
    reflection gives erfc(a / sqrt(2t)); in d=1 this is exact.
    """
    a = np.maximum(np.asarray(a, dtype=float), 0.0)
    return special.erfc(a / math.sqrt(2.0 * t))


def shell_expectation(d: int, lam: float, t: float, reach: float, R: float) -> float:
    """
    Expected number of nodes born outside B(0,R) that come within `reach`
    of the origin before t (bounded via reach_tail_bound).
    """
    if t <= 0.0:
        return 0.0
    sphere = d * unit_ball_volume(d)
    lo = max(R, reach)

    def integrand(rho: float) -> float:
        return sphere * rho ** (d - 1) * float(reach_tail_bound(t, rho - reach))

    # erfc(40) underflows, nothing lies beyond
    total, _ = integrate.quad(integrand, lo, lo + 40.0 * math.sqrt(2.0 * t), limit=200)
    return lam * total


def truncation_radius(config: SimConfig, set_bound: float, eps: float) -> float:
    """Smallest R on the grid set_bound + r + k*TRUNC_GRID_STEP with shell expectation <= eps."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps!r}")
    if set_bound < 0.0:
        raise ValueError(f"set_bound must be >= 0, got {set_bound!r}")

    reach = set_bound + config.r

    def excess(k: int) -> float:
        return shell_expectation(config.d, config.lam, config.horizon, reach, reach + k * TRUNC_GRID_STEP)

    if excess(0) <= eps:
        return reach

    hi = 1
    while excess(hi) > eps:
        hi *= 2
        if hi > TRUNC_MAX_GRID_POINTS:
            raise ValueError(
                f"truncation radius beyond {reach + hi * TRUNC_GRID_STEP:.1f}; eps={eps} too small"
            )
    lo = hi // 2
    # invariant: excess(lo) > eps >= excess(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if excess(mid) <= eps:
            hi = mid
        else:
            lo = mid
    return reach + hi * TRUNC_GRID_STEP


# -------- thinning --------

def thin_by_reach(
    cloud: PointCloud,
    paths: Sequence[NodePath],
    sets,
    horizon: float,
    stream: Optional[np.random.Generator] = None,
    resolution: Optional[Resolution] = None,
) -> PointCloud:
    """Keeps the nodes whose path enters some set of the family before `horizon`."""
    if len(paths) != cloud.count:
        raise ValueError(f"{len(paths)} paths for {cloud.count} points")
    if cloud.count == 0:
        return cloud
    entries = first_entry_times(paths, sets, horizon, stream=stream, resolution=resolution)
    keep = np.isfinite(entries)
    logging.debug("[THIN] kept %d of %d nodes", int(keep.sum()), cloud.count)
    return cloud.subset(keep)
