from __future__ import annotations

import math
from typing import Dict, Optional, Sequence

import numpy as np

from core.sets import TargetTrajectory

# waypoints per unit time for curved paths
CURVE_RESOLUTION = 20


def _axis(d: int, axis: int = 0) -> np.ndarray:
    e = np.zeros(d)
    e[axis] = 1.0
    return e


def _from_samples(times: np.ndarray, points: np.ndarray) -> TargetTrajectory:
    return TargetTrajectory(tuple((float(t), tuple(float(x) for x in p)) for t, p in zip(times, points)))


def stay_put(d: int, horizon: float) -> TargetTrajectory:
    """g = 0."""
    return _from_samples(np.array([0.0, horizon]), np.zeros((2, d)))


def linear_escape(d: int, horizon: float, speed: float = 1.0, direction: Optional[Sequence[float]] = None) -> TargetTrajectory:
    u = _axis(d) if direction is None else np.asarray(direction, dtype=float)
    norm = np.linalg.norm(u)
    if norm == 0.0:
        raise ValueError("escape direction must be nonzero")
    u = u / norm
    return _from_samples(np.array([0.0, horizon]), np.stack([np.zeros(d), speed * horizon * u]))


def circular_orbit(d: int, horizon: float, radius: float = 2.0, angular_speed: float = 1.0) -> TargetTrajectory:
    """Polygonal orbit of the given radius in the first coordinate plane, starting at radius * e_1."""
    if d < 2:
        raise ValueError("circular orbit needs d >= 2")
    n = max(2, int(math.ceil(horizon * CURVE_RESOLUTION)) + 1)
    times = np.linspace(0.0, horizon, n)
    pts = np.zeros((n, d))
    pts[:, 0] = radius * np.cos(angular_speed * times)
    pts[:, 1] = radius * np.sin(angular_speed * times)
    return _from_samples(times, pts)


def oscillation(d: int, horizon: float, amplitude: float = 0.01, period: float = 1.0, axis: int = 0) -> TargetTrajectory:
    """g(s) = amplitude * sin(2 pi s / period) along one axis."""
    n = max(2, int(math.ceil(horizon * CURVE_RESOLUTION)) + 1)
    times = np.linspace(0.0, horizon, n)
    pts = np.outer(amplitude * np.sin(2.0 * math.pi * times / period), _axis(d, axis))
    return _from_samples(times, pts)


def random_piecewise_linear(
    rng: np.random.Generator,
    d: int,
    horizon: float,
    n_pieces: int = 5,
    max_speed: float = 1.0,
) -> TargetTrajectory:
    """Starts at the origin; each piece moves in a uniform direction at a uniform speed up to max_speed."""
    cuts = np.sort(rng.uniform(0.0, horizon, size=n_pieces - 1))
    times = np.concatenate([[0.0], cuts, [horizon]])
    dirs = rng.standard_normal((n_pieces, d))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    speeds = rng.uniform(0.0, max_speed, size=(n_pieces, 1))
    steps = dirs * speeds * np.diff(times)[:, None]
    pts = np.vstack([np.zeros(d), np.cumsum(steps, axis=0)])
    return _from_samples(times, pts)


def standard_challengers(d: int, horizon: float, rng: np.random.Generator) -> Dict[str, TargetTrajectory]:
    """Linear escape at speed 1, orbit of radius 2 (d >= 2) and a random piecewise-linear path."""
    out = {"linear-escape": linear_escape(d, horizon)}
    if d >= 2:
        out["circular-orbit"] = circular_orbit(d, horizon)
    out["random-pl"] = random_piecewise_linear(rng, d, horizon)
    return out


BUILDERS = {
    "stay-put": stay_put,
    "linear-escape": linear_escape,
    "circular-orbit": circular_orbit,
    "oscillation": oscillation,
}


def build(kind: str, d: int, horizon: float, **params) -> TargetTrajectory:
    """Trajectory from an [experiment] table entry, e.g. {kind = "oscillation", amplitude = 0.01}."""
    try:
        builder = BUILDERS[kind]
    except KeyError:
        raise ValueError(f"unknown trajectory kind {kind!r}; expected one of {sorted(BUILDERS)}")
    return builder(d, horizon, **params)
