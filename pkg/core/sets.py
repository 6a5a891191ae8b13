from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np


def unit_ball_volume(d: int) -> float:
    """Volume omega_d of the unit ball in R^d."""
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def ball_radius_for_volume(volume: float, d: int) -> float:
    return (volume / unit_ball_volume(d)) ** (1.0 / d)


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", a, b)


def _unit(v: np.ndarray) -> np.ndarray:
    """Rows of v normalized; zero rows become the first axis."""
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    axis = np.zeros(v.shape[-1])
    axis[0] = 1.0
    return np.where(norm > 0.0, v / np.where(norm > 0.0, norm, 1.0), axis)


def _lipschitz_bounds(sd_a, sd_b, pa, pb):
    """Bounds of a 1-Lipschitz function along the chord pa -> pb."""
    length = np.linalg.norm(pb - pa, axis=-1)
    lo = 0.5 * (sd_a + sd_b - length)
    hi = 0.5 * (sd_a + sd_b + length)
    return lo, hi


@dataclass(frozen=True)
class Ball:
    center: Tuple[float, ...]
    radius: float

    kind = "ball"

    @property
    def d(self) -> int:
        return len(self.center)

    def volume(self) -> float:
        return unit_ball_volume(self.d) * self.radius ** self.d

    def reach(self) -> float:
        return float(np.linalg.norm(self.center)) + self.radius

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        return np.linalg.norm(pts - c, axis=-1) - self.radius

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return self.signed_distance(pts) <= 0.0

    def closest_on_chord(self, pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        delta = pb - pa
        dd = _dot(delta, delta)
        safe = np.where(dd > 0.0, dd, 1.0)
        tau = np.clip(np.where(dd > 0.0, _dot(c - pa, delta) / safe, 0.0), 0.0, 1.0)
        return pa + tau[..., None] * delta

    def chord_bounds(self, pa: np.ndarray, pb: np.ndarray):
        """Exact min and max of the signed distance along the segment pa -> pb."""
        c = np.asarray(self.center, dtype=float)
        lo = np.linalg.norm(self.closest_on_chord(pa, pb) - c, axis=-1) - self.radius
        hi = np.maximum(self.signed_distance(pa), self.signed_distance(pb))
        return lo, hi

    def support(self, pa: np.ndarray, pb: np.ndarray):
        """
        (u, offset) with the ball inside {x: x.u <= offset}; u points from the
        center to the chord's closest point.
        """
        c = np.asarray(self.center, dtype=float)
        u = _unit(self.closest_on_chord(pa, pb) - c)
        return u, _dot(u, c) + self.radius

    def interval(self) -> Optional[Tuple[float, float]]:
        if self.d != 1:
            return None
        return self.center[0] - self.radius, self.center[0] + self.radius


@dataclass(frozen=True)
class Box:
    center: Tuple[float, ...]
    half_widths: Tuple[float, ...]

    kind = "box"

    @property
    def d(self) -> int:
        return len(self.center)

    def volume(self) -> float:
        return float(np.prod([2.0 * h for h in self.half_widths]))

    def reach(self) -> float:
        return float(np.linalg.norm(np.abs(self.center) + np.asarray(self.half_widths)))

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        q = np.abs(pts - np.asarray(self.center, dtype=float)) - np.asarray(self.half_widths, dtype=float)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return self.signed_distance(pts) <= 0.0

    def chord_bounds(self, pa: np.ndarray, pb: np.ndarray):
        sd_a = self.signed_distance(pa)
        sd_b = self.signed_distance(pb)
        lo, _ = _lipschitz_bounds(sd_a, sd_b, pa, pb)
        # box signed distance is convex: max over the chord sits at an endpoint
        return lo, np.maximum(sd_a, sd_b)

    def support(self, pa: np.ndarray, pb: np.ndarray):
        """Supporting half-space at the projection of the chord midpoint (offset inf when it is inside)."""
        c = np.asarray(self.center, dtype=float)
        w = np.asarray(self.half_widths, dtype=float)
        mid = 0.5 * (pa + pb)
        q = np.clip(mid, c - w, c + w)
        gap = mid - q
        u = _unit(gap)
        return u, np.where(np.linalg.norm(gap, axis=-1) > 0.0, _dot(u, q), np.inf)

    def interval(self) -> Optional[Tuple[float, float]]:
        if self.d != 1:
            return None
        return self.center[0] - self.half_widths[0], self.center[0] + self.half_widths[0]


@dataclass(frozen=True)
class Annulus:
    center: Tuple[float, ...]
    inner: float
    outer: float

    kind = "annulus"

    @property
    def d(self) -> int:
        return len(self.center)

    def volume(self) -> float:
        return unit_ball_volume(self.d) * (self.outer ** self.d - self.inner ** self.d)

    def reach(self) -> float:
        return float(np.linalg.norm(self.center)) + self.outer

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        dist = np.linalg.norm(pts - np.asarray(self.center, dtype=float), axis=-1)
        return np.maximum(self.inner - dist, dist - self.outer)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return self.signed_distance(pts) <= 0.0

    def chord_bounds(self, pa: np.ndarray, pb: np.ndarray):
        return _lipschitz_bounds(self.signed_distance(pa), self.signed_distance(pb), pa, pb)

    def support(self, pa: np.ndarray, pb: np.ndarray):
        return Ball(self.center, self.outer).support(pa, pb)

    def interval(self) -> Optional[Tuple[float, float]]:
        return None


Shape = Union[Ball, Box, Annulus]


def matched_ball(shape: Shape) -> Ball:
    """Ball centered at the origin with the same volume as `shape`."""
    volume = shape.volume()
    if not np.isfinite(volume) or volume <= 0.0:
        raise ValueError(f"shape volume must be positive and finite, got {volume!r}")
    d = shape.d
    ball = Ball(center=(0.0,) * d, radius=ball_radius_for_volume(volume, d))
    if abs(ball.volume() - volume) > 1e-9 * volume:
        raise ValueError(
            f"matched ball volume {ball.volume():.12g} differs from set volume {volume:.12g}"
        )
    return ball


@dataclass(frozen=True)
class TargetTrajectory:
    """Piecewise-linear target path g(s), constant before the first and after the last waypoint."""

    waypoints: Tuple[Tuple[float, Tuple[float, ...]], ...]

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("trajectory needs at least one waypoint")
        times = [w[0] for w in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("trajectory waypoints must be strictly time-sorted")
        pts = np.asarray([w[1] for w in self.waypoints], dtype=float)
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(times)):
            raise ValueError("trajectory is unbounded (non-finite waypoint)")

    @property
    def times(self) -> np.ndarray:
        return np.asarray([w[0] for w in self.waypoints], dtype=float)

    @property
    def points(self) -> np.ndarray:
        return np.asarray([w[1] for w in self.waypoints], dtype=float)

    @property
    def d(self) -> int:
        return len(self.waypoints[0][1])

    def bound(self) -> float:
        return float(np.max(np.linalg.norm(self.points, axis=-1)))

    def position(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        flat = t.reshape(-1)
        times, pts = self.times, self.points
        out = np.stack([np.interp(flat, times, pts[:, j]) for j in range(pts.shape[1])], axis=-1)
        return out.reshape(t.shape + (pts.shape[1],))

    def chord_error(self, t_a, t_b) -> np.ndarray:
        """Max distance between g and its chord over each [t_a, t_b]."""
        t_a = np.asarray(t_a, dtype=float)
        t_b = np.asarray(t_b, dtype=float)
        shape = np.broadcast(t_a, t_b).shape
        a = np.broadcast_to(t_a, shape).reshape(-1)
        b = np.broadcast_to(t_b, shape).reshape(-1)
        times, pts = self.times, self.points
        err = np.zeros(a.shape)
        inner = (times[None, :] > a[:, None]) & (times[None, :] < b[:, None])
        if not inner.any():
            return err.reshape(shape)
        ga = self.position(a)
        gb = self.position(b)
        span = np.where(b > a, b - a, 1.0)
        for j in range(len(times)):
            rows = inner[:, j]
            if not rows.any():
                continue
            w = ((times[j] - a[rows]) / span[rows])[:, None]
            chord = ga[rows] + w * (gb[rows] - ga[rows])
            err[rows] = np.maximum(err[rows], np.linalg.norm(pts[j] - chord, axis=-1))
        return err.reshape(shape)


@dataclass(frozen=True)
class SetFamily:
    """
    Time-indexed closed target sets D_s.

    - static-ball: D_s = B(0, r)
    - moving-ball: D_s = B(g(s), r) for a TargetTrajectory g
    - general: piecewise-constant in time, shapes[j] active on [epochs[j], epochs[j+1])
    """

    kind: str
    epochs: Tuple[float, ...]
    shapes: Tuple[Shape, ...]
    trajectory: Optional[TargetTrajectory] = None
    time_shift: float = 0.0

    # -------- constructors --------

    @classmethod
    def static_ball(cls, r: float, d: int) -> "SetFamily":
        return cls(kind="static-ball", epochs=(0.0,), shapes=(Ball((0.0,) * d, r),))

    @classmethod
    def moving_ball(cls, trajectory: TargetTrajectory, r: float) -> "SetFamily":
        return cls(
            kind="moving-ball",
            epochs=(0.0,),
            shapes=(Ball((0.0,) * trajectory.d, r),),
            trajectory=trajectory,
        )

    @classmethod
    def general(cls, pieces: Sequence[Tuple[float, Shape]]) -> "SetFamily":
        if not pieces:
            raise ValueError("general family needs at least one (time, shape) piece")
        epochs = tuple(float(p[0]) for p in pieces)
        if epochs[0] > 0.0 or any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("general family epochs must start at or before 0 and increase")
        dims = {p[1].d for p in pieces}
        if len(dims) != 1:
            raise ValueError("all shapes of a family must share one dimension")
        return cls(kind="general", epochs=epochs, shapes=tuple(p[1] for p in pieces))

    # -------- properties --------

    @property
    def d(self) -> int:
        return self.shapes[0].d

    @property
    def bound(self) -> float:
        """L_t: every set of the family lies in B(0, bound)."""
        reach = max(s.reach() for s in self.shapes)
        if self.trajectory is not None:
            reach += self.trajectory.bound()
        return reach

    def shifted(self, dt: float) -> "SetFamily":
        """Same family seen from a clock started at absolute time `dt`."""
        return replace(self, time_shift=self.time_shift + dt)

    def inflated(self, delta: float) -> "InflatedFamily":
        return InflatedFamily(self, delta)

    def volume_at(self, t: float) -> float:
        return self.shapes[int(self.epoch_index(np.asarray(t)))].volume()

    def interval_1d(self) -> Optional[Tuple[float, float]]:
        """Target interval relative to g(s) when exact d=1 bridge formulas apply."""
        if self.d != 1 or len(self.shapes) != 1:
            return None
        return self.shapes[0].interval()

    # -------- evaluation --------

    def epoch_index(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float) + self.time_shift
        idx = np.searchsorted(np.asarray(self.epochs), t, side="right") - 1
        return np.clip(idx, 0, len(self.epochs) - 1)

    def offset(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.trajectory is None:
            return np.zeros(t.shape + (self.d,))
        return self.trajectory.position(t + self.time_shift)

    def relative(self, t, pts: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.trajectory is None:
            return pts
        return pts - self.offset(t)

    def signed_distance(self, t, pts: np.ndarray) -> np.ndarray:
        rel = self.relative(t, pts)
        if len(self.shapes) == 1:
            return self.shapes[0].signed_distance(rel)
        idx = np.broadcast_to(self.epoch_index(t), rel.shape[:-1])
        out = np.empty(rel.shape[:-1])
        for j, shape in enumerate(self.shapes):
            mask = idx == j
            if mask.any():
                out[mask] = shape.signed_distance(rel[mask])
        return out

    def active_shapes(self, t_a, t_b, lead: Tuple[int, ...]):
        """
        Yields (shape, active, whole) per shape: masks over `lead` of the
        segments [t_a, t_b] during which the shape is active at some time and
        throughout.
        """
        idx_a = np.broadcast_to(self.epoch_index(t_a), lead)
        idx_b = np.broadcast_to(self.epoch_index(t_b), lead)
        for j, shape in enumerate(self.shapes):
            active = (idx_a <= j) & (j <= idx_b)
            if active.any():
                yield shape, active, active & (idx_a == idx_b)

    def target_error(self, t_a, t_b) -> np.ndarray:
        """Distance between g and its chord over each [t_a, t_b] (0 for fixed sets)."""
        t_a = np.asarray(t_a, dtype=float)
        t_b = np.asarray(t_b, dtype=float)
        if self.trajectory is None:
            return np.zeros(np.broadcast(t_a, t_b).shape)
        return self.trajectory.chord_error(t_a + self.time_shift, t_b + self.time_shift)

    def unwrap(self) -> Tuple["SetFamily", float]:
        return self, 0.0

    def chord_bounds(self, t_a, t_b, pa: np.ndarray, pb: np.ndarray):
        """Lower/upper bounds of the signed distance along each chord, all active shapes."""
        rel_a = self.relative(t_a, pa)
        rel_b = self.relative(t_b, pb)
        if len(self.shapes) == 1:
            lo, hi = self.shapes[0].chord_bounds(rel_a, rel_b)
        else:
            lead = rel_a.shape[:-1]
            lo = np.full(lead, np.inf)
            hi = np.full(lead, -np.inf)
            for shape, active, _ in self.active_shapes(t_a, t_b, lead):
                lo_j, hi_j = shape.chord_bounds(rel_a, rel_b)
                lo = np.where(active, np.minimum(lo, lo_j), lo)
                hi = np.where(active, np.maximum(hi, hi_j), hi)
        if self.trajectory is not None:
            err = self.target_error(t_a, t_b)
            lo = lo - err
            hi = hi + err
        return lo, hi


@dataclass(frozen=True)
class InflatedFamily:
    """A SetFamily grown (delta > 0) or eroded (delta < 0) by |delta|."""

    base: SetFamily
    delta: float

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def kind(self) -> str:
        return self.base.kind

    @property
    def trajectory(self):
        return self.base.trajectory

    @property
    def bound(self) -> float:
        return self.base.bound + max(self.delta, 0.0)

    def shifted(self, dt: float) -> "InflatedFamily":
        return InflatedFamily(self.base.shifted(dt), self.delta)

    def interval_1d(self):
        iv = self.base.interval_1d()
        if iv is None:
            return None
        return iv[0] - self.delta, iv[1] + self.delta

    def offset(self, t):
        return self.base.offset(t)

    def unwrap(self) -> Tuple[SetFamily, float]:
        """Underlying SetFamily and the total growth."""
        base, grow = self.base.unwrap()
        return base, grow + self.delta

    def signed_distance(self, t, pts):
        return self.base.signed_distance(t, pts) - self.delta

    def chord_bounds(self, t_a, t_b, pa, pb):
        lo, hi = self.base.chord_bounds(t_a, t_b, pa, pb)
        return lo - self.delta, hi - self.delta
