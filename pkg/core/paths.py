from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import DEFAULT_ERROR_BUDGET, LATERAL_BUDGETS, PROBE_SERIES_TERMS
from core.models import INSIDE, OUTSIDE, UNCERTAIN, CrossingVerdict, NodePath, SimConfig
from core.sets import Ball

# integer verdict codes used by the vectorized classifiers
OUT, IN, UNC = 0, 1, 2
_STATUS = {OUT: OUTSIDE, IN: INSIDE, UNC: UNCERTAIN}


# -------- grids --------

def check_grid(grid) -> np.ndarray:
    times = np.asarray(grid, dtype=float).reshape(-1)
    if times.size == 0 or times[0] != 0.0:
        raise ValueError("time grid must start at 0")
    if np.any(np.diff(times) <= 0.0):
        raise ValueError("time grid must be strictly increasing")
    return times


def build_grid(config: SimConfig, extra_times: Iterable[float] = (), horizon: Optional[float] = None) -> np.ndarray:
    """Base grid of step config.step up to `horizon`, with `extra_times` inserted as knots."""
    end = config.horizon if horizon is None else float(horizon)
    times = config.grid(end)
    extra = np.asarray([t for t in extra_times if 0.0 < t < end], dtype=float)
    if extra.size:
        times = np.union1d(times, extra)
        # drop knots that would make a degenerate segment next to an inserted time
        keep = np.concatenate([[True], np.diff(times) > 1e-9 * max(end, 1.0)])
        times = times[keep]
    return times


# -------- envelopes and budgets --------

def envelope(h, d: int, delta: float) -> np.ndarray:
    """
    Deviation bound B(h): a d-dim Brownian bridge over a gap h leaves the
    chord by more than B(h) with probability at most delta.
    """
    h = np.asarray(h, dtype=float)
    return np.sqrt(d * np.maximum(h, 0.0) * math.log(2.0 * d / delta) / 2.0)


def segment_budget(error_budget: float, n_segments: int, n_nodes: int) -> float:
    return error_budget / max(1, n_segments) / max(1, n_nodes)


# -------- sampling --------

def sample_increments(origin, grid, stream: np.random.Generator, node_id: int = 0) -> NodePath:
    """Brownian path from `origin` sampled at the knots of `grid`."""
    times = check_grid(grid)
    origin = np.asarray(origin, dtype=float).reshape(-1)
    d = origin.shape[0]
    disp = np.zeros((times.size, d))
    if times.size > 1:
        dt = np.diff(times)
        steps = stream.standard_normal((times.size - 1, d)) * np.sqrt(dt)[:, None]
        disp[1:] = np.cumsum(steps, axis=0)
    return NodePath(node_id=node_id, origin=origin, times=times, disp=disp)


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Paths of many nodes sharing one knot grid."""

    node_ids: np.ndarray          # (N,)
    origins: np.ndarray           # (N, d)
    times: np.ndarray             # (n,)
    disp: np.ndarray              # (N, n, d)

    def __len__(self) -> int:
        return int(self.origins.shape[0])

    @property
    def d(self) -> int:
        return int(self.origins.shape[1])

    def positions(self) -> np.ndarray:
        return self.origins[:, None, :] + self.disp

    def path(self, i: int) -> NodePath:
        return NodePath(int(self.node_ids[i]), self.origins[i], self.times, self.disp[i])

    def paths(self) -> List[NodePath]:
        return [self.path(i) for i in range(len(self))]


def sample_batch(origins: np.ndarray, grid, stream: np.random.Generator, first_id: int = 0) -> PathBatch:
    times = check_grid(grid)
    origins = np.asarray(origins, dtype=float)
    N, d = origins.shape
    disp = np.zeros((N, times.size, d))
    if times.size > 1 and N:
        dt = np.sqrt(np.diff(times))
        steps = stream.standard_normal((N, times.size - 1, d)) * dt[None, :, None]
        disp[:, 1:] = np.cumsum(steps, axis=1)
    return PathBatch(np.arange(first_id, first_id + N), origins, times, disp)


def fill_bridges(times: np.ndarray, coarse_idx: np.ndarray, coarse_disp: np.ndarray,
                 stream: np.random.Generator) -> np.ndarray:
    """
    Fills Brownian bridges between coarse knots.

    coarse_disp has shape (N, len(coarse_idx), d) and holds the displacement at
    times[coarse_idx]; the result has shape (N, len(times), d) and agrees with
    coarse_disp at those knots.
    """
    N, nc, d = coarse_disp.shape
    n = times.size
    if nc == n:
        return coarse_disp.copy()
    free = np.zeros((N, n, d))
    free[:, 1:] = np.cumsum(
        stream.standard_normal((N, n - 1, d)) * np.sqrt(np.diff(times))[None, :, None], axis=1
    )
    seg = np.clip(np.searchsorted(coarse_idx, np.arange(n), side="right") - 1, 0, nc - 2)
    a = coarse_idx[seg]
    b = coarse_idx[seg + 1]
    w = ((times - times[a]) / (times[b] - times[a]))[None, :, None]
    return (
        coarse_disp[:, seg]
        + (free - free[:, a])
        + w * ((coarse_disp[:, seg + 1] - coarse_disp[:, seg]) - (free[:, b] - free[:, a]))
    )


def bridge_midpoint(x_a: np.ndarray, x_b: np.ndarray, h: float, stream: np.random.Generator) -> np.ndarray:
    return 0.5 * (x_a + x_b) + math.sqrt(h / 4.0) * stream.standard_normal(np.shape(x_a))


def bridge_point(x_a, x_b, t_a: float, t_b: float, t: float, stream: np.random.Generator) -> np.ndarray:
    """Brownian bridge value at t in (t_a, t_b): mean linear, variance (t-t_a)(t_b-t)/(t_b-t_a)."""
    w = (t - t_a) / (t_b - t_a)
    sd = math.sqrt(max((t - t_a) * (t_b - t) / (t_b - t_a), 0.0))
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    return x_a + w * (x_b - x_a) + sd * stream.standard_normal(x_a.shape)


def refine_bridge(path: NodePath, interval: Tuple[float, float], stream: np.random.Generator) -> NodePath:
    """Inserts the bridge midpoint between two consecutive knots; existing knots are kept."""
    t_a, t_b = interval
    i = int(np.searchsorted(path.times, t_a))
    if (
        i + 1 >= path.times.size
        or path.times[i] != t_a
        or path.times[i + 1] != t_b
    ):
        raise ValueError(f"({t_a}, {t_b}) are not adjacent knots of path {path.node_id}")
    mid = bridge_midpoint(path.disp[i], path.disp[i + 1], t_b - t_a, stream)
    times = np.insert(path.times, i + 1, 0.5 * (t_a + t_b))
    disp = np.insert(path.disp, i + 1, mid, axis=0)
    return NodePath(path.node_id, path.origin, times, disp)


def insert_knot(path: NodePath, t: float, stream: np.random.Generator) -> NodePath:
    if t < 0.0 or t > path.horizon:
        raise ValueError(f"t={t} outside the path span [0, {path.horizon}]")
    i = int(np.searchsorted(path.times, t))
    if i < path.times.size and path.times[i] == t:
        return path
    x = bridge_point(path.disp[i - 1], path.disp[i], path.times[i - 1], path.times[i], t, stream)
    return NodePath(
        path.node_id,
        path.origin,
        np.insert(path.times, i, t),
        np.insert(path.disp, i, x, axis=0),
    )


# -------- exact one-dimensional formulas --------

def bridge_crossing_probability(s_a, s_b, h) -> np.ndarray:
    """P(a Brownian bridge at distances s_a, s_b > 0 from a level reaches it over gap h)."""
    s_a = np.maximum(np.asarray(s_a, dtype=float), 0.0)
    s_b = np.maximum(np.asarray(s_b, dtype=float), 0.0)
    h = np.asarray(h, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.exp(-2.0 * s_a * s_b / np.where(h > 0.0, h, 1.0))
    return np.where(h > 0.0, p, (s_a * s_b == 0.0).astype(float))


def bridge_stay_probability(x, y, h, lo: float, hi: float, terms: int = 10) -> np.ndarray:
    """P(a Brownian bridge from x to y over gap h stays inside (lo, hi)), image series."""
    L = hi - lo
    xs = np.asarray(x, dtype=float) - lo
    ys = np.asarray(y, dtype=float) - lo
    h = np.maximum(np.asarray(h, dtype=float), 1e-300)
    total = np.zeros(np.broadcast(xs, ys, h).shape)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(-terms, terms + 1):
            total = total + np.exp(-2.0 * k * L * (k * L + ys - xs) / h)
            total = total - np.exp(-2.0 * (xs + k * L) * (ys + k * L) / h)
    inside = (xs > 0.0) & (xs < L) & (ys > 0.0) & (ys < L)
    return np.where(inside, np.clip(total, 0.0, 1.0), 0.0)


def interval_stay_probability(y, a: float, u: float, terms: int = PROBE_SERIES_TERMS) -> np.ndarray:
    """P(Brownian motion from y stays in (-a, a) during [0, u]), eigenfunction series."""
    y = np.asarray(y, dtype=float)
    if u <= 0.0:
        return (np.abs(y) < a).astype(float)
    k = np.arange(terms, dtype=float)
    odd = 2.0 * k + 1.0
    coef = (4.0 / math.pi) * (-1.0) ** k / odd
    decay = np.exp(-(odd ** 2) * math.pi ** 2 * u / (8.0 * a * a))
    phase = np.cos(np.multiply.outer(y, odd) * math.pi / (2.0 * a))
    p = np.sum(coef * decay * phase, axis=-1)
    return np.where(np.abs(y) < a, np.clip(p, 0.0, 1.0), 0.0)


# -------- half-space bounds for d >= 1 --------

def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", a, b)


def _ball_hit_lower(ball: Ball, pa: np.ndarray, pb: np.ndarray, h: np.ndarray, delta: float, grow) -> np.ndarray:
    """
    Lower bound on P(bridge meets the ball grown by `grow`). The half-space
    pushed inside the ball by the sagitta of a lateral spread rho is hit only
    at points of the ball, unless the lateral part of the bridge leaves rho.
    Normal and lateral parts are independent, so each lateral budget b gives
    crossing * (1 - b); the best over LATERAL_BUDGETS and delta is kept.
    """
    r = ball.radius + grow
    c = np.asarray(ball.center, dtype=float)
    u, _ = ball.support(pa, pb)
    ra, rb = pa - c, pb - c
    a_a, a_b = _dot(ra, u), _dot(rb, u)
    d = pa.shape[-1]
    if d == 1:
        lat = np.zeros(h.shape)
        budgets = (0.0,)
    else:
        lat_a = np.linalg.norm(ra - a_a[..., None] * u, axis=-1)
        lat_b = np.linalg.norm(rb - a_b[..., None] * u, axis=-1)
        lat = np.maximum(lat_a, lat_b)
        budgets = tuple(sorted(set(LATERAL_BUDGETS) | {delta}))
    best = np.zeros(h.shape)
    for b in budgets:
        spread = lat + (envelope(h, d - 1, b) if b > 0.0 else 0.0)
        ok = (r > 0.0) & (spread < r)
        level = np.sqrt(np.maximum(r * r - spread * spread, 0.0))
        s_a, s_b = a_a - level, a_b - level
        p = bridge_crossing_probability(s_a, s_b, h) * (1.0 - b)
        best = np.maximum(best, np.where(ok & (s_a > 0.0) & (s_b > 0.0), p, 0.0))
    return best


def _relative_segments(family, t_a, t_b, pa, pb):
    base, grow = family.unwrap()
    t_a = np.asarray(t_a, dtype=float)
    t_b = np.asarray(t_b, dtype=float)
    rel_a = base.relative(t_a, pa)
    rel_b = base.relative(t_b, pb)
    lead = np.broadcast_shapes(rel_a.shape, rel_b.shape)[:-1]
    rel_a = np.broadcast_to(rel_a, lead + rel_a.shape[-1:])
    rel_b = np.broadcast_to(rel_b, lead + rel_b.shape[-1:])
    h = np.broadcast_to(t_b - t_a, lead)
    err = np.broadcast_to(base.target_error(t_a, t_b), lead)
    return base, grow, t_a, t_b, rel_a, rel_b, lead, h, err


def hit_probability_bounds(family, t_a, t_b, pa, pb, delta: float, grow: float = 0.0):
    """
    (lower, upper) bounds on P(the bridge pa -> pb over [t_a, t_b] meets the
    family's set). The upper bound sums, over the active shapes, the exact
    crossing probability of a supporting half-space; balls active on the
    whole segment also give a lower bound.
    """
    base, extra, t_a, t_b, rel_a, rel_b, lead, h, err = _relative_segments(family, t_a, t_b, pa, pb)
    grow = grow + extra
    lower = np.zeros(lead)
    upper = np.zeros(lead)
    for shape, active, whole in base.active_shapes(t_a, t_b, lead):
        u, offset = shape.support(rel_a, rel_b)
        # the moving target stays within err of its chord
        s_a = _dot(rel_a, u) - offset - grow - err
        s_b = _dot(rel_b, u) - offset - grow - err
        upper = np.where(active, upper + bridge_crossing_probability(s_a, s_b, h), upper)
        if isinstance(shape, Ball):
            lo = _ball_hit_lower(shape, rel_a, rel_b, h, delta, grow - err)
            lower = np.where(whole, np.maximum(lower, lo), lower)
    return lower, np.minimum(upper, 1.0)


def stay_probability_lower(family, t_a, t_b, pa, pb, grow: float = 0.0) -> np.ndarray:
    """
    Lower bound on P(the bridge stays in the family's set throughout). The
    set holds the ball of radius -sd around the chord midpoint, hence the
    cube of half-width -sd/sqrt(d); leaving the cube crosses one of its 2d
    faces.
    """
    base, extra, t_a, t_b, rel_a, rel_b, lead, h, err = _relative_segments(family, t_a, t_b, pa, pb)
    mid = 0.5 * (rel_a + rel_b)
    rho = np.full(lead, np.inf)
    for shape, active, _ in base.active_shapes(t_a, t_b, lead):
        rho = np.where(active, np.minimum(rho, -shape.signed_distance(mid)), rho)
    d = rel_a.shape[-1]
    half = (rho + grow + extra - err) / math.sqrt(d)
    spread = 0.5 * np.abs(rel_b - rel_a)
    near = half[..., None] - spread
    far = half[..., None] + spread
    exit_p = 2.0 * np.sum(bridge_crossing_probability(near, far, h[..., None]), axis=-1)
    return np.where(half > 0.0, np.clip(1.0 - exit_p, 0.0, 1.0), 0.0)


def _select(mask: np.ndarray, t_a, t_b, pa: np.ndarray, pb: np.ndarray):
    lead = mask.shape
    d = pa.shape[-1]
    return (
        np.broadcast_to(t_a, lead)[mask],
        np.broadcast_to(t_b, lead)[mask],
        np.broadcast_to(pa, lead + (d,))[mask],
        np.broadcast_to(pb, lead + (d,))[mask],
    )


# -------- segment verdicts --------

def exact_interval(family) -> Optional[Tuple[float, float]]:
    if getattr(family, "trajectory", None) is not None:
        return None
    return family.interval_1d()


def segment_state(family, t_a, t_b, pa: np.ndarray, pb: np.ndarray, delta: float, slack: float = 0.0):
    """
    Vectorized verdicts for segments pa -> pb over [t_a, t_b].

    Returns (codes, bound, probability, stays): codes are OUT / IN / UNC,
    bound is B(h), probability is the exact d=1 meeting probability (nan when
    not available), stays flags segments certainly inside throughout.
    """
    t_a = np.asarray(t_a, dtype=float)
    t_b = np.asarray(t_b, dtype=float)
    h = t_b - t_a
    d = pa.shape[-1]
    B = envelope(h, d, delta)
    sd_a = family.signed_distance(t_a, pa)
    sd_b = family.signed_distance(t_b, pb)
    lo, hi = family.chord_bounds(t_a, t_b, pa, pb)
    lead = np.broadcast(sd_a, sd_b, lo).shape
    B = np.broadcast_to(B, lead)

    meets = (sd_a <= 0.0) | (sd_b <= 0.0)
    prob = np.full(lead, np.nan)
    iv = exact_interval(family)
    if iv is None:
        outside = np.broadcast_to(lo - slack > B, lead).copy()
        stays = np.broadcast_to(hi + B <= 0.0, lead).copy()
        open_ = ~(outside | np.broadcast_to(meets, lead))
        if open_.any():
            upper = hit_probability_bounds(family, *_select(open_, t_a, t_b, pa, pb), delta, grow=slack)[1]
            outside[open_] = upper < delta
        both_in = np.broadcast_to((sd_a <= 0.0) & (sd_b <= 0.0), lead) & ~stays
        if both_in.any():
            stays[both_in] = 1.0 - stay_probability_lower(family, *_select(both_in, t_a, t_b, pa, pb)) < delta
    else:
        left, right = iv
        xa = pa[..., 0]
        xb = pb[..., 0]
        below_a, above_a = xa < left, xa > right
        below_b, above_b = xb < left, xb > right
        meets = meets | (below_a & above_b) | (above_a & below_b)
        same = (below_a & below_b) | (above_a & above_b)
        s_a = np.where(below_a, left - xa, xa - right) - slack
        s_b = np.where(below_b, left - xb, xb - right) - slack
        p = bridge_crossing_probability(s_a, s_b, np.broadcast_to(h, lead))
        outside = same & (p < delta)
        prob = np.where(same, p, np.where(meets, 1.0, np.nan))
        both_in = ~(below_a | above_a | below_b | above_b)
        stay_p = bridge_stay_probability(xa, xb, np.broadcast_to(h, lead), left, right)
        stays = both_in & (1.0 - stay_p < delta)

    codes = np.full(lead, UNC, dtype=np.int8)
    codes[np.broadcast_to(outside, lead)] = OUT
    codes[np.broadcast_to(meets, lead)] = IN
    return codes, B, prob, np.broadcast_to(stays, lead)


def classify_segments(family, t_a, t_b, pa, pb, delta: float, slack: float = 0.0):
    codes, B, prob, _ = segment_state(family, t_a, t_b, pa, pb, delta, slack)
    return codes, B, prob


def stays_inside(family, t_a, t_b, pa, pb, delta: float) -> np.ndarray:
    return segment_state(family, t_a, t_b, pa, pb, delta)[3]


def segment_verdict(
    path: NodePath,
    interval: Tuple[float, float],
    family,
    slack: float = 0.0,
    delta: Optional[float] = None,
) -> CrossingVerdict:
    """Sandwich verdict of one path segment against a set family."""
    if slack < 0.0:
        raise ValueError(f"slack must be >= 0, got {slack}")
    t_a, t_b = interval
    i = int(np.searchsorted(path.times, t_a))
    if i + 1 >= path.times.size or path.times[i] != t_a or path.times[i + 1] != t_b:
        raise ValueError(f"({t_a}, {t_b}) are not adjacent knots of path {path.node_id}")
    if delta is None:
        delta = segment_budget(DEFAULT_ERROR_BUDGET, path.times.size - 1, 1)
    pos = path.positions()
    codes, B, prob = classify_segments(
        family, np.array([t_a]), np.array([t_b]), pos[i][None, :], pos[i + 1][None, :], delta, slack
    )
    p = float(prob[0])
    return CrossingVerdict(
        status=_STATUS[int(codes[0])],
        bound=float(B[0]),
        probability=None if math.isnan(p) else p,
    )


def stack_paths(paths: Sequence[NodePath]) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Groups NodePaths by shared knot grid into (times, positions, node_ids) arrays."""
    if isinstance(paths, PathBatch):
        return [(paths.times, paths.positions(), paths.node_ids)] if len(paths) else []
    groups: List[Tuple[np.ndarray, list]] = []
    for p in paths:
        for times, members in groups:
            if times.shape == p.times.shape and np.array_equal(times, p.times):
                members.append(p)
                break
        else:
            groups.append((p.times, [p]))
    return [
        (
            times,
            np.stack([m.positions() for m in members]),
            np.asarray([m.node_id for m in members]),
        )
        for times, members in groups
    ]
