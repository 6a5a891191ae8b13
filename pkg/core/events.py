from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from config import DEFAULT_ERROR_BUDGET, DEFAULT_REFINE_DEPTH, DEFAULT_UNCERTAIN_POLICY
from core.models import CensoredTime, NodePath, Region, SimConfig
from core.paths import (
    IN,
    OUT,
    PathBatch,
    exact_interval,
    bridge_midpoint,
    bridge_stay_probability,
    hit_probability_bounds,
    insert_knot,
    segment_budget,
    segment_state,
    stack_paths,
    stay_probability_lower,
)
from core.seeds import seed_schedule
from core.sets import SetFamily

Paths = Union[PathBatch, Sequence[NodePath]]


@dataclass(frozen=True)
class Resolution:
    """Refinement controls shared by all event computations."""

    refine_depth: int = DEFAULT_REFINE_DEPTH
    error_budget: float = DEFAULT_ERROR_BUDGET
    policy: str = DEFAULT_UNCERTAIN_POLICY
    delta: Optional[float] = None   # per-segment budget, None = derive from the paths

    @classmethod
    def from_config(cls, config: SimConfig, delta: Optional[float] = None) -> "Resolution":
        return cls(config.refine_depth, config.error_budget, config.uncertain_policy, delta)

    def segment_delta(self, n_segments: int, n_nodes: int) -> float:
        if self.delta is not None:
            return self.delta
        return segment_budget(self.error_budget, n_segments, n_nodes)


class Occupation(NamedTuple):
    value: float
    error: float


def _default_stream() -> np.random.Generator:
    return seed_schedule(0, "events-default", 0)


class Refiner:
    """
    Bisects unresolved segments with bridge midpoints.

    Counts the segments settled by the uncertain policy at max depth and the
    widest interval an event time was left in.
    """

    def __init__(self, family, delta: float, resolution: Resolution, stream: np.random.Generator):
        self.family = family
        self.delta = delta
        self.max_depth = resolution.refine_depth
        self.policy = resolution.policy
        self.rng = stream
        self.exact = exact_interval(family)
        self.pessimistic = 0
        self.width = 0.0

    # -------- helpers --------

    def _state(self, ta: float, Xa: np.ndarray, tb: float, Xb: np.ndarray):
        return segment_state(self.family, np.asarray(ta), np.asarray(tb), Xa, Xb, self.delta)

    def _sd(self, t: float, X: np.ndarray) -> np.ndarray:
        return self.family.signed_distance(np.asarray(t), X)

    def _resolved(self, width: float):
        self.width = max(self.width, width)

    # -------- first entry of one node --------

    def entry(self, ta: float, xa: np.ndarray, tb: float, xb: np.ndarray, depth: int = 0) -> Optional[float]:
        Xa, Xb = xa[None, :], xb[None, :]
        if self._sd(ta, Xa)[0] <= 0.0:
            return ta
        codes, _, prob, _ = self._state(ta, Xa, tb, Xb)
        code = int(codes[0])
        if code == OUT:
            return None
        if depth >= self.max_depth:
            h = tb - ta
            if code == IN:
                self._resolved(h)
                return tb
            p = float(prob[0])
            if not math.isnan(p):
                if self.rng.random() < p:
                    self._resolved(h)
                    return tb
                return None
            # one uniform coupled to the true hit probability, which lies in [lower, upper]
            lower, upper = hit_probability_bounds(self.family, ta, tb, Xa, Xb, self.delta)
            draw = self.rng.random()
            if draw < lower[0]:
                self._resolved(h)
                return tb
            if draw >= upper[0]:
                return None
            self.pessimistic += 1
            logging.debug("[REFINE] entry unresolved on [%.6f, %.6f], policy=%s", ta, tb, self.policy)
            if self.policy == "cover":
                self._resolved(h)
                return tb
            return None
        tm = 0.5 * (ta + tb)
        xm = bridge_midpoint(xa, xb, tb - ta, self.rng)
        left = self.entry(ta, xa, tm, xm, depth + 1)
        if left is not None:
            return left
        return self.entry(tm, xm, tb, xb, depth + 1)

    # -------- first uncovered time of a node set --------

    def first_gap(self, ta: float, Xa: np.ndarray, tb: float, Xb: np.ndarray, depth: int = 0) -> Optional[float]:
        if Xa.shape[0] == 0 or not np.any(self._sd(ta, Xa) <= 0.0):
            return ta
        codes, _, _, stays = self._state(ta, Xa, tb, Xb)
        if np.any(stays):
            return None
        keep = codes != OUT
        Xa, Xb = Xa[keep], Xb[keep]
        h = tb - ta
        if depth >= self.max_depth:
            if not np.any(self._sd(tb, Xb) <= 0.0):
                self._resolved(h)
                return tb
            if self.exact is not None:
                lo, hi = self.exact
                stay_p = bridge_stay_probability(Xa[:, 0], Xb[:, 0], h, lo, hi)
            else:
                inside = (self._sd(ta, Xa) <= 0.0) & (self._sd(tb, Xb) <= 0.0)
                stay_p = np.zeros(Xa.shape[0])
                if inside.any():
                    stay_p[inside] = stay_probability_lower(self.family, ta, tb, Xa[inside], Xb[inside])
            if np.any(self.rng.random(stay_p.shape) < stay_p):
                return None
            self.pessimistic += 1
            logging.debug("[REFINE] coverage unresolved on [%.6f, %.6f], policy=%s", ta, tb, self.policy)
            if self.policy == "cover":
                return None
            self._resolved(h)
            return tb
        tm = 0.5 * (ta + tb)
        Xm = bridge_midpoint(Xa, Xb, h, self.rng)
        gap = self.first_gap(ta, Xa, tm, Xm, depth + 1)
        if gap is not None:
            return gap
        return self.first_gap(tm, Xm, tb, Xb, depth + 1)

    # -------- in-set time of one node --------

    def occupation(self, ta: float, xa: np.ndarray, tb: float, xb: np.ndarray, depth: int = 0) -> Occupation:
        Xa, Xb = xa[None, :], xb[None, :]
        h = tb - ta
        codes, _, _, stays = self._state(ta, Xa, tb, Xb)
        if stays[0]:
            return Occupation(h, 0.0)
        if int(codes[0]) == OUT:
            return Occupation(0.0, 0.0)
        if depth >= self.max_depth:
            inside = int(self._sd(ta, Xa)[0] <= 0.0) + int(self._sd(tb, Xb)[0] <= 0.0)
            return Occupation(0.5 * h * inside, h)
        tm = 0.5 * (ta + tb)
        xm = bridge_midpoint(xa, xb, h, self.rng)
        left = self.occupation(ta, xa, tm, xm, depth + 1)
        right = self.occupation(tm, xm, tb, xb, depth + 1)
        return Occupation(left.value + right.value, left.error + right.error)


# -------- helpers over path collections --------

def _clip_to_horizon(times: np.ndarray, pos: np.ndarray, horizon: float):
    if horizon > times[-1] + 1e-12:
        raise ValueError(f"paths end at {times[-1]}, before the horizon {horizon}")
    k = int(np.searchsorted(times, horizon - 1e-12))
    if not math.isclose(times[k], horizon, rel_tol=0.0, abs_tol=1e-9):
        raise ValueError(f"horizon {horizon} is not a knot of the path grid")
    return times[: k + 1], pos[:, : k + 1]


def _prepare(paths: Paths, horizon: float, resolution: Optional[Resolution]):
    groups = [(*_clip_to_horizon(t, p, horizon), ids) for t, p, ids in stack_paths(paths)]
    res = resolution or Resolution()
    n_nodes = sum(p.shape[0] for _, p, _ in groups)
    n_segments = max((t.size - 1 for t, _, _ in groups), default=0)
    return groups, res, res.segment_delta(n_segments, n_nodes)


def _node_entries(refiner: Refiner, times, pos, codes, cutoff: float = math.inf, stop_early: bool = False):
    """Per-node first entry times; with stop_early only the global minimum is exact."""
    cand = codes != OUT
    has = cand.any(axis=1)
    first = np.argmax(cand, axis=1)
    out = np.full(pos.shape[0], np.inf)
    settled = np.zeros(pos.shape[0], dtype=bool)
    best = cutoff
    order = np.flatnonzero(has)
    order = order[np.argsort(times[first[order]], kind="stable")]
    for i in order:
        if stop_early and times[first[i]] >= best:
            break
        before = refiner.pessimistic
        for k in np.flatnonzero(cand[i]):
            if stop_early and times[k] >= best:
                break
            hit = refiner.entry(times[k], pos[i, k], times[k + 1], pos[i, k + 1])
            if hit is not None:
                out[i] = hit
                best = min(best, hit)
                break
        settled[i] = refiner.pessimistic > before
    return out, settled


class EntryScan(NamedTuple):
    times: np.ndarray         # first entry per node, inf if none
    settled: np.ndarray       # nodes whose verdict used the uncertain policy

    @property
    def pessimistic(self) -> int:
        return int(np.count_nonzero(self.settled))


def scan_entries(
    paths: Paths,
    family,
    horizon: float,
    stream: Optional[np.random.Generator] = None,
    resolution: Optional[Resolution] = None,
) -> EntryScan:
    """First entry times of every node, with the nodes settled by policy."""
    groups, res, delta = _prepare(paths, horizon, resolution)
    refiner = Refiner(family, delta, res, stream or _default_stream())
    out: List[np.ndarray] = []
    flags: List[np.ndarray] = []
    for times, pos, _ in groups:
        entries = np.full(pos.shape[0], np.inf)
        settled = np.zeros(pos.shape[0], dtype=bool)
        at0 = family.signed_distance(np.asarray(0.0), pos[:, 0]) <= 0.0
        entries[at0] = 0.0
        if times.size > 1:
            codes = segment_state(family, times[:-1], times[1:], pos[:, :-1], pos[:, 1:], delta)[0]
            rest = ~at0
            entries[rest], settled[rest] = _node_entries(refiner, times, pos[rest], codes[rest])
        out.append(entries)
        flags.append(settled)
    if refiner.pessimistic:
        logging.debug("[EVENTS] %d segments resolved by policy '%s'", refiner.pessimistic, res.policy)
    if not out:
        return EntryScan(np.zeros(0), np.zeros(0, dtype=bool))
    return EntryScan(np.concatenate(out), np.concatenate(flags))


def first_entry_times(
    paths: Paths,
    family,
    horizon: float,
    stream: Optional[np.random.Generator] = None,
    resolution: Optional[Resolution] = None,
) -> np.ndarray:
    """First time each node is in the family's set (inf if never before horizon)."""
    return scan_entries(paths, family, horizon, stream, resolution).times


def detection_time(
    paths: Paths,
    family,
    horizon: float,
    stream: Optional[np.random.Generator] = None,
    resolution: Optional[Resolution] = None,
) -> CensoredTime:
    """First time some node is in D_s; censored when nobody enters by horizon."""
    groups, res, delta = _prepare(paths, horizon, resolution)
    refiner = Refiner(family, delta, res, stream or _default_stream())
    for times, pos, _ in groups:
        if np.any(family.signed_distance(np.asarray(0.0), pos[:, 0]) <= 0.0):
            return CensoredTime(0.0, horizon)
    best = math.inf
    for times, pos, _ in groups:
        if times.size < 2:
            continue
        codes = segment_state(family, times[:-1], times[1:], pos[:, :-1], pos[:, 1:], delta)[0]
        entries, _ = _node_entries(refiner, times, pos, codes, cutoff=best, stop_early=True)
        if entries.size:
            best = min(best, float(entries.min()))
    return CensoredTime(
        None if math.isinf(best) else best,
        horizon,
        uncertain_width=refiner.width,
        pessimistic=refiner.pessimistic,
    )


def isolation_time(
    paths: Paths,
    family,
    horizon: float,
    stream: Optional[np.random.Generator] = None,
    resolution: Optional[Resolution] = None,
) -> CensoredTime:
    """First time no node is in D_s; censored when the target stays covered through horizon."""
    groups, res, delta = _prepare(paths, horizon, resolution)
    if not groups:
        return CensoredTime(0.0, horizon)
    if len(groups) > 1:
        # refined NodePaths with different knots: evaluate on the common knots
        groups = [_merge_groups(groups)]
    times, pos, _ = groups[0]
    refiner = Refiner(family, delta, res, stream or _default_stream())
    sd = family.signed_distance(times, pos)
    if not np.any(sd[:, 0] <= 0.0):
        return CensoredTime(0.0, horizon)
    if times.size > 1:
        codes, _, _, stays = segment_state(family, times[:-1], times[1:], pos[:, :-1], pos[:, 1:], delta)
        sure = stays.any(axis=0)
        for k in np.flatnonzero(~sure):
            rel = codes[:, k] != OUT
            gap = refiner.first_gap(times[k], pos[rel, k], times[k + 1], pos[rel, k + 1])
            if gap is not None:
                return CensoredTime(gap, horizon, uncertain_width=refiner.width, pessimistic=refiner.pessimistic)
    return CensoredTime(None, horizon, uncertain_width=refiner.width, pessimistic=refiner.pessimistic)


def _merge_groups(groups):
    """Restricts all groups to the knots they share (always includes the base grid)."""
    common = groups[0][0]
    for times, _, _ in groups[1:]:
        common = np.intersect1d(common, times)
    positions = []
    ids = []
    for times, pos, gid in groups:
        idx = np.searchsorted(times, common)
        positions.append(pos[:, idx])
        ids.append(gid)
    return common, np.concatenate(positions), np.concatenate(ids)


# -------- occupation --------

def occupation_time(
    path: NodePath,
    ball: Region,
    window: Tuple[float, float],
    stream: Optional[np.random.Generator] = None,
    resolution: Optional[Resolution] = None,
) -> Occupation:
    """Time the path spends in `ball` during `window`, with a resolution error bound."""
    a, b = window
    if a < 0.0 or b > path.horizon + 1e-12 or b < a:
        raise ValueError(f"window {window} must lie inside [0, {path.horizon}]")
    if b == a:
        return Occupation(0.0, 0.0)
    rng = stream or _default_stream()
    path = insert_knot(insert_knot(path, a, rng), b, rng)
    family = SetFamily.general([(0.0, ball.as_shape())])
    res = resolution or Resolution()
    delta = res.segment_delta(path.times.size - 1, 1)
    refiner = Refiner(family, delta, res, rng)
    pos = path.positions()
    i0 = int(np.searchsorted(path.times, a))
    i1 = int(np.searchsorted(path.times, b))
    value = 0.0
    error = 0.0
    for k in range(i0, i1):
        occ = refiner.occupation(path.times[k], pos[k], path.times[k + 1], pos[k + 1])
        value += occ.value
        error += occ.error
    return Occupation(min(value, b - a), error)


def trapezoid_weights(times: np.ndarray, window: Tuple[float, float]) -> np.ndarray:
    a, b = window
    w = np.zeros(times.size)
    inside = np.flatnonzero((times >= a - 1e-12) & (times <= b + 1e-12))
    if inside.size < 2:
        return w
    gaps = np.diff(times[inside])
    w[inside[:-1]] += 0.5 * gaps
    w[inside[1:]] += 0.5 * gaps
    return w


def occupation_by_node(paths: Paths, ball: Region, window: Tuple[float, float]) -> np.ndarray:
    """Trapezoidal in-ball time of every node on its knot grid."""
    shape = ball.as_shape()
    out = []
    for times, pos, _ in stack_paths(paths):
        inside = (shape.signed_distance(pos) <= 0.0).astype(float)
        out.append(inside @ trapezoid_weights(times, window))
    return np.concatenate(out) if out else np.zeros(0)


def total_occupation(paths: Paths, ball: Region, window: Tuple[float, float]) -> float:
    """Summed in-ball time of all nodes during `window`."""
    return float(np.sum(occupation_by_node(paths, ball, window)))


# -------- discrete-time coverage --------

def covered_all_times(inside: np.ndarray) -> np.ndarray:
    """inside[..., node, time] -> at every time some node is in its set."""
    return inside.any(axis=-2).all(axis=-1)


def coverage_indicators(positions: np.ndarray, shapes: Sequence[Sequence]) -> np.ndarray:
    """
    positions: (S, k, m, d) node positions at m times for S samples;
    shapes[i][j] the set node i must be in at time j. Returns (S,) bools.
    """
    S, k, m, _ = positions.shape
    inside = np.zeros((S, k, m), dtype=bool)
    for i in range(k):
        for j in range(m):
            inside[:, i, j] = shapes[i][j].signed_distance(positions[:, i, j]) <= 0.0
    return covered_all_times(inside)


def discrete_coverage(paths: Sequence[NodePath], family, times: Sequence[float]) -> bool:
    """True iff at every listed time some node lies in its set (family or per-node families)."""
    times = list(times)
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("coverage times must be sorted")
    families = list(family) if isinstance(family, (list, tuple)) else [family] * len(paths)
    if len(families) != len(paths):
        raise ValueError(f"{len(families)} families for {len(paths)} paths")
    inside = np.zeros((len(paths), len(times)), dtype=bool)
    for i, (path, fam) in enumerate(zip(paths, families)):
        for j, t in enumerate(times):
            x = path.position_at(t)[None, :]
            inside[i, j] = bool(fam.signed_distance(np.asarray(t), x)[0] <= 0.0)
    return bool(covered_all_times(inside))
