from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from config import COARSE_STEP, WORLD_CHUNK_NODES
from core.events import (
    EntryScan,
    Resolution,
    detection_time,
    isolation_time,
    scan_entries,
    total_occupation,
)
from core.models import CensoredTime, EventSpec, PointCloud, Region, SimConfig
from core.paths import PathBatch, envelope, fill_bridges, segment_budget
from core.pointprocess import sample_poisson
from core.sets import Ball


def coarse_indices(times: np.ndarray, step: float) -> np.ndarray:
    """Every k-th knot of `times` (k from COARSE_STEP / step) plus the last one."""
    if times.size == 1:
        return np.zeros(1, dtype=int)
    k = max(1, int(round(COARSE_STEP / step)))
    idx = np.arange(0, times.size, k)
    if idx[-1] != times.size - 1:
        idx = np.append(idx, times.size - 1)
    return idx


@dataclass
class World:
    """
    One realization: a Poisson cloud in B(0,R) moving as Brownian motions.

    `paths` holds only the nodes that can come within `reach` of the origin
    before the horizon; `final_positions` holds every node at the horizon.
    """

    times: np.ndarray
    paths: PathBatch
    final_positions: np.ndarray
    n_nodes: int
    delta: float
    resolution: Resolution
    refine_key: int
    cloud: Optional[PointCloud] = None    # the sampled cloud, None when origins were given

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def _rng(self) -> np.random.Generator:
        # every evaluation replays the same bridge draws, so events on one world share them
        return np.random.Generator(np.random.Philox(key=self.refine_key))

    def _res(self) -> Resolution:
        return Resolution(
            self.resolution.refine_depth, self.resolution.error_budget, self.resolution.policy, self.delta
        )

    def isolation_time(self, family) -> CensoredTime:
        return isolation_time(self.paths, family, self.horizon, stream=self._rng(), resolution=self._res())

    def detection_time(self, family) -> CensoredTime:
        return detection_time(self.paths, family, self.horizon, stream=self._rng(), resolution=self._res())

    def event_time(self, event: EventSpec) -> CensoredTime:
        if event.kind == "isolation":
            return self.isolation_time(event.family)
        if event.kind == "detection":
            return self.detection_time(event.family)
        raise ValueError(f"unknown event kind {event.kind!r}")

    def scan_entries(self, family) -> EntryScan:
        if len(self.paths) == 0:
            return EntryScan(np.zeros(0), np.zeros(0, dtype=bool))
        return scan_entries(self.paths, family, self.horizon, stream=self._rng(), resolution=self._res())

    def first_entries(self, family) -> np.ndarray:
        return self.scan_entries(family).times

    def total_occupation(self, ball: Region, window: Tuple[float, float]) -> float:
        return total_occupation(self.paths, ball, window)


def sample_world(
    config: SimConfig,
    grid: np.ndarray,
    stream: np.random.Generator,
    reach: Optional[float] = None,
    origins: Optional[np.ndarray] = None,
) -> World:
    """
    Builds a world on `grid`.

    Nodes come from a Poisson cloud in B(0, trunc_radius) unless `origins` is
    given. Paths are drawn on a coarse grid first; a node is kept only if its
    coarse envelope reaches B(0, reach), and kept nodes are filled in with
    bridges to the full grid.
    """
    if reach is None:
        reach = config.set_bound + config.r
    cloud: Optional[PointCloud] = None
    if origins is None:
        cloud = sample_poisson(config.lam, Region.ball(config.trunc_radius, config.d), stream)
        origins = cloud.points
    origins = np.asarray(origins, dtype=float).reshape(-1, config.d)

    n_total = origins.shape[0]
    cidx = coarse_indices(grid, config.step)
    ctimes = grid[cidx]
    n_segments = (grid.size - 1) + (ctimes.size - 1)
    delta = segment_budget(config.error_budget, n_segments, n_total)
    B_coarse = envelope(np.diff(ctimes), config.d, delta)
    screen = Ball((0.0,) * config.d, reach)

    kept_origins = []
    kept_disp = []
    kept_ids = []
    final = np.empty_like(origins)
    for start in range(0, n_total, WORLD_CHUNK_NODES):
        chunk = origins[start:start + WORLD_CHUNK_NODES]
        m = chunk.shape[0]
        cdisp = np.zeros((m, ctimes.size, config.d))
        if ctimes.size > 1:
            steps = stream.standard_normal((m, ctimes.size - 1, config.d)) * np.sqrt(np.diff(ctimes))[None, :, None]
            cdisp[:, 1:] = np.cumsum(steps, axis=1)
        cpos = chunk[:, None, :] + cdisp
        final[start:start + m] = cpos[:, -1]

        keep = np.any(screen.signed_distance(cpos) <= 0.0, axis=1)
        if ctimes.size > 1:
            lo, _ = screen.chord_bounds(cpos[:, :-1], cpos[:, 1:])
            keep |= np.any(lo <= B_coarse[None, :], axis=1)
        if not keep.any():
            continue
        kept_origins.append(chunk[keep])
        kept_disp.append(fill_bridges(grid, cidx, cdisp[keep], stream))
        kept_ids.append(np.arange(start, start + m)[keep])

    if kept_origins:
        batch = PathBatch(
            np.concatenate(kept_ids), np.concatenate(kept_origins), grid, np.concatenate(kept_disp)
        )
    else:
        batch = PathBatch(np.zeros(0, dtype=int), np.zeros((0, config.d)), grid, np.zeros((0, grid.size, config.d)))
    logging.debug("[WORLD] %d nodes, %d within reach %.2f", n_total, len(batch), reach)
    return World(
        times=grid,
        paths=batch,
        final_positions=final,
        n_nodes=n_total,
        delta=delta,
        resolution=Resolution.from_config(config),
        refine_key=int(stream.integers(0, 2 ** 63)),
        cloud=cloud,
    )
