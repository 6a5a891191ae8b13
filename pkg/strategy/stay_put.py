from __future__ import annotations

import logging
from dataclasses import replace
from typing import List, Mapping, Sequence, Union

from config import SUITE_SOFT_SIGMA
from analysis.estimators import SurvivalTally, tally_survival
from core.models import ComparisonReport, EventSpec, SimConfig
from core.seeds import SeedSchedule
from core.sets import SetFamily, TargetTrajectory
from core.sim_config import validate_config

Trajectories = Union[Mapping[str, TargetTrajectory], Sequence[TargetTrajectory]]


def _labelled(trajectories: Trajectories):
    if isinstance(trajectories, Mapping):
        return list(trajectories.items())
    return [(f"g{i}", g) for i, g in enumerate(trajectories)]


def strategy_config(config: SimConfig, trajectories: Trajectories) -> SimConfig:
    """Raises set_bound to cover every trajectory, re-deriving an automatic truncation radius."""
    needed = 0.0
    for label, g in _labelled(trajectories):
        if g.d != config.d:
            raise ValueError(f"trajectory {label} has dimension {g.d}, config has {config.d}")
        needed = max(needed, g.bound())
    if needed <= config.set_bound:
        return config
    logging.info("[STRATEGY] set_bound %.3f -> %.3f for the trajectories", config.set_bound, needed)
    raised = replace(config, set_bound=needed)
    if config.auto_trunc:
        raised = replace(raised, trunc_radius=None, auto_trunc=False)
    return validate_config(raised)


def strategy_events(config: SimConfig, trajectories: Trajectories) -> List[EventSpec]:
    """Stay-put isolation first, then one moving-ball isolation event per trajectory."""
    events = [EventSpec("isolation", SetFamily.static_ball(config.r, config.d), "stay-put")]
    for label, g in _labelled(trajectories):
        events.append(EventSpec("isolation", SetFamily.moving_ball(g, config.r), label))
    return events


def comparison_reports(tally: SurvivalTally) -> List[ComparisonReport]:
    baseline = tally.curve(0)
    reports = []
    for e in range(1, len(tally.labels)):
        margin, z = tally.paired(e)
        verdict = "violation" if (z > SUITE_SOFT_SIGMA).any() else "consistent"
        reports.append(ComparisonReport(
            label=tally.labels[e],
            baseline=baseline,
            challenger=tally.curve(e),
            margins=margin.tolist(),
            z=z.tolist(),
            verdict=verdict,
        ))
        logging.info("[STRATEGY] %s max z=%.2f -> %s", tally.labels[e], float(z.max()), verdict)
    return reports


def compare_strategies(
    config: SimConfig,
    trajectories: Trajectories,
    t_grid: Sequence[float],
    stream: SeedSchedule,
) -> List[ComparisonReport]:
    """
    Survival of a target that stays put against targets moving along each
    trajectory, all on the same worlds.
    """
    config = strategy_config(config, trajectories)
    tally = tally_survival(config, strategy_events(config, trajectories), t_grid, stream)
    return comparison_reports(tally)
