import argparse
import asyncio
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import orjson
import scipy

from config import (
    CLOUD_CSV,
    CSV_SCHEMA_VERSION,
    DEFAULT_OUT_DIR,
    EXIT_CONFIG_ERROR,
    EXIT_INTERRUPTED,
    EXIT_OK,
    EXIT_SUITE_FAILURE,
    EXIT_USAGE,
    FIT_JSON,
    FIT_MANIFEST_JSON,
    LOG_LEVEL,
    MANIFEST_JSON,
    OCC_IDENTITY_WORLDS,
    OCCUPATION_CSV,
    PATHS_CSV,
    PLOT_SVG,
    PROBE_CSV,
    REARRANGEMENT_CSV,
    SAMPLE_BLOCK,
    SAUSAGE_CSV,
    SPLITTING_DEFAULT_EFFORT,
    STRATEGY_CSV,
    SUMMARY_JSON,
    SURVIVAL_CSV,
    TRUNCATION_CHECK_RUNS,
)
from core.models import EventSpec, RunManifest, SimConfig, SurvivalCurve
from core.paths import build_grid
from core.seeds import SeedSchedule
from core.sets import SetFamily
from core.sim_config import ConfigError, ScalingKind, config_to_dict, load_experiment, validate_config
from core.world import sample_world
from analysis.estimators import (
    SamplingError,
    SuiteFailure,
    fill_tail_with_splitting,
    mean_total_occupation,
    merge,
    occupation_identity,
    policy_budget,
    sausage_volume,
    shell_report,
    tally_survival,
    truncation_soundness,
)
from analysis.exponent_fit import compare_regressors, d1_bracket, fit_exponent
from analysis.rearrangement import oracle_check, run_suite, suite_verdict
from analysis.coverage_probe import d1_coverage_probe
from analysis.occupation_tail import occupation_tail_report
from analysis.results_logger import (
    OccupationLogger,
    ProbeLogger,
    RearrangementLogger,
    SausageLogger,
    StrategyLogger,
    SurvivalLogger,
    dump_cloud,
    dump_paths,
    read_survival_csv,
    write_json,
)
from strategy.stay_put import comparison_reports, strategy_config, strategy_events
from strategy.trajectories import build as build_trajectory, standard_challengers
from display import display_curve, display_summary, plot_fit, plot_scatter, plot_survival

COMMANDS = ("isolation", "detection", "sausage", "strategy", "rearrangement", "probe-d1", "occupation", "fit")
PACKAGE_VERSION = "0.1.0"


class UsageParser(argparse.ArgumentParser):
    """argparse with the usage exit code 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = UsageParser(prog="pbm", description="Isolation and detection times among Poisson Brownian motions.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config", help="experiment TOML; for `fit` a survival.csv is also accepted")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker processes")
    p.add_argument("--seed", type=int, default=None, help="override [sim] master_seed")
    p.add_argument("--samples", type=int, default=None, help="override [sim] n_samples")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--plot", action="store_true", help="write plot.svg")
    p.add_argument("--dim", type=int, default=None, help="dimension for `fit` on a bare CSV")
    return p


# --- Run context ---

@dataclass
class RunContext:
    command: str
    cfg: SimConfig
    experiment: Dict[str, Any]
    out_dir: Path
    threads: int
    plot: bool
    stream: SeedSchedule
    dump_world: bool = False
    shards: List[Tuple[int, int]] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    budget: Dict[str, Any] = field(default_factory=dict)
    failure: Optional[Exception] = None

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.outputs.append(str(p))
        return p


def shard_ranges(n: int, workers: int, block: int = 1) -> List[Tuple[int, int]]:
    """Contiguous sample ranges, boundaries on multiples of `block`."""
    n_blocks = -(-n // block)
    workers = max(1, min(workers, n_blocks))
    per, extra = divmod(n_blocks, workers)
    out, lo = [], 0
    for w in range(workers):
        hi = lo + per + (1 if w < extra else 0)
        out.append((lo * block, min(hi * block, n)))
        lo = hi
    return out


async def run_shards(fn: Callable, args_list: Sequence[tuple], threads: int) -> list:
    if threads <= 1 or len(args_list) == 1:
        return [fn(*args) for args in args_list]
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [loop.run_in_executor(pool, fn, *args) for args in args_list]
        return list(await asyncio.gather(*futures))


# --- Commands ---

def _target_family(ctx: RunContext) -> SetFamily:
    spec = ctx.experiment.get("trajectory")
    if spec is None:
        return SetFamily.static_ball(ctx.cfg.r, ctx.cfg.d)
    params = {k: v for k, v in spec.items() if k != "kind"}
    g = build_trajectory(spec["kind"], ctx.cfg.d, ctx.cfg.horizon, **params)
    ctx.cfg = strategy_config(ctx.cfg, {"target": g})
    return SetFamily.moving_ball(g, ctx.cfg.r)


async def run_survival(ctx: RunContext):
    cfg = ctx.cfg
    t_grid = [float(t) for t in ctx.experiment.get("t_grid", [cfg.horizon])]
    family = _target_family(ctx)
    cfg = ctx.cfg
    event = EventSpec(ctx.command, family)
    ctx.shards = shard_ranges(cfg.n_samples, ctx.threads)
    logging.info("[RUN] %s over t=%s, %d samples in %d shards", ctx.command, t_grid, cfg.n_samples, len(ctx.shards))
    tallies = await run_shards(
        tally_survival, [(cfg, [event], t_grid, ctx.stream, a, b) for a, b in ctx.shards], ctx.threads
    )
    tally = merge(tallies)
    curve = tally.curve(0)
    if ctx.experiment.get("splitting", True):
        curve = fill_tail_with_splitting(
            curve,
            cfg,
            event,
            ctx.stream.child("splitting"),
            levels=ctx.experiment.get("split_levels"),
            effort=int(ctx.experiment.get("split_effort", SPLITTING_DEFAULT_EFFORT)),
        )
    ctx.budget.update(_survival_policy(curve, tally.n, cfg))
    runs = int(ctx.experiment.get("truncation_runs", TRUNCATION_CHECK_RUNS))
    if runs > 0:
        shell = truncation_soundness(cfg, family, runs, ctx.stream.child("truncation"))
        ctx.budget["truncation_shell"] = shell_report(shell, cfg.trunc_eps)
    SurvivalLogger(ctx.path(SURVIVAL_CSV)).log_curve(curve)
    if ctx.dump_world:
        _dump_world(ctx, t_grid, max(cfg.set_bound + cfg.r, family.bound))
    display_curve(curve)
    if ctx.plot:
        plot_survival([curve], ctx.path(PLOT_SVG))


def _survival_policy(curve: SurvivalCurve, n: int, cfg: SimConfig) -> Dict[str, Any]:
    # the budget is relative to the smallest tail the curve reports
    smallest = min((p.value for p in curve.points if p.value > 0.0), default=0.0)
    return policy_budget(int(curve.pessimistic), n, smallest, cfg.error_budget, f"{curve.event} curve")


def _dump_world(ctx: RunContext, t_grid: List[float], reach: float):
    """Writes the cloud and the kept paths of world 0, replayed from its sample stream."""
    grid = build_grid(ctx.cfg, t_grid, horizon=t_grid[-1])
    world = sample_world(ctx.cfg, grid, ctx.stream.stream(0), reach=reach)
    dump_cloud(ctx.path(CLOUD_CSV), world.cloud)
    dump_paths(ctx.path(PATHS_CSV), world.paths)
    logging.info("[RUN] world 0 dumped: %d nodes, %d paths", world.n_nodes, len(world.paths))


def _sausage_shard(d, r, t, n, stream, cfg, start, stop):
    return sausage_volume(d, r, t, n, stream, config=cfg, start=start, stop=stop)


async def run_sausage(ctx: RunContext):
    cfg = ctx.cfg
    times = [float(t) for t in ctx.experiment.get("times", [cfg.horizon])]
    ctx.shards = shard_ranges(cfg.n_samples, ctx.threads, block=SAMPLE_BLOCK)
    logger = SausageLogger(ctx.path(SAUSAGE_CSV))
    rows = []
    by_time: Dict[str, Any] = {}
    for i, t in enumerate(times):
        stream = ctx.stream.child(f"t{i}")
        parts = await run_shards(
            _sausage_shard,
            [(cfg.d, cfg.r, t, cfg.n_samples, stream, cfg, a, b) for a, b in ctx.shards],
            ctx.threads,
        )
        est = merge(parts)
        logger.log_estimate(cfg.d, cfg.r, t, est)
        by_time[f"{t:g}"] = policy_budget(est.pessimistic, est.n, est.value / est.scale, cfg.error_budget,
                                          f"sausage t={t:g}")
        rows.append((f"E vol W({t:g})", f"{est.value:.5g} +- {est.stderr:.2g}"))
        rows.append((f"lambda*V({t:g})", cfg.lam * est.value))
    ctx.budget["pessimistic_samples"] = sum(b["pessimistic_samples"] for b in by_time.values())
    ctx.budget["policy_by_time"] = by_time
    ctx.budget["exceeded"] = any(b["exceeded"] for b in by_time.values())
    display_summary("Wiener sausage", rows)


async def run_strategy(ctx: RunContext):
    exp = ctx.experiment
    cfg = ctx.cfg
    t_grid = [float(t) for t in exp.get("t_grid", [cfg.horizon])]
    if "challengers" in exp:
        trajectories = {}
        for spec in exp["challengers"]:
            params = {k: v for k, v in spec.items() if k not in ("kind", "label")}
            trajectories[spec.get("label", spec["kind"])] = build_trajectory(spec["kind"], cfg.d, cfg.horizon, **params)
    else:
        trajectories = standard_challengers(cfg.d, cfg.horizon, ctx.stream.child("trajectories").stream(0))
    cfg = ctx.cfg = strategy_config(cfg, trajectories)
    events = strategy_events(cfg, trajectories)
    ctx.shards = shard_ranges(cfg.n_samples, ctx.threads)
    tallies = await run_shards(
        tally_survival, [(cfg, events, t_grid, ctx.stream, a, b) for a, b in ctx.shards], ctx.threads
    )
    reports = comparison_reports(merge(tallies))
    StrategyLogger(ctx.path(STRATEGY_CSV)).log_reports(reports)
    violations = [r for r in reports if r.verdict == "violation"]
    display_summary(
        "Stay-put vs moving",
        [(r.label, f"max z {max(r.z):.2f}") for r in reports],
        verdict="violation" if violations else "consistent",
    )
    if ctx.plot and reports:
        plot_survival([reports[0].baseline] + [r.challenger for r in reports], ctx.path(PLOT_SVG))
    if violations:
        ctx.failure = SuiteFailure(
            "challenger survival above stay-put: " + ", ".join(r.label for r in violations), violations
        )


async def run_rearrangement(ctx: RunContext):
    exp = ctx.experiment
    n = ctx.cfg.n_samples
    rows = run_suite(
        int(exp.get("instances", 50)),
        n,
        ctx.stream,
        dims=tuple(exp.get("dims", (1, 2))),
        R=float(exp.get("R", 3.0)),
    )
    ctx.shards = [(0, n)]
    RearrangementLogger(ctx.path(REARRANGEMENT_CSV)).log_rows(rows)
    summary = {"instances": [{"index": r.index, "status": r.status, "z": r.report.z} for r in rows]}
    oracle_z = None
    if exp.get("oracle", True):
        rep, exact, oracle_z = oracle_check(n, ctx.stream)
        summary["oracle"] = {"mc": rep.p_general.value, "quadrature": exact, "z": oracle_z,
                             "p_balls": rep.p_balls.value}
    write_json(ctx.path(SUMMARY_JSON), summary)
    hard = sum(r.status == "hard-violation" for r in rows)
    soft = sum(r.status == "soft-violation" for r in rows)
    display_summary("Rearrangement", [("Instances", len(rows)), ("Soft (>3 sigma)", soft),
                                      ("Hard (>5 sigma)", hard), ("Oracle z", oracle_z)],
                    verdict="ok" if not hard else "violation")
    try:
        suite_verdict(rows, oracle_z)
    except SuiteFailure as exc:
        ctx.failure = exc


async def run_probe(ctx: RunContext):
    cfg = ctx.cfg
    t_list = [float(t) for t in ctx.experiment.get("t_list", [100.0, 400.0, 1600.0])]
    report = d1_coverage_probe(t_list, cfg.lam, cfg.r, cfg.n_samples, ctx.stream, cfg.ci_level)
    ctx.shards = [(0, cfg.n_samples)]
    ProbeLogger(ctx.path(PROBE_CSV)).log_report(report)
    lo, hi = report.band
    display_summary("d=1 coverage probe", [(f"t={r.t:g}", f"p*sqrt(t) {r.scaled:.4g}") for r in report.rows]
                    + [("Band", f"[{lo:.4g}, {hi:.4g}]"), ("Ratio", report.band_ratio)])
    if ctx.plot:
        plot_scatter([r.t for r in report.rows], [r.scaled for r in report.rows], "t", "p(t) sqrt(t)", ctx.path(PLOT_SVG))


async def run_occupation(ctx: RunContext):
    cfg = ctx.cfg
    exp = ctx.experiment
    kwargs = {k: exp[k] for k in ("start", "levels", "scale") if k in exp}
    report = occupation_tail_report(cfg.d, cfg.r, cfg.horizon, cfg.n_samples, ctx.stream,
                                    step=cfg.step, lam=cfg.lam, level=cfg.ci_level, **kwargs)
    ctx.shards = [(0, cfg.n_samples)]
    OccupationLogger(ctx.path(OCCUPATION_CSV)).log_report(report)
    summary: Dict[str, Any] = {
        "mean": report.mean.to_dict(),
        "slope": report.slope,
        "intercept": report.intercept,
        "r_squared": report.r_squared,
        "rejection_rate": report.rejection_rate,
        "confined_node_floor": report.floor,
        "psi": report.psi,
        "levels": report.levels,
    }
    rows = [("Mean S_1", report.mean.value), ("Slope", report.slope),
            ("r2", report.r_squared), ("Floor", report.floor)]
    worlds = int(exp.get("identity_worlds", OCC_IDENTITY_WORLDS))
    if worlds > 0:
        window = (0.0, cfg.horizon)
        total = mean_total_occupation(cfg, window, ctx.stream.child("total"), stop=worlds)
        summary["total_occupation"] = identity = occupation_identity(total, cfg, window)
        rows.append(("Total occupation z", identity["z"]))
    write_json(ctx.path(SUMMARY_JSON), summary)
    display_summary("Occupation tail", rows)
    if ctx.plot:
        plot_scatter(report.levels, [e.value for e in report.tail], "m", "P(S_1 > m scale psi)", ctx.path(PLOT_SVG), logy=True)


def run_fit(csv_path: Path, d: int, event: str, out_dir: Path, plot: bool) -> List[str]:
    curve = read_survival_csv(csv_path, event)
    fit = fit_exponent(curve, d)
    doc: Dict[str, Any] = {"source": str(csv_path), "d": d, "event": event, "fit": fit.to_dict()}
    try:
        doc["regressors"] = {k: v.to_dict() for k, v in compare_regressors(curve).items()}
    except ValueError as exc:
        logging.info("[FIT] regressor comparison skipped: %s", exc)
    if d == 1:
        try:
            doc["bracket"] = [vars(row) for row in d1_bracket(curve)]
        except ValueError as exc:
            logging.info("[FIT] d=1 bracket skipped: %s", exc)
    outputs = [str(write_json(out_dir / FIT_JSON, doc))]
    display_summary("Exponent fit", [("Regressor", fit.regressor), ("Slope", fit.slope),
                                     ("Slope stderr", fit.slope_stderr), ("r2", fit.r_squared)])
    if plot:
        x = ScalingKind(d).regressor(np.asarray(fit.t))
        y = [fit.intercept + fit.slope * xi + ri for xi, ri in zip(x, fit.residuals)]
        outputs.append(str(plot_fit(fit, x, y, out_dir / PLOT_SVG)))
    return outputs


RUNNERS = {
    "isolation": run_survival,
    "detection": run_survival,
    "sausage": run_sausage,
    "strategy": run_strategy,
    "rearrangement": run_rearrangement,
    "probe-d1": run_probe,
    "occupation": run_occupation,
}


# --- Manifest ---

def _versions() -> Dict[str, str]:
    return {"package": PACKAGE_VERSION, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "orjson": orjson.__version__}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(manifest: RunManifest, path: Path) -> Path:
    manifest.outputs.append(str(path))
    return write_json(path, manifest.to_dict())


def write_manifest(ctx: RunContext, started: str, t0: float) -> Path:
    config = config_to_dict(ctx.cfg)
    config["resolved_trunc_radius"] = ctx.cfg.trunc_radius
    manifest = RunManifest(
        command=ctx.command,
        experiment_id=ctx.stream.experiment_id,
        config=config,
        experiment=ctx.experiment,
        seed_schedule=ctx.stream.descriptor(),
        shards=ctx.shards,
        error_budget={"per_world": ctx.cfg.error_budget, "trunc_eps": ctx.cfg.trunc_eps,
                      "refine_depth": ctx.cfg.refine_depth, "policy": ctx.cfg.uncertain_policy, **ctx.budget},
        versions=_versions(),
        started=started,
        finished=_now(),
        wall_time=round(time.perf_counter() - t0, 3),
        outputs=list(ctx.outputs),
        csv_schema_version=CSV_SCHEMA_VERSION,
    )
    return _write_manifest(manifest, ctx.out_dir / MANIFEST_JSON)


def write_fit_manifest(source: Path, csv_path: Path, d: int, event: str, out_dir: Path,
                       outputs: List[str], started: str, t0: float, experiment_id: str = "fit") -> Path:
    """Manifest of a `fit` run; kept apart from the manifest of the run that wrote the CSV."""
    manifest = RunManifest(
        command="fit",
        experiment_id=experiment_id,
        config={"d": d},
        experiment={"source": str(source), "csv": str(csv_path), "event": event},
        seed_schedule={},
        shards=[],
        error_budget={},
        versions=_versions(),
        started=started,
        finished=_now(),
        wall_time=round(time.perf_counter() - t0, 3),
        outputs=list(outputs),
        csv_schema_version=CSV_SCHEMA_VERSION,
    )
    return _write_manifest(manifest, out_dir / FIT_MANIFEST_JSON)


# --- Entry point ---

def _fit_from_args(args) -> int:
    started, t0 = _now(), time.perf_counter()
    src = Path(args.config)
    experiment_id = "fit"
    if src.suffix == ".toml":
        exp = load_experiment(src)
        experiment_id = str(exp.experiment.get("id", experiment_id))
        csv_path = Path(exp.experiment.get("csv", SURVIVAL_CSV))
        if not csv_path.is_absolute():
            csv_path = src.parent / csv_path
        d, event = exp.sim.d, exp.experiment.get("event", "custom")
    else:
        csv_path, d, event = src, args.dim, "custom"
        manifest = src.parent / MANIFEST_JSON
        if manifest.exists():
            meta = orjson.loads(manifest.read_bytes())
            d = d or meta["config"]["d"]
            event = meta.get("command", event)
        if d is None:
            raise ConfigError(f"no dimension for {src}: pass --dim or keep its manifest.json alongside")
    if not csv_path.exists():
        raise ConfigError(f"survival CSV not found: {csv_path}")
    out_dir = Path(args.out) if args.out else csv_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = run_fit(csv_path, d, event, out_dir, args.plot)
    write_fit_manifest(src, csv_path, d, event, out_dir, outputs, started, t0, experiment_id)
    return EXIT_OK


async def run(args) -> int:
    started, t0 = _now(), time.perf_counter()
    exp = load_experiment(args.config)
    cfg = exp.sim
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.samples is not None:
        cfg = replace(cfg, n_samples=args.samples)
    cfg = validate_config(cfg)

    out_dir = Path(args.out or exp.output.get("dir", DEFAULT_OUT_DIR))
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(
        command=args.command,
        cfg=cfg,
        experiment=exp.experiment,
        out_dir=out_dir,
        threads=max(1, args.threads),
        plot=args.plot or bool(exp.output.get("plot", False)),
        stream=SeedSchedule(cfg.master_seed, str(exp.experiment.get("id", args.command))),
        dump_world=bool(exp.output.get("dump_world", False)),
    )
    logging.info("[RUN] %s d=%d lambda=%g r=%g t=%g R=%.2f seed=%d", ctx.command, cfg.d, cfg.lam, cfg.r,
                 cfg.horizon, cfg.trunc_radius, cfg.master_seed)
    await RUNNERS[args.command](ctx)
    write_manifest(ctx, started, t0)
    if ctx.failure is not None:
        raise ctx.failure
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL),
        format="%(asctime)s [%(levelname)s] %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            return _fit_from_args(args)
        return asyncio.run(run(args))
    except ConfigError as exc:
        logging.error("Config error: %s", exc)
        return EXIT_CONFIG_ERROR
    except (SuiteFailure, SamplingError) as exc:
        logging.error("Suite failure: %s", exc)
        return EXIT_SUITE_FAILURE
    except ValueError as exc:
        logging.error("Rejected: %s", exc)
        return EXIT_CONFIG_ERROR
    except KeyboardInterrupt:
        logging.info("Stopped by user.")
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
