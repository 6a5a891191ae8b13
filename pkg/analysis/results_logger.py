import csv
import math
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

import orjson
from scipy import stats

from core.models import Estimate, PointCloud, SurvivalCurve
from core.paths import PathBatch


class CsvLogger:
    """CSV writer that owns its header; `fresh` truncates an existing file."""

    HEADER: Sequence[str] = ()

    def __init__(self, path: Union[str, Path], fresh: bool = True):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if fresh and self.path.exists():
            self.path.unlink()
        self._ensure_header()

    def _ensure_header(self):
        if not self.path.exists():
            with self.path.open("w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(list(self.HEADER))

    def _write(self, rows: Iterable[Sequence[Any]]):
        with self.path.open("a", newline="") as f:
            writer = csv.writer(f)
            writer.writerows(rows)


class SurvivalLogger(CsvLogger):
    HEADER = ("t", "estimate", "ci_lo", "ci_hi", "n", "method")

    def log_curve(self, curve: SurvivalCurve):
        self._write(
            [
                f"{t:.6g}",
                f"{p.value:.10g}",
                f"{p.ci[0]:.10g}",
                f"{p.ci[1]:.10g}",
                p.n,
                p.method,
            ]
            for t, p in zip(curve.t_grid, curve.points)
        )


def read_survival_csv(path: Union[str, Path], event: str = "custom", level: float = 0.95) -> SurvivalCurve:
    """Rebuilds a SurvivalCurve from survival.csv; stderr is recovered from n or the CI width."""
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    t_grid: List[float] = []
    points: List[Estimate] = []
    with Path(path).open(newline="") as f:
        reader = csv.DictReader(f)
        missing = set(SurvivalLogger.HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            value = float(row["estimate"])
            lo, hi = float(row["ci_lo"]), float(row["ci_hi"])
            n = int(row["n"])
            if row["method"] == "direct":
                se = math.sqrt(value * (1.0 - value) / n)
            else:
                se = (hi - lo) / (2.0 * z)
            t_grid.append(float(row["t"]))
            points.append(Estimate(value, se, n, (lo, hi), row["method"], level=level))
    if not points:
        raise ValueError(f"{path}: no rows")
    return SurvivalCurve(tuple(t_grid), tuple(points), event, raw=tuple(p.value for p in points), isotonic=True)


class SausageLogger(CsvLogger):
    HEADER = ("d", "r", "t", "estimate", "stderr", "ci_lo", "ci_hi", "n")

    def log_estimate(self, d: int, r: float, t: float, est: Estimate):
        self._write([[d, f"{r:.6g}", f"{t:.6g}", f"{est.value:.10g}", f"{est.stderr:.6g}",
                      f"{est.ci[0]:.10g}", f"{est.ci[1]:.10g}", est.n]])


class StrategyLogger(CsvLogger):
    HEADER = ("label", "t", "baseline", "challenger", "margin", "z", "verdict")

    def log_reports(self, reports):
        self._write(
            [
                rep.label,
                f"{t:.6g}",
                f"{b.value:.10g}",
                f"{c.value:.10g}",
                f"{m:.6g}",
                f"{z:.4f}",
                rep.verdict,
            ]
            for rep in reports
            for t, b, c, m, z in zip(rep.baseline.t_grid, rep.baseline.points, rep.challenger.points, rep.margins, rep.z)
        )


class RearrangementLogger(CsvLogger):
    HEADER = ("instance", "d", "k", "n_times", "p_general", "p_balls", "n", "margin", "z", "status")

    def log_rows(self, rows):
        self._write(
            [
                row.index,
                row.d,
                row.k,
                row.n_times,
                f"{row.report.p_general.value:.10g}",
                f"{row.report.p_balls.value:.10g}",
                row.report.p_general.n,
                f"{row.report.margin:.6g}",
                f"{row.report.z:.4f}",
                row.status,
            ]
            for row in rows
        )


class ProbeLogger(CsvLogger):
    HEADER = ("t", "expected_count", "count_mean", "count_var", "count_z", "p", "p_stderr", "p_sqrt_t", "p_sqrt_t_stderr")

    def log_report(self, report):
        self._write(
            [
                f"{r.t:.6g}",
                f"{r.expected_count:.6g}",
                f"{r.count_mean:.6g}",
                f"{r.count_var:.6g}",
                f"{r.count_z:.4f}",
                f"{r.cover.value:.8g}",
                f"{r.cover.stderr:.4g}",
                f"{r.scaled:.6g}",
                f"{r.scaled_stderr:.4g}",
            ]
            for r in report.rows
        )


class OccupationLogger(CsvLogger):
    HEADER = ("m", "threshold", "estimate", "ci_lo", "ci_hi", "exceed", "n")

    def log_report(self, report):
        self._write(
            [
                f"{m:g}",
                f"{u:.6g}",
                f"{e.value:.8g}",
                f"{e.ci[0]:.8g}",
                f"{e.ci[1]:.8g}",
                e.successes,
                e.n,
            ]
            for m, u, e in zip(report.levels, report.thresholds, report.tail)
        )


# -------- debug dumps --------

def dump_cloud(path: Union[str, Path], cloud: PointCloud):
    header = ["node_id"] + [f"x_{j + 1}" for j in range(cloud.d)]
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i, p in enumerate(cloud.points):
            writer.writerow([i] + [f"{x:.6f}" for x in p])


def dump_paths(path: Union[str, Path], batch: PathBatch):
    header = ["node_id", "t"] + [f"x_{j + 1}" for j in range(batch.d)]
    pos = batch.positions()
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i, node in enumerate(batch.node_ids):
            for k, t in enumerate(batch.times):
                writer.writerow([int(node), f"{t:.6f}"] + [f"{x:.6f}" for x in pos[i, k]])


# -------- JSON --------

def _default(obj):
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def to_json_bytes(obj) -> bytes:
    return orjson.dumps(obj, default=_default, option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY)


def write_json(path: Union[str, Path], obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_json_bytes(obj))
    return path
