from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import (
    CI_LEVEL,
    DEFAULT_ERROR_BUDGET,
    DEFAULT_MASTER_SEED,
    DEFAULT_REFINE_DEPTH,
    DEFAULT_SAMPLES,
    DEFAULT_SET_BOUND,
    DEFAULT_STEP,
    DEFAULT_TRUNC_EPS,
    DEFAULT_UNCERTAIN_POLICY,
    SUITE_HARD_SIGMA,
)
from core.sets import Ball, Box, SetFamily, unit_ball_volume

# Crossing verdict statuses
INSIDE = "definitely-inside"
OUTSIDE = "definitely-outside"
UNCERTAIN = "uncertain"


@dataclass(frozen=True)
class SimConfig:
    d: int
    lam: float                   # intensity lambda
    r: float                     # detection radius
    horizon: float               # t
    trunc_radius: Optional[float] = None   # R, None = auto
    trunc_eps: float = DEFAULT_TRUNC_EPS
    step: float = DEFAULT_STEP
    refine_depth: int = DEFAULT_REFINE_DEPTH
    master_seed: int = DEFAULT_MASTER_SEED
    n_samples: int = DEFAULT_SAMPLES

    set_bound: float = DEFAULT_SET_BOUND   # L_t minus r, sup |g(s)| of the target
    error_budget: float = DEFAULT_ERROR_BUDGET
    uncertain_policy: str = DEFAULT_UNCERTAIN_POLICY
    ci_level: float = CI_LEVEL

    # set by validate_config when it derived trunc_radius itself
    auto_trunc: bool = False

    def grid(self, horizon: Optional[float] = None) -> np.ndarray:
        """Knot times 0, h, 2h, ... ending exactly at the horizon."""
        end = self.horizon if horizon is None else horizon
        if end <= 0.0:
            return np.zeros(1)
        n = int(np.ceil(end / self.step - 1e-9))
        times = np.arange(n + 1, dtype=float) * self.step
        times[-1] = end
        return times

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class Region:
    kind: str                     # "ball" | "box" | "interval"
    center: Tuple[float, ...]
    extent: Tuple[float, ...]     # (radius,) or half-widths

    @classmethod
    def ball(cls, radius: float, d: int, center: Optional[Tuple[float, ...]] = None) -> "Region":
        return cls("ball", tuple(center) if center is not None else (0.0,) * d, (float(radius),))

    @classmethod
    def interval(cls, lo: float, hi: float) -> "Region":
        return cls("interval", ((lo + hi) / 2.0,), ((hi - lo) / 2.0,))

    @property
    def d(self) -> int:
        return len(self.center)

    def as_shape(self):
        if self.kind == "ball":
            return Ball(self.center, self.extent[0])
        if self.kind in ("box", "interval"):
            widths = self.extent if len(self.extent) == self.d else self.extent * self.d
            return Box(self.center, widths)
        raise ValueError(f"unknown region kind {self.kind!r}")

    def volume(self) -> float:
        if self.kind == "ball":
            return unit_ball_volume(self.d) * self.extent[0] ** self.d
        return self.as_shape().volume()

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return self.as_shape().contains(pts)

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        if self.kind == "ball":
            g = rng.standard_normal((n, self.d))
            norms = np.linalg.norm(g, axis=1, keepdims=True)
            norms[norms == 0.0] = 1.0
            radii = self.extent[0] * rng.random((n, 1)) ** (1.0 / self.d)
            return c + g / norms * radii
        half = np.asarray(self.as_shape().half_widths, dtype=float)
        return c + rng.uniform(-1.0, 1.0, size=(n, self.d)) * half


@dataclass(frozen=True, eq=False)
class PointCloud:
    d: int
    points: np.ndarray            # (n, d)
    region: Region
    intensity: float

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    def subset(self, keep: np.ndarray) -> "PointCloud":
        return PointCloud(self.d, self.points[keep], self.region, self.intensity)


@dataclass(frozen=True, eq=False)
class NodePath:
    node_id: int
    origin: np.ndarray            # (d,)
    times: np.ndarray             # (n,) knot times, times[0] = 0
    disp: np.ndarray              # (n, d) displacement xi(times), disp[0] = 0

    @property
    def d(self) -> int:
        return int(self.origin.shape[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def positions(self) -> np.ndarray:
        return self.origin + self.disp

    def knot_index(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t))
        if i >= len(self.times) or not np.isclose(self.times[i], t, rtol=0.0, atol=1e-12):
            raise ValueError(f"t={t} is not a knot of path {self.node_id}")
        return i

    def position_at(self, t: float) -> np.ndarray:
        return self.origin + self.disp[self.knot_index(t)]


@dataclass(frozen=True)
class CrossingVerdict:
    status: str                   # INSIDE | OUTSIDE | UNCERTAIN
    bound: float                  # deviation bound B(h) used
    probability: Optional[float] = None   # exact d=1 crossing probability when known


@dataclass(frozen=True)
class CensoredTime:
    value: Optional[float]        # None = censored at horizon
    horizon: float
    uncertain_width: float = 0.0  # width of the unresolved interval, 0 = definite
    pessimistic: int = 0          # segments resolved by policy at max depth

    @property
    def censored(self) -> bool:
        return self.value is None

    @property
    def definite(self) -> bool:
        return self.pessimistic == 0 and self.uncertain_width == 0.0

    def exceeds(self, t: float) -> bool:
        return self.value is None or self.value > t


@dataclass(frozen=True)
class EventSpec:
    kind: str                     # "isolation" | "detection"
    family: SetFamily
    label: str = ""

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        return self.kind if self.family.kind == "static-ball" else "custom"


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int
    ci: Tuple[float, float]
    method: str                   # "direct" | "splitting" | "mean"
    successes: Optional[int] = None
    level: float = CI_LEVEL
    descriptor: str = ""
    scale: float = 1.0            # value = scale * successes / n for direct estimates
    sums: Optional[Tuple[float, float]] = None   # (sum x, sum x^2) for mean estimates
    pessimistic: int = 0          # samples settled by the uncertain-segment policy

    def to_dict(self) -> Dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n": self.n,
            "ci": list(self.ci),
            "method": self.method,
            "successes": self.successes,
            "level": self.level,
            "pessimistic": self.pessimistic,
        }


@dataclass(frozen=True)
class SurvivalCurve:
    t_grid: Tuple[float, ...]
    points: Tuple[Estimate, ...]
    event: str                    # "isolation" | "detection" | "custom"
    raw: Tuple[float, ...] = ()   # unprojected per-t estimates
    isotonic: bool = False
    descriptor: str = ""
    pessimistic: int = 0          # samples with at least one policy-resolved segment

    @property
    def values(self) -> np.ndarray:
        return np.asarray([p.value for p in self.points], dtype=float)

    @property
    def stderrs(self) -> np.ndarray:
        return np.asarray([p.stderr for p in self.points], dtype=float)


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    r_squared: float
    residuals: List[float]
    weights: List[float]
    slope_stderr: float = 0.0
    regressor: str = "t/psi"
    t: List[float] = field(default_factory=list)
    alternative: Optional["ExponentFit"] = None   # d=1: sqrt(t) log t log log t

    def to_dict(self) -> Dict:
        out = {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "slope_stderr": self.slope_stderr,
            "regressor": self.regressor,
            "t": self.t,
            "residuals": self.residuals,
            "weights": self.weights,
        }
        if self.alternative is not None:
            out["alternative"] = self.alternative.to_dict()
        return out


@dataclass
class ComparisonReport:
    label: str
    baseline: SurvivalCurve
    challenger: SurvivalCurve
    margins: List[float]          # challenger - baseline per t
    z: List[float]
    verdict: str                  # "consistent" | "violation"


@dataclass
class InequalityReport:
    p_general: Estimate
    p_balls: Estimate
    margin: float                 # p_general - p_balls
    z: float
    volumes: List[List[float]]    # per node, per time
    families: List[List[str]] = field(default_factory=list)

    @property
    def hard_violation(self) -> bool:
        return self.z > SUITE_HARD_SIGMA


@dataclass
class RunManifest:
    command: str
    experiment_id: str
    config: Dict
    experiment: Dict
    seed_schedule: Dict
    shards: List[Tuple[int, int]]
    error_budget: Dict
    versions: Dict
    started: str
    finished: str = ""
    wall_time: float = 0.0
    outputs: List[str] = field(default_factory=list)
    csv_schema_version: int = 1

    def to_dict(self) -> Dict:
        return asdict(self)
