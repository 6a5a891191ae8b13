from __future__ import annotations

import logging
import math
import re
import tomllib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import tomli_w

from config import UNCERTAIN_POLICIES
from core.models import SimConfig
from core.pointprocess import truncation_radius


class ConfigError(ValueError):
    """Configuration or experiment file rejected."""


def psi(d: int, t: float) -> float:
    """Scaling function: sqrt(t) for d=1, ln t for d=2, 1 for d>=3."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if not t > 0.0:
        raise ValueError(f"psi needs t > 0, got {t}")
    if d == 1:
        return math.sqrt(t)
    if d == 2:
        if t <= 1.0:
            raise ValueError(f"psi for d=2 needs t > 1 (log t > 0), got {t}")
        return math.log(t)
    return 1.0


@dataclass(frozen=True)
class ScalingKind:
    d: int

    def __call__(self, t: float) -> float:
        return psi(self.d, t)

    def regressor(self, t) -> np.ndarray:
        """t / Psi_d(t), elementwise."""
        return np.asarray([ti / psi(self.d, ti) for ti in np.atleast_1d(t)], dtype=float)


# -------- validation --------

def validate_config(raw: SimConfig) -> SimConfig:
    """Checks every SimConfig invariant and fills the auto truncation radius."""
    try:
        d = int(raw.d)
    except (TypeError, ValueError):
        raise ConfigError(f"d must be an integer, got {raw.d!r}")
    if d != raw.d or d < 1:
        raise ConfigError(f"d >= 1 (integer) violated: d={raw.d!r}")

    def _pos(name: str, value) -> float:
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        if not math.isfinite(v) or v <= 0.0:
            raise ConfigError(f"{name} > 0 violated: {name}={value!r}")
        return v

    lam = _pos("lambda", raw.lam)
    r = _pos("r", raw.r)
    horizon = _pos("horizon", raw.horizon)
    step = _pos("step", raw.step)
    if step > horizon:
        raise ConfigError(f"step <= horizon violated: step={step} horizon={horizon}")

    trunc_eps = float(raw.trunc_eps)
    if not 0.0 < trunc_eps < 1.0:
        raise ConfigError(f"0 < trunc_eps < 1 violated: trunc_eps={raw.trunc_eps!r}")
    error_budget = float(raw.error_budget)
    if not 0.0 < error_budget < 1.0:
        raise ConfigError(f"0 < error_budget < 1 violated: error_budget={raw.error_budget!r}")
    ci_level = float(raw.ci_level)
    if not 0.0 < ci_level < 1.0:
        raise ConfigError(f"0 < ci_level < 1 violated: ci_level={raw.ci_level!r}")

    set_bound = float(raw.set_bound)
    if not math.isfinite(set_bound) or set_bound < 0.0:
        raise ConfigError(f"set_bound >= 0 violated: set_bound={raw.set_bound!r}")
    if int(raw.refine_depth) != raw.refine_depth or raw.refine_depth < 0:
        raise ConfigError(f"refine_depth >= 0 (integer) violated: {raw.refine_depth!r}")
    if int(raw.n_samples) != raw.n_samples or raw.n_samples < 1:
        raise ConfigError(f"n_samples >= 1 (integer) violated: {raw.n_samples!r}")
    if int(raw.master_seed) != raw.master_seed or not 0 <= raw.master_seed < 2 ** 64:
        raise ConfigError(f"master_seed must be a 64-bit unsigned integer: {raw.master_seed!r}")
    if raw.uncertain_policy not in UNCERTAIN_POLICIES:
        raise ConfigError(
            f"uncertain_policy must be one of {UNCERTAIN_POLICIES}, got {raw.uncertain_policy!r}"
        )

    cfg = replace(
        raw,
        d=d,
        lam=lam,
        r=r,
        horizon=horizon,
        step=step,
        trunc_eps=trunc_eps,
        error_budget=error_budget,
        ci_level=ci_level,
        set_bound=set_bound,
        refine_depth=int(raw.refine_depth),
        n_samples=int(raw.n_samples),
        master_seed=int(raw.master_seed),
    )

    if raw.trunc_radius is None or raw.auto_trunc:
        R = truncation_radius(cfg, set_bound, trunc_eps)
        cfg = replace(cfg, trunc_radius=R, auto_trunc=True)
        logging.debug("[CONFIG] auto trunc_radius R=%.4f (eps=%.1e)", R, trunc_eps)
    else:
        R = float(raw.trunc_radius)
        if not math.isfinite(R) or R < set_bound + r:
            raise ConfigError(
                f"trunc_radius >= L_t + r violated: R={raw.trunc_radius!r} < {set_bound + r}"
            )
        cfg = replace(cfg, trunc_radius=R)
    return cfg


# -------- TOML I/O --------

_TOML_RENAMES = {"lambda": "lam"}
_SIM_FIELDS = {f.name for f in fields(SimConfig)} - {"auto_trunc"}


@dataclass
class ExperimentFile:
    sim: SimConfig
    experiment: Dict[str, Any] = field(default_factory=dict)
    output: Dict[str, Any] = field(default_factory=dict)
    path: str = ""


def config_from_dict(section: Dict[str, Any]) -> SimConfig:
    kwargs: Dict[str, Any] = {}
    for key, value in section.items():
        name = _TOML_RENAMES.get(key, key)
        if name not in _SIM_FIELDS:
            raise ConfigError(f"unknown [sim] key {key!r}")
        kwargs[name] = value
    for required in ("d", "lam", "r", "horizon"):
        if required not in kwargs:
            raise ConfigError(f"[sim] is missing {'lambda' if required == 'lam' else required!r}")
    if kwargs.get("trunc_radius") == "auto":
        kwargs["trunc_radius"] = None
    try:
        return validate_config(SimConfig(**kwargs))
    except TypeError as exc:
        raise ConfigError(str(exc))


def config_to_dict(cfg: SimConfig) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for f in fields(SimConfig):
        if f.name == "auto_trunc":
            continue
        value = getattr(cfg, f.name)
        if f.name == "trunc_radius" and (value is None or cfg.auto_trunc):
            value = "auto"
        out["lambda" if f.name == "lam" else f.name] = value
    return out


def config_to_toml(cfg: SimConfig) -> str:
    return tomli_w.dumps({"sim": config_to_dict(cfg)})


_LINE_COL = re.compile(r"line (\d+), column (\d+)")


def load_experiment(path: Union[str, Path]) -> ExperimentFile:
    """Reads a TOML experiment file with [sim], [experiment] and [output] sections."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        if line is None:
            m = _LINE_COL.search(str(exc))
            if m:
                line, col = int(m.group(1)), int(m.group(2))
        raise ConfigError(f"{p}: malformed TOML at line {line}, column {col}: {exc}")

    if "sim" not in doc:
        raise ConfigError(f"{p}: missing [sim] section")
    unknown = set(doc) - {"sim", "experiment", "output"}
    if unknown:
        raise ConfigError(f"{p}: unknown sections {sorted(unknown)}")
    return ExperimentFile(
        sim=config_from_dict(doc["sim"]),
        experiment=dict(doc.get("experiment", {})),
        output=dict(doc.get("output", {})),
        path=str(p),
    )
