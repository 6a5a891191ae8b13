from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from core.models import ExponentFit, SurvivalCurve  # noqa: E402

# --- Terminal Colors ---
C_RED = '\033[91m'
C_GREEN = '\033[92m'
C_YELLOW = '\033[93m'
C_BLUE = '\033[94m'
C_CYAN = '\033[96m'
C_END = '\033[0m'


def display_summary(title: str, rows: Iterable[Tuple[str, object]], verdict: Optional[str] = None):
    """Prints a run summary panel: one `label: value` line per row."""
    print(f"--- {title.upper()} ---")
    print("-" * 25)
    for label, value in rows:
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"{label + ':':<16} {C_YELLOW}{value}{C_END}")
    print("-" * 25)
    if verdict is not None:
        color = C_GREEN if verdict in ("ok", "consistent") else C_RED
        print(f"{'Verdict:':<16} {color}{verdict}{C_END}")


def display_curve(curve: SurvivalCurve):
    print(f"Event: {C_CYAN}{curve.event}{C_END}")
    print(f"{'t':>8} {'P(T > t)':>12} {'95% CI':>26} {'n':>8}  method")
    for t, p in zip(curve.t_grid, curve.points):
        ci = f"[{p.ci[0]:.4g}, {p.ci[1]:.4g}]"
        print(f"{t:>8.3g} {C_BLUE}{p.value:>12.5g}{C_END} {ci:>26} {p.n:>8}  {p.method}")
    if curve.pessimistic:
        print(f"{C_RED}{curve.pessimistic} sample(s) resolved by the uncertain-segment policy{C_END}")


# --- SVG plots ---

def plot_survival(curves: Sequence[SurvivalCurve], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for curve in curves:
        t = np.asarray(curve.t_grid)
        lo = np.asarray([p.ci[0] for p in curve.points])
        hi = np.asarray([p.ci[1] for p in curve.points])
        ax.plot(t, curve.values, marker="o", label=curve.event)
        ax.fill_between(t, lo, hi, alpha=0.2)
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("P(T > t)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_fit(fit: ExponentFit, x: Sequence[float], y: Sequence[float], path: Path) -> Path:
    x = np.asarray(x, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(x, y, label="-log P")
    xs = np.linspace(x.min(), x.max(), 100)
    ax.plot(xs, fit.intercept + fit.slope * xs, label=f"slope {fit.slope:.3g}, r2 {fit.r_squared:.3f}")
    ax.set_xlabel(fit.regressor)
    ax.set_ylabel("-log P(T > t)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_scatter(x: Sequence[float], y: Sequence[float], xlabel: str, ylabel: str, path: Path,
                 logy: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, y, marker="o")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
