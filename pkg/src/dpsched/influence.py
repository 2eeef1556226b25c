"""Per-step noise influence: analytic profiles and estimation by retraining.

The influence q_t is the weight with which sigma_t^2 enters the final excess
loss. Analytic profiles come from the contraction factor gamma; empirical ones
are the quadratic coefficient of final loss against sigma_t when every other
step keeps its baseline noise.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .models import LossModel
from .optimizer import run
from .schedules import NoiseSchedule, momentum_influence, validate

log = logging.getLogger(__name__)

DEFAULT_SIGMA_GRID = tuple(np.geomspace(20.0, 200.0, 7))


class InfluenceError(ValueError):
    pass


@dataclass(frozen=True)
class FitDiagnostics:
    c0: float
    c2: float
    residual: float


@dataclass(frozen=True)
class InfluenceProfile:
    q: tuple
    source: str  # analytic_gd | analytic_momentum | retrained
    fit_diagnostics: tuple | None = None

    def __post_init__(self):
        q = tuple(float(x) for x in self.q)
        if not q:
            raise InfluenceError("empty influence profile")
        object.__setattr__(self, "q", q)

    @property
    def T(self) -> int:
        return len(self.q)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.q)


def analytic_gd_influence(gamma: float, alpha: float, T: int) -> InfluenceProfile:
    if not 0.0 < gamma < 1.0 or not alpha > 0:
        raise InfluenceError(f"need gamma in (0,1) and alpha > 0, got {gamma}, {alpha}")
    t = np.arange(1, T + 1)
    return InfluenceProfile(tuple(alpha * gamma ** (T - t)), "analytic_gd")


def analytic_momentum_influence(gamma: float, beta: float, T: int, t_hat: int | None = None) -> InfluenceProfile:
    return InfluenceProfile(tuple(momentum_influence(gamma, beta, T, t_hat)), "analytic_momentum")


def quadratic_fit(points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Least squares for loss = c2 sigma^2 + c0 (no linear term); returns (c0, c2, rms residual)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise InfluenceError("quadratic fit needs at least 3 (sigma, loss) points")
    s2 = pts[:, 0] ** 2
    y = pts[:, 1]
    if np.ptp(s2) == 0.0:
        raise InfluenceError("quadratic fit needs distinct sigma values")
    # centred closed form of simple regression on x = sigma^2
    xc = s2 - s2.mean()
    c2 = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    c0 = float(y.mean() - c2 * s2.mean())
    resid = y - (c0 + c2 * s2)
    return c0, c2, float(np.sqrt(np.mean(resid**2)))


def dynamic_advantage(q) -> float:
    """T^2 Var(sqrt q_t): how much the uniform schedule's noise term exceeds the optimal one."""
    r = np.sqrt(np.asarray(getattr(q, "q", q), dtype=float))
    if np.all(r == r[0]):
        return 0.0  # np.var can leave rounding residue on constant input
    return r.size**2 * float(np.var(r))


def influence_variance(q) -> float:
    """Population variance of the profile normalised to unit mean (scale free)."""
    q = np.asarray(getattr(q, "q", q), dtype=float)
    return float(np.var(q / q.mean()))


def _final_loss_runner(model, eta, beta, theta0):
    def runner(schedule: NoiseSchedule, seed: int) -> float:
        return run(model, schedule, eta=eta, beta=beta, seed=seed, theta0=theta0).final_loss
    return runner


def estimate_influence_retraining(model: LossModel | None, base_schedule: NoiseSchedule, t: int,
                                  sigma_grid: Sequence[float] = DEFAULT_SIGMA_GRID, repeats: int = 20,
                                  seed: int = 0, eta=None, beta: float = 0.0, theta0=None,
                                  runner: Callable[[NoiseSchedule, int], float] | None = None,
                                  ) -> tuple[float, float]:
    """Fit mean final loss against sigma_t over ``sigma_grid``; returns (c0, c2).

    All other steps keep their noise from ``base_schedule``. The same seeds
    are reused at every grid point (common random numbers), so differences
    between grid points come from sigma_t alone. ``runner`` replaces the
    optimizer with any (schedule, seed) -> final loss callable.
    """
    c0, c2, _ = _estimate_one(model, base_schedule, t, sigma_grid, repeats, seed, eta, beta, theta0, runner)
    return c0, c2


def _estimate_one(model, base_schedule, t, sigma_grid, repeats, seed, eta, beta, theta0, runner):
    if not 1 <= t <= base_schedule.T:
        raise InfluenceError(f"step {t} outside 1..{base_schedule.T}")
    if len(sigma_grid) < 3:
        raise InfluenceError("sigma grid needs at least 3 values")
    if runner is None:
        runner = _final_loss_runner(model, eta, beta, theta0)
    points = []
    for sigma in sorted(sigma_grid):
        variant = base_schedule.replace(t, sigma)
        if not validate(variant).feasible:
            log.warning("step %d: sigma=%g exceeds the budget, skipped", t, sigma)
            continue
        losses = [runner(variant, seed + r) for r in range(repeats)]
        points.append((sigma, float(np.mean(losses))))
    if len(points) < 3:
        raise InfluenceError(f"step {t}: only {len(points)} feasible grid points")
    return quadratic_fit(points)


def estimate_influence_profile(model: LossModel, base_schedule: NoiseSchedule,
                               sigma_grid: Sequence[float] = DEFAULT_SIGMA_GRID, repeats: int = 20,
                               seed: int = 0, eta=None, beta: float = 0.0, theta0=None,
                               steps: Sequence[int] | None = None, workers: int = 1) -> InfluenceProfile:
    """Retrained influence for every step (or ``steps``); q_t is the fitted c2.

    Fitted coefficients can come out non-positive for steps whose influence
    is lost in the noise; they are kept as-is in the diagnostics and the
    profile, callers that need a schedule should floor them.
    """
    steps = list(range(1, base_schedule.T + 1)) if steps is None else sorted(steps)
    args = [(model, base_schedule, t, tuple(sigma_grid), repeats, seed, eta, beta, theta0, None) for t in steps]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(_estimate_star, args))
    else:
        fits = [_estimate_star(a) for a in args]
    diags = tuple(FitDiagnostics(c0, c2, res) for c0, c2, res in fits)
    return InfluenceProfile(tuple(d.c2 for d in diags), "retrained", diags)


def _estimate_star(a):
    return _estimate_one(*a)


def floor_profile(q, rel_floor: float = 1e-6) -> np.ndarray:
    """Clamp non-positive or tiny influences to ``rel_floor`` times the largest one."""
    q = np.asarray(getattr(q, "q", q), dtype=float)
    top = q.max()
    if not top > 0:
        raise InfluenceError("no positive influence to build a schedule from")
    return np.maximum(q, rel_floor * top)


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks for ties."""
    ra, rb = _rank(np.asarray(a, dtype=float)), _rank(np.asarray(b, dtype=float))
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float(np.dot(ra, ra) * np.dot(rb, rb)))
    return float(np.dot(ra, rb) / den) if den > 0 else 0.0


def _rank(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    ranks[order] = np.arange(1, x.size + 1)
    # average tied ranks
    vals, inv = np.unique(x, return_inverse=True)
    if vals.size < x.size:
        sums = np.bincount(inv, weights=ranks)
        counts = np.bincount(inv)
        ranks = (sums / counts)[inv]
    return ranks
