"""Noise schedule constructors.

A schedule is a sequence of per-step noise scales sigma_t together with the
R-unit budget it was built for; step t costs 1/sigma_t^2 of that budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analysis import compute_T_hat

BUDGET_RTOL = 1e-9

RECIPES = ("uniform", "dynamic_influence", "gd_closed_form", "momentum_dynamic", "exponential", "custom")


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    sigmas: tuple
    recipe: str
    budget_R: float

    def __post_init__(self):
        s = tuple(float(x) for x in self.sigmas)
        if not s:
            raise ScheduleError("empty schedule")
        if not all(x > 0 and math.isfinite(x) for x in s):
            raise ScheduleError("noise scales must be finite and positive")
        if self.recipe not in RECIPES:
            raise ScheduleError(f"unknown recipe {self.recipe!r}")
        object.__setattr__(self, "sigmas", s)

    def __len__(self):
        return len(self.sigmas)

    @property
    def T(self) -> int:
        return len(self.sigmas)

    @property
    def sigma_sq(self) -> np.ndarray:
        return np.asarray(self.sigmas) ** 2

    @property
    def costs(self) -> np.ndarray:
        return 1.0 / self.sigma_sq

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.costs))

    def replace(self, t: int, sigma: float) -> "NoiseSchedule":
        """Copy with sigma_t (1-based) swapped out."""
        s = list(self.sigmas)
        s[t - 1] = sigma
        return NoiseSchedule(tuple(s), "custom", self.budget_R)


def _from_sigma_sq(s2, recipe, R) -> NoiseSchedule:
    return NoiseSchedule(tuple(np.sqrt(np.asarray(s2, dtype=float))), recipe, R)


def _check_budget(R):
    if not R > 0:
        raise ScheduleError(f"budget must be positive, got {R}")


def uniform_schedule(T: int, R: float) -> NoiseSchedule:
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    _check_budget(R)
    return _from_sigma_sq(np.full(T, T / R), "uniform", R)


def dynamic_from_influence(q: Sequence[float], R: float, recipe: str = "dynamic_influence") -> NoiseSchedule:
    """Budget-saturating schedule minimising sum_t q_t sigma_t^2.

    sigma_t^2 = (1/R) sum_i sqrt(q_i / q_t); only ratios of q matter.
    """
    _check_budget(R)
    q = np.asarray(q, dtype=float)
    if q.size == 0 or np.any(~(q > 0)):
        raise ScheduleError("influences must be a non-empty positive sequence")
    r = np.sqrt(q / q.max())
    if np.any(r == 0.0):
        raise ScheduleError("influence ratios underflow double precision; shorten the horizon")
    s2 = np.sum(r) / (R * r)
    return _from_sigma_sq(s2, recipe, R)


def gd_closed_form(gamma: float, T: int, R: float) -> NoiseSchedule:
    """Dynamic GD schedule sigma_t^2 = (1/R) (gamma^(-T/2) - 1)/(1 - sqrt gamma) * gamma^(t/2)."""
    if not 0.0 < gamma < 1.0:
        raise ScheduleError(f"gamma must lie in (0, 1), got {gamma}")
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    _check_budget(R)
    t = np.arange(1, T + 1)
    sg = math.sqrt(gamma)
    # (gamma^(-T/2) - 1) gamma^(t/2) == gamma^((t-T)/2) (1 - gamma^(T/2)); the latter stays finite for large T
    with np.errstate(over="ignore"):
        s2 = -math.expm1(0.5 * T * math.log(gamma)) * gamma ** ((t - T) / 2.0) / ((1.0 - sg) * R)
    if not np.all(np.isfinite(s2)):
        raise ScheduleError("early noise scales overflow double precision; shorten the horizon")
    return _from_sigma_sq(s2, "gd_closed_form", R)


def momentum_constants(gamma: float, beta: float, t_hat: int) -> tuple[float, float]:
    c1 = 2.0 / (gamma * (gamma - beta**2))
    c2 = gamma ** (2 * t_hat) / (gamma - beta**2)
    return c1, c2


def _momentum_log_influence(gamma, beta, T, t_hat):
    if not 0.0 < gamma < 1.0 or not 0.0 <= beta < 1.0:
        raise ScheduleError(f"need gamma in (0,1), beta in [0,1); got {gamma}, {beta}")
    if beta >= gamma:
        raise ScheduleError(f"momentum schedule needs beta < gamma, got beta={beta}, gamma={gamma}")
    if t_hat is None:
        t_hat = compute_T_hat(gamma, beta)
    c1, c2 = momentum_constants(gamma, beta, t_hat)
    t = np.arange(1, T + 1, dtype=float)
    lg = math.log(gamma)
    if T <= t_hat:
        return math.log(c1) + (T + t) * lg
    return (t_hat - 1) * lg + math.log(c2) + (T - t) * lg


def momentum_influence(gamma: float, beta: float, T: int, t_hat: int | None = None) -> np.ndarray:
    """q_t = c1 gamma^(T+t) if T <= T_hat else gamma^(T_hat-1) c2 gamma^(T-t)."""
    return np.exp(_momentum_log_influence(gamma, beta, T, t_hat))


def momentum_dynamic(gamma: float, beta: float, T: int, R: float, t_hat: int | None = None) -> NoiseSchedule:
    """Influence-optimal schedule for bias-corrected momentum.

    Increasing in t while T <= T_hat, decreasing (same shape as the GD
    schedule) beyond it.
    """
    logq = _momentum_log_influence(gamma, beta, T, t_hat)
    # q spans many decades for long horizons; only ratios matter
    q = np.exp(logq - logq.max())
    if np.any(q == 0.0):
        raise ScheduleError("influence ratios underflow double precision; shorten the horizon")
    return dynamic_from_influence(q, R, recipe="momentum_dynamic")


def fit_exponential(target: NoiseSchedule) -> tuple[float, float, NoiseSchedule]:
    """Least-squares fit of sigma_t = sigma0 exp(-k t) on log sigma_t.

    Returns the fitted (sigma0, k) and the fitted curve rescaled by a single
    constant so that it spends exactly ``target.budget_R``.
    """
    s = np.asarray(target.sigmas)
    T = s.size
    R = target.budget_R
    if T == 1:
        return float(s[0]), 0.0, NoiseSchedule((1.0 / math.sqrt(R),), "exponential", R)
    t = np.arange(1, T + 1, dtype=float)
    y = np.log(s)
    tc = t - t.mean()
    slope = float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))
    k = -slope
    log_sigma0 = float(y.mean() - slope * t.mean())
    sigma0 = math.exp(log_sigma0)
    fitted = sigma0 * np.exp(-k * t)
    scale = math.sqrt(float(np.sum(1.0 / fitted**2)) / R)
    return sigma0, k, NoiseSchedule(tuple(fitted * scale), "exponential", R)


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    consumption: float  # fraction of budget_R spent


def validate(schedule: NoiseSchedule) -> Feasibility:
    frac = schedule.total_cost / schedule.budget_R
    return Feasibility(frac <= 1.0 + BUDGET_RTOL, frac)


def with_headroom(schedule: NoiseSchedule, headroom: float) -> NoiseSchedule:
    """Inflate every sigma so the schedule spends (1 - headroom) of its budget.

    Under a strict budget gate a schedule that spends its budget exactly has
    the last step refused; a relative headroom keeps every step admissible.
    """
    if not 0.0 <= headroom < 1.0:
        raise ScheduleError(f"headroom must lie in [0, 1), got {headroom}")
    f = 1.0 / math.sqrt(1.0 - headroom)
    return NoiseSchedule(tuple(x * f for x in schedule.sigmas), schedule.recipe, schedule.budget_R)
