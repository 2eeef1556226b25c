"""Utility-bound arithmetic for private gradient descent under the PL condition.

All bounds here are expressed relative to the initial optimality gap
f(theta_1) - f(theta*), i.e. they are ERUB values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

T_HAT_CAP = 10**6


class AnalysisDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemConstants:
    """Lipschitz/smoothness/PL constants of a problem plus the derived alpha, kappa, gamma."""

    G: float
    M: float
    mu: float
    D: float
    N: float
    R: float
    init_gap: float
    alpha: float = field(init=False)
    kappa: float = field(init=False)
    gamma: float = field(init=False)

    def __post_init__(self):
        for name in ("G", "M", "mu", "D", "N", "R", "init_gap"):
            if not getattr(self, name) > 0:
                raise AnalysisDomainError(f"{name} must be positive, got {getattr(self, name)}")
        if self.M < self.mu:
            raise AnalysisDomainError(f"smoothness M={self.M} below PL constant mu={self.mu}")
        inv_alpha = 2.0 * self.R * self.M * self.N**2 * self.init_gap / (self.D * self.G**2)
        kappa = self.M / self.mu
        object.__setattr__(self, "alpha", 1.0 / inv_alpha)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "gamma", 1.0 - 1.0 / kappa)


def derive_constants(G, M, mu, D, N, R, init_gap) -> ProblemConstants:
    return ProblemConstants(G=G, M=M, mu=mu, D=D, N=N, R=R, init_gap=init_gap)


@dataclass(frozen=True)
class BoundReport:
    erub: float
    T: int
    schedule_kind: str  # uniform | dynamic | momentum-uniform | momentum-dynamic


def _sigma_sq(schedule) -> np.ndarray:
    sigmas = getattr(schedule, "sigmas", schedule)
    return np.asarray(sigmas, dtype=float) ** 2


def _gamma_of(constants) -> float:
    return constants.gamma if isinstance(constants, ProblemConstants) else float(constants)


def erub_gd(constants: ProblemConstants, schedule) -> float:
    """gamma^T + R * sum_t gamma^(T-t) * alpha * sigma_t^2.

    ``schedule`` may be a NoiseSchedule or a bare sequence of sigmas. Uses
    0**0 == 1, so gamma == 0 keeps only the final step's noise.
    """
    s2 = _sigma_sq(schedule)
    T = len(s2)
    if T < 1:
        raise AnalysisDomainError("schedule must have at least one step")
    g = constants.gamma
    weights = np.array([g ** (T - t) for t in range(1, T + 1)])
    return g**T + constants.R * constants.alpha * float(np.sum(weights * s2))


def erub_uniform_closed_form(constants: ProblemConstants, T: int) -> float:
    g = constants.gamma
    return g**T + constants.alpha * constants.kappa * (1.0 - g**T) * T


def min_weighted_noise(q: Sequence[float]) -> tuple[float, float]:
    """Minimum of R * sum q_t sigma_t^2 subject to sum 1/sigma_t^2 = R.

    Returns ``(minimum, uniform_gap)`` where ``minimum = (sum sqrt q_t)^2`` and
    ``uniform_gap`` is how much the uniform schedule loses against it,
    ``T * sum q_t - minimum == T^2 * Var(sqrt q_t)``.
    """
    q = np.asarray(q, dtype=float)
    if q.size == 0 or np.any(q <= 0):
        raise AnalysisDomainError("influences must be a non-empty positive sequence")
    r = np.sqrt(q)
    T = q.size
    minimum = float(np.sum(r)) ** 2
    # population variance form is cancellation-free, unlike T*sum(q) - minimum
    gap = 0.0 if np.all(r == r[0]) else T**2 * float(np.var(r))
    return minimum, gap


def optimal_T_uniform(constants: ProblemConstants) -> int:
    """Iteration count for the uniform schedule, ceil(ln(1 + ln(1/g)/a) / ln(1/g))."""
    g, a = constants.gamma, constants.alpha
    if g <= 0.0:
        return 1
    L = math.log(1.0 / g)
    T = math.log1p(L / a) / L
    return max(1, math.ceil(T))


def optimal_T_dynamic(constants: ProblemConstants) -> int:
    """Exact minimiser of the dynamic-schedule bound, ceil(2 log_{1/g}((a + (1-sqrt g)^2)/a))."""
    g, a = constants.gamma, constants.alpha
    if g <= 0.0:
        return 1
    c = (1.0 - math.sqrt(g)) ** 2
    T = 2.0 * math.log1p(c / a) / math.log(1.0 / g)
    return max(1, math.ceil(T))


def erub_dynamic_closed_form(constants: ProblemConstants, T: int) -> float:
    g, a = constants.gamma, constants.alpha
    return g**T + a * ((1.0 - g ** (T / 2.0)) / (1.0 - math.sqrt(g))) ** 2


def momentum_noise_term_U3(constants, beta: float, schedule) -> float:
    """Weighted, bias-corrected noise sum of momentum GD.

    sum_t gamma^(T-t) (1-beta)^2/(1-beta^t)^2 sum_{i<=t} beta^(2(t-i)) sigma_i^2.
    ``constants`` may be a ProblemConstants or a bare gamma.
    """
    if not 0.0 <= beta < 1.0:
        raise AnalysisDomainError(f"beta must lie in [0, 1), got {beta}")
    g = _gamma_of(constants)
    s2 = _sigma_sq(schedule)
    T = len(s2)
    total = 0.0
    inner = 0.0
    b2 = beta * beta
    for t in range(1, T + 1):
        # running sum_{i<=t} beta^(2(t-i)) sigma_i^2
        inner = b2 * inner + s2[t - 1]
        corr = ((1.0 - beta) / (1.0 - beta**t)) ** 2
        total += g ** (T - t) * corr * inner
    return total


def scan_T_hat(gamma: float, beta: float, cap: int = T_HAT_CAP) -> tuple[int, bool]:
    """Largest t with gamma^(t-1) >= (1-beta)/(1-beta^t); returns (t, capped).

    The admissible set is an interval starting at t=1 (the product
    gamma^(t-1)(1-beta^t) is unimodal in t), so the scan stops at the first
    failure.
    """
    if not 0.0 <= gamma <= 1.0 or not 0.0 <= beta < 1.0:
        raise AnalysisDomainError(f"need gamma in [0,1], beta in [0,1); got {gamma}, {beta}")
    if beta == 0.0 or gamma == 0.0:
        return 1, False
    chunk = 65536
    start = 2  # t = 1 always holds with equality
    while start <= cap:
        t = np.arange(start, min(start + chunk, cap + 1), dtype=float)
        lhs = gamma ** (t - 1.0)
        rhs = (1.0 - beta) / (1.0 - beta**t)
        bad = np.flatnonzero(lhs < rhs)
        if bad.size:
            return int(t[bad[0]]) - 1, False
        start += chunk
    return cap, True


def compute_T_hat(gamma: float, beta: float, cap: int = T_HAT_CAP) -> int:
    return scan_T_hat(gamma, beta, cap)[0]


def momentum_gamma(kappa: float, eta0: float) -> float:
    """Contraction factor 1 - eta0/kappa of momentum GD with step eta0/(2M)."""
    return 1.0 - eta0 / kappa


def eta0_bound(gamma: float, beta: float) -> float:
    """Largest eta0 keeping the momentum-effect coefficient zeta nonnegative."""
    if beta == 0.0:
        return 4.0
    if not beta < gamma:
        raise AnalysisDomainError(f"momentum bound needs beta < gamma, got beta={beta}, gamma={gamma}")
    a = beta * gamma / ((gamma - beta) ** 2 * (1.0 - beta) ** 3)
    return 8.0 / (math.sqrt(1.0 + 64.0 * a) + 1.0)


def zeta(eta0: float, gamma: float, beta: float) -> float:
    if beta == 0.0:
        return 1.0 - 0.25 * eta0
    if not beta < gamma:
        raise AnalysisDomainError(f"momentum bound needs beta < gamma, got beta={beta}, gamma={gamma}")
    a = beta * gamma / ((gamma - beta) ** 2 * (1.0 - beta) ** 3)
    return 1.0 - 0.25 * eta0 - a * eta0**2


def eta0_feasible(eta0: float, gamma: float, beta: float) -> bool:
    if beta > 0 and not beta < gamma:
        return False
    return zeta(eta0, gamma, beta) >= -1e-12


def default_eta0(kappa: float, beta: float, cap: float = 2.0) -> float:
    """Self-consistent eta0 at the feasibility bound.

    The bound depends on gamma = 1 - eta0/kappa, so this solves
    eta0 = eta0_bound(1 - eta0/kappa, beta) by bisection, then caps at ``cap``
    (eta0 = 2 is the plain GD step 1/M).
    """
    hi = min(cap, kappa)

    def f(e):
        g = momentum_gamma(kappa, e)
        # beta >= gamma: eta0 too large for the bound to exist
        return math.inf if g <= beta else e - eta0_bound(g, beta)

    if f(hi) <= 0:
        return hi
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return lo


def erub_momentum(constants: ProblemConstants, beta: float, eta0: float, schedule) -> float:
    """gamma_m^T + 2 R eta0 alpha U3 with gamma_m = 1 - eta0/kappa."""
    g = momentum_gamma(constants.kappa, eta0)
    T = len(_sigma_sq(schedule))
    return g**T + 2.0 * constants.R * eta0 * constants.alpha * momentum_noise_term_U3(g, beta, schedule)
