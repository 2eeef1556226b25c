"""zCDP accounting for Gaussian-noised gradient steps.

Two unit systems are in play. The raw zCDP cost of releasing a gradient with
noise scale sigma is 1/(2 sigma^2). The ledger instead tracks "R-units",
where a step costs 1/sigma^2 and the total budget R absorbs the factor 1/2,
so a run that stays within R is (R/2)-zCDP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List

# Absolute tolerance for comparisons that are exact in real arithmetic.
EXACT_TOL = 1e-12


class PrivacyDomainError(ValueError):
    """Raised when an accountant input is outside its mathematical domain."""


@dataclass(frozen=True)
class StepCost:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise PrivacyDomainError(f"sigma must be positive, got {self.sigma}")

    @property
    def rho_r_units(self) -> float:
        return 1.0 / self.sigma**2

    @classmethod
    def from_r_units(cls, cost: float) -> "StepCost":
        if not cost > 0:
            raise PrivacyDomainError(f"cost must be positive, got {cost}")
        return cls(1.0 / math.sqrt(cost))


@dataclass(frozen=True)
class DpPoint:
    epsilon: float
    delta: float


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise PrivacyDomainError(f"delta must lie in (0, 1), got {delta}")


def gaussian_step_cost(sigma: float) -> float:
    """Raw zCDP cost 1/(2 sigma^2) of one Gaussian release with unit sensitivity."""
    if not sigma > 0:
        raise PrivacyDomainError(f"sigma must be positive, got {sigma}")
    return 1.0 / (2.0 * sigma**2)


def compose(costs: Iterable[float]) -> float:
    total = 0.0
    for c in costs:
        if c < 0:
            raise PrivacyDomainError(f"negative privacy cost {c}")
        total += c
    return total


def zcdp_to_dp(rho: float, delta: float) -> float:
    """Epsilon such that a rho-zCDP mechanism is (epsilon, delta)-DP."""
    if rho < 0:
        raise PrivacyDomainError(f"rho must be nonnegative, got {rho}")
    _check_delta(delta)
    return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))


def dp_to_zcdp(epsilon: float, delta: float) -> float:
    """Largest rho whose (epsilon, delta) conversion does not exceed ``epsilon``.

    Solves rho + 2 sqrt(rho L) = epsilon with L = ln(1/delta); in sqrt(rho)
    this is a quadratic whose positive root gives (sqrt(L + eps) - sqrt(L))^2.
    """
    if epsilon < 0:
        raise PrivacyDomainError(f"epsilon must be nonnegative, got {epsilon}")
    _check_delta(delta)
    L = math.log(1.0 / delta)
    # Rationalised form of sqrt(L + eps) - sqrt(L); avoids cancellation for small eps.
    root = epsilon / (math.sqrt(L + epsilon) + math.sqrt(L))
    return root * root


def subsampled_step_cost(sigma: float, sample_rate: float) -> float:
    """R-unit cost p^2/sigma^2 of a step on a batch drawn at rate ``p``.

    The constant factor of the subsampling bound is dropped; it rescales every
    step identically and so does not change the shape of any schedule.
    """
    if not sigma > 0:
        raise PrivacyDomainError(f"sigma must be positive, got {sigma}")
    if not 0.0 < sample_rate <= 1.0:
        raise PrivacyDomainError(f"sample rate must lie in (0, 1], got {sample_rate}")
    return sample_rate**2 / sigma**2


@dataclass
class PrivacyLedger:
    """Residual-budget ledger for a single run.

    ``request`` implements the strict budget gate: a step is granted only when
    its cost is strictly below what remains, so a schedule that spends the
    budget exactly has its final request denied.
    """

    total_R: float
    residual_R: float = field(init=False)
    spent: List[float] = field(default_factory=list, init=False)
    denied: bool = field(default=False, init=False)
    _spent_sum: float = field(default=0.0, init=False, repr=False)

    def __post_init__(self):
        if not self.total_R > 0:
            raise PrivacyDomainError(f"budget must be positive, got {self.total_R}")
        self.residual_R = float(self.total_R)

    def request(self, cost: float | StepCost) -> bool:
        if isinstance(cost, StepCost):
            cost = cost.rho_r_units
        if cost < 0:
            raise PrivacyDomainError(f"negative privacy cost {cost}")
        # a denial terminates the run; later requests are refused too
        if not self.denied and self.residual_R - cost > EXACT_TOL:
            self.residual_R -= cost
            self.spent.append(cost)
            self._spent_sum += cost
            return True
        self.denied = True
        return False

    @property
    def spent_R(self) -> float:
        # running left-to-right sum, equal to compose(self.spent)
        return self._spent_sum

    def zcdp(self) -> float:
        """Raw zCDP guarantee of everything granted so far (half the R-units)."""
        return 0.5 * self.spent_R

    def dp(self, delta: float) -> DpPoint:
        return DpPoint(zcdp_to_dp(self.zcdp(), delta), delta)


def ledger_request(ledger: PrivacyLedger, cost: float | StepCost) -> bool:
    return ledger.request(cost)
