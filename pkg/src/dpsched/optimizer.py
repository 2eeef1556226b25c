"""Private gradient descent with budget-gated, per-step scheduled noise."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .accountant import PrivacyLedger, subsampled_step_cost
from .analysis import default_eta0
from .models import LossModel, estimate_spectrum, lipschitz_bound, smoothness
from .schedules import NoiseSchedule, validate


class OptimizerError(ValueError):
    pass


@dataclass
class OptimizerState:
    theta: np.ndarray
    v: np.ndarray
    m: np.ndarray
    t: int
    ledger: PrivacyLedger
    rng: np.random.Generator


@dataclass
class RunRecord:
    losses: list  # loss after each granted step
    final_loss: float
    steps_taken: int
    budget_spent: float
    seed: int
    schedule_id: str
    sigmas: list = field(default_factory=list)
    cumulative_cost: list = field(default_factory=list)
    initial_loss: float = float("nan")
    theta: np.ndarray | None = None
    grad_noise_sigma: float | None = None  # PSGD only: empirical sigma_g


def privatize_gradient(model: LossModel, theta, sigma_t: float, rng: np.random.Generator,
                       G: float | None = None, idx=None, noise=None, audit: bool = False) -> np.ndarray:
    """Mean clipped gradient plus N(0, (G sigma_t / n)^2 I) noise.

    ``idx`` restricts the average to a batch (n = len(idx)); ``noise`` injects
    the standard-normal vector instead of drawing it from ``rng``.
    """
    if G is None:
        G = lipschitz_bound(model)
    mean, top = model.clipped_mean_gradient(theta, idx)
    if audit and model.clip_norm is not None:
        assert top <= model.clip_norm * (1 + 1e-12), "clipped gradient exceeds clip norm"
    n = model.N if idx is None else len(idx)
    if noise is None:
        noise = rng.standard_normal(model.D)
    return mean + (G * sigma_t / n) * np.asarray(noise, dtype=float)


def momentum_update(v, g, beta: float, t: int, m=None) -> tuple[np.ndarray, np.ndarray]:
    """One step of bias-corrected momentum; returns (v_{t+1}, m_{t+1}).

    v_{t+1} = beta v_t + (1-beta) g_t and m_{t+1} = v_{t+1}/(1-beta^t). When the
    previous corrected average ``m`` is passed, m_{t+1} is formed as
    m + w (g - m) with w = (1-beta)/(1-beta^t), algebraically the same value but
    exact for a constant gradient stream.
    """
    if not 0.0 <= beta < 1.0:
        raise OptimizerError(f"beta must lie in [0, 1), got {beta}")
    if t < 1:
        raise OptimizerError(f"step index starts at 1, got {t}")
    g = np.asarray(g, dtype=float)
    v_next = beta * np.asarray(v, dtype=float) + (1.0 - beta) * g
    bias = 1.0 - beta**t
    if beta == 0.0 or t == 1:
        m_next = g.copy()
    elif m is None:
        m_next = v_next / bias
    else:
        m = np.asarray(m, dtype=float)
        m_next = m + ((1.0 - beta) / bias) * (g - m)
    return v_next, m_next


def _eta_sequence(eta, T: int) -> list:
    if np.ndim(eta) == 0:
        return [float(eta)] * T
    eta = [float(e) for e in eta]
    if len(eta) < T:
        raise OptimizerError(f"need {T} step sizes, got {len(eta)}")
    return eta


def default_eta(model: LossModel, beta: float = 0.0, eta0: float | None = None) -> float:
    """1/M for plain GD, eta0/(2M) for momentum (eta0 at its feasibility bound by default)."""
    if beta == 0.0 and eta0 is None:
        return 1.0 / smoothness(model)
    if eta0 is None:
        if model.kind != "quadratic":
            raise OptimizerError("momentum on a non-quadratic loss needs an explicit eta or eta0")
        spec = estimate_spectrum(model)
        eta0 = default_eta0(spec.m_max / spec.mu_min, beta)
        return eta0 / (2.0 * spec.m_max)
    return eta0 / (2.0 * smoothness(model))


def run(model: LossModel, schedule: NoiseSchedule, eta=None, beta: float = 0.0, seed: int = 0,
        theta0=None, audit: bool = False, noise_hook: Callable[[int], np.ndarray] | None = None,
        record_losses: bool = True) -> RunRecord:
    """Run private (momentum) GD along ``schedule`` until it ends or the ledger refuses a step.

    With ``record_losses=False`` only the final loss is evaluated.
    """
    feas = validate(schedule)
    if not feas.feasible:
        raise OptimizerError(f"schedule spends {feas.consumption:.6g} of its budget")
    if eta is None:
        eta = default_eta(model, beta)
    etas = _eta_sequence(eta, schedule.T)
    G = lipschitz_bound(model)
    state = OptimizerState(
        theta=np.zeros(model.D) if theta0 is None else np.array(theta0, dtype=float),
        v=np.zeros(model.D), m=np.zeros(model.D), t=1,
        ledger=PrivacyLedger(schedule.budget_R), rng=np.random.default_rng(seed),
    )
    rec = RunRecord([], math.nan, 0, 0.0, seed, schedule.recipe, initial_loss=model.loss(state.theta))
    for sigma_t, eta_t in zip(schedule.sigmas, etas):
        if not state.ledger.request(1.0 / sigma_t**2):
            break
        noise = None if noise_hook is None else noise_hook(state.t)
        g = privatize_gradient(model, state.theta, sigma_t, state.rng, G=G, noise=noise, audit=audit)
        state.v, state.m = momentum_update(state.v, g, beta, state.t, state.m)
        state.theta = state.theta - eta_t * state.m
        state.t += 1
        if record_losses:
            rec.losses.append(model.loss(state.theta))
        rec.sigmas.append(sigma_t)
        rec.cumulative_cost.append(state.ledger.spent_R)
    if not record_losses and state.t > 1:
        rec.losses.append(model.loss(state.theta))
    return _finish(rec, state)


def _finish(rec: RunRecord, state: OptimizerState) -> RunRecord:
    rec.steps_taken = state.t - 1
    rec.budget_spent = state.ledger.spent_R
    rec.final_loss = rec.losses[-1] if rec.losses else rec.initial_loss
    rec.theta = state.theta
    return rec


def default_batch_size(N: int, R: float) -> int:
    """n = max(N sqrt(R), 1), floored to an integer and capped at N."""
    n = math.floor(N * math.sqrt(R) + 1e-9)
    return int(min(max(n, 1), N))


def run_psgd(model: LossModel, schedule: NoiseSchedule, batch_size: int, eta=None,
             beta: float = 0.0, seed: int = 0, theta0=None, audit: bool = False) -> RunRecord:
    """Private SGD on batches drawn uniformly with replacement.

    ``schedule.budget_R`` is the batch-level budget R' = R / p^2 with p = n/N;
    each step is charged p^2/sigma_t^2 against the underlying budget R. A full
    batch (n = N) uses every sample once, reproducing ``run`` exactly.
    """
    N = model.N
    if not 1 <= batch_size <= N:
        raise OptimizerError(f"batch size must lie in [1, {N}], got {batch_size}")
    if batch_size == N:
        return run(model, schedule, eta=eta, beta=beta, seed=seed, theta0=theta0, audit=audit)
    feas = validate(schedule)
    if not feas.feasible:
        raise OptimizerError(f"schedule spends {feas.consumption:.6g} of its budget")
    if eta is None:
        eta = default_eta(model, beta)
    etas = _eta_sequence(eta, schedule.T)
    p = batch_size / N
    G = lipschitz_bound(model)
    state = OptimizerState(
        theta=np.zeros(model.D) if theta0 is None else np.array(theta0, dtype=float),
        v=np.zeros(model.D), m=np.zeros(model.D), t=1,
        ledger=PrivacyLedger(schedule.budget_R * p**2), rng=np.random.default_rng(seed),
    )
    rec = RunRecord([], math.nan, 0, 0.0, seed, schedule.recipe, initial_loss=model.loss(state.theta))
    resid_sq = []
    for sigma_t, eta_t in zip(schedule.sigmas, etas):
        if not state.ledger.request(subsampled_step_cost(sigma_t, p)):
            break
        idx = state.rng.integers(0, N, size=batch_size)
        full = model.clipped_mean_gradient(state.theta)[0]
        g = privatize_gradient(model, state.theta, sigma_t, state.rng, G=G, idx=idx, audit=audit)
        # sigma_g^2 ~ n^2 E||batch - full||^2 / D, measured on the clipped, noise-free batch mean
        batch = model.clipped_mean_gradient(state.theta, idx)[0]
        resid_sq.append(batch_size**2 * float(np.sum((batch - full) ** 2)) / model.D)
        state.v, state.m = momentum_update(state.v, g, beta, state.t, state.m)
        state.theta = state.theta - eta_t * state.m
        state.t += 1
        rec.losses.append(model.loss(state.theta))
        rec.sigmas.append(sigma_t)
        rec.cumulative_cost.append(state.ledger.spent_R)
    rec = _finish(rec, state)
    rec.grad_noise_sigma = math.sqrt(float(np.mean(resid_sq))) if resid_sq else None
    return rec
