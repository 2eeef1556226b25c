"""Data generation/ingestion and schedule-comparison experiments."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import ProblemConstants, momentum_gamma
from .influence import analytic_gd_influence, analytic_momentum_influence, dynamic_advantage
from .models import Dataset, LossModel, estimate_spectrum, lipschitz_bound
from .optimizer import run
from .schedules import (NoiseSchedule, ScheduleError, fit_exponential, gd_closed_form, momentum_dynamic,
                        uniform_schedule, validate, with_headroom)

log = logging.getLogger(__name__)

# Default experiment setting: 0.1963-zCDP, i.e. R = 2 rho
DEFAULT_R = 0.3927
DEFAULT_CLIP = 4.0
DEFAULT_ETA = 0.1
HEADROOM = 1e-9  # keeps the last step of a budget-saturating schedule past the strict gate
RECIPE_NAMES = ("uniform", "dynamic", "exp")
REPORT_COLUMNS = ("recipe", "scale", "best_T", "mean_loss", "std_loss", "rel_loss", "influence_variance", "runtime_ms")


class HarnessError(ValueError):
    pass


# ---------------------------------------------------------------- data

def gen_synthetic(D: int, N: int, cluster_distance: float = 10.0, seed: int = 0) -> Dataset:
    """Two unit-variance Gaussian clusters at +-(d/2) u, N/2 points each, labels +1 / -1."""
    if D < 1 or N < 2 or N % 2:
        raise HarnessError(f"need D >= 1 and even N >= 2, got D={D}, N={N}")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(D)
    u /= np.linalg.norm(u)
    half = N // 2
    centers = np.concatenate([np.tile(u, (half, 1)), np.tile(-u, (half, 1))]) * (cluster_distance / 2.0)
    X = centers + rng.standard_normal((N, D))
    y = np.concatenate([np.ones(half), -np.ones(half)])
    return Dataset(X, y)


def preprocess(dataset: Dataset, target_max_norm: float) -> Dataset:
    """Standardise columns, then rescale all rows by one factor so the largest norm is the target."""
    if not target_max_norm > 0:
        raise HarnessError(f"target max norm must be positive, got {target_max_norm}")
    X = dataset.features - dataset.features.mean(axis=0)
    sd = X.std(axis=0)
    flat = sd == 0
    if np.any(flat):
        log.warning("columns %s have zero variance; left centred, not scaled", np.flatnonzero(flat).tolist())
    X = X / np.where(flat, 1.0, sd)
    top = np.max(np.linalg.norm(X, axis=1))
    if top == 0:
        raise HarnessError("all rows vanish after centring")
    return Dataset(X * (target_max_norm / top), dataset.labels)


def load_csv(path) -> Dataset:
    """Read a header + numeric-rows CSV; a trailing ``label`` column (values +-1) is optional."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise HarnessError(f"{path}: empty file, expected a header line")
    header = [h.strip() for h in rows[0]]
    if not header or any(_is_number(h) for h in header):
        raise HarnessError(f"{path}:1: missing header line")
    has_label = header[-1].lower() == "label"
    width = len(header)
    if width - has_label < 1:
        raise HarnessError(f"{path}:1: no feature columns")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise HarnessError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            data.append([float(x) for x in row])
        except ValueError as e:
            raise HarnessError(f"{path}:{lineno}: non-numeric cell ({e})") from None
    if not data:
        raise HarnessError(f"{path}: no data rows")
    A = np.asarray(data)
    if has_label:
        return Dataset(A[:, :-1], A[:, -1])
    return Dataset(A)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_csv(dataset: Dataset, path) -> None:
    D = dataset.D
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(1, D + 1)] + (["label"] if dataset.labels is not None else []))
        for i in range(dataset.N):
            row = [repr(float(v)) for v in dataset.features[i]]
            if dataset.labels is not None:
                row.append(str(int(dataset.labels[i])))
            w.writerow(row)


# ---------------------------------------------------------------- config / report

@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "quadratic"
    data: dict | str = field(default_factory=lambda: {"D": 100, "N": 1000, "distance": 10.0, "seed": 0})
    data_scale: float = 10.0
    R: float = DEFAULT_R
    clip: float | None = DEFAULT_CLIP
    eta: float | str = DEFAULT_ETA  # a number, or "auto" for 1/M
    beta: float = 0.0
    recipes: tuple = RECIPE_NAMES
    T_min: int = 1
    T_max: int = 100
    repeats: int = 100
    base_seed: int = 0
    init_norm: float = 0.0  # norm of the data-independent random start theta_1; 0 gives theta_1 = 0
    gamma: float | None = None  # contraction factor override (needed for logistic dynamic schedules)

    def __post_init__(self):
        if self.repeats < 1:
            raise HarnessError("repeats must be >= 1")
        if not 1 <= self.T_min <= self.T_max:
            raise HarnessError(f"empty T grid [{self.T_min}, {self.T_max}]")
        if not self.data_scale > 0:
            raise HarnessError("data_scale must be positive")
        if not self.R > 0:
            raise HarnessError("R must be positive (inf for noise-free runs)")
        unknown = set(self.recipes) - set(RECIPE_NAMES)
        if unknown:
            raise HarnessError(f"unknown recipes {sorted(unknown)}")
        if "uniform" not in self.recipes:
            raise HarnessError("the uniform recipe is the reference and must be included")
        object.__setattr__(self, "recipes", tuple(self.recipes))

    @property
    def T_grid(self) -> range:
        return range(self.T_min, self.T_max + 1)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise HarnessError(f"unknown config keys {sorted(extra)}")
        d = dict(d)
        if "R" in d and isinstance(d["R"], str):
            d["R"] = float(d["R"])  # allows "inf"
        return cls(**d)


@dataclass
class RecipeResult:
    recipe: str
    best_T: int | None
    mean_loss: float
    std_loss: float
    rel_loss: float
    influence_variance: float
    runtime_ms: float
    curve: dict = field(default_factory=dict)  # T -> mean final loss
    best_losses: np.ndarray | None = None  # per-repeat final losses at best_T
    max_budget_spent: float = 0.0
    failed: str | None = None


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    scale: float
    results: dict  # recipe -> RecipeResult
    floor: float = math.nan  # gamma^T at the uniform best T (noiseless bound residual)
    runtime_ms: float = 0.0

    def __getitem__(self, recipe) -> RecipeResult:
        return self.results[recipe]

    def rows(self, timing: bool = True) -> list:
        out = []
        for name in sorted(self.results, key=self.config.recipes.index):
            r = self.results[name]
            out.append([name, _fmt(self.scale), "" if r.best_T is None else str(r.best_T), _fmt(r.mean_loss),
                        _fmt(r.std_loss), _fmt(r.rel_loss), _fmt(r.influence_variance),
                        f"{r.runtime_ms:.1f}" if timing else "NA"])
        return out

    def to_csv(self, timing: bool = True, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(REPORT_COLUMNS)
        w.writerows(self.rows(timing))
        return buf.getvalue()


def _fmt(x) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def reports_to_csv(reports: Sequence[ExperimentReport], timing: bool = True) -> str:
    return "".join(r.to_csv(timing, header=(i == 0)) for i, r in enumerate(reports))


def curves_to_plot_data(report: ExperimentReport) -> str:
    """Whitespace-separated T vs mean loss, one column per recipe (gnuplot friendly)."""
    names = [n for n in report.config.recipes if report.results[n].failed is None]
    lines = ["# T " + " ".join(names)]
    for T in report.config.T_grid:
        lines.append(" ".join([str(T)] + [_fmt(report.results[n].curve.get(T, math.nan)) for n in names]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- experiment

@dataclass(frozen=True)
class _Problem:
    model: LossModel
    theta0: np.ndarray
    eta: float
    gamma: float | None  # contraction factor driving the dynamic schedule
    constants: ProblemConstants | None  # for alpha and the noiseless floor (quadratic only)


def _dataset(config: ExperimentConfig) -> Dataset:
    if isinstance(config.data, str):
        raw = load_csv(config.data)
    else:
        spec = {"D": 100, "N": 1000, "distance": 10.0, "seed": 0, **config.data}
        raw = gen_synthetic(int(spec["D"]), int(spec["N"]), float(spec["distance"]), int(spec["seed"]))
    return preprocess(raw, config.data_scale)


def build_problem(config: ExperimentConfig) -> _Problem:
    model = LossModel(config.model, _dataset(config), clip_norm=config.clip)
    theta0 = np.zeros(model.D)
    if config.init_norm > 0:
        z = np.random.default_rng([config.base_seed, 0x5EED]).standard_normal(model.D)
        theta0 = z * (config.init_norm / np.linalg.norm(z))
    gamma = config.gamma
    constants = None
    eta = config.eta
    if model.kind == "quadratic":
        spec = estimate_spectrum(model)
        M, mu = spec.m_max, spec.mu_min
        if eta == "auto":
            eta = 1.0 / M if config.beta == 0 else None
        if eta is None:
            from .optimizer import default_eta
            eta = default_eta(model, config.beta)
        eta = float(eta)
        if gamma is None:
            gamma = effective_gamma(M, mu, eta, config.beta)
        f_star = model.minimum()[1]
        gap = model.loss(theta0) - f_star
        R = config.R if math.isfinite(config.R) else 1.0
        if gap > 0:
            constants = ProblemConstants(G=lipschitz_bound(model), M=M, mu=mu, D=model.D, N=model.N, R=R, init_gap=gap)
    else:
        if eta == "auto":
            from .models import smoothness
            eta = 1.0 / smoothness(model)
        eta = float(eta)
    return _Problem(model, theta0, eta, gamma, constants)


def effective_gamma(M: float, mu: float, eta: float, beta: float = 0.0) -> float | None:
    """Per-step contraction factor of the loss gap for step size eta.

    GD: 1 - 2 mu eta (1 - M eta / 2), which is 1 - mu/M at eta = 1/M.
    Momentum: 1 - eta0/kappa with eta = eta0/(2M).
    None when the step does not contract.
    """
    if beta == 0.0:
        g = 1.0 - 2.0 * mu * eta * (1.0 - 0.5 * M * eta)
    else:
        g = momentum_gamma(M / mu, 2.0 * M * eta)
    return g if 0.0 <= g < 1.0 else None


def build_schedule(recipe: str, T: int, R: float, gamma: float | None, beta: float = 0.0) -> NoiseSchedule:
    if recipe == "uniform":
        return uniform_schedule(T, R)
    if gamma is None:
        raise ScheduleError(f"recipe {recipe!r} needs a contraction factor in (0, 1)")
    if beta > 0:
        dyn = momentum_dynamic(gamma, beta, T, R)
    elif gamma == 0.0:
        dyn = uniform_schedule(T, R)
    else:
        dyn = gd_closed_form(gamma, T, R)
    if recipe == "dynamic":
        return dyn
    if recipe == "exp":
        return fit_exponential(dyn)[2]
    raise ScheduleError(f"unknown recipe {recipe!r}")


def analytic_profile(problem: _Problem, T: int, beta: float = 0.0):
    """Analytic influence in bound units (alpha gamma^(T-t)), or None when undefined."""
    g, c = problem.gamma, problem.constants
    if c is None or g is None or g == 0.0:
        return None
    if beta > 0:
        return analytic_momentum_influence(g, beta, T)
    return analytic_gd_influence(g, c.alpha, T)


def run_experiment(config: ExperimentConfig, problem: _Problem | None = None) -> ExperimentReport:
    """Grid search over T for each recipe; seeds base_seed + i are shared by every (recipe, T)."""
    t_start = time.perf_counter()
    if problem is None:
        problem = build_problem(config)
    noise_free = math.isinf(config.R)
    R = 1.0 if noise_free else config.R
    zero = np.zeros(problem.model.D)
    hook = (lambda t: zero) if noise_free else None
    seeds = [config.base_seed + i for i in range(config.repeats)]

    results = {}
    for recipe in config.recipes:
        t0 = time.perf_counter()
        curve, samples, spent = {}, {}, 0.0
        failed = None
        for T in config.T_grid:
            try:
                sched = with_headroom(build_schedule(recipe, T, R, problem.gamma, config.beta), HEADROOM)
                if not validate(sched).feasible:
                    raise ScheduleError(f"schedule at T={T} exceeds the budget")
            except ScheduleError as e:
                failed = str(e)
                break
            losses = np.empty(len(seeds))
            for i, s in enumerate(seeds):
                rec = run(problem.model, sched, eta=problem.eta, beta=config.beta, seed=s,
                          theta0=problem.theta0, noise_hook=hook, record_losses=False)
                if rec.budget_spent > R:
                    raise AssertionError(f"run spent {rec.budget_spent} of budget {R}")
                spent = max(spent, rec.budget_spent)
                losses[i] = rec.final_loss
            curve[T] = float(losses.mean())
            samples[T] = losses
        ms = 1000.0 * (time.perf_counter() - t0)
        if failed is not None:
            log.warning("recipe %s failed: %s", recipe, failed)
            results[recipe] = RecipeResult(recipe, None, math.nan, math.nan, math.nan, math.nan, ms, failed=failed)
            continue
        best_T = min(curve, key=lambda T: (curve[T], T))
        assert all(curve[best_T] <= v for v in curve.values())
        best = samples[best_T]
        results[recipe] = RecipeResult(recipe, best_T, curve[best_T], float(best.std()), math.nan, math.nan, ms,
                                       curve=curve, best_losses=best, max_budget_spent=spent)

    e0 = results["uniform"].mean_loss
    for r in results.values():
        if r.failed is None:
            r.rel_loss = (r.mean_loss - e0) / e0 if e0 != 0 else 0.0
    floor = math.nan
    uni_T = results["uniform"].best_T
    prof = analytic_profile(problem, uni_T, config.beta) if uni_T is not None else None
    if prof is not None:
        adv = dynamic_advantage(prof)
        floor = problem.gamma**uni_T
        for r in results.values():
            if r.failed is None:
                r.influence_variance = adv
    scale = config.data_scale
    return ExperimentReport(config, scale, results, floor, 1000.0 * (time.perf_counter() - t_start))


def scale_sweep(config: ExperimentConfig, scales: Sequence[float]) -> list:
    """One report per scale, in the order given; each scale re-preprocesses the raw data."""
    if any(not s > 0 for s in scales):
        raise HarnessError("scales must be positive")
    return [run_experiment(replace(config, data_scale=float(s))) for s in scales]


def bootstrap_improvement(baseline, candidate, n_boot: int = 2000, seed: int = 0, level: float = 0.95):
    """Paired bootstrap of mean(baseline - candidate); returns (mean, one-sided lower bound)."""
    d = np.asarray(baseline, dtype=float) - np.asarray(candidate, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, d.size, size=(n_boot, d.size))
    means = d[idx].mean(axis=1)
    return float(d.mean()), float(np.quantile(means, 1.0 - level))
