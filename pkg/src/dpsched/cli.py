"""Command line entry point: ``dpsched <subcommand>``."""

from __future__ import annotations

import csv
import json
import logging
import math
import sys
from dataclasses import replace

import click
import numpy as np

from . import accountant as acc
from . import analysis as an
from . import schedules as sch
from .harness import (ExperimentConfig, HarnessError, curves_to_plot_data, gen_synthetic, load_csv,
                      reports_to_csv, run_experiment, scale_sweep, write_csv)
from .influence import InfluenceError, estimate_influence_profile
from .models import LossModel, ModelError
from .optimizer import OptimizerError, default_batch_size, run, run_psgd

HEADROOM = 1e-9


def _fail(e: Exception):
    raise click.ClickException(str(e))


def _writer():
    return csv.writer(sys.stdout, lineterminator="\n")


def _num(x: float) -> str:
    return repr(float(x))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress and warnings to stderr.")
def main(verbose):
    """Differentially private GD with scheduled per-step noise."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@click.option("--rho", type=float, help="zCDP parameter to convert to (eps, delta)-DP.")
@click.option("--eps", type=float, help="Epsilon to convert to zCDP.")
@click.option("--delta", type=float, default=1e-8, show_default=True)
@click.option("--sigma", type=float, help="Noise scale of one Gaussian step.")
@click.option("--rate", type=float, help="Sampling rate p for a subsampled step (with --sigma).")
def account(rho, eps, delta, sigma, rate):
    """Privacy conversions and per-step costs, printed as one key=value line."""
    if rho is None and eps is None and sigma is None:
        raise click.UsageError("give at least one of --rho, --eps, --sigma")
    out = []
    try:
        if rho is not None:
            out += [f"rho={rho:.6g}", f"delta={delta:.6g}", f"eps={acc.zcdp_to_dp(rho, delta):.6g}"]
        if eps is not None:
            out += [f"eps={eps:.6g}", f"delta={delta:.6g}", f"rho={acc.dp_to_zcdp(eps, delta):.6g}",
                    f"R={2 * acc.dp_to_zcdp(eps, delta):.6g}"]
        if sigma is not None:
            out += [f"sigma={sigma:.6g}", f"zcdp_rho={acc.gaussian_step_cost(sigma):.6g}"]
            p = 1.0 if rate is None else rate
            out += [f"rate={p:.6g}", f"r_unit_cost={acc.subsampled_step_cost(sigma, p):.6g}"]
    except acc.PrivacyDomainError as e:
        _fail(e)
    # a key given twice (e.g. --rho with --eps) keeps its first value
    seen, line = set(), []
    for kv in out:
        k = kv.split("=", 1)[0]
        if k not in seen:
            seen.add(k)
            line.append(kv)
    click.echo(" ".join(line))


@main.command()
@click.argument("problem", type=click.File("r"), default="-")
@click.option("--T-max", "t_max", type=int, default=1000, show_default=True,
              help="Search horizon for the momentum bounds.")
def analyze(problem, t_max):
    """Bound constants, optimal T and ERUB values for a JSON problem (file or stdin)."""
    try:
        d = json.load(problem)
        beta = float(d.pop("beta", 0.0))
        c = an.derive_constants(**{k: float(d[k]) for k in ("G", "M", "mu", "D", "N", "R", "init_gap")})
    except (KeyError, TypeError, ValueError) as e:
        _fail(HarnessError(f"bad problem description: {e}"))
    Tu, Td = an.optimal_T_uniform(c), an.optimal_T_dynamic(c)
    rows = [("alpha", c.alpha), ("kappa", c.kappa), ("gamma", c.gamma), ("T_uniform", Tu), ("T_dynamic", Td),
            ("erub_uniform", an.erub_uniform_closed_form(c, Tu)), ("erub_dynamic", an.erub_dynamic_closed_form(c, Td))]
    if beta > 0:
        eta0 = an.default_eta0(c.kappa, beta)
        gm = an.momentum_gamma(c.kappa, eta0)
        rows += [("beta", beta), ("eta0", eta0), ("gamma_momentum", gm), ("T_hat", an.compute_T_hat(gm, beta))]
        uni = [an.erub_momentum(c, beta, eta0, sch.uniform_schedule(T, c.R)) for T in range(1, t_max + 1)]
        Tm = int(np.argmin(uni)) + 1
        rows += [("T_momentum_uniform", Tm), ("erub_momentum_uniform", uni[Tm - 1])]
        if beta < gm:
            dyn = [an.erub_momentum(c, beta, eta0, sch.momentum_dynamic(gm, beta, T, c.R)) for T in range(1, t_max + 1)]
            Tm = int(np.argmin(dyn)) + 1
            rows += [("T_momentum_dynamic", Tm), ("erub_momentum_dynamic", dyn[Tm - 1])]
    else:
        rows.append(("T_hat", an.compute_T_hat(c.gamma, 0.0)))
    w = _writer()
    w.writerow(("quantity", "value"))
    for k, v in rows:
        w.writerow((k, v if isinstance(v, int) else _num(v)))


def _schedule_rows(s: sch.NoiseSchedule):
    w = _writer()
    w.writerow(("t", "sigma", "sigma_sq", "r_unit_cost"))
    for t, sig in enumerate(s.sigmas, start=1):
        w.writerow((t, _num(sig), _num(sig * sig), _num(1.0 / (sig * sig))))


@main.command()
@click.option("--recipe", type=click.Choice(["uniform", "dynamic", "gd", "momentum", "exp-fit"]), required=True)
@click.option("--T", "T", type=int, required=True)
@click.option("--R", "R", type=float, default=0.3927, show_default=True)
@click.option("--gamma", type=float, help="Contraction factor (gd, momentum, exp-fit, and dynamic without --q).")
@click.option("--beta", type=float, default=0.0, show_default=True)
@click.option("--q", "q", help="Comma-separated influences for the dynamic recipe.")
def schedule(recipe, T, R, gamma, beta, q):
    """Emit a noise schedule as CSV."""
    try:
        if recipe == "uniform":
            s = sch.uniform_schedule(T, R)
        elif recipe == "dynamic":
            if q is not None:
                qs = [float(x) for x in q.split(",")]
                if len(qs) != T:
                    raise sch.ScheduleError(f"--q has {len(qs)} values for T={T}")
            elif gamma is not None:
                qs = [gamma ** (T - t) for t in range(1, T + 1)]
            else:
                raise sch.ScheduleError("dynamic recipe needs --q or --gamma")
            s = sch.dynamic_from_influence(qs, R)
        else:
            if gamma is None:
                raise sch.ScheduleError(f"recipe {recipe} needs --gamma")
            if recipe == "gd":
                s = sch.gd_closed_form(gamma, T, R)
            elif recipe == "momentum":
                s = sch.momentum_dynamic(gamma, beta, T, R)
            else:
                base = sch.momentum_dynamic(gamma, beta, T, R) if beta > 0 else sch.gd_closed_form(gamma, T, R)
                s = sch.fit_exponential(base)[2]
    except (sch.ScheduleError, an.AnalysisDomainError, ValueError) as e:
        _fail(e)
    _schedule_rows(s)


def read_schedule(path, R=None) -> sch.NoiseSchedule:
    """Schedule CSV (needs a ``sigma`` column). Without R the budget leaves a 1e-9 relative headroom."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "sigma" not in rows[0]:
        raise HarnessError(f"{path}: expected a CSV with a 'sigma' column")
    try:
        sig = [float(r["sigma"]) for r in rows]
    except ValueError as e:
        raise HarnessError(f"{path}: {e}") from None
    if R is None:
        R = sum(1.0 / s**2 for s in sig) / (1.0 - HEADROOM)
    return sch.NoiseSchedule(tuple(sig), "custom", R)


@main.command()
@click.option("--model", type=click.Choice(["quadratic", "logistic"]), default="quadratic", show_default=True)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--schedule", "schedule_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--R", "R", type=float,
              help="Budget R (default: the schedule's own total cost plus 1e-9 headroom). "
                   "With --batch the schedule is charged against R' = R/p^2.")
@click.option("--eta", type=float, help="Step size (default 1/M, or eta0/(2M) with momentum).")
@click.option("--beta", type=float, default=0.0, show_default=True)
@click.option("--clip", type=float, default=4.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--batch", type=str, help="Batch size for private SGD, or 'auto' for floor(N sqrt R).")
def train(model, data, schedule_path, R, eta, beta, clip, seed, batch):
    """Run private (momentum) GD or SGD and emit the per-step record as CSV."""
    try:
        m = LossModel(model, load_csv(data), clip_norm=clip)
        if batch is None:
            rec = run(m, read_schedule(schedule_path, R), eta=eta, beta=beta, seed=seed)
        else:
            if batch == "auto":
                if R is None:
                    raise click.UsageError("--batch auto needs the underlying budget --R")
                n = default_batch_size(m.N, R)
            else:
                n = int(batch)
            # the schedule spends R' = R / p^2 in batch units
            s = read_schedule(schedule_path)
            if R is not None:
                s = replace(s, budget_R=R / (n / m.N) ** 2)
            rec = run_psgd(m, s, n, eta=eta, beta=beta, seed=seed)
    except (HarnessError, ModelError, OptimizerError, sch.ScheduleError, ValueError) as e:
        _fail(e)
    w = _writer()
    w.writerow(("t", "loss", "sigma", "cumulative_cost"))
    w.writerow((0, _num(rec.initial_loss), "", _num(0.0)))
    for t, (loss, sig, cost) in enumerate(zip(rec.losses, rec.sigmas, rec.cumulative_cost), start=1):
        w.writerow((t, _num(loss), _num(sig), _num(cost)))


def _parse_grid(text: str):
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise click.BadParameter("expected lo:hi:n, e.g. 20:200:7") from None
    if not 0 < lo < hi or n < 3:
        raise click.BadParameter("need 0 < lo < hi and n >= 3")
    return tuple(np.geomspace(lo, hi, n))


@main.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model", type=click.Choice(["quadratic", "logistic"]), default="quadratic", show_default=True)
@click.option("--T", "T", type=int, default=50, show_default=True)
@click.option("--R", "R", type=float, default=0.3927, show_default=True)
@click.option("--grid", default="20:200:7", show_default=True, help="Log-spaced sigma grid lo:hi:n.")
@click.option("--repeats", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--eta", type=float, help="Step size (default 1/M).")
@click.option("--clip", type=float, default=4.0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
def influence(data, model, T, R, grid, repeats, seed, eta, clip, workers):
    """Retrained per-step influences around the uniform schedule, as CSV."""
    sigma_grid = _parse_grid(grid)
    try:
        m = LossModel(model, load_csv(data), clip_norm=clip)
        base = sch.with_headroom(sch.uniform_schedule(T, R), HEADROOM)
        prof = estimate_influence_profile(m, base, sigma_grid, repeats, seed, eta=eta, workers=workers)
    except (HarnessError, ModelError, OptimizerError, InfluenceError, sch.ScheduleError) as e:
        _fail(e)
    w = _writer()
    w.writerow(("t", "q_hat", "c0", "residual"))
    for t, d in enumerate(prof.fit_diagnostics, start=1):
        w.writerow((t, _num(d.c2), _num(d.c0), _num(d.residual)))


@main.command("gen-data")
@click.option("--D", "D", type=int, default=100, show_default=True)
@click.option("--N", "N", type=int, default=1000, show_default=True)
@click.option("--distance", type=float, default=10.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def gen_data(D, N, distance, seed, out):
    """Write a two-cluster synthetic dataset (raw, not preprocessed) to CSV."""
    try:
        write_csv(gen_synthetic(D, N, distance, seed), out)
    except HarnessError as e:
        _fail(e)


def _load_config(fh) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_dict(json.load(fh))
    except (json.JSONDecodeError, TypeError, HarnessError) as e:
        _fail(HarnessError(f"bad config: {e}"))


@main.command()
@click.option("--config", type=click.File("r"), required=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Report CSV path (default stdout).")
@click.option("--plot-data", type=click.Path(dir_okay=False), help="Also write T-vs-loss curves here.")
@click.option("--no-timing", is_flag=True, help="Write runtime_ms as NA so reports are byte-reproducible.")
def experiment(config, out, plot_data, no_timing):
    """Grid-search T for each recipe and report losses relative to uniform."""
    cfg = _load_config(config)
    try:
        rep = run_experiment(cfg)
    except (HarnessError, ModelError, OptimizerError) as e:
        _fail(e)
    _emit(reports_to_csv([rep], timing=not no_timing), out)
    if plot_data:
        with open(plot_data, "w") as fh:
            fh.write(curves_to_plot_data(rep))


@main.command()
@click.option("--config", type=click.File("r"), required=True)
@click.option("--scales", required=True, help="Comma-separated data scales, e.g. 5,10,15,20,25.")
@click.option("--out", type=click.Path(dir_okay=False))
@click.option("--no-timing", is_flag=True)
def sweep(config, scales, out, no_timing):
    """Run the experiment once per data scale and emit one combined CSV."""
    cfg = _load_config(config)
    try:
        values = [float(s) for s in scales.split(",")]
        reps = scale_sweep(cfg, values)
    except ValueError as e:
        _fail(e)
    _emit(reports_to_csv(reps, timing=not no_timing), out)


def _emit(text: str, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
