"""
Experiment presets.

Each runner takes a RunConfig and returns named outputs: pandas tables
(written as CSV) and ExperimentReports (written as CSV + JSON). Runners
never touch the filesystem themselves.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd

from targetexec.closed_form import BarrierValueFn, surrogate_hit_probability, value_curve
from targetexec.config import RunConfig
from targetexec.model_core import ModelParams
from targetexec.sim_engine import (
    PathResult,
    SeedSpec,
    SurrogateProcess,
    default_rules,
    default_sample_times,
    run_batch,
)
from targetexec.stats_experiments import (
    ExperimentReport,
    barrier_sweep,
    build_report,
    hitting_probabilities,
    mean_path,
    moment_table,
    terminal_statistic,
)
from targetexec.strategies import Strategy, analytic_schedule, parse_strategy

logger = logging.getLogger(__name__)

Outputs = dict[str, pd.DataFrame | ExperimentReport]

# sigma multipliers giving lambda = 1980.05, 19.80, 1.98 on the baseline
FIG1_SIGMA_SCALES = (1.0, 10.0, math.sqrt(1000.0))
PARAM_VARIATIONS = (("b", 0.002), ("l", 0.002), ("gamma", 0.05), ("sigma", 0.2))
TABLE2_BLOCKS = {"b": (0.001, 0.002), "l": (0.001, 0.002), "gamma": (0.05, 0.1), "sigma": (0.1, 0.2)}
BARRIER_HALF_WIDTHS = (0.05, 0.5)
LOWER_SWEEP_OFFSETS = (0.05, 0.04, 0.03, 0.02, 0.01, 0.001)
UPPER_SWEEP_OFFSETS = (0.001, 0.01, 0.02, 0.03, 0.04, 0.05)
SURROGATE_SETTINGS = ((0.0, 1.0), (0.4, 1.0), (-0.25, 1.0))


def vary(params: ModelParams, name: str, value: float) -> ModelParams:
    """One-at-a-time variation; a gamma change shifts S0 so Y0 stays put."""
    if name == "gamma":
        s0 = params.s0 + (value - params.gamma) * params.q0
        return params.with_updates(gamma=value, s0=s0)
    return params.with_updates(**{name: value})


def _tag(value: float) -> str:
    return f"{value:g}"


def _sample_times(config: RunConfig, params: ModelParams):
    if config.run.sample_times:
        return config.run.sample_times
    return default_sample_times(params.t_max, config.run.dt)


def _by_times(config: RunConfig, params: ModelParams) -> list[float]:
    return config.run.by_times or [params.t_max]


def _simulate(
    config: RunConfig,
    strategy: Strategy | None,
    params: ModelParams | None = None,
    *,
    sample_times=None,
    surrogate: SurrogateProcess | None = None,
    barrier: bool | None = None,
) -> list[PathResult]:
    params = params or config.params
    run = config.run
    rules = default_rules(
        params,
        s_lower=run.s_lower,
        q_epsilon=run.q_epsilon,
        barrier=run.barrier if barrier is None else barrier,
    )
    return run_batch(
        strategy,
        params,
        rules,
        run.dt,
        SeedSpec(run.master_seed),
        run.n_paths,
        sample_times=_sample_times(config, params) if sample_times is None else sample_times,
        surrogate=surrogate,
        workers=run.threads,
    )


def _value_function_info(params: ModelParams) -> dict:
    if params.sigma <= 0:
        return {}
    fn = BarrierValueFn.for_params(params, running_penalty=params.phi > 0)
    return {"lambda": fn.lam, "value_at_y0": fn(params.initial_performance)}


def _report(config: RunConfig, results: list[PathResult], params: ModelParams, label: str, **extra) -> ExperimentReport:
    meta = {
        "preset": config.preset,
        "strategy": label,
        "params": params.model_dump(),
        "dt": config.run.dt,
        "master_seed": config.run.master_seed,
        **extra,
    }
    return build_report(
        results,
        results[0].sample_times,
        _by_times(config, params),
        statistic=config.run.histogram_statistic,
        n_bins=config.run.n_bins,
        metadata=meta,
    )


def _schedule(label: str, params: ModelParams, times) -> pd.DataFrame | None:
    name = label.partition(":")[0]
    if name not in ("p0", "p1", "p1prime", "ac"):
        return None
    return analytic_schedule(name, params, times)


# -------------------------------
# Runners
# -------------------------------
def run_single(config: RunConfig) -> Outputs:
    params = config.params
    if config.surrogate is not None:
        mu, s = config.surrogate.mu, config.surrogate.s
        results = _simulate(config, None, surrogate=SurrogateProcess(mu, s), barrier=True)
        analytic = surrogate_hit_probability(params.initial_performance, mu, s, params.k_lower, params.h_upper)
        return {"batch": _report(config, results, params, f"surrogate(mu={mu}, s={s})", analytic_p_upper=analytic)}

    strategy = parse_strategy(config.run.strategy)
    results = _simulate(config, strategy)
    out: Outputs = {"batch": _report(config, results, params, strategy.label, **_value_function_info(params))}
    schedule = _schedule(strategy.label, params, results[0].sample_times)
    if schedule is not None:
        out["schedule"] = schedule
    return out


def run_fig1(config: RunConfig) -> Outputs:
    out: Outputs = {}
    rows = []
    for i, scale in enumerate(FIG1_SIGMA_SCALES, start=1):
        p = config.params.with_updates(sigma=config.params.sigma * scale)
        fn = BarrierValueFn.for_params(p, running_penalty=p.phi > 0)
        curve = value_curve(fn)
        curve.insert(0, "lambda", fn.lam)
        out[f"value_curve_{i}"] = curve
        rows.append({"curve": i, "sigma": p.sigma, "lambda": fn.lam})
    out["lambdas"] = pd.DataFrame(rows)
    return out


def run_fig2(config: RunConfig) -> Outputs:
    strategy = parse_strategy("p1")
    out: Outputs = {}
    for name, value in (("baseline", None), *PARAM_VARIATIONS):
        p = config.params if value is None else vary(config.params, name, value)
        tag = "p1_baseline" if value is None else f"p1_{name}_{_tag(value)}"
        results = _simulate(config, strategy, p)
        out[f"{tag}_schedule"] = analytic_schedule("p1", p, results[0].sample_times)
        out[tag] = _report(config, results, p, strategy.label, variation=name, value=value)
    return out


def run_fig2b(config: RunConfig) -> Outputs:
    strategy = parse_strategy(config.run.strategy)
    y0 = config.params.initial_performance
    out: Outputs = {}
    rows = []
    for width in BARRIER_HALF_WIDTHS:
        p = config.params.with_updates(k_lower=y0 - width, h_upper=y0 + width)
        results = _simulate(config, strategy, p)
        tag = f"{strategy.label}_halfwidth_{_tag(width)}"
        out[tag] = _report(config, results, p, strategy.label, barrier_half_width=width)
        last = moment_table(results, [results[0].sample_times[-1]]).iloc[0]
        rows.append({"half_width": width, "k": p.k_lower, "h": p.h_upper, "t": last["t"], "mean": last["mean"], "var": last["var"]})
    out["terminal_moments"] = pd.DataFrame(rows)
    return out


def run_fig3(config: RunConfig) -> Outputs:
    params, run = config.params, config.run
    y0 = params.initial_performance
    by_time = _by_times(config, params)[-1]
    lower_grid = [(y0 - d, params.h_upper) for d in LOWER_SWEEP_OFFSETS]
    upper_grid = [(params.k_lower, y0 + d) for d in UPPER_SWEEP_OFFSETS]
    out: Outputs = {}
    for label in ("p1", "p0"):
        strategy = parse_strategy(label)
        for side, grid in (("lower", lower_grid), ("upper", upper_grid)):
            out[f"{label}_{side}_sweep"] = barrier_sweep(
                strategy,
                params,
                grid,
                dt=run.dt,
                seed=SeedSpec(run.master_seed),
                n_paths=run.n_paths,
                by_time=by_time,
                workers=run.threads,
                s_lower=run.s_lower,
                q_epsilon=run.q_epsilon,
            )
    return out


def run_table2(config: RunConfig) -> Outputs:
    times = config.run.sample_times or [0.02, 0.06, 0.1]
    cache: dict = {}

    def moments(label: str, p: ModelParams) -> pd.DataFrame:
        key = (label, tuple(p.model_dump().items()))
        if key not in cache:
            cache[key] = moment_table(_simulate(config, parse_strategy(label), p, sample_times=times), times)
        return cache[key]

    rows = []
    for name, values in TABLE2_BLOCKS.items():
        for value in values:
            p = vary(config.params, name, value)
            p1, p0 = moments("p1", p), moments("p0", p)
            for i, t in enumerate(p1["t"]):
                rows.append(
                    {
                        "variation": name,
                        "value": value,
                        "t": t,
                        "p1_mean": p1["mean"].iloc[i],
                        "p1_var": p1["var"].iloc[i],
                        "p0_mean": p0["mean"].iloc[i],
                        "p0_var": p0["var"].iloc[i],
                    }
                )
    return {"table2": pd.DataFrame(rows)}


def _section5_strategies(config: RunConfig) -> list[Strategy]:
    strategies = [parse_strategy("p1prime"), parse_strategy("ac")]
    if config.run.strategy.startswith("external:"):
        strategies.append(parse_strategy(config.run.strategy))
    return strategies


def run_fig4(config: RunConfig) -> Outputs:
    params = config.params
    out: Outputs = {}
    inventories = {}
    for strategy in _section5_strategies(config):
        results = _simulate(config, strategy)
        times = results[0].sample_times
        tag = strategy.label.partition(":")[0]
        schedule = _schedule(strategy.label, params, times)
        if schedule is not None:
            out[f"{tag}_schedule"] = schedule
            inventories[tag] = schedule["q"].to_numpy()
        out[f"{tag}_mean_inventory"] = mean_path(results, "q")
        out[tag] = _report(config, results, params, strategy.label, **_value_function_info(params))
    t = _sample_times(config, params)
    out["inventory_comparison"] = pd.DataFrame(
        {
            "t": t,
            "q_p1prime": inventories["p1prime"],
            "q_ac": inventories["ac"],
            "p1prime_below_ac": inventories["p1prime"] < inventories["ac"],
        }
    )
    return out


def run_fig5(config: RunConfig) -> Outputs:
    params = config.params
    statistic = config.run.histogram_statistic
    out: Outputs = {}
    rows = []
    for strategy in _section5_strategies(config):
        results = _simulate(config, strategy)
        tag = strategy.label.partition(":")[0]
        out[tag] = _report(config, results, params, strategy.label)
        values = terminal_statistic(results, statistic)
        rows.append(
            {
                "strategy": strategy.label,
                "statistic": statistic,
                "mean": float(values.mean()),
                "variance": float(values.var(ddof=1)) if len(values) > 1 else 0.0,
                "n_paths": len(values),
            }
        )
    out["histogram_summary"] = pd.DataFrame(rows)
    return out


def run_surrogate(config: RunConfig) -> Outputs:
    params = config.params
    y0 = params.initial_performance
    by_time = _by_times(config, params)[-1]
    settings = SURROGATE_SETTINGS if config.surrogate is None else ((config.surrogate.mu, config.surrogate.s),)
    rows = []
    for mu, s in settings:
        results = _simulate(config, None, surrogate=SurrogateProcess(mu, s), barrier=True, sample_times=[0.0])
        probs = hitting_probabilities(results, by_time)
        analytic = surrogate_hit_probability(y0, mu, s, params.k_lower, params.h_upper)
        z = (probs.p_upper - analytic) / probs.se_upper if probs.se_upper > 0 else np.nan
        rows.append(
            {
                "mu": mu,
                "s": s,
                "p_upper": probs.p_upper,
                "p_lower": probs.p_lower,
                "p_neither": probs.p_neither,
                "se_upper": probs.se_upper,
                "analytic_p_upper": analytic,
                "z_score": z,
            }
        )
        logger.info(f"Surrogate mu={mu}, s={s}: simulated {probs.p_upper:.4f} vs analytic {analytic:.4f}")
    return {"surrogate_validation": pd.DataFrame(rows)}


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    runner: Callable[[RunConfig], Outputs]


PRESETS: dict[str, Preset] = {
    p.name: p
    for p in (
        Preset("baseline", "single batch of the configured strategy on the baseline parameters", run_single),
        Preset("section5", "single batch with running penalty, price floor and no performance barrier", run_single),
        Preset("fig1", "value-function curves J(y) for three lambda values", run_fig1),
        Preset("fig2", "P1 schedules and performance bands under one-at-a-time parameter changes", run_fig2),
        Preset("fig2b", "performance bands for narrow and wide barriers", run_fig2b),
        Preset("fig3", "hitting probabilities of P1 and P0 under lower and upper barrier sweeps", run_fig3),
        Preset("table2", "mean and variance of performance for P1 and P0 at early times", run_table2),
        Preset("fig4", "P1' against Almgren-Chriss inventory paths", run_fig4),
        Preset("fig5", "terminal objective histograms of P1' and Almgren-Chriss", run_fig5),
        Preset("surrogate", "barrier estimator check against the constant-coefficient formula", run_surrogate),
    )
}


def run_preset(config: RunConfig) -> Outputs:
    preset = PRESETS[config.preset]
    logger.info(f"Running preset {preset.name}: {preset.description}")
    return preset.runner(config)
