"""
Estimators over simulated path batches.

All reductions consume results in path-index order, so identical
batches give bitwise identical tables. Paths that stopped before a
sample time contribute their frozen post-stop values there.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from targetexec.model_core import ModelParams
from targetexec.sim_engine import PathResult, SeedSpec, StopCause, default_rules, run_batch
from targetexec.strategies import Strategy

logger = logging.getLogger(__name__)

STATISTICS = ("performance", "p5_objective")
POST_STOP_CONVENTION = "frozen-at-stop values are carried to later sample times"


def _require(results) -> None:
    if len(results) == 0:
        raise ValueError("no simulation results to aggregate")


@dataclass(frozen=True)
class HitProbabilities:
    by_time: float
    n_paths: int
    p_upper: float
    p_lower: float
    p_neither: float
    se_upper: float
    se_lower: float
    se_neither: float

    def as_row(self) -> dict:
        return {
            "by_time": self.by_time,
            "p_upper": self.p_upper,
            "p_lower": self.p_lower,
            "p_neither": self.p_neither,
            "se_upper": self.se_upper,
            "se_lower": self.se_lower,
        }


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


def hitting_probabilities(results: list[PathResult], by_time: float) -> HitProbabilities:
    _require(results)
    horizon = max(r.horizon for r in results)
    if by_time > horizon + 1e-12:
        raise ValueError(f"by_time={by_time} exceeds the simulated horizon {horizon}")
    n = len(results)
    n_up = sum(1 for r in results if r.stop_cause is StopCause.UPPER and r.stop_time <= by_time + 1e-12)
    n_low = sum(1 for r in results if r.stop_cause is StopCause.LOWER and r.stop_time <= by_time + 1e-12)
    p_up, p_low = n_up / n, n_low / n
    p_neither = (n - n_up - n_low) / n
    return HitProbabilities(
        by_time=by_time,
        n_paths=n,
        p_upper=p_up,
        p_lower=p_low,
        p_neither=p_neither,
        se_upper=_binomial_se(p_up, n),
        se_lower=_binomial_se(p_low, n),
        se_neither=_binomial_se(p_neither, n),
    )


def probability_table(results: list[PathResult], by_times) -> pd.DataFrame:
    return pd.DataFrame([hitting_probabilities(results, float(t)).as_row() for t in by_times])


def _sample_columns(results: list[PathResult], sample_times) -> np.ndarray:
    grid = results[0].sample_times
    cols = []
    for t in np.atleast_1d(np.asarray(sample_times, dtype=float)):
        hits = np.flatnonzero(np.isclose(grid, t, rtol=0.0, atol=1e-9))
        if len(hits) == 0:
            raise ValueError(f"sample time {t} is not on the simulated sampling grid")
        cols.append(int(hits[0]))
    return np.array(cols)


def _stack(results: list[PathResult], name: str) -> np.ndarray:
    return np.vstack([getattr(r, name) for r in results])


def moment_table(results: list[PathResult], sample_times) -> pd.DataFrame:
    _require(results)
    cols = _sample_columns(results, sample_times)
    values = _stack(results, "y")[:, cols]
    # shifted by the first path so identical columns give exactly zero variance
    ref = values[0]
    shifted = values - ref
    if len(results) > 1:
        var = shifted.var(axis=0, ddof=1)
    else:
        var = np.zeros(len(cols))
    return pd.DataFrame({"t": results[0].sample_times[cols], "mean": ref + shifted.mean(axis=0), "var": var})


def quantile_band(results: list[PathResult], sample_times, lo: float = 0.05, hi: float = 0.95) -> pd.DataFrame:
    """Nearest-rank empirical quantiles of Y at each sample time."""
    if not 0 <= lo < hi <= 1:
        raise ValueError(f"need 0 <= lo < hi <= 1, got lo={lo}, hi={hi}")
    _require(results)
    cols = _sample_columns(results, sample_times)
    values = _stack(results, "y")[:, cols]
    return pd.DataFrame(
        {
            "t": results[0].sample_times[cols],
            "lo": np.quantile(values, lo, axis=0, method="inverted_cdf"),
            "hi": np.quantile(values, hi, axis=0, method="inverted_cdf"),
        }
    )


def mean_path(results: list[PathResult], name: str = "q", sample_times=None) -> pd.DataFrame:
    """Cross-path mean of one recorded field (x, q, s or y)."""
    if name not in ("x", "q", "s", "y"):
        raise ValueError(f"unknown path field {name!r}")
    _require(results)
    if sample_times is None:
        cols = np.arange(len(results[0].sample_times))
    else:
        cols = _sample_columns(results, sample_times)
    values = _stack(results, name)[:, cols]
    return pd.DataFrame({"t": results[0].sample_times[cols], f"mean_{name}": values.mean(axis=0)})


def terminal_statistic(results: list[PathResult], statistic: str = "performance") -> np.ndarray:
    if statistic == "performance":
        return np.array([r.terminal_performance for r in results])
    if statistic == "p5_objective":
        return np.array([r.objective_terms.total for r in results])
    raise ValueError(f"unknown statistic {statistic!r}, expected one of {STATISTICS}")


def terminal_histogram(results: list[PathResult], statistic: str = "performance", n_bins: int = 50) -> pd.DataFrame:
    """Equal-width histogram over the sample range; a constant sample fills one bin."""
    if n_bins < 2:
        raise ValueError("need at least 2 bins")
    _require(results)
    values = terminal_statistic(results, statistic)
    counts, edges = np.histogram(values, bins=n_bins)
    return pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:], "count": counts})


def barrier_sweep(
    strategy: Strategy,
    params: ModelParams,
    barrier_grid,
    *,
    dt: float,
    seed: SeedSpec,
    n_paths: int,
    by_time: float = 1.0,
    workers: int = 1,
    s_lower: float | None = None,
    q_epsilon: float | None = None,
) -> pd.DataFrame:
    """Hitting probabilities for each (k, h) pair; invalid pairs are skipped."""
    rows = []
    for k, h in barrier_grid:
        try:
            swept = params.with_updates(k_lower=k, h_upper=h)
        except ValueError as e:
            logger.warning(f"Skipping barrier pair k={k}, h={h}: {e}")
            continue
        results = run_batch(
            strategy,
            swept,
            default_rules(swept, s_lower=s_lower, q_epsilon=q_epsilon),
            dt,
            seed,
            n_paths,
            sample_times=[0.0],
            workers=workers,
        )
        probs = hitting_probabilities(results, min(by_time, swept.t_max))
        rows.append(
            {
                "k": k,
                "h": h,
                **probs.as_row(),
                "p_difference": probs.p_upper - probs.p_lower,
            }
        )
    return pd.DataFrame(rows)


@dataclass
class ExperimentReport:
    moments: pd.DataFrame
    probabilities: pd.DataFrame
    histogram: pd.DataFrame | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "moments": self.moments.to_dict(orient="list"),
            "probabilities": self.probabilities.to_dict(orient="list"),
            "histogram": None if self.histogram is None else self.histogram.to_dict(orient="list"),
        }

    def write(self, out_dir: Path, stem: str) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        files = [("moments", self.moments), ("probabilities", self.probabilities), ("histogram", self.histogram)]
        for name, table in files:
            if table is None:
                continue
            path = out_dir / f"{stem}_{name}.csv"
            table.to_csv(path, index=False)
            written.append(path)
        path = out_dir / f"{stem}_report.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, default=_json_default))
        written.append(path)
        return written


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def build_report(
    results: list[PathResult],
    sample_times,
    by_times,
    *,
    statistic: str | None = "performance",
    n_bins: int = 50,
    metadata: dict | None = None,
) -> ExperimentReport:
    moments = moment_table(results, sample_times)
    band = quantile_band(results, sample_times)
    moments["q05"] = band["lo"].to_numpy()
    moments["q95"] = band["hi"].to_numpy()
    meta = {
        "n_paths": len(results),
        "post_stop_sampling": POST_STOP_CONVENTION,
        "quantiles": "nearest rank",
        "clamp_events": int(sum(r.clamp_events for r in results)),
        "tie_events": int(sum(r.tie_events for r in results)),
        "aborted_paths": int(sum(r.stop_cause is StopCause.ABORTED for r in results)),
        "stop_causes": {c.value: int(sum(r.stop_cause is c for r in results)) for c in StopCause},
        **(metadata or {}),
    }
    histogram = None if statistic is None else terminal_histogram(results, statistic, n_bins)
    if statistic is not None:
        meta["histogram_statistic"] = statistic
        meta["histogram_sample_variance"] = float(np.var(terminal_statistic(results, statistic), ddof=1)) if len(results) > 1 else 0.0
    return ExperimentReport(
        moments=moments,
        probabilities=probability_table(results, by_times),
        histogram=histogram,
        metadata=meta,
    )
