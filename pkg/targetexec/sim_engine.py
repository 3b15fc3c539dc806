"""
Monte Carlo engine.

Paths are stepped with Euler-Maruyama in fixed blocks of path indices so
numpy can vectorize across paths. Every path draws its Gaussian
increments from its own Philox stream keyed by (master_seed, path_index),
and every per-path operation is elementwise, so a path's result does not
depend on the block it lands in or on the number of worker processes.

Stopping is checked on the grid after each step (no bridge correction).
A stopped path is frozen: its state and performance are held for every
later sample time.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from targetexec.model_core import (
    MarketState,
    ModelParams,
    PerformanceSpec,
    clamp_rate,
    performance,
    step_dynamics,
)
from targetexec.strategies import Strategy

logger = logging.getLogger(__name__)

BLOCK_SIZE = 500
# increments are drawn per path in chunks of this many steps
NOISE_CHUNK = 2048
_GRID_TOL = 1e-12


class StopCause(str, Enum):
    UPPER = "upper"
    LOWER = "lower"
    PRICE_FLOOR = "price_floor"
    DEPLETED = "depleted"
    HORIZON = "horizon"
    ABORTED = "aborted"


class RuleKind(str, Enum):
    DOUBLE_BARRIER = "double_barrier"
    PRICE_FLOOR = "price_floor"
    INVENTORY_DEPLETED = "inventory_depleted"
    HORIZON = "horizon"


@dataclass(frozen=True)
class StoppingRule:
    kind: RuleKind
    lower: float | None = None
    upper: float | None = None

    @classmethod
    def double_barrier(cls, k: float, h: float) -> "StoppingRule":
        if not k < h:
            raise ValueError("double barrier needs k < h")
        return cls(RuleKind.DOUBLE_BARRIER, lower=k, upper=h)

    @classmethod
    def price_floor(cls, s_lower: float) -> "StoppingRule":
        return cls(RuleKind.PRICE_FLOOR, lower=s_lower)

    @classmethod
    def inventory_depleted(cls, q_epsilon: float) -> "StoppingRule":
        if q_epsilon < 0:
            raise ValueError("q_epsilon must be non-negative")
        return cls(RuleKind.INVENTORY_DEPLETED, lower=q_epsilon)

    @classmethod
    def horizon(cls, t_max: float) -> "StoppingRule":
        if not t_max > 0:
            raise ValueError("horizon must be positive")
        return cls(RuleKind.HORIZON, upper=t_max)


def validate_rules(rules) -> dict[RuleKind, StoppingRule]:
    by_kind: dict[RuleKind, StoppingRule] = {}
    for rule in rules:
        if rule.kind in by_kind:
            raise ValueError(f"duplicate stopping rule {rule.kind.value}")
        by_kind[rule.kind] = rule
    if RuleKind.HORIZON not in by_kind:
        raise ValueError("stopping rules must include a horizon")
    return by_kind


def _rule_horizon(by_kind: dict[RuleKind, StoppingRule], params: ModelParams, surrogate) -> float:
    horizon = by_kind[RuleKind.HORIZON].upper
    # p0 and ac rates are only defined up to the model horizon
    if surrogate is None and horizon > params.t_max + _GRID_TOL * max(1.0, params.t_max):
        raise ValueError(f"horizon rule t={horizon} exceeds the model horizon T={params.t_max}")
    return horizon


def default_rules(
    params: ModelParams,
    s_lower: float | None = None,
    q_epsilon: float | None = None,
    barrier: bool = True,
) -> list[StoppingRule]:
    rules = [StoppingRule.horizon(params.t_max)]
    if barrier:
        rules.append(StoppingRule.double_barrier(params.k_lower, params.h_upper))
    if s_lower is not None:
        rules.append(StoppingRule.price_floor(s_lower))
    eps = 1e-8 * params.q0 if q_epsilon is None else q_epsilon
    rules.append(StoppingRule.inventory_depleted(eps))
    return rules


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int

    def generator(self, path_index: int) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(path_index,))
        return np.random.Generator(np.random.Philox(seq))

    def increments(self, path_index: int, n_steps: int, dt: float) -> np.ndarray:
        """The exact Brownian increments path `path_index` consumes."""
        return self.generator(path_index).standard_normal(n_steps) * math.sqrt(dt)


@dataclass(frozen=True)
class SurrogateProcess:
    """Constant-coefficient test process dY = mu dt + s dW."""

    mu: float
    s: float


@dataclass(frozen=True)
class ObjectiveTerms:
    revenue: float
    terminal_value: float
    running_penalty: float

    @property
    def total(self) -> float:
        return self.revenue + self.terminal_value - self.running_penalty


@dataclass
class PathResult:
    path_index: int
    stop_cause: StopCause
    stop_time: float
    horizon: float
    sample_times: np.ndarray
    x: np.ndarray
    q: np.ndarray
    s: np.ndarray
    y: np.ndarray
    terminal_performance: float
    objective_terms: ObjectiveTerms
    clamp_events: int = 0
    tie_events: int = 0
    diagnostic: str | None = None

    @property
    def hit_upper(self) -> bool:
        return self.stop_cause is StopCause.UPPER

    @property
    def hit_lower(self) -> bool:
        return self.stop_cause is StopCause.LOWER


@dataclass
class _Block:
    """Mutable per-block arrays, one entry per path."""

    x: np.ndarray
    q: np.ndarray
    s: np.ndarray
    y: np.ndarray
    penalty: np.ndarray
    revenue: np.ndarray
    active: np.ndarray
    cause: np.ndarray
    stop_time: np.ndarray
    clamps: np.ndarray
    ties: np.ndarray
    diagnostics: list = field(default_factory=list)


def _step_indices(times, dt: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    steps = np.rint(times / dt).astype(np.int64)
    off = np.abs(steps * dt - times)
    if np.any(off > _GRID_TOL * np.maximum(1.0, np.abs(times))):
        raise ValueError(f"sample times are not multiples of dt={dt}")
    return steps


def default_sample_times(t_max: float, dt: float, n: int = 101) -> np.ndarray:
    n_steps = int(round(t_max / dt))
    steps = np.unique(np.rint(np.linspace(0, n_steps, n)).astype(np.int64))
    return steps * dt


def _check_grid(dt: float, horizon: float, sample_times) -> tuple[int, np.ndarray, np.ndarray]:
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"time step must be positive, got {dt}")
    n_steps = int(round(horizon / dt))
    if n_steps < 1 or abs(n_steps * dt - horizon) > _GRID_TOL * max(1.0, horizon):
        raise ValueError(f"dt={dt} does not divide the horizon {horizon}")
    if sample_times is None:
        sample_times = default_sample_times(horizon, dt)
    sample_times = np.asarray(sample_times, dtype=float)
    if np.any(np.diff(sample_times) <= 0):
        raise ValueError("sample times must be strictly increasing")
    if sample_times[0] < 0 or sample_times[-1] > horizon + _GRID_TOL:
        raise ValueError("sample times must lie in [0, horizon]")
    return n_steps, sample_times, _step_indices(sample_times, dt)


def _simulate_block(
    strategy: Strategy | None,
    params: ModelParams,
    rules,
    dt: float,
    seed: SeedSpec,
    indices: list[int],
    sample_times=None,
    surrogate: SurrogateProcess | None = None,
    running_penalty: bool | None = None,
) -> list[PathResult]:
    by_kind = validate_rules(rules)
    horizon = _rule_horizon(by_kind, params, surrogate)
    n_steps, sample_times, sample_steps = _check_grid(dt, horizon, sample_times)
    if surrogate is None and strategy is None:
        raise ValueError("a strategy is required unless the surrogate process is simulated")
    if running_penalty is None:
        running_penalty = params.phi > 0

    n = len(indices)
    sqrt_dt = math.sqrt(dt)
    generators = [seed.generator(i) for i in indices]
    noise = np.empty((n, 0))

    y0 = params.initial_performance
    blk = _Block(
        x=np.full(n, params.x0),
        q=np.full(n, params.q0),
        s=np.full(n, params.s0),
        y=np.full(n, y0),
        penalty=np.zeros(n),
        revenue=np.zeros(n),
        active=np.ones(n, dtype=bool),
        cause=np.full(n, StopCause.HORIZON.value, dtype=object),
        stop_time=np.full(n, horizon),
        clamps=np.zeros(n, dtype=np.int64),
        ties=np.zeros(n, dtype=np.int64),
        diagnostics=[None] * n,
    )
    m = len(sample_times)
    rec = {name: np.empty((n, m)) for name in ("x", "q", "s", "y")}
    next_sample = 0

    barrier = by_kind.get(RuleKind.DOUBLE_BARRIER)
    floor = by_kind.get(RuleKind.PRICE_FLOOR)
    depletion = by_kind.get(RuleKind.INVENTORY_DEPLETED)

    for step in range(n_steps + 1):
        while next_sample < m and sample_steps[next_sample] == step:
            for name in rec:
                rec[name][:, next_sample] = getattr(blk, name)
            next_sample += 1
        if step == n_steps or not blk.active.any():
            break

        col = step % NOISE_CHUNK
        if col == 0:
            width = min(NOISE_CHUNK, n_steps - step)
            noise = np.vstack([g.standard_normal(width) for g in generators]) * sqrt_dt
        dw = noise[:, col]
        t = step * dt
        t_next = (step + 1) * dt
        act = blk.active

        if surrogate is not None:
            y_new = blk.y + surrogate.mu * dt + surrogate.s * dw
            blk.y = np.where(act, y_new, blk.y)
        else:
            state = MarketState(t=t, x=blk.x, q=blk.q, s=blk.s)
            v, capped = strategy.bounded_rate(t, state, params)
            bad = act & ~(np.isfinite(v) & (v >= 0))
            if bad.any():
                for i in np.flatnonzero(bad):
                    blk.diagnostics[i] = f"strategy returned invalid rate {v[i]!r} at t={t:.6g}"
                    logger.warning(f"Path {indices[i]} aborted: {blk.diagnostics[i]}")
                blk.cause[bad] = StopCause.ABORTED.value
                blk.stop_time[bad] = t
                blk.active = act = act & ~bad
            v = np.where(act, v, 0.0)

            executed = clamp_rate(v, blk.q, dt)
            exhausted = (executed < v) & (blk.q > 0)
            blk.clamps += (act & (capped | exhausted)).astype(np.int64)

            spec = PerformanceSpec(include_running_penalty=running_penalty, accumulated_penalty=blk.penalty)
            spec = spec.accumulate(np.where(act, blk.q, 0.0), dt, params.phi)
            blk.penalty = spec.accumulated_penalty
            nxt = step_dynamics(state, v, dt, dw, params)
            blk.revenue = blk.revenue + np.where(act, (blk.s - params.l * executed) * executed * dt, 0.0)
            blk.x = np.where(act, nxt.x, blk.x)
            blk.q = np.where(act, nxt.q, blk.q)
            blk.s = np.where(act, nxt.s, blk.s)
            blk.y = np.where(act, performance(MarketState(t_next, blk.x, blk.q, blk.s), params, spec), blk.y)

        _apply_rules(blk, act, t_next, horizon, barrier, floor, depletion)

    # paths all stopped early: later samples hold the frozen values
    for j in range(next_sample, m):
        for name in rec:
            rec[name][:, j] = getattr(blk, name)

    return [_collect(blk, i, idx, sample_times, rec, horizon, params, running_penalty) for i, idx in enumerate(indices)]


def _apply_rules(blk: _Block, act, t_next, horizon, barrier, floor, depletion) -> None:
    fired = []
    if barrier is not None:
        up = act & (blk.y >= barrier.upper)
        down = act & (blk.y <= barrier.lower)
        fired += [(up, StopCause.UPPER), (down, StopCause.LOWER)]
    if floor is not None:
        fired.append((act & (blk.s <= floor.lower), StopCause.PRICE_FLOOR))
    if depletion is not None:
        fired.append((act & (blk.q <= depletion.lower), StopCause.DEPLETED))
    at_horizon = t_next >= horizon - _GRID_TOL * max(1.0, horizon)
    fired.append((act & at_horizon, StopCause.HORIZON))

    n_fired = np.zeros(len(act), dtype=np.int64)
    for mask, _ in fired:
        n_fired += mask
    blk.ties += n_fired > 1

    # first rule in priority order wins
    stop = np.zeros(len(act), dtype=bool)
    for mask, cause in fired:
        new = mask & ~stop
        blk.cause[new] = cause.value
        blk.stop_time[new] = t_next
        stop |= new
    blk.active = act & ~stop


def _collect(blk: _Block, i, idx, sample_times, rec, horizon, params, running_penalty) -> PathResult:
    q_end, s_end = blk.q[i], blk.s[i]
    terms = ObjectiveTerms(
        revenue=float(blk.revenue[i]),
        terminal_value=float(q_end * (s_end - params.gamma * q_end)),
        running_penalty=float(blk.penalty[i]),
    )
    return PathResult(
        path_index=idx,
        stop_cause=StopCause(blk.cause[i]),
        stop_time=float(blk.stop_time[i]),
        horizon=horizon,
        sample_times=sample_times,
        x=rec["x"][i].copy(),
        q=rec["q"][i].copy(),
        s=rec["s"][i].copy(),
        y=rec["y"][i].copy(),
        terminal_performance=float(blk.y[i]),
        objective_terms=terms,
        clamp_events=int(blk.clamps[i]),
        tie_events=int(blk.ties[i]),
        diagnostic=blk.diagnostics[i],
    )


def simulate_path(
    strategy: Strategy | None,
    params: ModelParams,
    rules,
    dt: float,
    seed: SeedSpec,
    path_index: int,
    sample_times=None,
    surrogate: SurrogateProcess | None = None,
    running_penalty: bool | None = None,
) -> PathResult:
    return _simulate_block(
        strategy, params, rules, dt, seed, [path_index], sample_times, surrogate, running_penalty
    )[0]


def _run_block(args) -> list[PathResult]:
    return _simulate_block(*args)


def run_batch(
    strategy: Strategy | None,
    params: ModelParams,
    rules,
    dt: float,
    seed: SeedSpec,
    n_paths: int,
    sample_times=None,
    surrogate: SurrogateProcess | None = None,
    running_penalty: bool | None = None,
    workers: int = 1,
) -> list[PathResult]:
    """Simulate paths 0..n_paths-1; the returned list is ordered by path index."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    _rule_horizon(validate_rules(rules), params, surrogate)
    label = "surrogate" if surrogate is not None else strategy.label
    logger.info(f"Simulating {n_paths} paths of {label} (dt={dt}, seed={seed.master_seed}, workers={workers})")

    blocks = [list(range(lo, min(lo + BLOCK_SIZE, n_paths))) for lo in range(0, n_paths, BLOCK_SIZE)]
    jobs = [(strategy, params, rules, dt, seed, blk, sample_times, surrogate, running_penalty) for blk in blocks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_run_block, jobs))
    else:
        chunks = [_run_block(job) for job in jobs]
    results = [r for chunk in chunks for r in chunk]

    aborted = sum(r.stop_cause is StopCause.ABORTED for r in results)
    if aborted:
        logger.warning(f"{aborted} of {n_paths} paths aborted by invalid strategy output")
    logger.info(f"Finished {n_paths} paths of {label}")
    return results
