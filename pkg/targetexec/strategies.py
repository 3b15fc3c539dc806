"""
Liquidation strategies.

Each strategy is a state-feedback rule v = rule(t, state, params) with
v >= 0. The analytic schedules (inventory as a function of time) are
exposed next to the rates so tests and exhibits can compare the two.

Labels understood by parse_strategy:
    p0, p1 (alias p1prime), ac, zero, constant:<value>, external:<path>
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd

from targetexec.model_core import MarketState, ModelParams

logger = logging.getLogger(__name__)

# slack for t accumulated on a dt grid
_T_TOL = 1e-12


def _check_time(t, horizon: float, *, allow_negative: bool = False) -> None:
    if t > horizon + _T_TOL * max(1.0, horizon):
        raise ValueError(f"time {t} is beyond the horizon T={horizon}")
    if not allow_negative and t < -_T_TOL:
        raise ValueError(f"time {t} is negative")


# -------------------------------
# P1 / P1' (target strategy)
# -------------------------------
def p1_rate(t, state: MarketState, params: ModelParams):
    """Sell the fixed fraction (2 gamma - b) / (2 l) of the remaining shares."""
    return params.net_slippage / (2 * params.l) * state.q


def p1_inventory(t, params: ModelParams):
    if np.any(np.asarray(t) < 0):
        raise ValueError("time must be non-negative")
    return params.q0 * np.exp(-params.net_slippage / (2 * params.l) * np.asarray(t, dtype=float))


# -------------------------------
# P0 (classical finite horizon)
# -------------------------------
def p0_gain(t, params: ModelParams):
    c = params.net_slippage
    return c / (2 * params.l + c * (params.t_max - t))


def p0_rate(t, state: MarketState, params: ModelParams):
    _check_time(t, params.t_max)
    return p0_gain(t, params) * state.q


def p0_inventory(t, params: ModelParams):
    t = np.asarray(t, dtype=float)
    if np.any(t < -_T_TOL) or np.any(t > params.t_max + _T_TOL):
        raise ValueError(f"time outside [0, {params.t_max}]")
    c, l, horizon = params.net_slippage, params.l, params.t_max
    return (2 * l + c * (horizon - t)) / (2 * l + c * horizon) * params.q0


# -------------------------------
# Almgren-Chriss with running penalty
# -------------------------------
@dataclass(frozen=True)
class AcCoefficients:
    big_gamma: float
    zeta: float

    @classmethod
    def from_params(cls, params: ModelParams) -> "AcCoefficients":
        root = math.sqrt(params.l * params.phi)
        half = params.gamma - 0.5 * params.b
        if half - root <= 0:
            raise ValueError(
                "Almgren-Chriss coefficients undefined: gamma - b/2 - sqrt(l*phi) must be positive"
            )
        return cls(big_gamma=math.sqrt(params.phi / params.l), zeta=(half + root) / (half - root))

    @property
    def degenerate(self) -> bool:
        # phi = 0: the strategy collapses to P0
        return self.big_gamma == 0.0


@lru_cache(maxsize=64)
def ac_coefficients(params: ModelParams) -> AcCoefficients:
    """AcCoefficients.from_params, built once per parameter set."""
    return AcCoefficients.from_params(params)


def ac_rate(t, state: MarketState, params: ModelParams, coeffs: AcCoefficients):
    _check_time(t, params.t_max)
    if coeffs.degenerate:
        return p0_rate(t, state, params)
    g, zeta = coeffs.big_gamma, coeffs.zeta
    tau = params.t_max - t
    up, down = zeta * np.exp(g * tau), np.exp(-g * tau)
    return g * (up + down) / (up - down) * state.q


def ac_inventory(t, params: ModelParams, coeffs: AcCoefficients):
    if coeffs.degenerate:
        return p0_inventory(t, params)
    t = np.asarray(t, dtype=float)
    if np.any(t < -_T_TOL) or np.any(t > params.t_max + _T_TOL):
        raise ValueError(f"time outside [0, {params.t_max}]")
    g, zeta, horizon = coeffs.big_gamma, coeffs.zeta, params.t_max
    num = zeta * np.exp(g * (horizon - t)) - np.exp(-g * (horizon - t))
    den = zeta * np.exp(g * horizon) - np.exp(-g * horizon)
    return num / den * params.q0


# -------------------------------
# Strategy objects
# -------------------------------
@dataclass(frozen=True)
class Strategy(ABC):
    """A rate rule with an optional uniform cap (the admissible-set bound)."""

    label: str
    v_max: float | None = None

    @abstractmethod
    def rule(self, t: float, state: MarketState, params: ModelParams):
        ...

    def with_cap(self, v_max: float) -> "Strategy":
        if not v_max > 0:
            raise ValueError("rate cap must be positive")
        return replace(self, v_max=v_max)

    def bounded_rate(self, t: float, state: MarketState, params: ModelParams):
        """Return (rate, capped) where capped marks entries cut down to v_max."""
        raw = np.asarray(self.rule(t, state, params), dtype=float)
        raw = np.broadcast_to(raw, np.shape(state.q)).astype(float)
        if self.v_max is None:
            return raw, np.zeros(raw.shape, dtype=bool)
        capped = raw > self.v_max
        return np.where(capped, self.v_max, raw), capped

    def __call__(self, t: float, state: MarketState, params: ModelParams):
        rate, _ = self.bounded_rate(t, state, params)
        return float(rate) if rate.ndim == 0 else rate


@dataclass(frozen=True)
class ZeroStrategy(Strategy):
    label: str = "zero"

    def rule(self, t, state, params):
        return np.zeros(np.shape(state.q))


@dataclass(frozen=True)
class ConstantStrategy(Strategy):
    label: str = "constant"
    value: float = 0.0

    def rule(self, t, state, params):
        return np.full(np.shape(state.q), self.value)


@dataclass(frozen=True)
class TargetStrategy(Strategy):
    label: str = "p1"

    def rule(self, t, state, params):
        return p1_rate(t, state, params)


@dataclass(frozen=True)
class ClassicalStrategy(Strategy):
    label: str = "p0"

    def rule(self, t, state, params):
        return p0_rate(t, state, params)


@dataclass(frozen=True)
class AlmgrenChrissStrategy(Strategy):
    label: str = "ac"

    def rule(self, t, state, params):
        return ac_rate(t, state, params, ac_coefficients(params))


@dataclass(frozen=True)
class ExternalStrategy(Strategy):
    """Rate table v(t) supplied from a file, linearly interpolated in t."""

    label: str = "external"
    times: tuple[float, ...] = field(default_factory=tuple)
    rates: tuple[float, ...] = field(default_factory=tuple)

    @classmethod
    def from_csv(cls, path: str | Path) -> "ExternalStrategy":
        df = pd.read_csv(path)
        missing = {"t", "v"} - set(df.columns)
        if missing:
            raise ValueError(f"rate table {path} lacks columns {sorted(missing)}")
        df = df.sort_values("t")
        if (df["v"] < 0).any() or not np.isfinite(df["v"]).all():
            raise ValueError(f"rate table {path} holds negative or non-finite rates")
        logger.info(f"Loaded external rate table {path} with {len(df)} rows")
        return cls(label=f"external:{path}", times=tuple(df["t"]), rates=tuple(df["v"]))

    def rule(self, t, state, params):
        return np.full(np.shape(state.q), np.interp(t, self.times, self.rates))


def parse_strategy(label: str) -> Strategy:
    name, _, arg = label.partition(":")
    name = name.strip().lower()
    if name in ("p1", "p1prime"):
        return TargetStrategy(label=name)
    if name == "p0":
        return ClassicalStrategy()
    if name == "ac":
        return AlmgrenChrissStrategy()
    if name == "zero":
        return ZeroStrategy()
    if name == "constant":
        try:
            value = float(arg)
        except ValueError:
            raise ValueError(f"constant strategy needs a numeric rate, got {arg!r}") from None
        if value < 0 or not math.isfinite(value):
            raise ValueError("constant rate must be finite and non-negative")
        return ConstantStrategy(label=label, value=value)
    if name == "external":
        if not arg:
            raise ValueError("external strategy needs a path: external:<path>")
        return ExternalStrategy.from_csv(arg)
    raise ValueError(f"unknown strategy label {label!r}")


def analytic_schedule(label: str, params: ModelParams, times) -> pd.DataFrame:
    """Deterministic (t, v, q) schedule of the p0 / p1 / ac strategies."""
    times = np.asarray(times, dtype=float)
    if label in ("p1", "p1prime"):
        q = p1_inventory(times, params)
        v = p1_rate(times, MarketState(t=0.0, x=0.0, q=q, s=0.0), params)
    elif label == "p0":
        q = p0_inventory(times, params)
        v = p0_gain(times, params) * q
    elif label == "ac":
        coeffs = ac_coefficients(params)
        q = ac_inventory(times, params, coeffs)
        v = np.array([ac_rate(t, MarketState(t=t, x=0.0, q=qi, s=0.0), params, coeffs) for t, qi in zip(times, q)])
    else:
        raise ValueError(f"no analytic schedule for strategy {label!r}")
    return pd.DataFrame({"t": times, "v": v, "q": q})
