"""
Market dynamics and the broker's performance process.

Linear impact model: selling at rate v moves the market price by -b*v*dt
(permanent) and fills at S - l*v (temporary). Performance marks the
inventory at the slippage-adjusted price and optionally charges a
running inventory penalty phi * int Q^2 du.

All functions accept scalars or numpy arrays of equal shape, so the
simulation engine can step a block of paths at once.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator


class ModelParams(BaseModel):
    """Impact and cost coefficients plus initial conditions and barriers."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    b: float = 0.001
    l: float = 0.001  # noqa: E741
    gamma: float = 0.1
    sigma: float = 0.1
    phi: float = 0.0
    q0: float = 1.0
    s0: float = 1.1
    x0: float = 0.0
    k_lower: float = 0.95
    h_upper: float = 1.05
    t_max: float = 1.0

    @model_validator(mode="after")
    def _check_invariants(self) -> "ModelParams":
        if 2 * self.gamma - self.b <= 0:
            raise ValueError("2*gamma - b must be positive")
        if self.l <= 0:
            raise ValueError("temporary impact l must be positive")
        if self.sigma < 0:
            raise ValueError("volatility sigma must be non-negative")
        if self.q0 <= 0:
            raise ValueError("initial inventory q0 must be positive")
        if self.phi < 0:
            raise ValueError("running penalty phi must be non-negative")
        if self.t_max <= 0:
            raise ValueError("horizon t_max must be positive")
        y0 = self.initial_performance
        if self.k_lower >= y0:
            raise ValueError(
                f"lower barrier above initial performance (k={self.k_lower}, Y0={y0})"
            )
        if self.h_upper <= y0:
            raise ValueError(
                f"upper barrier below initial performance (h={self.h_upper}, Y0={y0})"
            )
        return self

    @property
    def initial_performance(self) -> float:
        return self.x0 + self.q0 * (self.s0 - self.gamma * self.q0)

    @property
    def net_slippage(self) -> float:
        """2*gamma - b, the coefficient shared by every strategy formula."""
        return 2 * self.gamma - self.b

    def with_updates(self, **changes) -> "ModelParams":
        """Validated copy; model_copy(update=...) would skip the invariants."""
        return ModelParams(**{**self.model_dump(), **changes})


@dataclass(frozen=True)
class MarketState:
    t: float
    x: float | np.ndarray
    q: float | np.ndarray
    s: float | np.ndarray

    @classmethod
    def initial(cls, params: ModelParams) -> "MarketState":
        return cls(t=0.0, x=params.x0, q=params.q0, s=params.s0)


@dataclass(frozen=True)
class PerformanceSpec:
    include_running_penalty: bool = False
    accumulated_penalty: float | np.ndarray = 0.0

    def accumulate(self, q, dt: float, phi: float) -> "PerformanceSpec":
        # left-endpoint rectangle, same order as the Euler step
        return replace(self, accumulated_penalty=self.accumulated_penalty + phi * q * q * dt)


def performance(state: MarketState, params: ModelParams, spec: PerformanceSpec = PerformanceSpec()):
    y = state.x + state.q * (state.s - params.gamma * state.q)
    if spec.include_running_penalty:
        y = y - spec.accumulated_penalty
    return y


def _check_rate(v):
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("selling rate must be non-negative")
    return v


def performance_drift(state: MarketState, v, params: ModelParams, spec: PerformanceSpec = PerformanceSpec()):
    """Drift of dY under rate v: -l v^2 + (2 gamma - b) q v [- phi q^2]."""
    v = _check_rate(v)
    q = state.q
    drift = -params.l * v * v + params.net_slippage * q * v
    if spec.include_running_penalty:
        drift = drift - params.phi * q * q
    if np.ndim(drift) == 0:
        return float(drift)
    return drift


def performance_diffusion(state: MarketState, params: ModelParams):
    return params.sigma * state.q


def clamp_rate(v, q, dt: float):
    """Largest executable rate: never sell more than the remaining inventory in one step."""
    v = np.asarray(v, dtype=float)
    q = np.asarray(q, dtype=float)
    executed = np.where(v * dt >= q, q / dt, v)
    if executed.ndim == 0:
        return float(executed)
    return executed


def step_dynamics(state: MarketState, v, dt: float, dw, params: ModelParams) -> MarketState:
    """One Euler-Maruyama step of (X, Q, S)."""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    v = _check_rate(v)
    q = np.asarray(state.q, dtype=float)
    exhausted = v * dt >= q
    v = np.where(exhausted, q / dt, v)

    q_next = np.where(exhausted, 0.0, q - v * dt)
    s_next = state.s - params.b * v * dt + params.sigma * np.asarray(dw, dtype=float)
    x_next = state.x + (state.s - params.l * v) * v * dt

    if q_next.ndim == 0:
        return MarketState(t=state.t + dt, x=float(x_next), q=float(q_next), s=float(s_next))
    return MarketState(t=state.t + dt, x=x_next, q=q_next, s=s_next)
