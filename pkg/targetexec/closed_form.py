"""
Closed-form value functions.

- lambda of the two-barrier value function J(y) for the target problems,
- J(y) itself, evaluated in a shifted form that survives lambda ~ 2000,
- the quadratic coefficient h2(t) of the classical value function and an
  independent ODE integration of the Riccati equation it solves.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

from targetexec.model_core import MarketState, ModelParams

logger = logging.getLogger(__name__)

# below this |lambda * (h - k)| the linear limit is used
_LINEAR_LIMIT = 1e-12


def _require_volatility(params: ModelParams) -> None:
    if params.sigma <= 0:
        raise ValueError("lambda is undefined for sigma = 0")


def lambda_p1(params: ModelParams) -> float:
    _require_volatility(params)
    return params.net_slippage ** 2 / (2 * params.l * params.sigma ** 2)


def lambda_p1prime(params: ModelParams) -> float:
    _require_volatility(params)
    return (params.net_slippage ** 2 - 4 * params.l * params.phi) / (2 * params.l * params.sigma ** 2)


@dataclass(frozen=True)
class BarrierValueFn:
    lam: float
    k_lower: float
    h_upper: float

    def __post_init__(self):
        if not self.k_lower < self.h_upper:
            raise ValueError("barriers must satisfy k < h")
        if self.lam <= 0:
            msg = (
                f"non-positive lambda={self.lam:.6g}: the running penalty outweighs the "
                "drift gain, J(y) is reported for diagnostics only"
            )
            logger.warning(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)

    @classmethod
    def for_params(cls, params: ModelParams, running_penalty: bool = False) -> "BarrierValueFn":
        lam = lambda_p1prime(params) if running_penalty else lambda_p1(params)
        return cls(lam=lam, k_lower=params.k_lower, h_upper=params.h_upper)

    @property
    def sign(self) -> int:
        return int(np.sign(self.lam))

    def __call__(self, y):
        return barrier_value(y, self)


def barrier_value(y, fn: BarrierValueFn):
    """Probability-like J(y) with J(k) = 0 and J(h) = 1."""
    y_arr = np.asarray(y, dtype=float)
    k, h, lam = fn.k_lower, fn.h_upper, fn.lam
    if np.any(y_arr < k) or np.any(y_arr > h):
        raise ValueError(f"performance outside the barriers [{k}, {h}]")

    width = h - k
    if abs(lam * width) < _LINEAR_LIMIT:
        out = (y_arr - k) / width
    elif lam > 0:
        out = np.expm1(-lam * (y_arr - k)) / np.expm1(-lam * width)
    else:
        # mirrored so the exponentials stay bounded for lam < 0
        a = -lam
        tail = np.exp(-a * width)
        out = (np.exp(-a * (h - y_arr)) - tail) / (1.0 - tail)
    return float(out) if out.ndim == 0 else out


def value_curve(fn: BarrierValueFn, n_points: int = 201) -> pd.DataFrame:
    y = np.linspace(fn.k_lower, fn.h_upper, n_points)
    # pin the end points, linspace may round the last one
    y[0], y[-1] = fn.k_lower, fn.h_upper
    return pd.DataFrame({"y": y, "J": barrier_value(y, fn)})


def surrogate_hit_probability(y, mu: float, s: float, k: float, h: float):
    """P(hit h before k) for dY = mu dt + s dW started at y."""
    if s <= 0:
        raise ValueError("surrogate diffusion must be positive")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fn = BarrierValueFn(lam=2 * mu / s ** 2, k_lower=k, h_upper=h)
    return barrier_value(y, fn)


# -------------------------------
# Classical problem: h2(t)
# -------------------------------
def _check_horizon(t, params: ModelParams) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > params.t_max):
        raise ValueError(f"time outside [0, {params.t_max}]")
    return t


def h2_closed_form(t, params: ModelParams):
    """h2(t) = -gamma + c^2 tau / (2 (c tau + 2 l)), c = 2 gamma - b, tau = T - t."""
    t = _check_horizon(t, params)
    c, tau = params.net_slippage, params.t_max - t
    out = -params.gamma + c * c * tau / (2 * (c * tau + 2 * params.l))
    return float(out) if out.ndim == 0 else out


def p0_feedback_gain_from_h2(t, params: ModelParams):
    return -(params.b + 2 * h2_closed_form(t, params)) / (2 * params.l)


def h2_ode_oracle(params: ModelParams, n_steps: int = 100_000) -> pd.DataFrame:
    """Integrate h2' = -(b + 2 h2)^2 / (4 l) backward from h2(T) = -gamma."""
    if n_steps < 1000:
        raise ValueError(f"need at least 1000 steps, got {n_steps}")
    b, l = params.b, params.l  # noqa: E741

    def rhs(_t, h):
        return -((b + 2 * h) ** 2) / (4 * l)

    grid = np.linspace(params.t_max, 0.0, n_steps + 1)
    sol = solve_ivp(
        rhs,
        (params.t_max, 0.0),
        [-params.gamma],
        method="DOP853",
        t_eval=grid,
        rtol=1e-12,
        atol=1e-14,
    )
    if not sol.success:
        raise RuntimeError(f"Riccati integration failed: {sol.message}")
    table = pd.DataFrame({"t": sol.t[::-1], "h2": sol.y[0][::-1]})
    return table


def p0_value(t, state: MarketState, params: ModelParams):
    return state.x + state.q * state.s + h2_closed_form(t, params) * state.q ** 2
