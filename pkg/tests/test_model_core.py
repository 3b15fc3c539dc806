import numpy as np
import pytest
from pydantic import ValidationError

from targetexec.model_core import (
    MarketState,
    ModelParams,
    PerformanceSpec,
    clamp_rate,
    performance,
    performance_diffusion,
    performance_drift,
    step_dynamics,
)


# -------------------------------
# ModelParams
# -------------------------------
def test_baseline_defaults(baseline):
    assert (baseline.b, baseline.l, baseline.gamma, baseline.sigma) == (0.001, 0.001, 0.1, 0.1)
    assert (baseline.q0, baseline.k_lower, baseline.h_upper) == (1.0, 0.95, 1.05)
    assert baseline.initial_performance == pytest.approx(1.0, abs=1e-15)
    assert baseline.net_slippage == pytest.approx(0.199)


def test_slippage_condition_is_enforced():
    with pytest.raises(ValidationError, match="2\\*gamma - b must be positive"):
        ModelParams(b=0.2, gamma=0.1)


def test_lower_barrier_above_initial_performance():
    with pytest.raises(ValidationError, match="lower barrier above initial performance"):
        ModelParams(k_lower=1.2, h_upper=1.3)


@pytest.mark.parametrize("field, value", [("l", 0.0), ("q0", 0.0), ("phi", -1.0), ("sigma", -0.1), ("t_max", 0.0)])
def test_invalid_coefficients(field, value):
    with pytest.raises(ValidationError):
        ModelParams(**{field: value})


def test_zero_volatility_is_accepted(quiet):
    assert quiet.sigma == 0.0


def test_with_updates_revalidates(baseline):
    assert baseline.with_updates(h_upper=1.5).h_upper == 1.5
    with pytest.raises(ValidationError):
        baseline.with_updates(h_upper=0.99)


# -------------------------------
# performance
# -------------------------------
def test_initial_performance(baseline):
    assert performance(MarketState.initial(baseline), baseline) == pytest.approx(1.0)


def test_empty_book_is_cash(baseline):
    assert performance(MarketState(t=0.3, x=0.7, q=0.0, s=123.0), baseline) == 0.7


def test_running_penalty_is_subtracted(baseline):
    state = MarketState(t=0.5, x=0.5, q=0.5, s=20.0)
    spec = PerformanceSpec(include_running_penalty=True, accumulated_penalty=0.01)
    assert performance(state, baseline, spec) == pytest.approx(10.465)
    assert performance(state, baseline) == pytest.approx(10.475)


def test_penalty_accumulates_left_rectangles():
    spec = PerformanceSpec(include_running_penalty=True)
    spec = spec.accumulate(q=1.0, dt=0.1, phi=0.5).accumulate(q=2.0, dt=0.1, phi=0.5)
    assert spec.accumulated_penalty == pytest.approx(0.05 + 0.2)


# -------------------------------
# drift and diffusion
# -------------------------------
def test_drift_at_vertex(baseline):
    state = MarketState(t=0.0, x=0.0, q=1.0, s=1.1)
    assert performance_drift(state, 99.5, baseline) == pytest.approx(9.90025)


def test_drift_vanishes_without_inventory(baseline):
    assert performance_drift(MarketState(t=0.0, x=0.0, q=0.0, s=1.1), 0.0, baseline) == 0.0


def test_drift_with_running_penalty(baseline):
    params = baseline.with_updates(phi=0.001)
    spec = PerformanceSpec(include_running_penalty=True)
    state = MarketState(t=0.0, x=0.0, q=1.0, s=1.1)
    assert performance_drift(state, 0.0, params, spec) == pytest.approx(-0.001)


def test_drift_rejects_negative_rate(baseline):
    with pytest.raises(ValueError, match="non-negative"):
        performance_drift(MarketState.initial(baseline), -1.0, baseline)


@pytest.mark.parametrize("q", [0.1, 1.0, 10.0])
def test_drift_maximizer_on_grid(baseline, q):
    c, l = baseline.net_slippage, baseline.l  # noqa: E741
    v_star = c * q / (2 * l)
    grid = np.linspace(0.0, 3 * v_star, 100_000)
    drift = performance_drift(MarketState(t=0.0, x=0.0, q=q, s=1.1), grid, baseline)
    step = grid[1] - grid[0]
    assert abs(grid[np.argmax(drift)] - v_star) <= step
    assert drift.max() == pytest.approx(c * c * q * q / (4 * l), rel=1e-8)


def test_diffusion_is_sigma_q(baseline):
    assert performance_diffusion(MarketState(t=0.0, x=0.0, q=0.4, s=1.0), baseline) == pytest.approx(0.04)


# -------------------------------
# step_dynamics
# -------------------------------
def test_no_trade_no_noise_only_moves_time(baseline):
    state = MarketState(t=0.0, x=0.0, q=1.0, s=1.1)
    nxt = step_dynamics(state, 0.0, 0.01, 0.0, baseline)
    assert (nxt.x, nxt.q, nxt.s) == (0.0, 1.0, 1.1)
    assert nxt.t == pytest.approx(0.01)


def test_single_euler_step(baseline):
    nxt = step_dynamics(MarketState(t=0.0, x=0.0, q=1.0, s=1.1), 99.5, 1e-4, 0.0, baseline)
    assert nxt.q == pytest.approx(0.99005)
    assert nxt.s == pytest.approx(1.1 - 0.001 * 99.5 * 1e-4)
    assert nxt.x == pytest.approx(0.009954975)


def test_overselling_is_clamped(baseline):
    state = MarketState(t=0.0, x=0.0, q=0.001, s=1.0)
    nxt = step_dynamics(state, 99.5, 1e-4, 0.0, baseline)
    assert nxt.q == 0.0
    # executed rate q/dt = 10
    assert nxt.x == pytest.approx((1.0 - 0.001 * 10.0) * 10.0 * 1e-4)
    assert nxt.s == pytest.approx(1.0 - 0.001 * 10.0 * 1e-4)
    assert clamp_rate(99.5, 0.001, 1e-4) == pytest.approx(10.0)
    assert clamp_rate(5.0, 1.0, 1e-4) == 5.0


@pytest.mark.parametrize("dt", [0.0, -1e-3])
def test_step_rejects_non_positive_dt(baseline, dt):
    with pytest.raises(ValueError, match="time step"):
        step_dynamics(MarketState.initial(baseline), 1.0, dt, 0.0, baseline)


def test_vectorized_step_matches_scalar(baseline):
    q = np.array([1.0, 0.5, 1e-6])
    state = MarketState(t=0.0, x=np.zeros(3), q=q, s=np.full(3, 1.1))
    nxt = step_dynamics(state, 99.5 * q, 1e-3, np.array([0.01, -0.02, 0.0]), baseline)
    for i in range(3):
        one = step_dynamics(MarketState(t=0.0, x=0.0, q=q[i], s=1.1), 99.5 * q[i], 1e-3, [0.01, -0.02, 0.0][i], baseline)
        assert (nxt.x[i], nxt.q[i], nxt.s[i]) == pytest.approx((one.x, one.q, one.s))


def test_inventory_and_cash_monotone_along_p1_path(baseline):
    state = MarketState.initial(baseline)
    rng = np.random.default_rng(0)
    dt = 1e-4
    for _ in range(2000):
        nxt = step_dynamics(state, 99.5 * state.q, dt, rng.normal(0.0, np.sqrt(dt)), baseline)
        assert 0.0 <= nxt.q <= state.q
        assert nxt.x >= state.x
        state = nxt


def _ito_mismatch(params, dt, horizon=0.05):
    """Sum over steps of |dY - drift dt| along a noiseless P1 path."""
    state = MarketState.initial(params)
    y = performance(state, params)
    total = 0.0
    for _ in range(int(round(horizon / dt))):
        v = params.net_slippage / (2 * params.l) * state.q
        drift = performance_drift(state, v, params)
        state = step_dynamics(state, v, dt, 0.0, params)
        y_next = performance(state, params)
        total += abs(y_next - y - drift * dt)
        y = y_next
    return total


def test_discrete_increment_converges_to_drift_first_order(baseline):
    coarse = _ito_mismatch(baseline, 1e-3)
    fine = _ito_mismatch(baseline, 1e-4)
    assert fine < coarse
    assert 8.0 < coarse / fine < 13.0
