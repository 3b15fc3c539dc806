import math

import numpy as np
import pandas as pd
import pytest

from targetexec.model_core import MarketState
from targetexec.strategies import (
    AcCoefficients,
    AlmgrenChrissStrategy,
    ClassicalStrategy,
    ConstantStrategy,
    ExternalStrategy,
    TargetStrategy,
    ZeroStrategy,
    ac_coefficients,
    ac_inventory,
    ac_rate,
    analytic_schedule,
    p0_inventory,
    p0_rate,
    p1_inventory,
    p1_rate,
    parse_strategy,
)


def at(q, t=0.0):
    return MarketState(t=t, x=0.0, q=q, s=1.1)


# -------------------------------
# P1
# -------------------------------
def test_p1_rate(baseline, section5):
    assert p1_rate(0.0, at(1.0), baseline) == pytest.approx(99.5)
    assert p1_rate(0.3, at(0.0), baseline) == 0.0
    assert p1_rate(0.0, at(1.0), section5) == pytest.approx(1000.0)


def test_p1_rate_ignores_barriers_and_volatility(baseline):
    other = baseline.with_updates(k_lower=0.5, h_upper=1.5, sigma=0.7)
    for q in (1.0, 0.3, 1e-5):
        assert p1_rate(0.2, at(q), baseline) == p1_rate(0.2, at(q), other)


def test_p1_inventory(baseline):
    assert p1_inventory(0.0, baseline) == 1.0
    assert p1_inventory(0.02, baseline) == pytest.approx(math.exp(-1.99), rel=1e-12)
    assert p1_inventory(0.1, baseline) == pytest.approx(math.exp(-9.95), rel=1e-12)
    assert p1_inventory(0.1, baseline) == pytest.approx(4.78e-5, abs=1e-7)
    with pytest.raises(ValueError):
        p1_inventory(-0.1, baseline)


# -------------------------------
# P0
# -------------------------------
def test_p0_rate(baseline):
    assert p0_rate(0.0, at(1.0), baseline) == pytest.approx(0.199 / 0.201)
    q_end = p0_inventory(1.0, baseline)
    assert p0_rate(1.0, at(q_end, 1.0), baseline) == pytest.approx(0.990050, rel=1e-5)
    assert p0_rate(0.4, at(0.0, 0.4), baseline) == 0.0


def test_p0_rate_rejects_time_beyond_horizon(baseline):
    with pytest.raises(ValueError, match="beyond the horizon"):
        p0_rate(1.5, at(1.0, 1.5), baseline)


def test_p0_inventory(baseline):
    assert p0_inventory(0.0, baseline) == pytest.approx(1.0)
    assert p0_inventory(0.5, baseline) == pytest.approx(0.1015 / 0.201)
    assert p0_inventory(1.0, baseline) == pytest.approx(0.002 / 0.201)
    # linear in t
    t = np.linspace(0, 1, 11)
    assert np.allclose(np.diff(p0_inventory(t, baseline), 2), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        p0_inventory(1.1, baseline)


def test_p1_sells_faster_than_p0(baseline):
    for t in np.linspace(0, 1, 21):
        assert p1_rate(t, at(1.0, t), baseline) >= p0_rate(t, at(1.0, t), baseline)
    assert p1_rate(0.0, at(1.0), baseline) > p0_rate(0.0, at(1.0), baseline)
    assert p1_rate(1.0, at(1.0, 1.0), baseline) == pytest.approx(p0_rate(1.0, at(1.0, 1.0), baseline), rel=1e-12)


# -------------------------------
# Almgren-Chriss
# -------------------------------
def test_ac_coefficients(section5):
    coeffs = AcCoefficients.from_params(section5)
    assert coeffs.big_gamma == pytest.approx(3.162278, rel=1e-6)
    assert coeffs.zeta == pytest.approx((0.1 + math.sqrt(1e-7)) / (0.1 - math.sqrt(1e-7)), rel=1e-12)
    assert coeffs.zeta == pytest.approx(1.006345, abs=1e-6)
    assert not coeffs.degenerate


def test_ac_rate_at_horizon(section5):
    coeffs = AcCoefficients.from_params(section5)
    # Gamma (zeta + 1) / (zeta - 1) reduces to (gamma - b/2) / l
    assert ac_rate(1.0, at(1.0, 1.0), section5, coeffs) == pytest.approx(1000.0, rel=1e-9)


def test_ac_inventory(section5):
    coeffs = AcCoefficients.from_params(section5)
    assert ac_inventory(0.0, section5, coeffs) == pytest.approx(1.0)
    assert ac_inventory(1.0, section5, coeffs) == pytest.approx(2.672e-4, rel=2e-3)


def test_ac_rate_is_minus_inventory_slope(section5):
    coeffs = AcCoefficients.from_params(section5)
    h = 1e-6
    q = [ac_inventory(i * h, section5, coeffs) for i in range(3)]
    slope = (-3 * q[0] + 4 * q[1] - q[2]) / (2 * h)
    assert -slope == pytest.approx(ac_rate(0.0, at(1.0), section5, coeffs), rel=1e-6)


def test_ac_coefficients_undefined_for_large_penalty(baseline):
    with pytest.raises(ValueError, match="Almgren-Chriss"):
        AcCoefficients.from_params(baseline.with_updates(phi=10.0))


def test_ac_without_penalty_is_p0(baseline):
    coeffs = AcCoefficients.from_params(baseline)
    assert coeffs.degenerate
    for t in (0.0, 0.5, 1.0):
        assert ac_rate(t, at(0.7, t), baseline, coeffs) == p0_rate(t, at(0.7, t), baseline)
    assert ac_inventory(0.3, baseline, coeffs) == p0_inventory(0.3, baseline)


def test_ac_coefficients_are_built_once_per_params(section5, monkeypatch):
    built = []
    original = AcCoefficients.from_params

    def counting(params):
        built.append(params)
        return original(params)

    monkeypatch.setattr(AcCoefficients, "from_params", counting)
    ac_coefficients.cache_clear()
    strategy = AlmgrenChrissStrategy()
    rates = [strategy(i * 0.01, at(np.full(5, 0.5), i * 0.01), section5) for i in range(100)]
    ac_coefficients.cache_clear()
    assert len(built) == 1
    assert rates[0] == pytest.approx(ac_rate(0.0, at(np.full(5, 0.5)), section5, original(section5)))


# -------------------------------
# feedback rules reproduce their schedules
# -------------------------------
def _integrate(strategy, params, dt):
    n = int(round(params.t_max / dt))
    q = np.empty(n + 1)
    q[0] = params.q0
    for i in range(n):
        v = strategy(i * dt, at(q[i], i * dt), params)
        q[i + 1] = max(q[i] - v * dt, 0.0)
    return np.arange(n + 1) * dt, q


@pytest.mark.parametrize(
    "strategy, fixture",
    [(TargetStrategy(), "baseline"), (ClassicalStrategy(), "baseline"), (AlmgrenChrissStrategy(), "section5")],
)
def test_feedback_matches_schedule(strategy, fixture, request):
    params = request.getfixturevalue(fixture)
    t, q = _integrate(strategy, params, 2e-5)
    expected = analytic_schedule(strategy.label, params, t)["q"].to_numpy()
    assert np.max(np.abs(q - expected)) < 1e-3


def test_p1_feedback_error_is_first_order(baseline):
    # at dt = 1e-4 the exponential decay at rate 99.5 leaves an Euler error near 1.8e-3
    errors = []
    for dt in (1e-4, 5e-5):
        t, q = _integrate(TargetStrategy(), baseline, dt)
        errors.append(np.max(np.abs(q - p1_inventory(t, baseline))))
    assert errors[0] < 2.5e-3
    assert errors[0] / errors[1] == pytest.approx(2.0, rel=0.1)


# -------------------------------
# strategy objects
# -------------------------------
def test_rate_cap(baseline):
    capped = TargetStrategy().with_cap(10.0)
    assert capped(0.0, at(1.0), baseline) == 10.0
    rate, flags = capped.bounded_rate(0.0, MarketState(t=0.0, x=0.0, q=np.array([1.0, 0.01]), s=1.1), baseline)
    assert rate.tolist() == pytest.approx([10.0, 0.995])
    assert flags.tolist() == [True, False]
    with pytest.raises(ValueError):
        TargetStrategy().with_cap(0.0)


def test_trivial_strategies(baseline):
    assert ZeroStrategy()(0.0, at(1.0), baseline) == 0.0
    assert ConstantStrategy(value=0.25)(0.5, at(1.0), baseline) == 0.25


@pytest.mark.parametrize(
    "label, cls",
    [("p1", TargetStrategy), ("p1prime", TargetStrategy), ("P0", ClassicalStrategy), ("ac", AlmgrenChrissStrategy), ("zero", ZeroStrategy)],
)
def test_parse_strategy(label, cls):
    assert isinstance(parse_strategy(label), cls)


def test_parse_constant():
    s = parse_strategy("constant:0.5")
    assert isinstance(s, ConstantStrategy) and s.value == 0.5


@pytest.mark.parametrize("label", ["constant:abc", "constant:-1", "external:", "twap", "constant:nan"])
def test_parse_strategy_rejects(label):
    with pytest.raises(ValueError):
        parse_strategy(label)


def test_external_rate_table(tmp_path, baseline):
    path = tmp_path / "rates.csv"
    pd.DataFrame({"t": [1.0, 0.0], "v": [0.0, 2.0]}).to_csv(path, index=False)
    s = parse_strategy(f"external:{path}")
    assert isinstance(s, ExternalStrategy)
    assert s(0.25, at(1.0, 0.25), baseline) == pytest.approx(1.5)
    assert s(2.0, at(1.0, 2.0), baseline) == 0.0


def test_external_rate_table_validation(tmp_path):
    bad = tmp_path / "bad.csv"
    pd.DataFrame({"t": [0.0], "rate": [1.0]}).to_csv(bad, index=False)
    with pytest.raises(ValueError, match="lacks columns"):
        ExternalStrategy.from_csv(bad)
    negative = tmp_path / "neg.csv"
    pd.DataFrame({"t": [0.0, 1.0], "v": [1.0, -1.0]}).to_csv(negative, index=False)
    with pytest.raises(ValueError, match="negative"):
        ExternalStrategy.from_csv(negative)


def test_analytic_schedule_columns(baseline):
    table = analytic_schedule("p0", baseline, [0.0, 0.5, 1.0])
    assert list(table.columns) == ["t", "v", "q"]
    assert table["v"].to_numpy() == pytest.approx(np.full(3, 0.199 / 0.201))
    with pytest.raises(ValueError):
        analytic_schedule("zero", baseline, [0.0])
