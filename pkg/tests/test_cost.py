import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impactlab.cost import (Schedule, ScheduleError, adaptive_gk, constant_rate_cost, cost_vs_risk_report,
                            expected_cost, expected_cost_detail)
from impactlab.model import DomainError, ImpactModel, MarketParams, OrderSpec, expected_impact

MARKET = MarketParams(0.02, 1e6)
MODEL = ImpactModel(0.5, 0.01, 0.1)
mp.mp.dps = 30


def mp_cost(schedule: Schedule, mode="elapsed", sigma=0.02, v=1e6, y=0.5, phi0=0.01):
    """Independent oracle: mpmath tanh-sinh quadrature of the cost integral."""
    total = mp.mpf(0)
    bp = schedule.breakpoints
    for (t0, q0), (t1, q1) in zip(bp[:-1], bp[1:]):
        rate = mp.mpf(q1 - q0) / (t1 - t0)
        if rate == 0:
            continue

        def f(t):
            q = q0 + rate * (t - t0)
            tau = t if mode == "elapsed" else mp.mpf(schedule.duration)
            phi = q / (v * tau)
            return rate * sigma * mp.sqrt(q / v) * y * mp.sqrt(phi / (phi + phi0))

        total += mp.quad(f, [t0, t1])
    return float(total)


def test_flat_schedule_costs_nothing():
    assert expected_cost(Schedule(0.0, 1.0, ((0, 0), (1.0, 0.0))), MARKET, MODEL) == 0.0


def test_constant_rate_example():
    oracle = 2 / 3 * 0.02 * 0.5 * math.sqrt(1 / 1.01) * 1e4 * 0.1
    assert oracle == pytest.approx(6.63358, abs=5e-6)
    got = expected_cost(Schedule.constant_rate(1e4, 0.01), MARKET, MODEL)
    assert got == pytest.approx(oracle, rel=1e-10)
    assert got == pytest.approx(mp_cost(Schedule.constant_rate(1e4, 0.01)), rel=1e-9)


def test_deep_plateau_two_thirds():
    q, t = 1e5, 1e-3  # phi = 100 = 10^4 phi0
    c = expected_cost(Schedule.constant_rate(q, t), MARKET, MODEL)
    assert c / (q * expected_impact(OrderSpec(1, q, t), MARKET, MODEL)) == pytest.approx(2 / 3, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.floats(1.0, 1e7), st.floats(1e-4, 5.0), st.floats(1e-3, 1.0))
def test_quadrature_matches_closed_form(q, t, phi0):
    model = ImpactModel(0.5, phi0, 0.1)
    got = expected_cost(Schedule.constant_rate(q, t), MARKET, model)
    assert got == pytest.approx(constant_rate_cost(q, t, MARKET, model), rel=1e-6)


SCHEDULES = [
    Schedule(1e4, 1.0, ((0, 0), (0.3, 1000), (0.5, 1000), (1.0, 1e4))),
    Schedule(5e4, 0.5, ((0, 0), (0.1, 0), (0.2, 2e4), (0.5, 5e4))),
    Schedule(2e3, 0.05, ((0, 0), (0.01, 1500), (0.05, 2e3))),
]


@pytest.mark.parametrize("schedule", SCHEDULES)
@pytest.mark.parametrize("mode", ["elapsed", "planned"])
def test_piecewise_against_independent_quadrature(schedule, mode):
    res = expected_cost_detail(schedule, MARKET, MODEL, duration_mode=mode)
    oracle = mp_cost(schedule, mode)
    assert res.value == pytest.approx(oracle, rel=1e-8)
    assert abs(res.value - oracle) <= max(res.error_bound, 1e-12 * oracle) * 10


@pytest.mark.parametrize("schedule", SCHEDULES)
def test_refinement_within_error_bound(schedule):
    coarse = expected_cost_detail(schedule, MARKET, MODEL)
    fine = expected_cost_detail(schedule, MARKET, MODEL, rel_tol=1e-13)
    assert abs(coarse.value - fine.value) <= coarse.error_bound + 1e-15 * fine.value


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6), st.floats(1.0, 1e6), st.floats(1.01, 3.0))
def test_cost_positive_and_increasing_in_size(increments, q, factor):
    inc = np.asarray(increments) + 1e-3
    times = np.linspace(0, 0.5, len(inc) + 1)
    fracs = np.concatenate([[0.0], np.cumsum(inc) / inc.sum()])
    fracs[-1] = 1.0

    def sched(total):
        return Schedule(total, 0.5, tuple(zip(times, fracs * total)))

    small, large = expected_cost(sched(q), MARKET, MODEL), expected_cost(sched(q * factor), MARKET, MODEL)
    assert small > 0
    assert large >= small


def test_zero_quantity_report():
    r = cost_vs_risk_report(Schedule(0.0, 0.25, ((0, 0), (0.25, 0.0))), MARKET, MODEL)
    assert (r.expected_cost_per_share, r.execution_risk, r.ratio) == (0.0, pytest.approx(0.01), 0.0)


def test_report_one_percent_of_daily_volume():
    r = cost_vs_risk_report(Schedule.constant_rate(1e4, 1.0), MARKET, MODEL)
    assert r.expected_cost_per_share == pytest.approx(2 / 3 * 7.0710678e-4, rel=1e-7)
    assert r.expected_cost_per_share == pytest.approx(4.714e-4, abs=5e-8)
    assert r.execution_risk == pytest.approx(0.02)
    assert r.ratio == pytest.approx(0.0236, abs=5e-5)


def test_doubling_duration_in_plateau():
    q, t = 1e5, 1e-3
    a = cost_vs_risk_report(Schedule.constant_rate(q, t), MARKET, MODEL)
    b = cost_vs_risk_report(Schedule.constant_rate(q, 2 * t), MARKET, MODEL)
    assert b.expected_cost_per_share == pytest.approx(a.expected_cost_per_share, rel=1e-3)
    assert b.execution_risk / a.execution_risk == pytest.approx(math.sqrt(2), rel=1e-12)


@pytest.mark.parametrize("bp, total, dur, match", [
    (((0, 0), (0.5, 10), (0.5, 20), (1, 30)), 30, 1.0, "breakpoint 2"),
    (((0, 0), (0.5, 10), (0.7, 5), (1, 30)), 30, 1.0, "breakpoint 2"),
    (((0, 1), (1, 30)), 30, 1.0, "breakpoint 0"),
    (((0, 0), (1, 29)), 30, 1.0, "breakpoint 1"),
    (((0, 0),), 30, 1.0, "two breakpoints"),
])
def test_schedule_validation(bp, total, dur, match):
    with pytest.raises(ScheduleError, match=match):
        Schedule(total, dur, bp)


def test_zero_duration_is_domain_error():
    with pytest.raises(DomainError):
        Schedule(0.0, 0.0, ((0, 0), (0, 0)))


def test_adaptive_gk_on_known_integral():
    val, err, n = adaptive_gk(lambda x: np.exp(-x) * np.cos(5 * x), 0.0, 10.0, rel_tol=1e-12)
    exact = float(mp.quad(lambda x: mp.exp(-x) * mp.cos(5 * x), [0, 10]))
    assert val == pytest.approx(exact, rel=1e-12)
    assert abs(val - exact) <= err + 1e-16
