"""Expected impact cost of an execution schedule and its execution risk.

The cost overhead is C = int_0^T Qdot(t) I(Q(t), tau(t)) dt along a
piecewise-linear trajectory. By default tau(t) = t, the elapsed time, so the
participation seen at time t is Q(t) / (V t); ``duration_mode="planned"``
uses the full planned duration T instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import DomainError, ImpactModel, MarketParams, execution_risk, impact_curve, scaling_function

REL_TOL = 1e-8
DURATION_MODES = ("elapsed", "planned")

# Gauss-Kronrod 7/15 nodes and weights on [-1, 1]
_XK = np.array([
    -0.991455371120812639206854697526329, -0.949107912342758524526189684047851,
    -0.864864423359769072789712788640926, -0.741531185599394439863864773280788,
    -0.586087235467691130294144845693013, -0.405845151377397166906606412076961,
    -0.207784955007898467600689403773245, 0.0,
    0.207784955007898467600689403773245, 0.405845151377397166906606412076961,
    0.586087235467691130294144845693013, 0.741531185599394439863864773280788,
    0.864864423359769072789712788640926, 0.949107912342758524526189684047851,
    0.991455371120812639206854697526329])
_WK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
    0.204432940075298892414161999234649, 0.190350578064785409913256402421014,
    0.169004726639267902826583426598550, 0.140653259715525918745189590510238,
    0.104790010322250183839876322541518, 0.063092092629978553290700663189204,
    0.022935322010529224963732008058970])
_WG = np.zeros(15)
_WG[1::2] = [0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
             0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
             0.381830050505118944950369775488975, 0.279705391489276667901467771423780,
             0.129484966168869693270611432679082]


class ScheduleError(DomainError):
    pass


class QuadratureError(ArithmeticError):
    def __init__(self, estimate: float, error_bound: float, message: str):
        super().__init__(f"{message} (estimate {estimate!r}, error bound {error_bound!r})")
        self.estimate = estimate
        self.error_bound = error_bound


@dataclass(frozen=True)
class Schedule:
    """Piecewise-linear cumulative execution Q(t) on [0, T] from breakpoints (t, Q)."""

    total_quantity: float
    duration: float
    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ScheduleError(f"duration must be > 0, got {self.duration!r}")
        if not (math.isfinite(self.total_quantity) and self.total_quantity >= 0):
            raise ScheduleError(f"total_quantity must be >= 0, got {self.total_quantity!r}")
        bp = tuple((float(t), float(q)) for t, q in self.breakpoints)
        object.__setattr__(self, "breakpoints", bp)
        if len(bp) < 2:
            raise ScheduleError("need at least two breakpoints")
        for k, (t, q) in enumerate(bp):
            if not (math.isfinite(t) and math.isfinite(q)):
                raise ScheduleError(f"breakpoint {k}: non-finite value {(t, q)!r}")
            if k and t <= bp[k - 1][0]:
                raise ScheduleError(f"breakpoint {k}: times must be strictly increasing")
            if k and q < bp[k - 1][1]:
                raise ScheduleError(f"breakpoint {k}: Q(t) must be nondecreasing")
        if bp[0] != (0.0, 0.0):
            raise ScheduleError(f"breakpoint 0: must be (0, 0), got {bp[0]!r}")
        if bp[-1] != (self.duration, self.total_quantity):
            raise ScheduleError(f"breakpoint {len(bp) - 1}: must be (T, Q) = "
                                f"{(self.duration, self.total_quantity)!r}, got {bp[-1]!r}")

    @classmethod
    def constant_rate(cls, quantity: float, duration: float) -> "Schedule":
        return cls(quantity, duration, ((0.0, 0.0), (duration, quantity)))

    @classmethod
    def from_dict(cls, data: dict) -> "Schedule":
        try:
            return cls(float(data["total_quantity"]), float(data["duration_days"]),
                       tuple(tuple(p) for p in data["breakpoints"]))
        except (KeyError, TypeError) as exc:
            raise ScheduleError(f"malformed schedule: {exc}") from None

    def to_dict(self) -> dict:
        return {"total_quantity": self.total_quantity, "duration_days": self.duration,
                "breakpoints": [list(p) for p in self.breakpoints]}


@dataclass
class CostResult:
    value: float
    error_bound: float
    n_panels: int


def _gk15(f, a: float, b: float) -> tuple[float, float]:
    half = 0.5 * (b - a)
    fx = f(0.5 * (a + b) + half * _XK)
    k = half * float(_WK @ fx)
    g = half * float(_WG @ fx)
    return k, abs(k - g)


def adaptive_gk(f, a: float, b: float, rel_tol: float = REL_TOL, abs_tol: float = 0.0,
                max_panels: int = 2000) -> tuple[float, float, int]:
    """Globally adaptive Gauss-Kronrod (7, 15) quadrature of a vectorised ``f``.

    Bisects the panel with the largest error estimate until the summed
    estimate meets max(abs_tol, rel_tol * |integral|). Returns
    (integral, error bound, number of panels).
    """
    panels = [(a, b, *_gk15(f, a, b))]
    while True:
        total = math.fsum(p[2] for p in panels)
        err = math.fsum(p[3] for p in panels)
        if err <= max(abs_tol, rel_tol * abs(total)):
            return total, err, len(panels)
        if len(panels) >= max_panels:
            raise QuadratureError(total, err, f"error target not met with {max_panels} panels")
        k = max(range(len(panels)), key=lambda i: panels[i][3])
        lo, hi, _, _ = panels.pop(k)
        mid = 0.5 * (lo + hi)
        panels.append((lo, mid, *_gk15(f, lo, mid)))
        panels.append((mid, hi, *_gk15(f, mid, hi)))
        panels.sort(key=lambda p: p[0])


def expected_cost_detail(schedule: Schedule, market: MarketParams, model: ImpactModel,
                         duration_mode: str = "elapsed", rel_tol: float = REL_TOL) -> CostResult:
    if duration_mode not in DURATION_MODES:
        raise ValueError(f"duration_mode must be one of {DURATION_MODES}")
    sigma, volume, T = market.sigma, market.daily_volume, schedule.duration
    total_val, total_err, n_panels = [], [], 0
    bp = schedule.breakpoints
    for (t0, q0), (t1, q1) in zip(bp[:-1], bp[1:]):
        rate = (q1 - q0) / (t1 - t0)
        if rate == 0.0:
            continue

        def integrand(t, t0=t0, q0=q0, rate=rate):
            q = q0 + rate * (t - t0)
            tau = t if duration_mode == "elapsed" else T
            return rate * impact_curve(q / volume, tau, sigma, model)

        if t0 == 0.0:
            # sqrt(t) endpoint behaviour: integrate over u = sqrt(t), dt = 2u du
            g = lambda u: 2.0 * u * integrand(u * u)
            a, b = 0.0, math.sqrt(t1)
        else:
            g, a, b = integrand, t0, t1
        val, err, n = adaptive_gk(g, a, b, rel_tol=0.1 * rel_tol)
        total_val.append(val)
        total_err.append(err)
        n_panels += n
    value = math.fsum(total_val)
    bound = math.fsum(total_err)
    if bound > rel_tol * abs(value) and value != 0:
        raise QuadratureError(value, bound, f"relative accuracy {rel_tol:g} not reached")
    return CostResult(value, bound, n_panels)


def expected_cost(schedule: Schedule, market: MarketParams, model: ImpactModel,
                  duration_mode: str = "elapsed") -> float:
    """Average impact-cost overhead, in log-price x shares."""
    return expected_cost_detail(schedule, market, model, duration_mode).value


def constant_rate_cost(quantity: float, duration: float, market: MarketParams, model: ImpactModel) -> float:
    """Closed form for Q(t) = Q t / T: C = (2/3) sigma F(Q/(VT)) Q sqrt(Q/V)."""
    phi = quantity / (market.daily_volume * duration)
    return (2.0 / 3.0) * market.sigma * scaling_function(phi, model) * quantity * math.sqrt(
        quantity / market.daily_volume)


@dataclass(frozen=True)
class CostReport:
    expected_cost_per_share: float
    execution_risk: float
    ratio: float

    def to_dict(self) -> dict:
        return {"expected_cost_per_share": self.expected_cost_per_share,
                "execution_risk": self.execution_risk, "ratio": self.ratio}


def cost_vs_risk_report(schedule: Schedule, market: MarketParams, model: ImpactModel,
                        duration_mode: str = "elapsed") -> CostReport:
    risk = execution_risk(schedule.duration, market)
    if schedule.total_quantity == 0:
        return CostReport(0.0, risk, 0.0)
    per_share = expected_cost(schedule, market, model, duration_mode) / schedule.total_quantity
    return CostReport(per_share, risk, per_share / risk)
