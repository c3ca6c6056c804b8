"""Closed-form impact quantities: scaling function, expected impact, conditional
variance, execution risk and the explanatory power of the impact term.

Units: durations are fractions of a trading day, prices are log-prices and
``sigma`` is the daily volatility per sqrt(day).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# impact_r_squared stays strictly below one
R2_CEILING = 1.0 - 1e-12


class DomainError(ValueError):
    """An argument lies outside the domain of a model quantity."""


def _finite_positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class MarketParams:
    sigma: float = 0.02
    daily_volume: float = 1e6

    def __post_init__(self):
        _finite_positive("sigma", self.sigma)
        _finite_positive("daily_volume", self.daily_volume)


@dataclass(frozen=True)
class ImpactModel:
    """Parameters of the crossover impact law.

    ``y_const`` is the square-root plateau amplitude, ``phi0`` the participation
    at which the linear regime crosses over into the plateau and ``a_fluct``
    the relative amplitude of impact fluctuations.
    """

    y_const: float = 0.5
    phi0: float = 0.01
    a_fluct: float = 0.1

    def __post_init__(self):
        _finite_positive("y_const", self.y_const)
        _finite_positive("phi0", self.phi0)
        if not (math.isfinite(self.a_fluct) and self.a_fluct >= 0):
            raise DomainError(f"a_fluct must be finite and >= 0, got {self.a_fluct!r}")


@dataclass(frozen=True)
class OrderSpec:
    sign: int
    quantity: float
    duration: float

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise DomainError(f"sign must be +1 or -1, got {self.sign!r}")
        if not (math.isfinite(self.quantity) and self.quantity >= 0):
            raise DomainError(f"quantity must be finite and >= 0, got {self.quantity!r}")
        _finite_positive("duration", self.duration)

    def participation(self, market: MarketParams) -> float:
        return self.quantity / (market.daily_volume * self.duration)


def scaling_function(phi, model: ImpactModel):
    """F(phi) = Y * sqrt(phi / (phi + phi0)).

    Behaves as Y*sqrt(phi/phi0) for small participation and tends to Y for large
    participation. Accepts scalars or arrays.
    """
    phi_arr = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi_arr)) or np.any(phi_arr < 0):
        raise DomainError("phi must be finite and >= 0")
    out = model.y_const * np.sqrt(phi_arr / (phi_arr + model.phi0))
    return float(out) if out.ndim == 0 else out


def impact_curve(q_over_v, duration, sigma: float, model: ImpactModel):
    """Expected impact sigma*sqrt(Q/V)*F(Q/(V T)) on relative size and duration.

    Vectorised workhorse behind :func:`expected_impact`; no validation beyond
    what numpy broadcasting enforces.
    """
    x = np.asarray(q_over_v, dtype=float)
    phi = x / np.asarray(duration, dtype=float)
    return sigma * np.sqrt(x) * model.y_const * np.sqrt(phi / (phi + model.phi0))


def variance_curve(q_over_v, duration, sigma: float, model: ImpactModel):
    """sigma^2 T (1 + a^2 phi F(phi)^2), vectorised."""
    x = np.asarray(q_over_v, dtype=float)
    t = np.asarray(duration, dtype=float)
    phi = x / t
    f2 = model.y_const**2 * phi / (phi + model.phi0)
    return sigma**2 * t * (1.0 + model.a_fluct**2 * phi * f2)


def expected_impact(order: OrderSpec, market: MarketParams, model: ImpactModel) -> float:
    """Average signed log-price move I(Q, T) caused by executing ``order``."""
    if order.quantity == 0:
        return 0.0
    return float(impact_curve(order.quantity / market.daily_volume, order.duration,
                              market.sigma, model))


def conditional_variance(order: OrderSpec, market: MarketParams, model: ImpactModel) -> float:
    """Variance of the signed price change given (Q, T)."""
    return float(variance_curve(order.quantity / market.daily_volume, order.duration,
                                market.sigma, model))


def execution_risk(duration: float, market: MarketParams) -> float:
    if not (math.isfinite(duration) and duration >= 0):
        raise DomainError(f"duration must be finite and >= 0, got {duration!r}")
    return market.sigma * math.sqrt(duration)


def impact_r_squared(q_over_v: float, model: ImpactModel) -> float:
    """Share of the one-day price variance explained by plateau impact, Y^2 Q/V."""
    if not (math.isfinite(q_over_v) and q_over_v >= 0):
        raise DomainError(f"q_over_v must be finite and >= 0, got {q_over_v!r}")
    return min(model.y_const**2 * q_over_v, R2_CEILING)
