"""Pass/fail checks of a reproduction run against the model's closed forms."""
from __future__ import annotations

import numpy as np

from .cost import Schedule, constant_rate_cost, cost_vs_risk_report, expected_cost
from .estimator import BucketStats, collapse_diagnostic, variance_plateau_slope
from .fit import bin_moments
from .model import ImpactModel, MarketParams, impact_r_squared

RECOVERY_TOL = {"y_const": 0.02, "phi0": 0.10, "a_fluct": 0.15}


def _check(name: str, passed: bool, **detail) -> dict:
    return {"name": name, "passed": bool(passed), **detail}


def variance_coverage(stats: BucketStats, sigma: float, model: ImpactModel, n_min: int = 50,
                      n_se: float = 5.0, within_bin: str = "loguniform") -> tuple[float, int]:
    """Fraction of cells whose sample variance lies within ``n_se`` standard
    errors of the model's cell variance, and the number of cells tested."""
    grid = stats.grid
    use = stats.n >= max(n_min, 2)
    i, j = np.nonzero(use)
    _, pred = bin_moments(grid.edges[i], grid.edges[i + 1], grid.durations[j], sigma, model, within_bin)
    z = (stats.variance[use] - pred) / stats.var_std_err[use]
    if z.size == 0:
        return float("nan"), 0
    return float(np.mean(np.abs(z) <= n_se)), int(z.size)


def cost_oracle_grid(market: MarketParams, model: ImpactModel, n_q: int = 10, n_t: int = 10):
    """Largest relative gap between quadrature and closed-form constant-rate cost
    on a 10 x 10 (Q, T) grid spanning about four decades of participation."""
    worst = 0.0
    for q in np.logspace(-4, -1, n_q) * market.daily_volume:
        for t in np.logspace(-1, 0, n_t):
            num = expected_cost(Schedule.constant_rate(float(q), float(t)), market, model)
            ref = constant_rate_cost(float(q), float(t), market, model)
            worst = max(worst, abs(num / ref - 1.0))
    return worst


def run_checks(stats: BucketStats, est: dict, fitted: ImpactModel | None, market: MarketParams,
               truth: ImpactModel | None) -> list[dict]:
    """All reproduction checks; ``est`` is the "estimate" config section."""
    out = []
    n_min = est["n_min"]
    tol = est["collapse_tol"]
    phi0 = truth.phi0 if truth is not None else (fitted.phi0 if fitted else 0.01)

    plateau = collapse_diagnostic(stats, est["phi_plateau"], "above", n_min)
    out.append(_check("collapse_square_root_regime", bool(plateau.bins) and plateau.max_spread < tol,
                      max_spread=plateau.max_spread if plateau.bins else None, bins=plateau.bins,
                      threshold=tol, status=plateau.status))
    linear = collapse_diagnostic(stats, est["phi_linear"], "below", n_min)
    out.append(_check("t_dependence_linear_regime",
                      bool(linear.bins) and min(linear.spread) > tol,
                      min_spread=min(linear.spread) if linear.bins else None, bins=linear.bins,
                      threshold=tol, status=linear.status))

    try:
        line = variance_plateau_slope(stats, est["q_over_v_plateau_max"], n_min)
        s2 = market.sigma**2
        out.append(_check("variance_plateau_linear_in_T",
                          abs(line.slope / s2 - 1) < 0.02 and abs(line.intercept / s2) < 0.02,
                          slope=line.slope, intercept=line.intercept, sigma_squared=s2,
                          r_squared=line.r_squared))
    except ValueError as exc:
        out.append(_check("variance_plateau_linear_in_T", False, status=str(exc)))

    if fitted is not None and truth is not None:
        errs = {p: getattr(fitted, p) / getattr(truth, p) - 1 for p in RECOVERY_TOL}
        out.append(_check("parameter_recovery", all(abs(errs[p]) < RECOVERY_TOL[p] for p in errs),
                          relative_error=errs, tolerance=RECOVERY_TOL))
    ref_model = truth or fitted
    if ref_model is not None:
        cov, n_cells = variance_coverage(stats, market.sigma, ref_model, n_min)
        out.append(_check("conditional_variance_formula", n_cells > 0 and cov >= 0.95,
                          coverage=cov, n_cells=n_cells))

    r2_model = ImpactModel(0.5, phi0, 0.1)
    r2 = impact_r_squared(0.01, r2_model)
    out.append(_check("impact_r_squared", r2 == 2.5e-3 and abs(np.sqrt(r2) - 0.05) < 1e-15,
                      r_squared=r2, volatility_share=float(np.sqrt(r2))))

    model = ref_model or ImpactModel()
    worst = cost_oracle_grid(market, model)
    out.append(_check("cost_closed_form", worst < 1e-6, max_relative_error=worst))

    rep = cost_vs_risk_report(Schedule.constant_rate(0.01 * market.daily_volume, 1.0), market, model)
    out.append(_check("impact_much_smaller_than_risk", rep.ratio < 0.03, ratio=rep.ratio))
    return out
