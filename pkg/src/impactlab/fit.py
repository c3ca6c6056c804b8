"""Weighted least-squares fit of (Y, phi0, a) to bucketed impact and variance curves.

Model predictions are averaged over each Q/V bin assuming log-uniform
occupancy inside the bin, so the predicted cell variance includes the spread
of the mean impact across the bin. ``within_bin="center"`` evaluates the
closed forms at the geometric bin centre instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .estimator import N_MIN, BucketStats, EstimationError
from .model import ImpactModel, impact_curve, variance_curve

PARAMS = ("y_const", "phi0", "a_fluct")
MODES = {"joint": PARAMS, "mean": ("y_const", "phi0"), "variance": ("a_fluct",)}

# the three documented restarts
DEFAULT_STARTS = (
    ImpactModel(0.5, 0.01, 0.1),
    ImpactModel(1.0, 0.001, 0.3),
    ImpactModel(0.25, 0.1, 0.03),
)
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(16)
WEAK_LOG10_SE = 1.0


class FitError(EstimationError):
    def __init__(self, message: str, best: "FitResult | None" = None):
        super().__init__(message)
        self.best = best


class InsufficientCellsError(FitError):
    pass


@dataclass
class FitResult:
    model: ImpactModel
    std_err: dict
    objective: float
    n_cells: int
    dof: int
    mode: str
    converged: bool
    n_iterations: int
    n_evaluations: int
    weakly_identified: list = field(default_factory=list)
    start_objectives: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "params": {p: getattr(self.model, p) for p in PARAMS},
            "std_err": dict(self.std_err),
            "objective": self.objective,
            "reduced_chi2": self.objective / self.dof if self.dof > 0 else None,
            "n_cells": self.n_cells,
            "dof": self.dof,
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "n_evaluations": self.n_evaluations,
            "weakly_identified": list(self.weakly_identified),
            "start_objectives": list(self.start_objectives),
        }


def bin_moments(lo, hi, duration, sigma: float, model: ImpactModel, within_bin: str = "loguniform"):
    """Cell-level (mean, variance) of eps*dp implied by the model.

    ``lo``, ``hi`` and ``duration`` broadcast against each other.
    """
    lo, hi, t = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float),
                                    np.asarray(duration, float))
    if within_bin == "center":
        x = np.sqrt(lo * hi)
        return impact_curve(x, t, sigma, model), variance_curve(x, t, sigma, model)
    if within_bin != "loguniform":
        raise ValueError(f"unknown within_bin mode {within_bin!r}")
    llo, lhi = np.log(lo)[..., None], np.log(hi)[..., None]
    x = np.exp(0.5 * (llo + lhi) + 0.5 * (lhi - llo) * _NODES)
    w = 0.5 * _WEIGHTS
    tt = t[..., None]
    imp = impact_curve(x, tt, sigma, model)
    m1 = np.sum(w * imp, axis=-1)
    m2 = np.sum(w * imp * imp, axis=-1)
    cv = np.sum(w * variance_curve(x, tt, sigma, model), axis=-1)
    return m1, cv + np.maximum(m2 - m1 * m1, 0.0)


@dataclass
class _Cells:
    lo: np.ndarray
    hi: np.ndarray
    t: np.ndarray
    mean: np.ndarray
    mean_se: np.ndarray
    var: np.ndarray
    var_se: np.ndarray


def usable_cells(stats: BucketStats, n_min: int = N_MIN) -> _Cells:
    grid = stats.grid
    use = stats.n >= max(n_min, 2)
    i, j = np.nonzero(use)
    e = grid.edges
    return _Cells(e[i], e[i + 1], grid.durations[j], stats.mean[use], stats.std_err[use],
                  stats.variance[use], stats.var_std_err[use])


def _residuals(cells: _Cells, sigma: float, model: ImpactModel, mode: str, within_bin: str):
    m, v = bin_moments(cells.lo, cells.hi, cells.t, sigma, model, within_bin)
    parts = []
    if mode in ("joint", "mean"):
        parts.append((cells.mean - m) / cells.mean_se)
    if mode in ("joint", "variance"):
        parts.append((cells.var - v) / cells.var_se)
    return np.concatenate(parts)


def _build(theta: np.ndarray, free: tuple, base: ImpactModel) -> ImpactModel:
    kw = {p: getattr(base, p) for p in PARAMS}
    for p, val in zip(free, np.exp(theta)):
        kw[p] = float(val)
    return ImpactModel(**kw)


def fit_model(stats: BucketStats, sigma: float, mode: str = "joint", initial: ImpactModel | None = None,
              starts=DEFAULT_STARTS, n_min: int = N_MIN, within_bin: str = "loguniform",
              max_iter: int = 20000, xatol: float = 1e-10) -> FitResult:
    """Minimise the inverse-variance-weighted squared residuals of the cell means
    and cell variances over log-parameters, by Nelder-Mead from every start.

    Parameters not fitted in ``mode`` are held at their values in ``initial``.
    Raises :class:`FitError` for fewer than 10 usable cells, less than a decade
    of Q/V coverage, or if no start converges.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {sorted(MODES)}")
    cells = usable_cells(stats, n_min)
    if cells.t.size < 10:
        raise InsufficientCellsError(f"need >= 10 cells with n >= {n_min}, found {cells.t.size}")
    centers = np.sqrt(cells.lo * cells.hi)
    if centers.max() / centers.min() < 10.0:
        raise InsufficientCellsError("usable cells span less than one decade of Q/V")

    free = MODES[mode]
    base = initial or DEFAULT_STARTS[0]

    def objective(theta):
        if not np.all(np.isfinite(theta)) or np.any(np.abs(theta) > 700):
            return math.inf
        r = _residuals(cells, sigma, _build(theta, free, base), mode, within_bin)
        return float(r @ r)

    best = None
    start_objs = []
    n_it = n_ev = 0
    seen = set()
    for start in starts:
        s = {p: getattr(base, p) for p in PARAMS}
        s.update({p: getattr(start, p) for p in free})
        theta0 = np.log([s[p] for p in free])
        if tuple(theta0) in seen:
            continue
        seen.add(tuple(theta0))
        res, it, ev = _polish(objective, theta0, max_iter, xatol)
        n_it += it
        n_ev += ev
        start_objs.append(float(res.fun))
        if best is None or res.fun < best.fun:
            best = res

    model = _build(best.x, free, base)
    n_resid = cells.t.size * (2 if mode == "joint" else 1)
    se, weak = _standard_errors(cells, sigma, model, free, mode, within_bin)
    result = FitResult(model=model, std_err=se, objective=float(best.fun), n_cells=int(cells.t.size),
                       dof=n_resid - len(free), mode=mode, converged=bool(best.success),
                       n_iterations=n_it, n_evaluations=n_ev, weakly_identified=weak,
                       start_objectives=start_objs)
    if not best.success:
        raise FitError(f"Nelder-Mead did not converge within {max_iter} iterations", best=result)
    return result


def _polish(objective, theta0, max_iter: int, xatol: float):
    """Nelder-Mead with restarts from the incumbent until it stops improving."""
    it = ev = 0
    res = None
    theta = theta0
    for _ in range(10):
        r = minimize(objective, theta, method="Nelder-Mead",
                     options={"maxiter": max_iter, "xatol": xatol, "fatol": 1e-9,
                              "adaptive": True, "initial_simplex": _simplex(theta)})
        it += r.nit
        ev += r.nfev
        improved = res is None or r.fun < res.fun * (1 - 1e-12) - 1e-300
        if res is None or r.fun <= res.fun:
            res = r
        if not improved or not r.success:
            break
        theta = r.x
    return res, it, ev


def _simplex(theta: np.ndarray, step: float = 0.3) -> np.ndarray:
    k = theta.size
    return np.vstack([theta] + [theta + step * np.eye(k)[i] for i in range(k)])


def _standard_errors(cells, sigma, model, free, mode, within_bin, h: float = 1e-4):
    """Standard errors from the Gauss-Newton covariance (J^T J)^-1 in log-space."""
    theta = np.log([getattr(model, p) for p in free])
    cols = []
    for i in range(theta.size):
        dp = np.zeros_like(theta)
        dp[i] = h
        rp = _residuals(cells, sigma, _build(theta + dp, free, model), mode, within_bin)
        rm = _residuals(cells, sigma, _build(theta - dp, free, model), mode, within_bin)
        cols.append((rp - rm) / (2 * h))
    jac = np.column_stack(cols)
    info = jac.T @ jac
    lam, vec = np.linalg.eigh(info)
    flat = lam <= 1e-12 * max(lam.max(), 1e-300)
    with np.errstate(divide="ignore"):
        inv_lam = np.where(flat, 0.0, 1.0 / np.where(flat, 1.0, lam))
    var = (vec**2) @ inv_lam
    # directions the data cannot see make every parameter loading on them unbounded
    unbounded = np.any((np.abs(vec) > 1e-6) & flat[None, :], axis=1)
    log_se = np.where(unbounded, np.inf, np.sqrt(np.maximum(var, 0.0)))
    se = {p: None for p in PARAMS}
    weak = []
    for p, s in zip(free, log_se):
        # delta method from log-space
        se[p] = float(getattr(model, p) * s)
        if s / math.log(10) > WEAK_LOG10_SE:
            weak.append(p)
    se.update({f"log10_{p}": float(s / math.log(10)) for p, s in zip(free, log_se)})
    return se, weak
