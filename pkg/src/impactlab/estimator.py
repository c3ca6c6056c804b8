"""Conditional bucketing of signed price changes on a (Q/V, T) grid.

Cells hold mergeable count / mean / centred-second-moment triples, so panels
can be accumulated in shards and combined with :func:`merge`.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .simulator import DEFAULT_T_BUCKETS, Panel

N_MIN = 50
T_REL_TOL = 1e-6


class EstimationError(ValueError):
    pass


class GridMismatchError(EstimationError):
    pass


@dataclass(frozen=True)
class BucketGrid:
    """Log-spaced Q/V bins crossed with discrete duration buckets.

    Q/V bins are left-closed and right-open except the last, which is closed.
    A duration joins the bucket it matches within ``t_rel_tol`` relative error.
    """

    q_over_v_edges: tuple[float, ...]
    t_buckets: tuple[float, ...]
    t_rel_tol: float = T_REL_TOL

    def __post_init__(self):
        e = np.asarray(self.q_over_v_edges, dtype=float)
        if e.size < 2 or not np.all(np.isfinite(e)) or e[0] <= 0 or np.any(np.diff(e) <= 0):
            raise EstimationError("q_over_v_edges needs >= 2 positive, strictly increasing values")
        t = np.asarray(self.t_buckets, dtype=float)
        if t.size == 0 or not np.all(np.isfinite(t)) or t[0] <= 0 or np.any(np.diff(t) <= 0):
            raise EstimationError("t_buckets must be nonempty, positive and strictly increasing")
        object.__setattr__(self, "q_over_v_edges", tuple(float(x) for x in e))
        object.__setattr__(self, "t_buckets", tuple(float(x) for x in t))

    @classmethod
    def log_spaced(cls, lo: float = 1e-5, hi: float = 1e-1, n_bins: int = 20,
                   t_buckets: Sequence[float] = DEFAULT_T_BUCKETS, t_rel_tol: float = T_REL_TOL):
        edges = np.logspace(math.log10(lo), math.log10(hi), n_bins + 1)
        edges[0], edges[-1] = lo, hi
        return cls(tuple(edges), tuple(sorted(t_buckets)), t_rel_tol)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.q_over_v_edges) - 1, len(self.t_buckets)

    @property
    def edges(self) -> np.ndarray:
        return np.asarray(self.q_over_v_edges)

    @property
    def durations(self) -> np.ndarray:
        return np.asarray(self.t_buckets)

    @property
    def centers(self) -> np.ndarray:
        """Geometric bin centres."""
        e = self.edges
        return np.sqrt(e[:-1] * e[1:])

    def locate(self, q_over_v: np.ndarray, duration: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cell indices per observation; -1 marks out-of-range."""
        e = self.edges
        qi = np.searchsorted(e, q_over_v, side="right") - 1
        qi[q_over_v == e[-1]] = len(e) - 2
        qi[(q_over_v < e[0]) | (q_over_v > e[-1]) | ~np.isfinite(q_over_v)] = -1

        t = self.durations
        j = np.clip(np.searchsorted(t, duration), 0, len(t) - 1)
        # nearest neighbour among the two bracketing buckets
        jm = np.clip(j - 1, 0, len(t) - 1)
        pick_left = np.abs(duration - t[jm]) < np.abs(duration - t[j])
        j = np.where(pick_left, jm, j)
        ok = np.abs(duration - t[j]) <= self.t_rel_tol * t[j]
        ti = np.where(ok, j, -1)
        return qi, ti


@dataclass
class BucketStats:
    """Per-cell count, mean and centred second moment of eps * dp."""

    grid: BucketGrid
    n: np.ndarray
    mean: np.ndarray
    m2: np.ndarray
    out_of_range: int = 0

    @classmethod
    def empty(cls, grid: BucketGrid) -> "BucketStats":
        return cls(grid, np.zeros(grid.shape, np.int64), np.zeros(grid.shape), np.zeros(grid.shape))

    @property
    def variance(self) -> np.ndarray:
        """Unbiased variance, NaN where n < 2."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.n >= 2, self.m2 / np.maximum(self.n - 1, 1), np.nan)

    @property
    def mean_or_nan(self) -> np.ndarray:
        return np.where(self.n >= 1, self.mean, np.nan)

    @property
    def std_err(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(self.variance / self.n)

    @property
    def var_std_err(self) -> np.ndarray:
        """Normal-theory standard error of the sample variance, s^2 sqrt(2/(n-1))."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.variance * np.sqrt(2.0 / (self.n - 1))

    @property
    def total(self) -> int:
        return int(self.n.sum())

    def copy(self) -> "BucketStats":
        return BucketStats(self.grid, self.n.copy(), self.mean.copy(), self.m2.copy(), self.out_of_range)


def merge(a: BucketStats, b: BucketStats) -> BucketStats:
    """Cellwise pooled statistics of two disjoint samples (Chan et al. update)."""
    if a.grid != b.grid:
        raise GridMismatchError("cannot merge statistics built on different grids")
    n = a.n + b.n
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = b.mean - a.mean
        wb = np.where(n > 0, b.n / np.maximum(n, 1), 0.0)
        mean = a.mean + delta * wb
        m2 = a.m2 + b.m2 + delta * delta * a.n * wb
    mean = np.where(n > 0, mean, 0.0)
    # keep exact copies where one side is empty
    mean = np.where(b.n == 0, a.mean, np.where(a.n == 0, b.mean, mean))
    m2 = np.where(b.n == 0, a.m2, np.where(a.n == 0, b.m2, m2))
    return BucketStats(a.grid, n, mean, m2, a.out_of_range + b.out_of_range)


def _accumulate_arrays(grid: BucketGrid, q_over_v: np.ndarray, duration: np.ndarray,
                       values: np.ndarray) -> BucketStats:
    qi, ti = grid.locate(q_over_v, duration)
    ok = (qi >= 0) & (ti >= 0) & np.isfinite(values)
    nq, nt = grid.shape
    flat = (qi * nt + ti)[ok]
    v = values[ok]
    size = nq * nt
    n = np.bincount(flat, minlength=size)
    s = np.bincount(flat, weights=v, minlength=size)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(n > 0, s / np.maximum(n, 1), 0.0)
    resid = v - mean[flat]
    m2 = np.bincount(flat, weights=resid * resid, minlength=size)
    return BucketStats(grid, n.reshape(nq, nt).astype(np.int64), mean.reshape(nq, nt),
                       m2.reshape(nq, nt), int((~ok).sum()))


def accumulate_panel(grid: BucketGrid, panel: Panel, sigma_ref: float | None = None) -> BucketStats:
    """Bucket one panel. With ``sigma_ref`` set, each price change is rescaled to a
    common volatility as ``dp * sigma_ref / sigma_row``."""
    values = panel.signed_change
    if sigma_ref is not None:
        values = values * (sigma_ref / panel.sigma)
    return _accumulate_arrays(grid, panel.q_over_v, panel.duration, values)


def accumulate(grid: BucketGrid, records: Iterable, sigma_ref: float | None = None,
               threads: int = 1) -> BucketStats:
    """Single pass over ``records`` (Panel chunks or MetaorderRecord objects).

    Chunk statistics are merged in input order so the result does not depend
    on ``threads``.
    """
    chunks = _as_panels(records)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(lambda p: accumulate_panel(grid, p, sigma_ref), chunks)
            out = BucketStats.empty(grid)
            for part in parts:
                out = merge(out, part)
            return out
    out = BucketStats.empty(grid)
    for p in chunks:
        out = merge(out, accumulate_panel(grid, p, sigma_ref))
    return out


def _as_panels(records: Iterable, batch: int = 1 << 16):
    if isinstance(records, Panel):
        yield records
        return
    pending = []
    for item in records:
        if isinstance(item, Panel):
            if pending:
                yield Panel.from_records(pending)
                pending = []
            yield item
        else:
            pending.append(item)
            if len(pending) >= batch:
                yield Panel.from_records(pending)
                pending = []
    if pending:
        yield Panel.from_records(pending)


@dataclass
class CollapseResult:
    status: str
    bins: list[int] = field(default_factory=list)
    spread: list[float] = field(default_factory=list)
    n_buckets: list[int] = field(default_factory=list)

    @property
    def max_spread(self) -> float:
        return max(self.spread) if self.spread else float("nan")


def collapse_diagnostic(stats: BucketStats, phi_threshold: float, regime: str = "above",
                        n_min: int = N_MIN) -> CollapseResult:
    """Largest relative gap between T-bucket mean impacts within each Q/V bin.

    A cell takes part when it holds at least ``n_min`` observations and its
    implied participation (bin centre / T) is >= ``phi_threshold`` (regime
    "above") or <= it (regime "below"). Bins with fewer than two such cells
    are skipped. Spread is max |m_i - m_j| / |pooled mean|.
    """
    if regime not in ("above", "below"):
        raise ValueError("regime must be 'above' or 'below'")
    grid = stats.grid
    phi = grid.centers[:, None] / grid.durations[None, :]
    in_regime = phi >= phi_threshold if regime == "above" else phi <= phi_threshold
    use = in_regime & (stats.n >= n_min)
    out = CollapseResult(status="ok")
    for i in range(grid.shape[0]):
        cols = np.flatnonzero(use[i])
        if cols.size < 2:
            continue
        m = stats.mean[i, cols]
        w = stats.n[i, cols]
        pooled = float(np.sum(m * w) / np.sum(w))
        gap = float(m.max() - m.min())
        out.bins.append(i)
        out.spread.append(gap / abs(pooled) if pooled != 0 else math.inf)
        out.n_buckets.append(int(cols.size))
    if not out.bins:
        out.status = (f"no Q/V bin has two or more T buckets with n >= {n_min} "
                      f"and phi {'>=' if regime == 'above' else '<='} {phi_threshold:g}")
    return out


@dataclass
class PlateauFit:
    slope: float
    intercept: float
    r_squared: float
    durations: np.ndarray
    variances: np.ndarray
    degenerate: bool = False


def plateau_variances(stats: BucketStats, q_over_v_max: float,
                      n_min: int = N_MIN) -> tuple[np.ndarray, np.ndarray]:
    """Pooled small-Q variance per T bucket, over bins lying wholly below ``q_over_v_max``.

    Only within-cell spread is pooled (sum of m2 over sum of n-1).
    """
    grid = stats.grid
    rows = grid.edges[1:] <= q_over_v_max * (1 + 1e-12)
    t_out, v_out = [], []
    for j, t in enumerate(grid.t_buckets):
        sel = rows & (stats.n[:, j] >= max(n_min, 2))
        dof = int(np.sum(stats.n[sel, j] - 1))
        if dof <= 0:
            continue
        t_out.append(t)
        v_out.append(float(np.sum(stats.m2[sel, j]) / dof))
    return np.asarray(t_out), np.asarray(v_out)


def line_fit(x: np.ndarray, y: np.ndarray) -> PlateauFit:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size < 2:
        raise EstimationError(f"need at least two plateau points, got {x.size}")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum((y - intercept - slope * x) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return PlateauFit(slope, intercept, r2, x, y, degenerate=x.size == 2)


def variance_plateau_slope(stats: BucketStats, q_over_v_max: float, n_min: int = N_MIN) -> PlateauFit:
    """Least-squares line of small-Q variance against T; the slope estimates sigma^2."""
    t, v = plateau_variances(stats, q_over_v_max, n_min)
    return line_fit(t, v)
