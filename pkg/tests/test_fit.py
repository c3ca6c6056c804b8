import numpy as np
import pytest

from impactlab.estimator import BucketGrid, BucketStats, accumulate
from impactlab.fit import (DEFAULT_STARTS, FitError, InsufficientCellsError, _residuals, bin_moments, fit_model,
                           usable_cells)
from impactlab.model import ImpactModel
from impactlab.simulator import SimConfig, simulate_panel

TRUE = ImpactModel(0.5, 0.01, 0.1)
GRID = BucketGrid.log_spaced()


def noiseless_stats(model=TRUE, grid=GRID, n=10_000):
    """Cells whose mean and variance equal the model's predictions exactly."""
    e = grid.edges
    m, v = bin_moments(e[:-1, None], e[1:, None], grid.durations[None, :], 0.02, model)
    s = BucketStats.empty(grid)
    s.n[:] = n
    s.mean[:] = m
    s.m2[:] = v * (n - 1)
    return s


def test_noiseless_recovery():
    res = fit_model(noiseless_stats(), 0.02)
    for p in ("y_const", "phi0", "a_fluct"):
        assert getattr(res.model, p) == pytest.approx(getattr(TRUE, p), rel=1e-6)
    assert res.objective < 1e-8
    assert res.converged


def test_noiseless_recovery_center_mode():
    grid = GRID
    e = grid.edges
    m, v = bin_moments(e[:-1, None], e[1:, None], grid.durations[None, :], 0.02, TRUE, within_bin="center")
    s = noiseless_stats()
    s.mean[:] = m
    s.m2[:] = v * (s.n - 1)
    res = fit_model(s, 0.02, within_bin="center")
    assert res.model.phi0 == pytest.approx(0.01, rel=1e-6)


def test_bin_average_reduces_to_centre_for_narrow_bins():
    lo, hi = 1e-2, 1e-2 * (1 + 1e-9)
    m_bin, v_bin = bin_moments(lo, hi, 0.1, 0.02, TRUE)
    m_c, v_c = bin_moments(lo, hi, 0.1, 0.02, TRUE, within_bin="center")
    assert m_bin == pytest.approx(m_c, rel=1e-12) and v_bin == pytest.approx(v_c, rel=1e-12)


def test_monte_carlo_fit(default_stats):
    res = fit_model(default_stats, 0.02)
    assert abs(res.model.y_const / 0.5 - 1) < 0.02
    assert abs(res.model.a_fluct / 0.1 - 1) < 0.15
    # phi0 error consistent with its own standard error
    assert abs(res.model.phi0 - 0.01) < 3 * res.std_err["phi0"]
    # every documented start lands on the same minimum
    objs = np.array(res.start_objectives)
    assert len(objs) == len(DEFAULT_STARTS)
    assert np.ptp(objs) < 1e-6 * objs.min()
    assert 0.7 < res.objective / res.dof < 1.3


def test_truth_objective_within_noise_floor(default_stats):
    res = fit_model(default_stats, 0.02)
    r = _residuals(usable_cells(default_stats), 0.02, TRUE, "joint", "loguniform")
    # chi2 at the generator exceeds the minimum by ~chi2 with 3 dof
    excess = r @ r - res.objective
    assert 0 <= excess < 3 + 2 * np.sqrt(6)


def test_plateau_only_weak_phi0():
    cfg = SimConfig(n_orders=300_000, seed=17, q_over_v_range=(1e-3, 1e-1), t_buckets=(1e-5, 3e-5, 1e-4))
    grid = BucketGrid.log_spaced(1e-3, 1e-1, 10, cfg.t_buckets)
    stats = accumulate(grid, [simulate_panel(cfg)])
    res = fit_model(stats, 0.02)
    assert abs(res.model.y_const / 0.5 - 1) < 0.02
    assert "phi0" in res.weakly_identified
    assert res.std_err["log10_phi0"] > 1.0


def test_mean_only_mode_holds_a():
    res = fit_model(noiseless_stats(), 0.02, mode="mean", initial=ImpactModel(0.5, 0.01, 0.37))
    assert res.model.a_fluct == 0.37
    assert res.model.y_const == pytest.approx(0.5, rel=1e-6)


def test_insufficient_cells():
    s = noiseless_stats()
    s.n[:, :] = 0
    s.n[:3, :3] = 100
    with pytest.raises(InsufficientCellsError):
        fit_model(s, 0.02)
    s = noiseless_stats()
    s.n[3:, :] = 0
    with pytest.raises(InsufficientCellsError, match="decade"):
        fit_model(s, 0.02)


def test_non_convergence_carries_best():
    with pytest.raises(FitError) as info:
        fit_model(noiseless_stats(), 0.02, max_iter=5)
    assert info.value.best is not None
    assert np.isfinite(info.value.best.objective)
