"""Exit criteria, each checked at its stated tolerance on synthetic data.

Run with ``pytest tests/test_acceptance.py``; the terminal summary lists one
PASS/FAIL line per criterion.
"""
import math
import time

import numpy as np
import pytest

from impactlab.checks import cost_oracle_grid, variance_coverage
from impactlab.cli import REPORT_DIR, REPORT_FILES, main
from impactlab.cost import Schedule, cost_vs_risk_report
from impactlab.estimator import BucketGrid, accumulate, collapse_diagnostic, variance_plateau_slope
from impactlab.fit import fit_model
from impactlab.model import ImpactModel, MarketParams, impact_r_squared
from impactlab.simulator import SimConfig, simulate_panel

TRUE = ImpactModel(0.5, 0.01, 0.1)
MARKET = MarketParams(0.02, 1e6)
GRID = BucketGrid.log_spaced()


@pytest.fixture(scope="module")
def single_thread_run():
    t0 = time.perf_counter()
    panel = simulate_panel(SimConfig(n_orders=1_000_000, seed=0), threads=1)
    stats = accumulate(GRID, [panel], threads=1)
    plateau = collapse_diagnostic(stats, 1e3 * TRUE.phi0, "above")
    linear = collapse_diagnostic(stats, 1e-2 * TRUE.phi0, "below")
    return stats, plateau, linear, time.perf_counter() - t0


def test_1_square_root_collapse(single_thread_run, criterion):
    _, plateau, linear, elapsed = single_thread_run
    ok = (bool(plateau.bins) and plateau.max_spread < 0.05 and bool(linear.bins)
          and min(linear.spread) > 0.05 and elapsed < 60)
    criterion("1. square-root regime T-collapse", ok,
              f"plateau max spread {plateau.max_spread:.4f} over bins {plateau.bins}; "
              f"linear min spread {min(linear.spread) if linear.spread else float('nan'):.3f}; {elapsed:.1f} s")
    assert plateau.bins and plateau.max_spread < 0.05
    assert linear.bins and min(linear.spread) > 0.05
    assert elapsed < 60


def test_2_variance_plateau_linear(single_thread_run, criterion):
    stats = single_thread_run[0]
    line = variance_plateau_slope(stats, 1e-4)
    s2 = MARKET.sigma**2
    slope_err, icpt = line.slope / s2 - 1, line.intercept / s2
    criterion("2. variance plateau linear in T", abs(slope_err) < 0.02 and abs(icpt) < 0.02,
              f"slope rel err {slope_err:+.4f}, intercept/sigma^2 {icpt:+.4f}")
    assert abs(slope_err) < 0.02
    assert abs(icpt) < 0.02


def test_3_parameter_recovery(criterion):
    tol = {"y_const": 0.02, "phi0": 0.10, "a_fluct": 0.15}
    rows, ok = [], True
    for seed in range(5):
        stats = accumulate(GRID, [simulate_panel(SimConfig(n_orders=1_000_000, seed=seed))])
        fitted = fit_model(stats, MARKET.sigma).model
        err = {p: getattr(fitted, p) / getattr(TRUE, p) - 1 for p in tol}
        ok &= all(abs(err[p]) < tol[p] for p in tol)
        rows.append(f"seed {seed}: " + ", ".join(f"{p} {err[p]:+.3f}" for p in tol))
    criterion("3. parameter recovery over 5 seeds", ok, "; ".join(rows))
    assert ok, "\n".join(rows)


def test_4_conditional_variance_formula(single_thread_run, criterion):
    stats = single_thread_run[0]
    # closed form at the bin centre, and averaged over the bin's Q/V spread
    at_center, n_cells = variance_coverage(stats, MARKET.sigma, TRUE, n_min=2, within_bin="center")
    bin_avg, _ = variance_coverage(stats, MARKET.sigma, TRUE, n_min=2, within_bin="loguniform")
    criterion("4. conditional variance formula", at_center >= 0.95 and bin_avg >= 0.95,
              f"{at_center:.1%} (centre) / {bin_avg:.1%} (bin-averaged) of {n_cells} cells within 5 SE")
    assert n_cells > 0
    assert at_center >= 0.95
    assert bin_avg >= 0.95


def test_5_r_squared(criterion):
    r2 = impact_r_squared(0.01, ImpactModel(y_const=0.5))
    share = math.sqrt(r2)
    ok = r2 == 2.5e-3 and abs(share - 0.05) <= 1e-15
    criterion("5. R^2 of the impact term", ok, f"R^2 = {r2!r}, volatility share = {share!r}")
    assert r2 == 2.5e-3
    assert share == pytest.approx(0.05, rel=1e-15)


def test_6_cost_closed_form(criterion):
    worst = cost_oracle_grid(MARKET, TRUE)
    criterion("6. constant-rate cost oracle", worst < 1e-6, f"max relative error {worst:.2e} over 100 (Q, T)")
    assert worst < 1e-6


def test_7_impact_much_smaller_than_risk(criterion):
    rep = cost_vs_risk_report(Schedule.constant_rate(0.01 * MARKET.daily_volume, 1.0), MARKET, TRUE)
    criterion("7. impact << risk", rep.ratio < 0.03, f"ratio {rep.ratio:.5f}")
    assert rep.ratio < 0.03


def _pipeline(out, threads: int) -> dict:
    timings = {}
    for cmd in ("simulate", "estimate", "fit", "report"):
        t0 = time.perf_counter()
        code = main([cmd, "--seed", "0", "--threads", str(threads), "--out", str(out)])
        timings[cmd] = time.perf_counter() - t0
        assert code == 0, cmd
    return timings


def _snapshot(out) -> dict:
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    base = tmp_path_factory.mktemp("pipelines")
    runs = {}
    for name, threads in (("t8", 8), ("t1", 1), ("t8_again", 8)):
        timings = _pipeline(base / name, threads)
        runs[name] = (base / name, timings)
    return runs


def test_8_determinism(pipelines, criterion):
    snaps = {k: _snapshot(v[0]) for k, v in pipelines.items()}
    same_threads = snaps["t8"] == snaps["t8_again"]
    across = snaps["t8"] == snaps["t1"]
    criterion("8. determinism and thread invariance", same_threads and across,
              f"{len(snaps['t8'])} files; repeat identical: {same_threads}; 1 vs 8 threads identical: {across}")
    assert set(snaps["t8"]) == set(snaps["t1"])
    assert same_threads and across


def test_9_performance(pipelines, criterion):
    timings = pipelines["t8"][1]
    elapsed = timings["simulate"] + timings["estimate"]
    criterion("9. simulate + estimate 10^6 orders < 10 s", elapsed < 10, f"{elapsed:.2f} s on 8 threads")
    assert elapsed < 10


def test_report_bundle(pipelines):
    import json

    out = pipelines["t8"][0] / REPORT_DIR
    assert sorted(p.name for p in out.iterdir()) == sorted(REPORT_FILES)
    result = json.loads((out / "acceptance.json").read_text())
    failed = [c["name"] for c in result["checks"] if not c["passed"]]
    assert result["all_passed"], f"failed checks: {failed}"
