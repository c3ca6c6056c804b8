"""impactlab command line: simulate | estimate | fit | cost | report.

Exit codes: 0 success, 1 usage or config error, 2 data or schema error,
3 numerical failure (non-convergence).
"""
from __future__ import annotations

import argparse
import contextlib
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .checks import run_checks
from .cost import QuadratureError, Schedule, ScheduleError, cost_vs_risk_report
from .dataio import (FILLS_COLUMNS, RowError, SchemaError, dump_json, read_curves, read_fills_blocks,
                     write_curves, write_fills)
from .estimator import (BucketStats, EstimationError, accumulate, collapse_diagnostic,
                        plateau_variances, line_fit)
from .fit import FitError, InsufficientCellsError, bin_moments, fit_model
from .model import DomainError, ImpactModel
from .simulator import ConfigError, iter_panel_chunks

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

FILLS = "fills.csv"
CURVES = "curves.csv"
DIAGNOSTICS = "diagnostics.json"
FIT = "fit.json"
COST = "cost_report.json"
REPORT_DIR = "report"
REPORT_FILES = ("left_panel.csv", "right_panel.csv", "inset.csv", "model_overlay.csv", "acceptance.json")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class Outputs:
    """Collects files in temporary names and renames them together on success."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.pending: list[tuple[Path, Path]] = []

    def open(self, name: str):
        final = self.dir / name
        final.parent.mkdir(parents=True, exist_ok=True)
        tmp = final.with_name(f".{final.name}.partial")
        self.pending.append((tmp, final))
        return open(tmp, "wb")

    def commit(self):
        for tmp, final in self.pending:
            os.replace(tmp, final)
        self.pending.clear()

    def discard(self):
        for tmp, _ in self.pending:
            with contextlib.suppress(FileNotFoundError):
                tmp.unlink()
        self.pending.clear()


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_json(outputs: Outputs, name: str, obj) -> None:
    with outputs.open(name) as fh:
        dump_json(obj, fh)


def cmd_simulate(cfg: dict, outputs: Outputs) -> None:
    sim = cfgmod.sim_config(cfg)
    t0 = time.perf_counter()
    with outputs.open(FILLS) as fh:
        n = write_fills(iter_panel_chunks(sim, int(cfg["threads"])), fh)
    dt = time.perf_counter() - t0
    _write_json(outputs, "simulate_config.json", cfgmod.provenance(cfg))
    _log(f"simulate: wrote {n} orders in {dt:.2f} s ({n / max(dt, 1e-9):,.0f} orders/s)")


def _estimate_stats(cfg: dict, fills: Path) -> BucketStats:
    grid = cfgmod.grid(cfg)
    with open(fills, "rb") as fh:
        return accumulate(grid, read_fills_blocks(fh), cfg["estimate"]["sigma_ref"], int(cfg["threads"]))


def diagnostics(stats: BucketStats, cfg: dict) -> dict:
    est = cfg["estimate"]
    n_min = est["n_min"]
    out = {"n_obs": stats.total, "out_of_range": stats.out_of_range,
           "n_cells_populated": int(np.sum(stats.n > 0)),
           "n_cells_usable": int(np.sum(stats.n >= n_min)),
           "status": "ok" if stats.total > 0 else "warning: no observations"}
    for key, thr, regime in (("collapse_square_root", est["phi_plateau"], "above"),
                             ("collapse_linear", est["phi_linear"], "below")):
        c = collapse_diagnostic(stats, thr, regime, n_min)
        out[key] = {"phi_threshold": thr, "regime": regime, "status": c.status,
                    "bins": c.bins, "spread": c.spread, "n_buckets": c.n_buckets}
    t, v = plateau_variances(stats, est["q_over_v_plateau_max"], n_min)
    plateau = {"q_over_v_max": est["q_over_v_plateau_max"], "durations": t, "variances": v}
    try:
        line = line_fit(t, v)
        plateau.update(status="ok", slope=line.slope, intercept=line.intercept,
                       r_squared=line.r_squared, degenerate=line.degenerate)
    except EstimationError as exc:
        plateau["status"] = str(exc)
    out["variance_plateau"] = plateau
    return out


def cmd_estimate(cfg: dict, outputs: Outputs, fills: Path) -> None:
    if not fills.exists():
        raise CliError(f"fills file not found: {fills}", EXIT_CONFIG)
    t0 = time.perf_counter()
    stats = _estimate_stats(cfg, fills)
    with outputs.open(CURVES) as fh:
        write_curves(stats, fh)
    diag = diagnostics(stats, cfg)
    _write_json(outputs, DIAGNOSTICS, diag)
    _write_json(outputs, "estimate_config.json", cfgmod.provenance(cfg))
    dt = time.perf_counter() - t0
    _log(f"estimate: {stats.total} records in {dt:.2f} s; out of range: {stats.out_of_range}; {diag['status']}")


def _is_fills(path: Path) -> bool:
    with open(path, encoding="utf-8") as fh:
        return tuple(h.strip() for h in fh.readline().strip().split(",")) == FILLS_COLUMNS


def _sigma_from_fills(path: Path) -> float | None:
    sig = set()
    with open(path, "rb") as fh:
        for block in read_fills_blocks(fh):
            sig.update(np.unique(block.sigma).tolist())
            if len(sig) > 1:
                return None
    return sig.pop() if sig else None


def cmd_fit(cfg: dict, outputs: Outputs, source: Path) -> None:
    if not source.exists():
        raise CliError(f"input not found: {source}", EXIT_CONFIG)
    sigma = cfg["market"]["sigma"]
    if _is_fills(source):
        stats = _estimate_stats(cfg, source)
        if cfg["estimate"]["sigma_ref"] is not None:
            sigma = cfg["estimate"]["sigma_ref"]
        else:
            sigma = _sigma_from_fills(source) or sigma
    else:
        with open(source, "rb") as fh:
            stats = read_curves(fh)
    f = cfg["fit"]
    result = fit_model(stats, sigma, mode=f["mode"], initial=cfgmod.model(cfg), n_min=f["n_min"],
                       within_bin=f["within_bin"])
    summary = result.to_dict()
    summary["sigma"] = sigma
    summary["input"] = source.name
    _write_json(outputs, FIT, summary)
    _write_json(outputs, "fit_config.json", cfgmod.provenance(cfg))
    p = summary["params"]
    _log(f"fit: Y={p['y_const']:.5g} phi0={p['phi0']:.5g} a={p['a_fluct']:.5g} "
         f"chi2/dof={summary['reduced_chi2']:.4g}")


def cmd_cost(cfg: dict, outputs: Outputs, schedule_path: Path) -> None:
    try:
        data = json.loads(schedule_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read schedule {schedule_path}: {exc}", EXIT_DATA) from None
    if not isinstance(data, dict):
        raise CliError("schedule must be a JSON object", EXIT_DATA)
    try:
        schedule = Schedule.from_dict(data)
    except ScheduleError as exc:
        raise CliError(f"invalid schedule: {exc}", EXIT_DATA) from None
    report = cost_vs_risk_report(schedule, cfgmod.market(cfg), cfgmod.model(cfg),
                                 cfg["cost"]["duration_mode"])
    _write_json(outputs, COST, report.to_dict())
    _write_json(outputs, "cost_config.json", cfgmod.provenance(cfg))
    _log(f"cost: per-share {report.expected_cost_per_share:.6g}, risk {report.execution_risk:.6g}, "
         f"ratio {report.ratio:.4g}")


def _panel_rows(stats: BucketStats, values: np.ndarray, errors: np.ndarray, n_min: int) -> str:
    grid = stats.grid
    buf = io.StringIO()
    for i, c in enumerate(grid.centers):
        for j, t in enumerate(grid.t_buckets):
            if stats.n[i, j] >= n_min:
                buf.write(f"{float(c)!r},{t!r},{int(stats.n[i, j])},{float(values[i, j])!r},"
                          f"{float(errors[i, j])!r}\n")
    return buf.getvalue()


def cmd_report(cfg: dict, outputs: Outputs, out_dir: Path) -> None:
    needed = [CURVES, DIAGNOSTICS, FIT]
    missing = [n for n in needed if not (out_dir / n).exists()]
    if missing:
        raise CliError("missing prerequisite artifacts: " + ", ".join(missing), EXIT_CONFIG)
    with open(out_dir / CURVES, "rb") as fh:
        stats = read_curves(fh)
    fit = json.loads((out_dir / FIT).read_text())
    sim_cfg_path = out_dir / "simulate_config.json"
    truth = None
    if sim_cfg_path.exists():
        truth = ImpactModel(**json.loads(sim_cfg_path.read_text())["model"])
    fitted = ImpactModel(**fit["params"])
    market = cfgmod.market(cfg)
    sigma = fit.get("sigma", market.sigma)
    n_min = cfg["estimate"]["n_min"]

    with outputs.open(f"{REPORT_DIR}/left_panel.csv") as fh:
        text = "q_over_v_bin_center,t_bucket_days,n_obs,mean_impact,std_err_mean\n"
        text += _panel_rows(stats, stats.mean, stats.std_err, n_min)
        fh.write(text.encode())
    with outputs.open(f"{REPORT_DIR}/right_panel.csv") as fh:
        text = "q_over_v_bin_center,t_bucket_days,n_obs,var_price_change,std_err_var\n"
        text += _panel_rows(stats, stats.variance, stats.var_std_err, n_min)
        fh.write(text.encode())
    t, v = plateau_variances(stats, cfg["estimate"]["q_over_v_plateau_max"], n_min)
    with outputs.open(f"{REPORT_DIR}/inset.csv") as fh:
        text = "t_bucket_days,plateau_variance,sigma_squared_t\n"
        text += "".join(f"{float(a)!r},{float(b)!r},{float(sigma**2 * a)!r}\n" for a, b in zip(t, v))
        fh.write(text.encode())

    grid = stats.grid
    e = grid.edges
    with outputs.open(f"{REPORT_DIR}/model_overlay.csv") as fh:
        buf = io.StringIO()
        buf.write("q_over_v_bin_center,t_bucket_days,fitted_mean_impact,fitted_variance,"
                  "center_mean_impact,center_variance\n")
        for j, td in enumerate(grid.t_buckets):
            m_bin, v_bin = bin_moments(e[:-1], e[1:], td, sigma, fitted)
            m_c, v_c = bin_moments(e[:-1], e[1:], td, sigma, fitted, within_bin="center")
            for i, c in enumerate(grid.centers):
                buf.write(f"{float(c)!r},{td!r},{float(m_bin[i])!r},{float(v_bin[i])!r},"
                          f"{float(m_c[i])!r},{float(v_c[i])!r}\n")
        fh.write(buf.getvalue().encode())

    checks = run_checks(stats, cfg["estimate"], fitted, market.__class__(sigma, market.daily_volume), truth)
    _write_json(outputs, f"{REPORT_DIR}/acceptance.json",
                {"all_passed": all(c["passed"] for c in checks), "checks": checks})
    for c in checks:
        _log(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}")


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=d, help="unsigned 64-bit seed")
    parser.add_argument("--threads", type=int, default=d,
                        help="worker threads (default: $IMPACTLAB_THREADS or CPU count)")
    parser.add_argument("--out", default=d, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impactlab", description=__doc__.splitlines()[0])
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic fills panel")
    _global_options(p, True)
    p.add_argument("--n-orders", type=int)

    p = sub.add_parser("estimate", help="bucket fills into impact and variance curves")
    _global_options(p, True)
    p.add_argument("--fills", help="fills CSV (default: OUT/fills.csv)")
    p.add_argument("--n-bins", type=int)
    p.add_argument("--sigma-ref", type=float, help="rescale each price change to this volatility")

    p = sub.add_parser("fit", help="fit (Y, phi0, a) to curves or fills")
    _global_options(p, True)
    p.add_argument("input", nargs="?", help="curves or fills CSV (default: OUT/curves.csv)")
    p.add_argument("--mode", choices=["joint", "mean", "variance"])
    p.add_argument("--within-bin", choices=["loguniform", "center"])

    p = sub.add_parser("cost", help="expected cost and execution risk of a schedule")
    _global_options(p, True)
    p.add_argument("schedule", help="schedule JSON")
    p.add_argument("--duration-mode", choices=["elapsed", "planned"])

    p = sub.add_parser("report", help="assemble the reproduction bundle")
    _global_options(p, True)

    for p in sub.choices.values():
        p.add_argument("--sigma", type=float)
        p.add_argument("--daily-volume", type=float)
        p.add_argument("--y", type=float, dest="y_const")
        p.add_argument("--phi0", type=float)
        p.add_argument("--a", type=float, dest="a_fluct")
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    ov = {
        "seed": args.seed, "threads": args.threads, "out": args.out,
        "market.sigma": args.sigma, "market.daily_volume": args.daily_volume,
        "model.y_const": args.y_const, "model.phi0": args.phi0, "model.a_fluct": args.a_fluct,
        "sim.n_orders": getattr(args, "n_orders", None),
        "grid.n_bins": getattr(args, "n_bins", None),
        "estimate.sigma_ref": getattr(args, "sigma_ref", None),
        "fit.mode": getattr(args, "mode", None),
        "fit.within_bin": getattr(args, "within_bin", None),
        "cost.duration_mode": getattr(args, "duration_mode", None),
    }
    cfg = cfgmod.load(args.config, ov)
    # build every typed view once so config errors surface before any output
    cfgmod.market(cfg)
    cfgmod.model(cfg)
    cfgmod.grid(cfg)
    if args.command == "simulate":
        cfgmod.sim_config(cfg)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = _resolve(args)
    except (cfgmod.ConfigFileError, ConfigError, DomainError, EstimationError, TypeError,
            ValueError, KeyError) as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG

    out_dir = Path(cfg["out"])
    outputs = Outputs(out_dir)
    try:
        if args.command == "simulate":
            cmd_simulate(cfg, outputs)
        elif args.command == "estimate":
            cmd_estimate(cfg, outputs, Path(args.fills) if args.fills else out_dir / FILLS)
        elif args.command == "fit":
            cmd_fit(cfg, outputs, Path(args.input) if args.input else out_dir / CURVES)
        elif args.command == "cost":
            cmd_cost(cfg, outputs, Path(args.schedule))
        elif args.command == "report":
            cmd_report(cfg, outputs, out_dir)
        outputs.commit()
        return EXIT_OK
    except CliError as exc:
        _log(f"error: {exc}")
        code = exc.code
    except (SchemaError, RowError) as exc:
        _log(f"data error: {exc}")
        code = EXIT_DATA
    except InsufficientCellsError as exc:
        _log(f"data error: {exc}")
        code = EXIT_DATA
    except (FitError, QuadratureError) as exc:
        _log(f"numerical error: {exc}")
        code = EXIT_NUMERIC
    except (DomainError, EstimationError) as exc:
        _log(f"data error: {exc}")
        code = EXIT_DATA
    outputs.discard()
    return code


if __name__ == "__main__":
    sys.exit(main())
