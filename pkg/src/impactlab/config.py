"""Run configuration: nested JSON sections with command-line overrides."""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .estimator import BucketGrid
from .model import ImpactModel, MarketParams
from .simulator import DEFAULT_T_BUCKETS, SimConfig

DEFAULTS = {
    "seed": 0,
    "threads": None,
    "out": "out",
    "market": {"sigma": 0.02, "daily_volume": 1e6},
    "model": {"y_const": 0.5, "phi0": 0.01, "a_fluct": 0.1},
    "sim": {
        "n_orders": 1_000_000,
        "q_over_v_range": [1e-5, 1e-1],
        "t_buckets": list(DEFAULT_T_BUCKETS),
        "t_weights": None,
        "noise_kind": "normal",
    },
    # t_buckets None means "same as sim.t_buckets"
    "grid": {"q_over_v_range": [1e-5, 1e-1], "n_bins": 20, "t_buckets": None, "t_rel_tol": 1e-6},
    "estimate": {
        "n_min": 50,
        "sigma_ref": None,
        "phi_plateau": 10.0,
        "phi_linear": 1e-4,
        "q_over_v_plateau_max": 1e-4,
        "collapse_tol": 0.05,
    },
    "fit": {"mode": "joint", "within_bin": "loguniform", "n_min": 50},
    "cost": {"duration_mode": "elapsed"},
}


class ConfigFileError(ValueError):
    pass


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in out:
            raise ConfigFileError(f"unknown config key {path}{key!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigFileError(f"config key {path}{key!r} must be an object")
            out[key] = _merge(out[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def load(path: str | os.PathLike | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file, then flag overrides (dotted keys)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            cfg = _merge(cfg, json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigFileError(f"cannot read config {path}: {exc}") from None
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    if cfg["threads"] is None:
        env = os.environ.get("IMPACTLAB_THREADS")
        try:
            cfg["threads"] = int(env) if env else (os.cpu_count() or 1)
        except ValueError:
            raise ConfigFileError(f"IMPACTLAB_THREADS must be an integer, got {env!r}") from None
    if int(cfg["threads"]) < 1:
        raise ConfigFileError(f"threads must be >= 1, got {cfg['threads']}")
    return cfg


def market(cfg: dict) -> MarketParams:
    return MarketParams(**cfg["market"])


def model(cfg: dict) -> ImpactModel:
    return ImpactModel(**cfg["model"])


def sim_config(cfg: dict) -> SimConfig:
    s = cfg["sim"]
    return SimConfig(
        n_orders=s["n_orders"],
        seed=int(cfg["seed"]),
        market=market(cfg),
        model=model(cfg),
        q_over_v_range=tuple(s["q_over_v_range"]),
        t_buckets=tuple(s["t_buckets"]),
        t_weights=None if s["t_weights"] is None else tuple(s["t_weights"]),
        noise_kind=s["noise_kind"],
    )


def grid(cfg: dict) -> BucketGrid:
    g = cfg["grid"]
    lo, hi = g["q_over_v_range"]
    t = g["t_buckets"] if g["t_buckets"] is not None else cfg["sim"]["t_buckets"]
    return BucketGrid.log_spaced(lo, hi, int(g["n_bins"]), t, g["t_rel_tol"])


def provenance(cfg: dict) -> dict:
    """The resolved config as echoed to disk. Thread count and output directory
    are left out: neither changes any result."""
    out = copy.deepcopy(cfg)
    out.pop("threads", None)
    out.pop("out", None)
    return out
