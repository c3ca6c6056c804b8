"""Synthetic metaorder panels drawn from the stochastic price-change ansatz

    dp = eps * I(Q, T) * (1 + a*eta) + sigma * sqrt(T) * xi

Every order is a pure function of ``(seed, order_id)``: its random inputs come
from a Philox counter stream keyed on the seed, positioned at a fixed offset
derived from the order id. Chunking and thread count therefore cannot change
the output.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.special import ndtri

from .model import DomainError, ImpactModel, MarketParams, OrderSpec, impact_curve

# uint64 words consumed per order; Philox emits 4 words per counter step
WORDS_PER_ORDER = 8
_STEPS_PER_ORDER = WORDS_PER_ORDER // 4
CHUNK_SIZE = 1 << 16

NOISE_KINDS = ("normal", "uniform", "rademacher")

DEFAULT_T_BUCKETS = (1 / 1024, 1 / 256, 1 / 64, 1 / 16, 1 / 4, 1.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_orders: int = 1_000_000
    seed: int = 0
    market: MarketParams = field(default_factory=MarketParams)
    model: ImpactModel = field(default_factory=ImpactModel)
    q_over_v_range: tuple[float, float] = (1e-5, 1e-1)
    t_buckets: tuple[float, ...] = DEFAULT_T_BUCKETS
    t_weights: tuple[float, ...] | None = None
    noise_kind: str = "normal"

    def __post_init__(self):
        if isinstance(self.n_orders, bool) or not isinstance(self.n_orders, (int, np.integer)):
            raise ConfigError(f"n_orders must be an integer, got {self.n_orders!r}")
        if self.n_orders < 1:
            raise ConfigError(f"n_orders must be >= 1, got {self.n_orders}")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        lo, hi = self.q_over_v_range
        if not (math.isfinite(lo) and math.isfinite(hi) and 0 < lo < hi):
            raise ConfigError(f"q_over_v_range must satisfy 0 < lo < hi, got {self.q_over_v_range!r}")
        if len(self.t_buckets) == 0:
            raise ConfigError("t_buckets must not be empty")
        if any(not (math.isfinite(t) and t > 0) for t in self.t_buckets):
            raise ConfigError(f"every duration must be > 0, got {self.t_buckets!r}")
        w = self.weights
        if len(w) != len(self.t_buckets):
            raise ConfigError("t_weights and t_buckets differ in length")
        if any(not (math.isfinite(x) and x >= 0) for x in w) or sum(w) <= 0:
            raise ConfigError(f"t_weights must be nonnegative and not all zero, got {w!r}")
        if self.noise_kind not in NOISE_KINDS:
            raise ConfigError(f"noise_kind must be one of {NOISE_KINDS}, got {self.noise_kind!r}")

    @property
    def weights(self) -> tuple[float, ...]:
        if self.t_weights is None:
            return (1.0,) * len(self.t_buckets)
        return tuple(self.t_weights)


@dataclass(frozen=True)
class MetaorderRecord:
    order_id: int
    sign: int
    quantity: float
    duration: float
    start_logprice: float
    end_logprice: float
    sigma: float
    daily_volume: float

    @property
    def price_change(self) -> float:
        return self.end_logprice - self.start_logprice


@dataclass
class Panel:
    """Column-oriented block of metaorder records (one array per field)."""

    order_id: np.ndarray
    sign: np.ndarray
    quantity: np.ndarray
    duration: np.ndarray
    start_logprice: np.ndarray
    end_logprice: np.ndarray
    sigma: np.ndarray
    daily_volume: np.ndarray

    FIELDS = ("order_id", "sign", "quantity", "duration", "start_logprice",
              "end_logprice", "sigma", "daily_volume")

    def __len__(self) -> int:
        return len(self.order_id)

    @property
    def signed_change(self) -> np.ndarray:
        return self.sign * (self.end_logprice - self.start_logprice)

    @property
    def q_over_v(self) -> np.ndarray:
        return self.quantity / self.daily_volume

    def records(self) -> Iterator[MetaorderRecord]:
        cols = [getattr(self, f).tolist() for f in self.FIELDS]
        for row in zip(*cols):
            yield MetaorderRecord(*row)

    @classmethod
    def from_records(cls, records: Sequence[MetaorderRecord]) -> "Panel":
        records = list(records)
        cols = {f: [getattr(r, f) for r in records] for f in cls.FIELDS}
        return cls(
            order_id=np.asarray(cols["order_id"], dtype=np.int64),
            sign=np.asarray(cols["sign"], dtype=np.int64),
            **{f: np.asarray(cols[f], dtype=float) for f in cls.FIELDS[2:]},
        )

    @classmethod
    def concat(cls, parts: Sequence["Panel"]) -> "Panel":
        if not parts:
            return cls.empty()
        return cls(**{f: np.concatenate([getattr(p, f) for p in parts]) for f in cls.FIELDS})

    @classmethod
    def empty(cls) -> "Panel":
        return cls(order_id=np.zeros(0, np.int64), sign=np.zeros(0, np.int64),
                   **{f: np.zeros(0) for f in cls.FIELDS[2:]})


def sample_price_change(order: OrderSpec, market: MarketParams, model: ImpactModel,
                        eta: float, xi: float) -> float:
    if not (math.isfinite(eta) and math.isfinite(xi)):
        raise DomainError("eta and xi must be finite")
    impact = 0.0
    if order.quantity > 0:
        impact = float(impact_curve(order.quantity / market.daily_volume, order.duration,
                                    market.sigma, model))
    return order.sign * impact * (1.0 + model.a_fluct * eta) + market.sigma * math.sqrt(order.duration) * xi


def price_changes(sign, q_over_v, duration, sigma, model: ImpactModel, eta, xi) -> np.ndarray:
    """Vectorised form of :func:`sample_price_change` over arrays of orders."""
    impact = impact_curve(q_over_v, duration, sigma, model)
    return sign * impact * (1.0 + model.a_fluct * eta) + sigma * np.sqrt(duration) * xi


def uniform_block(seed: int, start: int, count: int) -> np.ndarray:
    """Uniforms in (0, 1) for orders ``start .. start+count-1``, shape (count, 8).

    Row i depends only on (seed, start + i).
    """
    bitgen = np.random.Philox(key=int(seed))
    bitgen.advance(_STEPS_PER_ORDER * start)
    raw = bitgen.random_raw(WORDS_PER_ORDER * count).reshape(count, WORDS_PER_ORDER)
    # top 53 bits, shifted to the cell midpoint so 0 and 1 never occur
    return ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53


def _unit_noise(u: np.ndarray, kind: str) -> np.ndarray:
    if kind == "normal":
        return ndtri(u)
    if kind == "uniform":
        return math.sqrt(3.0) * (2.0 * u - 1.0)
    return np.where(u < 0.5, -1.0, 1.0)


def draw_noise(config: SimConfig, start: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    """The (eta, xi) draws used for orders ``start .. start+count-1``."""
    u = uniform_block(config.seed, start, count)
    return _unit_noise(u[:, 3], config.noise_kind), _unit_noise(u[:, 4], config.noise_kind)


def simulate_chunk(config: SimConfig, start: int, count: int) -> Panel:
    u = uniform_block(config.seed, start, count)
    sign = np.where(u[:, 0] < 0.5, 1, -1).astype(np.int64)

    lo, hi = config.q_over_v_range
    log_lo, log_hi = math.log(lo), math.log(hi)
    q_over_v = np.exp(log_lo + (log_hi - log_lo) * u[:, 1])

    t = np.asarray(config.t_buckets, dtype=float)
    cum = np.cumsum(np.asarray(config.weights, dtype=float))
    idx = np.searchsorted(cum / cum[-1], u[:, 2], side="right")
    duration = t[np.minimum(idx, len(t) - 1)]

    eta = _unit_noise(u[:, 3], config.noise_kind)
    xi = _unit_noise(u[:, 4], config.noise_kind)
    sigma, volume = config.market.sigma, config.market.daily_volume
    dp = price_changes(sign, q_over_v, duration, sigma, config.model, eta, xi)

    return Panel(
        order_id=np.arange(start, start + count, dtype=np.int64),
        sign=sign,
        quantity=q_over_v * volume,
        duration=duration,
        start_logprice=np.zeros(count),
        end_logprice=dp,
        sigma=np.full(count, sigma),
        daily_volume=np.full(count, volume),
    )


def chunk_bounds(n: int, chunk_size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    return [(s, min(chunk_size, n - s)) for s in range(0, n, chunk_size)]


def iter_panel_chunks(config: SimConfig, threads: int = 1,
                      chunk_size: int = CHUNK_SIZE) -> Iterator[Panel]:
    """Yield the panel in order-id order, generated by ``threads`` workers."""
    bounds = chunk_bounds(config.n_orders, chunk_size)
    if threads <= 1:
        for start, count in bounds:
            yield simulate_chunk(config, start, count)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield from pool.map(lambda b: simulate_chunk(config, *b), bounds)


def simulate_panel(config: SimConfig, threads: int = 1) -> Panel:
    """Generate all ``config.n_orders`` orders as one column block."""
    return Panel.concat(list(iter_panel_chunks(config, threads)))
