"""Seeded synthetic smart-card transaction generation.

Trip counts per (day, interval, origin, destination) follow a Poisson law whose
rate is a base demand matrix modulated by a daily profile (weekday or weekend),
an optional morning/evening tide swing on selected station pairs, and an
optional day-level demand factor. Trip durations are shortest-path hop counts
scaled to intervals plus truncated noise. Everything is deterministic given the
seed; per-day substreams make day-parallel generation reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InsufficientDataError
from .topology import MetroGraph, all_pairs_hops

LOG_CSV_HEADER = ["entry_station", "entry_interval", "exit_station", "exit_interval"]

WEEKEND_DAYS = (5, 6)  # day d is a weekend iff d mod 7 in this set


def is_weekend(day: int) -> bool:
    return day % 7 in WEEKEND_DAYS


@dataclass
class TransactionLog:
    """Column-oriented trip log, sorted by entry interval."""

    entry_station: np.ndarray
    entry_interval: np.ndarray
    exit_station: np.ndarray
    exit_interval: np.ndarray

    def __len__(self) -> int:
        return len(self.entry_station)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransactionLog):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("entry_station", "entry_interval", "exit_station", "exit_interval")
        )

    @property
    def durations(self) -> np.ndarray:
        return self.exit_interval - self.entry_interval

    @classmethod
    def from_rows(cls, rows) -> "TransactionLog":
        arr = np.asarray(list(rows), dtype=np.int64).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    @classmethod
    def empty(cls) -> "TransactionLog":
        z = np.zeros(0, dtype=np.int64)
        return cls(z.copy(), z.copy(), z.copy(), z.copy())

    def sorted_by_entry(self) -> "TransactionLog":
        order = np.argsort(self.entry_interval, kind="stable")
        return TransactionLog(
            self.entry_station[order],
            self.entry_interval[order],
            self.exit_station[order],
            self.exit_interval[order],
        )


@dataclass
class SimConfig:
    """Knobs of the synthetic demand process.

    base_demand is an (N, N) nonnegative rate matrix in passengers per interval
    with zero diagonal. Profiles are length-D multipliers applied by day type.
    tide_pairs get an anti-correlated sinusoidal swing of size tide_amplitude:
    a->b demand peaks in the morning half of the day exactly when b->a dips.
    day_factor_sigma > 0 draws one log-normal demand factor per day (mean 1),
    shared by all pairs, adding day-to-day fluctuation that is observable from
    recent ridership but invisible to purely periodic predictors.
    """

    graph: MetroGraph
    days: int
    intervals_per_day: int
    base_demand: np.ndarray
    weekday_profile: np.ndarray
    weekend_profile: np.ndarray
    per_hop_intervals: float = 1.0
    travel_noise: float = 0.0
    max_trip_intervals: int = 8
    tide_pairs: list[tuple[int, int]] = field(default_factory=list)
    tide_amplitude: float = 0.75
    day_factor_sigma: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        n = self.graph.station_count
        d = self.intervals_per_day
        if self.days <= 0 or d <= 0:
            raise ConfigurationError("days and intervals_per_day must be positive")
        if self.base_demand.shape != (n, n):
            raise ConfigurationError(
                f"base_demand must be ({n}, {n}), got {self.base_demand.shape}"
            )
        if np.any(self.base_demand < 0):
            raise ConfigurationError("base_demand must be nonnegative")
        if np.any(np.diag(self.base_demand) != 0):
            raise ConfigurationError("base_demand diagonal must be zero")
        for name in ("weekday_profile", "weekend_profile"):
            prof = np.asarray(getattr(self, name), dtype=np.float64)
            if prof.shape != (d,):
                raise ConfigurationError(f"{name} must have length {d}")
            if np.any(prof < 0):
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.per_hop_intervals <= 0:
            raise ConfigurationError("per_hop_intervals must be positive")
        if self.travel_noise < 0:
            raise ConfigurationError("travel_noise must be nonnegative")
        if self.max_trip_intervals < 1:
            raise ConfigurationError("max_trip_intervals must be >= 1")
        if not (0.0 <= self.tide_amplitude <= 1.0):
            raise ConfigurationError("tide_amplitude must lie in [0, 1]")
        for a, b in self.tide_pairs:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ConfigurationError(f"invalid tide pair ({a}, {b})")


def tide_factors(cfg: SimConfig) -> np.ndarray:
    """(D, N, N) multiplicative tide modulation, 1 everywhere off tide pairs."""
    n = cfg.graph.station_count
    d = cfg.intervals_per_day
    swing = cfg.tide_amplitude * np.sin(2.0 * np.pi * np.arange(d) / d)
    factors = np.ones((d, n, n), dtype=np.float64)
    for a, b in cfg.tide_pairs:
        factors[:, a, b] = 1.0 + swing
        factors[:, b, a] = 1.0 - swing
    return factors


def _check_reachability(cfg: SimConfig, hops: np.ndarray) -> None:
    demand_pairs = np.argwhere(cfg.base_demand > 0)
    for o, dst in demand_pairs:
        if hops[o, dst] < 0:
            raise ConfigurationError(
                f"positive demand between unreachable stations ({o}, {dst})"
            )


def day_rng(seed: int, day: int) -> np.random.Generator:
    """Independent deterministic substream for one service day."""
    return np.random.default_rng(np.random.SeedSequence([seed, day]))


def generate_log(cfg: SimConfig) -> TransactionLog:
    """Generate the full transaction log, sorted by entry interval."""
    cfg.validate()
    hops = all_pairs_hops(cfg.graph)
    _check_reachability(cfg, hops)
    tides = tide_factors(cfg)
    day_parts = [_generate_day(cfg, day, hops, tides) for day in range(cfg.days)]
    parts = [p for p in day_parts if len(p[0])]
    if not parts:
        return TransactionLog.empty()
    cols = [np.concatenate([p[k] for p in parts]) for k in range(4)]
    return TransactionLog(*cols).sorted_by_entry()


def _generate_day(cfg: SimConfig, day: int, hops: np.ndarray, tides: np.ndarray):
    n = cfg.graph.station_count
    d = cfg.intervals_per_day
    rng = day_rng(cfg.seed, day)
    profile = np.asarray(
        cfg.weekend_profile if is_weekend(day) else cfg.weekday_profile,
        dtype=np.float64,
    )
    day_factor = 1.0
    if cfg.day_factor_sigma > 0:
        sigma = cfg.day_factor_sigma
        day_factor = float(np.exp(rng.normal(-0.5 * sigma * sigma, sigma)))
    # rates: (D, N, N)
    rates = cfg.base_demand[None, :, :] * profile[:, None, None] * tides * day_factor
    counts = rng.poisson(rates)
    iv, origins, dests = np.nonzero(counts)
    reps = counts[iv, origins, dests]
    entry_station = np.repeat(origins, reps)
    entry_interval = np.repeat(iv, reps) + day * d
    exit_station = np.repeat(dests, reps)
    base = hops[entry_station, exit_station] * cfg.per_hop_intervals
    if cfg.travel_noise > 0:
        noise = np.abs(rng.normal(0.0, cfg.travel_noise, size=base.shape))
    else:
        noise = 0.0
    duration = np.rint(base + noise).astype(np.int64)
    duration = np.clip(duration, 1, cfg.max_trip_intervals)
    return (
        entry_station.astype(np.int64),
        entry_interval.astype(np.int64),
        exit_station.astype(np.int64),
        (entry_interval + duration).astype(np.int64),
    )


def commuting_time_cdf(log: TransactionLog) -> list[tuple[int, float]]:
    """Cumulative distribution of trip durations as (duration, fraction) points."""
    if len(log) == 0:
        raise InsufficientDataError("cannot compute a duration CDF from an empty log")
    durations, counts = np.unique(log.durations, return_counts=True)
    cumulative = np.cumsum(counts) / len(log)
    return [(int(d), float(c)) for d, c in zip(durations, cumulative)]


def write_log_csv(log: TransactionLog, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_CSV_HEADER)
        for row in zip(
            log.entry_station, log.entry_interval, log.exit_station, log.exit_interval
        ):
            writer.writerow([int(v) for v in row])


def read_log_csv(path: str | Path) -> TransactionLog:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LOG_CSV_HEADER:
            raise ConfigurationError(
                f"{path}: expected header {','.join(LOG_CSV_HEADER)}"
            )
        rows = [[int(v) for v in row] for row in reader if row]
    if not rows:
        return TransactionLog.empty()
    return TransactionLog.from_rows(rows).sorted_by_entry()
