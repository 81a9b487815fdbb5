"""Streaming aggregation of transaction logs into compressed snapshot tensors.

A snapshot at observation time `reference` for a past `interval` consists of:

- iod: (N, K) counts of trips that entered station i during `interval` and had
  already exited by the end of `reference`, bucketed by the station's mapped
  top destinations; the last column merges all unmapped destinations.
- u: length-N counts of trips entered during `interval` still travelling at
  `reference`.
- do: (N, K) counts of trips that exited station i during `interval`, bucketed
  by mapped origins (complete once the interval has elapsed).
- od: the complete version of iod (observation time pushed past every exit).

Destination distributions of unfinished passengers are measured from history
in two flavors: same interval of the previous service day (short-term), and
pooled same weekday / interval-of-day statistics over the training period
(long-term). Multiplying the unfinished counts by either distribution yields
the estimated pending-destination matrices consumed by the model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InsufficientDataError
from .simulate import TransactionLog
from .topology import MetroGraph

logger = logging.getLogger(__name__)

SENTINEL = -1


@dataclass(frozen=True, eq=False)
class CompressionMaps:
    """Per-station top-(K-1) partner indices; the K-th column is the -1 sentinel.

    od_map(i, :) ranks destinations of origin i by trip count; do_map(i, :)
    ranks origins of destination i.
    """

    od_map: np.ndarray
    do_map: np.ndarray

    def __post_init__(self):
        self.od_map.setflags(write=False)
        self.do_map.setflags(write=False)

    @property
    def num_stations(self) -> int:
        return self.od_map.shape[0]

    @property
    def num_pairs(self) -> int:
        return self.od_map.shape[1]

    def od_columns(self) -> np.ndarray:
        """(N, N) lookup: od_columns()[i, j] = column of destination j for origin i."""
        return _column_lookup(self.od_map)

    def do_columns(self) -> np.ndarray:
        """(N, N) lookup: do_columns()[i, j] = column of origin j for destination i."""
        return _column_lookup(self.do_map)


def _column_lookup(mapping: np.ndarray) -> np.ndarray:
    n, k = mapping.shape
    lookup = np.full((n, n), k - 1, dtype=np.int64)
    rows = np.repeat(np.arange(n), k - 1)
    cols = np.tile(np.arange(k - 1), n)
    lookup[rows, mapping[:, : k - 1].ravel()] = cols
    return lookup


def _rank_partners(counts: np.ndarray, num_pairs: int) -> np.ndarray:
    """Rank each row's partners by descending count, ties by ascending index."""
    n = counts.shape[0]
    k = num_pairs
    mapping = np.full((n, k), SENTINEL, dtype=np.int64)
    for i in range(n):
        row = counts[i].astype(np.float64).copy()
        row[i] = -np.inf  # self never a partner
        observed = np.flatnonzero(row > 0)
        order = observed[np.lexsort((observed, -row[observed]))]
        chosen = list(order[: k - 1])
        if len(chosen) < k - 1:
            used = set(chosen) | {i}
            fill = [j for j in range(n) if j not in used]
            chosen += fill[: k - 1 - len(chosen)]
        mapping[i, : len(chosen)] = chosen
    return mapping


def build_compression_maps(
    training_log: TransactionLog, station_count: int, num_pairs: int
) -> CompressionMaps:
    """Measure partner ridership over the training log and keep the top K-1.

    Stations with fewer than K-1 observed partners are padded with the lowest
    unused indices, keeping every row a valid set of distinct partners.
    """
    n, k = int(station_count), int(num_pairs)
    if k > n:
        raise ConfigurationError(f"num_pairs {k} exceeds station count {n}")
    if k < 1:
        raise ConfigurationError("num_pairs must be >= 1")
    if len(training_log) == 0:
        raise InsufficientDataError("cannot build compression maps from an empty log")
    trip_counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(trip_counts, (training_log.entry_station, training_log.exit_station), 1)
    od_map = _rank_partners(trip_counts, k)
    do_map = _rank_partners(trip_counts.T, k)
    return CompressionMaps(od_map, do_map)


@dataclass(frozen=True, eq=False)
class IntervalSnapshot:
    interval: int
    reference: int
    iod: np.ndarray
    u: np.ndarray
    do: np.ndarray
    od: np.ndarray


class LogIndex:
    """Entry/exit-sorted views of a log for fast per-interval slicing."""

    def __init__(self, log: TransactionLog):
        self.log = log.sorted_by_entry()
        exit_order = np.argsort(self.log.exit_interval, kind="stable")
        self._exit_sorted_interval = self.log.exit_interval[exit_order]
        self._exit_sorted_station = self.log.exit_station[exit_order]
        self._exit_sorted_origin = self.log.entry_station[exit_order]
        self.max_duration = (
            int(self.log.durations.max()) if len(self.log) else 0
        )

    def entries_during(self, interval: int) -> slice:
        lo = np.searchsorted(self.log.entry_interval, interval, side="left")
        hi = np.searchsorted(self.log.entry_interval, interval, side="right")
        return slice(lo, hi)

    def exits_during(self, interval: int) -> tuple[np.ndarray, np.ndarray]:
        """(exit_station, entry_station) of trips exiting during `interval`."""
        lo = np.searchsorted(self._exit_sorted_interval, interval, side="left")
        hi = np.searchsorted(self._exit_sorted_interval, interval, side="right")
        return self._exit_sorted_station[lo:hi], self._exit_sorted_origin[lo:hi]


def build_snapshot(
    log: TransactionLog | LogIndex,
    interval: int,
    reference: int,
    maps: CompressionMaps,
) -> IntervalSnapshot:
    """Count the four snapshot tensors for one (interval, reference) pair."""
    if reference < interval:
        raise ConfigurationError(
            f"reference {reference} precedes interval {interval}"
        )
    index = log if isinstance(log, LogIndex) else LogIndex(log)
    n, k = maps.num_stations, maps.num_pairs
    od_cols = maps.od_columns()
    do_cols = maps.do_columns()

    sl = index.entries_during(interval)
    origins = index.log.entry_station[sl]
    dests = index.log.exit_station[sl]
    exits = index.log.exit_interval[sl]

    finished = exits <= reference
    iod = _bincount_pairs(origins[finished], dests[finished], od_cols, n, k)
    od = _bincount_pairs(origins, dests, od_cols, n, k)
    u = np.bincount(origins[~finished], minlength=n).astype(np.int64)

    exit_stations, exit_origins = index.exits_during(interval)
    do = _bincount_pairs(exit_stations, exit_origins, do_cols, n, k)
    return IntervalSnapshot(interval, reference, iod, u, do, od)


def _bincount_pairs(
    rows: np.ndarray, partners: np.ndarray, col_lookup: np.ndarray, n: int, k: int
) -> np.ndarray:
    cols = col_lookup[rows, partners]
    flat = np.bincount(rows * k + cols, minlength=n * k)
    return flat.reshape(n, k).astype(np.int64)


def uniform_rows(n: int, k: int) -> np.ndarray:
    return np.full((n, k), 1.0 / k, dtype=np.float64)


def compute_dd_long(
    training_log: TransactionLog | LogIndex,
    day_of_week: int,
    interval_of_day: int,
    elapsed: int,
    maps: CompressionMaps,
    intervals_per_day: int,
    start_weekday: int = 0,
) -> np.ndarray:
    """Pooled destination distribution of passengers still travelling.

    Pools, over every training day falling on `day_of_week`, the passengers who
    entered at `interval_of_day` and were still unfinished `elapsed` intervals
    later, and normalizes their eventual mapped destinations per origin row.
    Rows with no such passengers fall back to uniform 1/K. If the weekday never
    occurs in the training span, all days are pooled instead, with a warning.
    """
    index = training_log if isinstance(training_log, LogIndex) else LogIndex(training_log)
    log = index.log
    if len(log) == 0:
        return uniform_rows(maps.num_stations, maps.num_pairs)
    d = intervals_per_day
    days = np.arange(int(log.entry_interval.max()) // d + 1)
    matching = days[(days + start_weekday) % 7 == day_of_week]
    if matching.size == 0:
        logger.warning(
            "weekday %d absent from training span; pooling all days", day_of_week
        )
        matching = days
    counts = np.zeros((maps.num_stations, maps.num_pairs), dtype=np.int64)
    od_cols = maps.od_columns()
    for day in matching:
        interval = int(day) * d + interval_of_day
        sl = index.entries_during(interval)
        unfinished = index.log.exit_interval[sl] > interval + elapsed
        origins = index.log.entry_station[sl][unfinished]
        dests = index.log.exit_station[sl][unfinished]
        counts += _bincount_pairs(origins, dests, od_cols, maps.num_stations, maps.num_pairs)
    return _normalize_or_fallback(counts, uniform_rows(maps.num_stations, maps.num_pairs))


def compute_dd_short(
    log: TransactionLog | LogIndex,
    interval: int,
    reference: int,
    maps: CompressionMaps,
    intervals_per_day: int,
    fallback: np.ndarray,
) -> np.ndarray:
    """Destination distribution of yesterday's still-unfinished passengers.

    Looks at passengers who entered during the same interval of the previous
    service day and were still travelling at yesterday's observation time, and
    normalizes their eventual mapped destinations per origin row. Empty rows
    (or the whole matrix, on the first service day) fall back to `fallback`,
    normally the matching long-term distribution.
    """
    d = intervals_per_day
    if interval - d < 0:
        return np.array(fallback, dtype=np.float64, copy=True)
    index = log if isinstance(log, LogIndex) else LogIndex(log)
    sl = index.entries_during(interval - d)
    unfinished = index.log.exit_interval[sl] > reference - d
    origins = index.log.entry_station[sl][unfinished]
    dests = index.log.exit_station[sl][unfinished]
    counts = _bincount_pairs(
        origins, dests, maps.od_columns(), maps.num_stations, maps.num_pairs
    )
    return _normalize_or_fallback(counts, fallback)


def _normalize_or_fallback(counts: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=1, dtype=np.float64)
    out = np.array(fallback, dtype=np.float64, copy=True)
    nonzero = totals > 0
    out[nonzero] = counts[nonzero] / totals[nonzero, None]
    return out


def estimate_uod(u: np.ndarray, dd: np.ndarray) -> np.ndarray:
    """Distribute unfinished counts over destinations: UOD(j, k) = u(j) * dd(j, k)."""
    u = np.asarray(u, dtype=np.float64)
    dd = np.asarray(dd, dtype=np.float64)
    if dd.ndim != 2 or u.shape != (dd.shape[0],):
        raise ConfigurationError(
            f"shape mismatch: u {u.shape} vs dd {dd.shape}"
        )
    if np.any(dd < 0):
        raise ConfigurationError("destination distribution rows must be nonnegative")
    return u[:, None] * dd


@dataclass
class SnapshotSample:
    """One training/evaluation example.

    Input tensors cover the `input_len` intervals ending at `reference`, all
    observed as of the end of `reference`; targets are the complete matrices of
    the following `output_len` intervals. Counts are raw (unnormalized).
    """

    reference: int
    iod: np.ndarray        # (n, N, K) int
    u: np.ndarray          # (n, N) int
    do_in: np.ndarray      # (n, N, K) int
    uod_long: np.ndarray   # (n, N, K) float
    uod_short: np.ndarray  # (n, N, K) float
    od_targets: np.ndarray  # (m, N, K) int
    do_targets: np.ndarray  # (m, N, K) int


@dataclass
class SampleSet:
    """Samples plus the shared context the model and baselines need."""

    samples: list[SnapshotSample]
    graph: MetroGraph
    maps: CompressionMaps
    intervals_per_day: int
    input_len: int
    output_len: int
    start_weekday: int = 0

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_stations(self) -> int:
        return self.maps.num_stations

    @property
    def num_pairs(self) -> int:
        return self.maps.num_pairs


@dataclass
class DatasetSplits:
    train: SampleSet
    val: SampleSet
    test: SampleSet


class LongTermTable:
    """Precomputed long-term distributions per (weekday, interval-of-day, elapsed)."""

    def __init__(
        self,
        training_log: TransactionLog | LogIndex,
        maps: CompressionMaps,
        intervals_per_day: int,
        max_elapsed: int,
        start_weekday: int = 0,
    ):
        index = training_log if isinstance(training_log, LogIndex) else LogIndex(training_log)
        self.maps = maps
        self.intervals_per_day = intervals_per_day
        self.start_weekday = start_weekday
        n, k = maps.num_stations, maps.num_pairs
        d = intervals_per_day
        log = index.log
        self._rows = {}
        present_dows = set()
        if len(log):
            days = np.arange(int(log.entry_interval.max()) // d + 1)
            present_dows = set(((days + start_weekday) % 7).tolist())
        # counts[dow, iv, e] built in one pass per elapsed value
        self._counts = np.zeros((7, d, max_elapsed, n, k), dtype=np.int64)
        self._pooled = np.zeros((d, max_elapsed, n, k), dtype=np.int64)
        if len(log):
            od_cols = maps.od_columns()
            day_idx = log.entry_interval // d
            dows = (day_idx + start_weekday) % 7
            ivs = log.entry_interval % d
            durations = log.durations
            for e in range(max_elapsed):
                mask = durations > e
                origins = log.entry_station[mask]
                dests = log.exit_station[mask]
                cols = od_cols[origins, dests]
                flat = (
                    dows[mask] * (d * n * k)
                    + ivs[mask] * (n * k)
                    + origins * k
                    + cols
                )
                binned = np.bincount(flat, minlength=7 * d * n * k)
                self._counts[:, :, e] = binned.reshape(7, d, n, k)
            self._pooled = self._counts.sum(axis=0)
        self._present = present_dows
        self._warned: set[int] = set()
        self.max_elapsed = max_elapsed

    def rows(self, day_of_week: int, interval_of_day: int, elapsed: int) -> np.ndarray:
        if elapsed >= self.max_elapsed:
            return uniform_rows(self.maps.num_stations, self.maps.num_pairs)
        if day_of_week in self._present:
            counts = self._counts[day_of_week, interval_of_day, elapsed]
        else:
            if day_of_week not in self._warned:
                self._warned.add(day_of_week)
                logger.warning(
                    "weekday %d absent from training span; pooling all days",
                    day_of_week,
                )
            counts = self._pooled[interval_of_day, elapsed]
        return _normalize_or_fallback(
            counts, uniform_rows(self.maps.num_stations, self.maps.num_pairs)
        )


def build_dataset(
    log: TransactionLog,
    maps: CompressionMaps,
    graph: MetroGraph,
    input_len: int,
    output_len: int,
    intervals_per_day: int,
    split_bounds: list[tuple[int, int]],
    start_weekday: int = 0,
) -> DatasetSplits:
    """Assemble reference-indexed samples for the train/val/test interval ranges.

    split_bounds lists three [start, end) interval ranges in order. A sample at
    reference t spans intervals [t - input_len + 1, t + output_len]; samples
    whose span crosses a split boundary are excluded. Long-term distributions
    and compression maps derive from the training range only; short-term
    distributions use the previous service day regardless of split, since that
    data is observed by the time of the reference.
    """
    if len(split_bounds) != 3:
        raise ConfigurationError("split_bounds must list three (start, end) ranges")
    bounds = [(int(s), int(e)) for s, e in split_bounds]
    last_end = None
    for s, e in bounds:
        if e <= s:
            raise ConfigurationError(f"empty split range ({s}, {e})")
        if last_end is not None and s < last_end:
            raise ConfigurationError("split ranges must be ordered and disjoint")
        last_end = e
    n_intervals_needed = input_len + output_len
    if bounds[-1][1] - bounds[0][0] < n_intervals_needed:
        raise InsufficientDataError(
            f"log span shorter than input_len + output_len = {n_intervals_needed}"
        )

    index = LogIndex(log)
    train_mask = (log.entry_interval >= bounds[0][0]) & (log.entry_interval < bounds[0][1])
    train_log = TransactionLog(
        log.entry_station[train_mask],
        log.entry_interval[train_mask],
        log.exit_station[train_mask],
        log.exit_interval[train_mask],
    )
    ddl_table = LongTermTable(
        train_log, maps, intervals_per_day, max_elapsed=input_len, start_weekday=start_weekday
    )

    sets = []
    for start, end in bounds:
        samples = [
            _build_sample(
                index, maps, t, input_len, output_len, intervals_per_day,
                ddl_table, start_weekday,
            )
            for t in range(start + input_len - 1, end - output_len)
        ]
        sets.append(
            SampleSet(
                samples, graph, maps, intervals_per_day, input_len, output_len,
                start_weekday,
            )
        )
    if not sets[0].samples:
        raise InsufficientDataError("training split produced no samples")
    return DatasetSplits(*sets)


def _build_sample(
    index: LogIndex,
    maps: CompressionMaps,
    reference: int,
    input_len: int,
    output_len: int,
    intervals_per_day: int,
    ddl_table: LongTermTable,
    start_weekday: int,
) -> SnapshotSample:
    n, k = maps.num_stations, maps.num_pairs
    iod = np.zeros((input_len, n, k), dtype=np.int64)
    u = np.zeros((input_len, n), dtype=np.int64)
    do_in = np.zeros((input_len, n, k), dtype=np.int64)
    uod_long = np.zeros((input_len, n, k), dtype=np.float64)
    uod_short = np.zeros((input_len, n, k), dtype=np.float64)
    d = intervals_per_day
    for i in range(input_len):
        interval = reference - input_len + 1 + i
        snap = build_snapshot(index, interval, reference, maps)
        iod[i], u[i], do_in[i] = snap.iod, snap.u, snap.do
        elapsed = reference - interval
        dow = (interval // d + start_weekday) % 7
        ddl = ddl_table.rows(dow, interval % d, elapsed)
        dds = compute_dd_short(index, interval, reference, maps, d, fallback=ddl)
        uod_long[i] = estimate_uod(u[i], ddl)
        uod_short[i] = estimate_uod(u[i], dds)
    od_targets = np.zeros((output_len, n, k), dtype=np.int64)
    do_targets = np.zeros((output_len, n, k), dtype=np.int64)
    horizon_ref = reference + output_len + max(index.max_duration, 1)
    for j in range(output_len):
        snap = build_snapshot(index, reference + 1 + j, horizon_ref, maps)
        od_targets[j] = snap.od
        do_targets[j] = snap.do
    return SnapshotSample(
        reference, iod, u, do_in, uod_long, uod_short, od_targets, do_targets
    )
