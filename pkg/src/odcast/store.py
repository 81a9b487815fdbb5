"""On-disk snapshot and sample store.

Layout (all files carry a schema-version header line):

- ``manifest.json``: shapes, interval grid, observation offsets, split ranges.
- ``graph.txt`` / ``station_names.txt``: the station graph.
- ``od_map.csv`` / ``do_map.csv``: compression maps, one integer row per station.
- ``t/<interval>/od.csv``, ``do.csv``: complete target matrices as sparse
  ``row,col,value`` triplets.
- ``t/<interval>/iod_e<e>.csv``, ``u_e<e>.csv``, ``dds_e<e>.csv``: the
  incomplete OD matrix, unfinished vector, and short-term destination
  distribution observed ``e`` intervals after the interval's end.
- ``ddl/w<dow>_i<interval-of-day>_e<elapsed>.csv``: long-term destination
  distributions measured on the training range.
- ``norm_stats.json``: z-score statistics fitted on the training split.

Sample assembly from the store reproduces exactly what
:func:`odcast.aggregation.build_dataset` computes from the raw log.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .aggregation import (
    CompressionMaps,
    DatasetSplits,
    LogIndex,
    LongTermTable,
    SampleSet,
    SnapshotSample,
    build_snapshot,
    compute_dd_short,
    estimate_uod,
)
from .errors import SchemaVersionError
from .simulate import TransactionLog
from .topology import MetroGraph, load_graph, save_graph

STORE_MAGIC = "# odcast-store v1"
STORE_SCHEMA_VERSION = 1


def _write_triplets(path: Path, matrix: np.ndarray) -> None:
    if matrix.ndim == 1:
        matrix = matrix[:, None]  # vectors stored as a single column
    rows, cols = np.nonzero(matrix)
    lines = [STORE_MAGIC, "row,col,value"]
    is_float = np.issubdtype(matrix.dtype, np.floating)
    for r, c in zip(rows, cols):
        v = matrix[r, c]
        lines.append(f"{r},{c},{repr(float(v)) if is_float else int(v)}")
    path.write_text("\n".join(lines) + "\n")


def _read_triplets(path: Path, shape: tuple[int, ...], dtype) -> np.ndarray:
    lines = path.read_text().splitlines()
    if not lines or lines[0] != STORE_MAGIC:
        raise SchemaVersionError(f"{path}: missing or stale schema header")
    out = np.zeros(shape if len(shape) == 2 else (shape[0], 1), dtype=dtype)
    for ln in lines[2:]:
        if not ln:
            continue
        r, c, v = ln.split(",")
        out[int(r), int(c)] = dtype(v)
    return out if len(shape) == 2 else out[:, 0]


def _write_map_csv(path: Path, mapping: np.ndarray) -> None:
    lines = [STORE_MAGIC]
    lines += [",".join(str(int(v)) for v in row) for row in mapping]
    path.write_text("\n".join(lines) + "\n")


def _read_map_csv(path: Path) -> np.ndarray:
    lines = path.read_text().splitlines()
    if not lines or lines[0] != STORE_MAGIC:
        raise SchemaVersionError(f"{path}: missing or stale schema header")
    return np.array(
        [[int(v) for v in ln.split(",")] for ln in lines[1:] if ln], dtype=np.int64
    )


def save_maps(maps: CompressionMaps, store_dir: str | Path) -> None:
    store_dir = Path(store_dir)
    _write_map_csv(store_dir / "od_map.csv", maps.od_map)
    _write_map_csv(store_dir / "do_map.csv", maps.do_map)


def load_maps(store_dir: str | Path) -> CompressionMaps:
    store_dir = Path(store_dir)
    return CompressionMaps(
        _read_map_csv(store_dir / "od_map.csv"),
        _read_map_csv(store_dir / "do_map.csv"),
    )


def write_store(
    store_dir: str | Path,
    log: TransactionLog,
    graph: MetroGraph,
    maps: CompressionMaps,
    intervals_per_day: int,
    input_len: int,
    output_len: int,
    splits: dict[str, tuple[int, int]],
    start_weekday: int = 0,
) -> None:
    """Materialize every interval's snapshot tensors plus the shared tables."""
    store_dir = Path(store_dir)
    store_dir.mkdir(parents=True, exist_ok=True)
    index = LogIndex(log)
    n, k = maps.num_stations, maps.num_pairs
    d = intervals_per_day
    num_intervals = max(sp[1] for sp in splits.values())
    max_dur = max(index.max_duration, 1)

    manifest = {
        "schema_version": STORE_SCHEMA_VERSION,
        "num_stations": n,
        "num_pairs": k,
        "intervals_per_day": d,
        "input_len": input_len,
        "output_len": output_len,
        "num_intervals": num_intervals,
        "max_trip_intervals": max_dur,
        "start_weekday": start_weekday,
        "offsets": list(range(input_len)),
        "splits": {name: list(span) for name, span in splits.items()},
    }
    (store_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n"
    )
    save_graph(graph, store_dir / "graph.txt", store_dir / "station_names.txt")
    save_maps(maps, store_dir)

    train_span = splits["train"]
    train_mask = (log.entry_interval >= train_span[0]) & (
        log.entry_interval < train_span[1]
    )
    train_log = TransactionLog(
        log.entry_station[train_mask], log.entry_interval[train_mask],
        log.exit_station[train_mask], log.exit_interval[train_mask],
    )
    ddl_table = LongTermTable(
        train_log, maps, d, max_elapsed=input_len, start_weekday=start_weekday
    )
    ddl_dir = store_dir / "ddl"
    ddl_dir.mkdir(exist_ok=True)
    ddl_cache: dict[tuple[int, int, int], np.ndarray] = {}
    for dow in range(7):
        for iv in range(d):
            for e in range(input_len):
                rows = ddl_table.rows(dow, iv, e)
                ddl_cache[(dow, iv, e)] = rows
                _write_triplets(ddl_dir / f"w{dow}_i{iv:03d}_e{e}.csv", rows)

    for tau in range(num_intervals):
        t_dir = store_dir / "t" / f"{tau:06d}"
        t_dir.mkdir(parents=True, exist_ok=True)
        complete = build_snapshot(index, tau, tau + max_dur, maps)
        _write_triplets(t_dir / "od.csv", complete.od)
        _write_triplets(t_dir / "do.csv", complete.do)
        dow = (tau // d + start_weekday) % 7
        for e in range(input_len):
            snap = build_snapshot(index, tau, tau + e, maps)
            _write_triplets(t_dir / f"iod_e{e}.csv", snap.iod)
            _write_triplets(t_dir / f"u_e{e}.csv", snap.u)
            dds = compute_dd_short(
                index, tau, tau + e, maps, d, fallback=ddl_cache[(dow, tau % d, e)]
            )
            _write_triplets(t_dir / f"dds_e{e}.csv", dds)


def load_manifest(store_dir: str | Path) -> dict:
    manifest = json.loads((Path(store_dir) / "manifest.json").read_text())
    version = manifest.get("schema_version")
    if version != STORE_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{store_dir}: store schema {version!r} unsupported "
            f"(expected {STORE_SCHEMA_VERSION}); re-run preprocess to migrate"
        )
    return manifest


def load_dataset(store_dir: str | Path) -> DatasetSplits:
    """Assemble train/val/test SampleSets from a materialized store."""
    store_dir = Path(store_dir)
    manifest = load_manifest(store_dir)
    n, k = manifest["num_stations"], manifest["num_pairs"]
    d = manifest["intervals_per_day"]
    input_len = manifest["input_len"]
    output_len = manifest["output_len"]
    w0 = manifest["start_weekday"]
    graph = load_graph(store_dir / "graph.txt", store_dir / "station_names.txt")
    maps = load_maps(store_dir)

    ddl_cache: dict[tuple[int, int, int], np.ndarray] = {}

    def ddl(dow, iv, e):
        key = (dow, iv, e)
        if key not in ddl_cache:
            ddl_cache[key] = _read_triplets(
                store_dir / "ddl" / f"w{dow}_i{iv:03d}_e{e}.csv", (n, k), float
            )
        return ddl_cache[key]

    interval_cache: dict[int, dict] = {}

    def interval_data(tau):
        if tau not in interval_cache:
            t_dir = store_dir / "t" / f"{tau:06d}"
            interval_cache[tau] = {
                "od": _read_triplets(t_dir / "od.csv", (n, k), int),
                "do": _read_triplets(t_dir / "do.csv", (n, k), int),
                "iod": [
                    _read_triplets(t_dir / f"iod_e{e}.csv", (n, k), int)
                    for e in range(input_len)
                ],
                "u": [
                    _read_triplets(t_dir / f"u_e{e}.csv", (n,), int)
                    for e in range(input_len)
                ],
                "dds": [
                    _read_triplets(t_dir / f"dds_e{e}.csv", (n, k), float)
                    for e in range(input_len)
                ],
            }
        return interval_cache[tau]

    sets = {}
    for name in ("train", "val", "test"):
        start, end = manifest["splits"][name]
        samples = []
        for t in range(start + input_len - 1, end - output_len):
            iod = np.zeros((input_len, n, k), dtype=np.int64)
            u = np.zeros((input_len, n), dtype=np.int64)
            do_in = np.zeros((input_len, n, k), dtype=np.int64)
            uod_long = np.zeros((input_len, n, k), dtype=np.float64)
            uod_short = np.zeros((input_len, n, k), dtype=np.float64)
            for i in range(input_len):
                tau = t - input_len + 1 + i
                e = t - tau
                data = interval_data(tau)
                iod[i] = data["iod"][e]
                u[i] = data["u"][e]
                do_in[i] = data["do"]
                dow = (tau // d + w0) % 7
                uod_long[i] = estimate_uod(u[i], ddl(dow, tau % d, e))
                uod_short[i] = estimate_uod(u[i], data["dds"][e])
            od_targets = np.stack(
                [interval_data(t + 1 + j)["od"] for j in range(output_len)]
            )
            do_targets = np.stack(
                [interval_data(t + 1 + j)["do"] for j in range(output_len)]
            )
            samples.append(
                SnapshotSample(t, iod, u, do_in, uod_long, uod_short, od_targets, do_targets)
            )
        sets[name] = SampleSet(samples, graph, maps, d, input_len, output_len, w0)
    return DatasetSplits(sets["train"], sets["val"], sets["test"])
