"""Metro network topology: station graph construction, normalization, and file IO.

The physical track network is an undirected graph over station indices.
Connectivity is stored as a symmetric binary matrix; edge weights are the
connectivity rows rescaled to sum to one, so that neighbor aggregation in the
model is an average over adjacent stations.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GraphFileError, InvalidEdgeError

logger = logging.getLogger(__name__)

GRAPH_FILE_MAGIC = "# odcast-graph v1"


@dataclass(frozen=True)
class MetroGraph:
    """Immutable station graph.

    connectivity: (N, N) symmetric 0/1 matrix with zero diagonal.
    weights: (N, N) row-normalized matrix; rows of isolated stations are zero.
    """

    station_count: int
    connectivity: np.ndarray
    weights: np.ndarray
    station_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.station_names:
            object.__setattr__(
                self, "station_names", [f"S{i}" for i in range(self.station_count)]
            )
        self.connectivity.setflags(write=False)
        self.weights.setflags(write=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MetroGraph):
            return NotImplemented
        return (
            self.station_count == other.station_count
            and self.station_names == other.station_names
            and np.array_equal(self.connectivity, other.connectivity)
            and np.allclose(self.weights, other.weights, rtol=0, atol=1e-12)
        )

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.connectivity[i])

    def edge_list(self) -> list[tuple[int, int]]:
        """Undirected edges in canonical (i < j) order."""
        ii, jj = np.nonzero(np.triu(self.connectivity))
        return list(zip(ii.tolist(), jj.tolist()))


def build_graph(
    edges: list[tuple[int, int]],
    station_count: int,
    station_names: list[str] | None = None,
) -> MetroGraph:
    """Build the station graph from undirected index pairs.

    Duplicate pairs (in either orientation) are accepted idempotently.
    Raises InvalidEdgeError for out-of-range indices or self-loops.
    """
    n = int(station_count)
    if n <= 0:
        raise InvalidEdgeError(f"station_count must be positive, got {station_count}")
    conn = np.zeros((n, n), dtype=np.int64)
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n):
            raise InvalidEdgeError(
                f"edge ({i}, {j}) references a station outside [0, {n})"
            )
        if i == j:
            raise InvalidEdgeError(f"self-loop edge ({i}, {j}) is not allowed")
        conn[i, j] = 1
        conn[j, i] = 1
    weights = normalize_rows(conn)
    return MetroGraph(n, conn, weights, list(station_names or []))


def normalize_rows(connectivity: np.ndarray) -> np.ndarray:
    """Row-rescale a binary connectivity matrix; isolated rows stay zero."""
    degree = connectivity.sum(axis=1, dtype=np.float64)
    safe = np.where(degree > 0, degree, 1.0)
    return connectivity.astype(np.float64) / safe[:, None]


def save_graph(graph: MetroGraph, path: str | Path, names_path: str | Path | None = None) -> None:
    """Write the edge list as plain text: magic line, `N` header, one `i j` per line.

    Edges are written once in canonical (i < j) order. Station names go to an
    optional sidecar, one per line.
    """
    lines = [GRAPH_FILE_MAGIC, str(graph.station_count)]
    lines += [f"{i} {j}" for i, j in graph.edge_list()]
    Path(path).write_text("\n".join(lines) + "\n")
    if names_path is not None:
        Path(names_path).write_text("\n".join(graph.station_names) + "\n")


def load_graph(path: str | Path, names_path: str | Path | None = None) -> MetroGraph:
    """Parse a graph file written by :func:`save_graph`.

    The edge list is treated as undirected: a file whose directed mentions are
    not symmetric (and not all canonical i < j) is symmetrized with a warning.
    Malformed lines and out-of-range indices raise GraphFileError naming the line.
    """
    raw_lines = Path(path).read_text().splitlines()
    lines = [(no, ln.strip()) for no, ln in enumerate(raw_lines, start=1)]
    body = [(no, ln) for no, ln in lines if ln and not ln.startswith("#")]
    if raw_lines and raw_lines[0].startswith("#") and raw_lines[0].strip() != GRAPH_FILE_MAGIC:
        raise GraphFileError(f"{path}: line 1: unsupported graph schema {raw_lines[0]!r}")
    if not body:
        raise GraphFileError(f"{path}: missing station-count header line")
    header_no, header = body[0]
    try:
        n = int(header)
    except ValueError:
        raise GraphFileError(
            f"{path}: line {header_no}: expected station count, got {header!r}"
        ) from None
    mentions: set[tuple[int, int]] = set()
    edges: list[tuple[int, int]] = []
    for no, ln in body[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise GraphFileError(f"{path}: line {no}: expected 'i j', got {ln!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFileError(
                f"{path}: line {no}: non-integer station index in {ln!r}"
            ) from None
        if not (0 <= i < n and 0 <= j < n):
            raise GraphFileError(
                f"{path}: line {no}: station index out of range [0, {n}) in {ln!r}"
            )
        if i == j:
            raise GraphFileError(f"{path}: line {no}: self-loop edge {ln!r}")
        mentions.add((i, j))
        edges.append((i, j))
    canonical = all(i < j for i, j in mentions)
    symmetric = all((j, i) in mentions for i, j in mentions)
    if not canonical and not symmetric:
        logger.warning("%s: asymmetric edge list; symmetrizing", path)
    names: list[str] = []
    if names_path is not None:
        names = Path(names_path).read_text().splitlines()
        if len(names) != n:
            raise GraphFileError(
                f"{names_path}: expected {n} station names, found {len(names)}"
            )
    return build_graph(edges, n, names)


def shortest_path_hops(graph: MetroGraph, origin: int) -> np.ndarray:
    """Hop counts from `origin` to every station by breadth-first search.

    Unreachable stations get -1.
    """
    n = graph.station_count
    hops = np.full(n, -1, dtype=np.int64)
    hops[origin] = 0
    queue = deque([origin])
    while queue:
        u = queue.popleft()
        for v in graph.neighbors(u):
            if hops[v] < 0:
                hops[v] = hops[u] + 1
                queue.append(int(v))
    return hops


def all_pairs_hops(graph: MetroGraph) -> np.ndarray:
    """(N, N) hop-count matrix; -1 marks unreachable pairs."""
    return np.stack([shortest_path_hops(graph, i) for i in range(graph.station_count)])
