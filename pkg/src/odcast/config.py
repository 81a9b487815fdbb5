"""Experiment configuration: one YAML file shared by every CLI subcommand.

Top-level keys: ``schema_version`` (currently 1), ``seed``, and one section per
pipeline stage (``graph``, ``simulate``, ``preprocess``, ``model``, ``train``,
optional ``evaluate`` and ``ablate``). Missing required keys raise
MissingKeyError naming the dotted path. Demand matrices and daily profiles can
be given literally or through small named generators, documented in README.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError, MissingKeyError, SchemaVersionError
from .model import ModelConfig
from .simulate import SimConfig
from .topology import MetroGraph, all_pairs_hops, build_graph, load_graph
from .training import TrainConfig

CONFIG_SCHEMA_VERSION = 1

_MISSING = object()


class ExperimentConfig:
    def __init__(self, data: dict, base_dir: Path):
        self.data = data
        self.base_dir = base_dir

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        data = yaml.safe_load(path.read_text())
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: config must be a mapping")
        version = data.get("schema_version")
        if version != CONFIG_SCHEMA_VERSION:
            raise SchemaVersionError(
                f"{path}: config schema {version!r} unsupported "
                f"(expected {CONFIG_SCHEMA_VERSION}); update the config file"
            )
        return cls(data, path.parent)

    def get(self, dotted: str, default=_MISSING):
        node = self.data
        parts = dotted.split(".")
        for idx, part in enumerate(parts):
            if not isinstance(node, dict) or part not in node:
                if default is not _MISSING:
                    return default
                raise MissingKeyError(
                    f"missing config key {'.'.join(parts[: idx + 1])!r}"
                )
            node = node[part]
        return node

    @property
    def seed(self) -> int:
        return int(self.get("seed"))

    def resolve_path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    # Stage builders -------------------------------------------------------

    def build_graph(self) -> MetroGraph:
        if self.get("graph.file", None) is not None:
            names = self.get("graph.names_file", None)
            return load_graph(
                self.resolve_path(self.get("graph.file")),
                self.resolve_path(names) if names else None,
            )
        stations = int(self.get("graph.stations"))
        edges = [tuple(e) for e in self.get("graph.edges")]
        names = self.get("graph.names", [])
        return build_graph(edges, stations, names)

    def build_sim_config(self, graph: MetroGraph, seed: int | None = None) -> SimConfig:
        d = int(self.get("simulate.intervals_per_day"))
        return SimConfig(
            graph=graph,
            days=int(self.get("simulate.days")),
            intervals_per_day=d,
            base_demand=self._demand_matrix(graph),
            weekday_profile=self._profile("simulate.weekday_profile", d),
            weekend_profile=self._profile("simulate.weekend_profile", d),
            per_hop_intervals=float(self.get("simulate.per_hop_intervals")),
            travel_noise=float(self.get("simulate.travel_noise")),
            max_trip_intervals=int(self.get("simulate.max_trip_intervals")),
            tide_pairs=[tuple(p) for p in self.get("simulate.tide_pairs", [])],
            tide_amplitude=float(self.get("simulate.tide_amplitude", 0.75)),
            day_factor_sigma=float(self.get("simulate.day_factor_sigma", 0.0)),
            seed=self.seed if seed is None else seed,
        )

    def _demand_matrix(self, graph: MetroGraph) -> np.ndarray:
        spec = self.get("simulate.demand")
        n = graph.station_count
        if isinstance(spec, list):
            matrix = np.asarray(spec, dtype=np.float64)
        elif spec.get("kind") == "file":
            matrix = np.loadtxt(self.resolve_path(spec["path"]), delimiter=",")
        elif spec.get("kind") == "uniform":
            matrix = np.full((n, n), float(spec.get("rate", 0.1)))
            np.fill_diagonal(matrix, 0.0)
        elif spec.get("kind") == "gravity":
            matrix = gravity_demand(
                graph,
                scale=float(spec.get("scale", 1.0)),
                decay=float(spec.get("decay", 1.0)),
                hotspots={int(k): float(v) for k, v in (spec.get("hotspots") or {}).items()},
            )
        else:
            raise ConfigurationError(
                f"unknown demand kind {spec.get('kind')!r} in simulate.demand"
            )
        if matrix.shape != (n, n):
            raise ConfigurationError(
                f"demand matrix shape {matrix.shape} does not match {n} stations"
            )
        total_rate = spec.get("total_rate") if isinstance(spec, dict) else None
        if total_rate is not None:
            total = matrix.sum()
            if total <= 0:
                raise ConfigurationError(
                    "simulate.demand.total_rate requires a nonzero demand matrix"
                )
            matrix = matrix * (float(total_rate) / total)
        return matrix

    def _profile(self, key: str, intervals_per_day: int) -> np.ndarray:
        spec = self.get(key)
        if isinstance(spec, list):
            return np.asarray(spec, dtype=np.float64)
        kind = spec.get("kind")
        low = float(spec.get("low", 0.2))
        if kind == "flat":
            return np.ones(intervals_per_day)
        if kind == "bimodal":
            return _mean_one(_humps(intervals_per_day, [(0.30, 0.06), (0.72, 0.06)], low))
        if kind == "midday":
            return _mean_one(_humps(intervals_per_day, [(0.50, 0.12)], low))
        raise ConfigurationError(f"unknown profile kind {kind!r} in {key}")

    def preprocess_params(self) -> dict:
        days = int(self.get("simulate.days"))
        d = int(self.get("simulate.intervals_per_day"))
        splits_cfg = self.get("preprocess.splits")
        train_days = int(splits_cfg["train_days"])
        val_days = int(splits_cfg["val_days"])
        test_days = int(splits_cfg["test_days"])
        if train_days + val_days + test_days > days:
            raise ConfigurationError(
                "preprocess.splits day totals exceed simulate.days"
            )
        t0 = train_days * d
        t1 = t0 + val_days * d
        t2 = t1 + test_days * d
        return {
            "num_pairs": int(self.get("preprocess.num_pairs")),
            "input_len": int(self.get("preprocess.input_len")),
            "output_len": int(self.get("preprocess.output_len")),
            "splits": {"train": (0, t0), "val": (t0, t1), "test": (t1, t2)},
            "start_weekday": int(self.get("preprocess.start_weekday", 0)),
        }

    def build_model_config(self, num_stations: int, overrides: dict | None = None) -> ModelConfig:
        params = {
            "hidden_dim": int(self.get("model.hidden_dim")),
            "num_heads": int(self.get("model.num_heads")),
            "use_uod_long": bool(self.get("model.use_uod_long", True)),
            "use_uod_short": bool(self.get("model.use_uod_short", True)),
            "use_u_raw": bool(self.get("model.use_u_raw", False)),
            "interaction": str(self.get("model.interaction", "dit")),
            "scaled_attention": bool(self.get("model.scaled_attention", True)),
        }
        params.update(overrides or {})
        pre = self.preprocess_params()
        cfg = ModelConfig(
            num_stations=num_stations,
            num_pairs=pre["num_pairs"],
            input_len=pre["input_len"],
            output_len=pre["output_len"],
            **params,
        )
        cfg.validate()
        return cfg

    def build_train_config(self, seed: int | None = None, overrides: dict | None = None) -> TrainConfig:
        params = {
            "batch_size": int(self.get("train.batch_size")),
            "epochs": int(self.get("train.epochs")),
            "base_lr": float(self.get("train.base_lr")),
            "decay_factor": float(self.get("train.decay_factor")),
            "decay_every_epochs": int(self.get("train.decay_every_epochs")),
            "schedule": str(self.get("train.schedule", "step")),
            "flat_epochs": int(self.get("train.flat_epochs", 60)),
            "adam_beta1": float(self.get("train.adam_beta1", 0.9)),
            "adam_beta2": float(self.get("train.adam_beta2", 0.999)),
            "adam_eps": float(self.get("train.adam_eps", 1e-8)),
            "seed": self.seed if seed is None else seed,
        }
        params.update(overrides or {})
        cfg = TrainConfig(**params)
        cfg.validate()
        return cfg


def _humps(n: int, centers: list[tuple[float, float]], low: float) -> np.ndarray:
    x = (np.arange(n) + 0.5) / n
    out = np.full(n, low, dtype=np.float64)
    for center, width in centers:
        out += np.exp(-0.5 * ((x - center) / width) ** 2)
    return out


def _mean_one(profile: np.ndarray) -> np.ndarray:
    return profile / profile.mean()


def gravity_demand(
    graph: MetroGraph, scale: float, decay: float, hotspots: dict[int, float] | None = None
) -> np.ndarray:
    """Gravity-style rates: scale * w_o * w_d / hops^decay, zero on diagonal
    and on unreachable pairs."""
    n = graph.station_count
    weight = np.ones(n)
    for station, mult in (hotspots or {}).items():
        weight[station] = mult
    hops = all_pairs_hops(graph).astype(np.float64)
    with np.errstate(divide="ignore"):
        inv = np.where(hops > 0, hops, np.inf) ** -decay
    matrix = scale * np.outer(weight, weight) * inv
    matrix[hops < 0] = 0.0
    np.fill_diagonal(matrix, 0.0)
    return matrix
