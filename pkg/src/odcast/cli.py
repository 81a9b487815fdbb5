"""Command-line pipeline: simulate | preprocess | train | evaluate | ablate | report.

Every subcommand takes ``--config PATH`` (one YAML file shared by all stages),
``--out DIR`` for artifacts, and ``--seed INT`` to override the config seed.
Stages communicate through files in the output directory:

    simulate    -> log.csv, graph.txt, station_names.txt
    preprocess  -> store/ (snapshot tensors, maps, norm_stats.json)
    train       -> checkpoint.zip, history.csv
    evaluate    -> report.json, report.csv, plots, run_meta.json (timestamps)
    ablate      -> ablate/<variant dirs>, ablate.csv, ablate.json
    report      -> summary.md

Exit code 0 on success; on failure a single machine-parseable line
``error:<Kind>:<message>`` goes to stderr and the exit code is nonzero.
Set ODCAST_LOG_LEVEL (DEBUG/INFO/WARNING/ERROR) to control log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import store as store_mod
from .aggregation import build_compression_maps
from .config import ExperimentConfig
from .errors import ConfigurationError
from .estimators import HistoricalAverageForecaster, RidershipForecaster
from .evaluation import evaluate, plot_report, write_report
from .simulate import TransactionLog, generate_log, read_log_csv, write_log_csv
from .topology import load_graph, save_graph
from .training import HistoryRow, fit_norm_stats, write_history_csv

logger = logging.getLogger(__name__)

# Variant grids for the ablation subcommand. Input variants are ordered to
# mirror the report tables: bare incomplete-OD first, raw unfinished counts,
# single-source destination estimates, then the full input set.
INPUT_VARIANTS = {
    "iod": {"use_uod_long": False, "use_uod_short": False, "use_u_raw": False},
    "iod_u": {"use_uod_long": False, "use_uod_short": False, "use_u_raw": True},
    "iod_u_short": {"use_uod_long": False, "use_uod_short": True, "use_u_raw": False},
    "iod_u_long": {"use_uod_long": True, "use_uod_short": False, "use_u_raw": False},
    "full": {"use_uod_long": True, "use_uod_short": True, "use_u_raw": False},
}
INTERACTION_VARIANTS = ("none", "single_station", "dit")


def _setup_logging() -> None:
    level = os.environ.get("ODCAST_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _write_run_meta(out_dir: Path, command: str) -> None:
    meta = {
        "command": command,
        "finished_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    (out_dir / "run_meta.json").write_text(json.dumps(meta, indent=1) + "\n")


def cmd_simulate(cfg: ExperimentConfig, out_dir: Path, seed: int) -> None:
    graph = cfg.build_graph()
    sim_cfg = cfg.build_sim_config(graph, seed=seed)
    log = generate_log(sim_cfg)
    save_graph(graph, out_dir / "graph.txt", out_dir / "station_names.txt")
    write_log_csv(log, out_dir / "log.csv")
    logger.info("wrote %d transactions to %s", len(log), out_dir / "log.csv")
    _write_run_meta(out_dir, "simulate")


def cmd_preprocess(cfg: ExperimentConfig, out_dir: Path, seed: int) -> None:
    graph = load_graph(out_dir / "graph.txt", out_dir / "station_names.txt")
    log = read_log_csv(out_dir / "log.csv")
    pre = cfg.preprocess_params()
    train_span = pre["splits"]["train"]
    train_mask = (log.entry_interval >= train_span[0]) & (
        log.entry_interval < train_span[1]
    )
    train_log = TransactionLog(
        log.entry_station[train_mask], log.entry_interval[train_mask],
        log.exit_station[train_mask], log.exit_interval[train_mask],
    )
    maps = build_compression_maps(train_log, graph.station_count, pre["num_pairs"])
    store_dir = out_dir / "store"
    store_mod.write_store(
        store_dir, log, graph, maps,
        intervals_per_day=int(cfg.get("simulate.intervals_per_day")),
        input_len=pre["input_len"], output_len=pre["output_len"],
        splits=pre["splits"], start_weekday=pre["start_weekday"],
    )
    splits = store_mod.load_dataset(store_dir)
    stats = fit_norm_stats(splits.train.samples)
    payload = {"schema_version": 1, **stats.to_dict()}
    (store_dir / "norm_stats.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n"
    )
    logger.info(
        "store written: %d/%d/%d train/val/test samples",
        len(splits.train), len(splits.val), len(splits.test),
    )
    _write_run_meta(out_dir, "preprocess")


def _estimator_from_config(cfg: ExperimentConfig, seed: int, model_overrides=None,
                           train_overrides=None) -> RidershipForecaster:
    train_overrides = dict(train_overrides or {})
    model_overrides = dict(model_overrides or {})
    train_cfg = cfg.build_train_config(seed=seed, overrides=train_overrides)
    return RidershipForecaster(
        hidden_dim=int(cfg.get("model.hidden_dim")),
        num_heads=int(cfg.get("model.num_heads")),
        use_uod_long=model_overrides.get(
            "use_uod_long", bool(cfg.get("model.use_uod_long", True))
        ),
        use_uod_short=model_overrides.get(
            "use_uod_short", bool(cfg.get("model.use_uod_short", True))
        ),
        use_u_raw=model_overrides.get(
            "use_u_raw", bool(cfg.get("model.use_u_raw", False))
        ),
        interaction=model_overrides.get(
            "interaction", str(cfg.get("model.interaction", "dit"))
        ),
        scaled_attention=bool(cfg.get("model.scaled_attention", True)),
        batch_size=train_cfg.batch_size,
        epochs=train_cfg.epochs,
        base_lr=train_cfg.base_lr,
        decay_factor=train_cfg.decay_factor,
        decay_every_epochs=train_cfg.decay_every_epochs,
        schedule=train_cfg.schedule,
        flat_epochs=train_cfg.flat_epochs,
        adam_beta1=train_cfg.adam_beta1,
        adam_beta2=train_cfg.adam_beta2,
        adam_eps=train_cfg.adam_eps,
        seed=train_cfg.seed,
    )


def cmd_train(cfg: ExperimentConfig, out_dir: Path, seed: int) -> None:
    splits = store_mod.load_dataset(out_dir / "store")
    estimator = _estimator_from_config(cfg, seed)
    estimator.fit(splits.train, val_set=splits.val)
    estimator.save(out_dir / "checkpoint.zip")
    write_history_csv(estimator.history_, out_dir / "history.csv")
    logger.info(
        "best epoch %d (val MAPE %.4f); checkpoint at %s",
        estimator.best_epoch_,
        -1 if estimator.best_val_mape_ is None else estimator.best_val_mape_,
        out_dir / "checkpoint.zip",
    )
    _write_run_meta(out_dir, "train")


def _read_history_rows(path: Path):
    if not path.exists():
        return None
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for cells in reader:
            rows.append(HistoryRow(int(cells[0]), int(cells[1]), float(cells[2])))
    return rows or None


def cmd_evaluate(cfg: ExperimentConfig, out_dir: Path, seed: int) -> None:
    splits = store_mod.load_dataset(out_dir / "store")
    estimator = RidershipForecaster.from_checkpoint(out_dir / "checkpoint.zip")
    model_cfg = estimator.model_.cfg
    if (model_cfg.num_stations, model_cfg.num_pairs) != (
        splits.test.num_stations, splits.test.num_pairs,
    ):
        raise ConfigurationError(
            "checkpoint shapes do not match the sample store "
            f"({model_cfg.num_stations}x{model_cfg.num_pairs} vs "
            f"{splits.test.num_stations}x{splits.test.num_pairs})"
        )
    baseline = HistoricalAverageForecaster().fit(splits.train)
    report = evaluate(estimator, splits.test, baseline=baseline)
    write_report(report, out_dir)
    if bool(cfg.get("evaluate.plots", True)):
        plot_report(report, out_dir,
                    history_rows=_read_history_rows(out_dir / "history.csv"))
    logger.info(
        "test OD MAPE by horizon: %s",
        ["%.4f" % v for v in report["od"]["mape"]],
    )
    _write_run_meta(out_dir, "evaluate")


def cmd_ablate(cfg: ExperimentConfig, out_dir: Path, seed: int) -> None:
    splits = store_mod.load_dataset(out_dir / "store")
    inputs = cfg.get("ablate.inputs", list(INPUT_VARIANTS))
    interactions = cfg.get("ablate.interactions", list(INTERACTION_VARIANTS))
    for name in inputs:
        if name not in INPUT_VARIANTS:
            raise ConfigurationError(f"unknown ablate input variant {name!r}")
    for name in interactions:
        if name not in INTERACTION_VARIANTS:
            raise ConfigurationError(f"unknown ablate interaction {name!r}")
    train_overrides = {}
    if cfg.get("ablate.epochs", None) is not None:
        train_overrides["epochs"] = int(cfg.get("ablate.epochs"))
    baseline = HistoricalAverageForecaster().fit(splits.train)
    rows = []
    results = {}
    for input_name in inputs:
        for interaction in interactions:
            variant = f"{input_name}__{interaction}"
            logger.info("ablate variant %s", variant)
            estimator = _estimator_from_config(
                cfg, seed,
                model_overrides={**INPUT_VARIANTS[input_name], "interaction": interaction},
                train_overrides=train_overrides,
            )
            estimator.fit(splits.train, val_set=splits.val)
            report = evaluate(estimator, splits.test)
            variant_dir = out_dir / "ablate" / variant
            variant_dir.mkdir(parents=True, exist_ok=True)
            estimator.save(variant_dir / "checkpoint.zip")
            write_report(report, variant_dir)
            results[variant] = report
            for family in ("od", "do"):
                for h, value in zip(report["horizons"], report[family]["mape"]):
                    rows.append([input_name, interaction, family, h, repr(float(value))])
    ha_report = evaluate(baseline, splits.test)
    for family in ("od", "do"):
        for h, value in zip(ha_report["horizons"], ha_report[family]["mape"]):
            rows.append(["historical_average", "", family, h, repr(float(value))])
    with open(out_dir / "ablate.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["input_variant", "interaction", "family", "horizon", "mape"])
        writer.writerows(rows)
    (out_dir / "ablate.json").write_text(
        json.dumps({"schema_version": 1, "results": results}, sort_keys=True, indent=1)
        + "\n"
    )
    _write_run_meta(out_dir, "ablate")


def cmd_report(cfg: ExperimentConfig, out_dir: Path, seed: int) -> None:
    lines = ["# Experiment summary", ""]
    report_path = out_dir / "report.json"
    if report_path.exists():
        report = json.loads(report_path.read_text())
        lines += ["## Test metrics", ""]
        header = "| family | " + " | ".join(
            f"h{h}" for h in report["horizons"]
        ) + " | mean |"
        sep = "|" + "---|" * (len(report["horizons"]) + 2)
        for section, title in (("", "model"), ("baseline_ha", "historical average")):
            block = report if not section else report.get(section)
            if not block or "od" not in block:
                continue
            lines += [f"### {title}", "", header, sep]
            for family in ("od", "do"):
                metrics = block[family]
                cells = " | ".join(f"{v:.4f}" for v in metrics["mape"])
                lines.append(
                    f"| {family.upper()} | {cells} | {metrics['mape_mean']:.4f} |"
                )
            lines.append("")
    ablate_path = out_dir / "ablate.json"
    if ablate_path.exists():
        ablate = json.loads(ablate_path.read_text())["results"]
        lines += ["## Ablation grid (mean network MAPE)", ""]
        lines += ["| input variant | interaction | OD | DO |", "|---|---|---|---|"]
        for input_name in INPUT_VARIANTS:
            for interaction in INTERACTION_VARIANTS:
                variant = f"{input_name}__{interaction}"
                if variant not in ablate:
                    continue
                rep = ablate[variant]
                lines.append(
                    f"| {input_name} | {interaction} | "
                    f"{rep['od']['mape_mean']:.4f} | {rep['do']['mape_mean']:.4f} |"
                )
        lines.append("")
    if len(lines) <= 2:
        raise ConfigurationError(
            "nothing to report: run evaluate and/or ablate first"
        )
    (out_dir / "summary.md").write_text("\n".join(lines) + "\n")
    logger.info("summary written to %s", out_dir / "summary.md")
    _write_run_meta(out_dir, "report")


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odcast",
        description="Online metro origin-destination forecasting pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--out", required=True, help="artifact directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        seed = cfg.seed if args.seed is None else args.seed
        np.random.seed(seed % 2**32)  # belt and braces; all stages seed explicitly
        COMMANDS[args.command](cfg, out_dir, seed)
    except Exception as exc:  # noqa: BLE001 - single reporting point
        print(f"error:{type(exc).__name__}:{exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
