import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from odcast.cli import main

TINY_CONFIG = {
    "schema_version": 1,
    "seed": 11,
    "graph": {
        "stations": 5,
        "edges": [[0, 1], [1, 2], [2, 3], [3, 4], [4, 0]],
    },
    "simulate": {
        "days": 8,
        "intervals_per_day": 12,
        "max_trip_intervals": 4,
        "per_hop_intervals": 1.0,
        "travel_noise": 0.4,
        "tide_pairs": [[0, 2]],
        "tide_amplitude": 0.5,
        "day_factor_sigma": 0.2,
        "demand": {"kind": "gravity", "scale": 1.2, "decay": 1.0},
        "weekday_profile": {"kind": "bimodal"},
        "weekend_profile": {"kind": "midday"},
    },
    "preprocess": {
        "num_pairs": 3,
        "input_len": 2,
        "output_len": 2,
        "splits": {"train_days": 6, "val_days": 1, "test_days": 1},
    },
    "model": {
        "hidden_dim": 8,
        "num_heads": 2,
        "use_uod_long": True,
        "use_uod_short": True,
        "interaction": "dit",
    },
    "train": {
        "batch_size": 16,
        "epochs": 2,
        "base_lr": 0.001,
        "decay_factor": 0.2,
        "decay_every_epochs": 20,
    },
    "evaluate": {"plots": True},
    "ablate": {
        "epochs": 1,
        "inputs": ["iod", "iod_u", "full"],
        "interactions": ["none", "dit"],
    },
}


def write_config(tmp_path, overrides=None):
    cfg = json.loads(json.dumps(TINY_CONFIG))
    for key, value in (overrides or {}).items():
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def run(args):
    return main([str(a) for a in args])


def test_simulate_zero_demand_empty_log(tmp_path):
    cfg = write_config(tmp_path, {"simulate.demand": {"kind": "uniform", "rate": 0.0}})
    out = tmp_path / "out"
    assert run(["simulate", "--config", cfg, "--out", out]) == 0
    log_lines = (out / "log.csv").read_text().splitlines()
    assert log_lines == ["entry_station,entry_interval,exit_station,exit_interval"]


def test_missing_config_key_error(tmp_path, capsys):
    cfg_data = json.loads(json.dumps(TINY_CONFIG))
    del cfg_data["train"]["base_lr"]
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg_data))
    out = tmp_path / "out"
    assert run(["simulate", "--config", path, "--out", out]) == 0
    assert run(["preprocess", "--config", path, "--out", out]) == 0
    code = run(["train", "--config", path, "--out", out])
    captured = capsys.readouterr()
    assert code != 0
    assert captured.err.startswith("error:MissingKeyError:")
    assert "train.base_lr" in captured.err


def test_stale_config_schema_error(tmp_path, capsys):
    cfg = write_config(tmp_path, {"schema_version": 42})
    code = run(["simulate", "--config", cfg, "--out", tmp_path / "out"])
    assert code != 0
    assert capsys.readouterr().err.startswith("error:SchemaVersionError:")


@pytest.fixture(scope="module")
def pipeline_once(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("pipeline")
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    for command in ("simulate", "preprocess", "train", "evaluate"):
        assert run([command, "--config", cfg, "--out", out]) == 0, command
    return cfg, out


def test_pipeline_artifacts_exist(pipeline_once):
    _, out = pipeline_once
    for name in (
        "log.csv", "graph.txt", "store/manifest.json", "store/norm_stats.json",
        "checkpoint.zip", "history.csv", "report.json", "report.csv",
        "mape_by_horizon.png", "loss_curve.png", "run_meta.json",
    ):
        assert (out / name).exists(), name


def test_report_content_sane(pipeline_once):
    _, out = pipeline_once
    report = json.loads((out / "report.json").read_text())
    assert report["horizons"] == [1, 2]
    assert len(report["od"]["mape"]) == 2
    assert all(v >= 0 for v in report["od"]["mape"])
    assert "baseline_ha" in report


def test_pipeline_byte_identical_rerun(pipeline_once, tmp_path):
    cfg_src, out_first = pipeline_once
    cfg = write_config(tmp_path)
    out = tmp_path / "out2"
    for command in ("simulate", "preprocess", "train", "evaluate"):
        assert run([command, "--config", cfg, "--out", out]) == 0
    for rel in ("log.csv", "store/manifest.json", "store/od_map.csv",
                "store/norm_stats.json", "checkpoint.zip", "history.csv",
                "report.json", "report.csv", "mape_by_horizon.png"):
        assert (out / rel).read_bytes() == (out_first / rel).read_bytes(), rel
    # timestamps live only in the sidecar, which is allowed to differ
    meta_a = json.loads((out / "run_meta.json").read_text())
    assert "finished_at" in meta_a


def test_seed_override_changes_outputs(pipeline_once, tmp_path):
    cfg_src, out_first = pipeline_once
    cfg = write_config(tmp_path)
    out = tmp_path / "out3"
    assert run(["simulate", "--config", cfg, "--out", out, "--seed", "99"]) == 0
    assert (out / "log.csv").read_bytes() != (out_first / "log.csv").read_bytes()


def test_ablate_grid_structure_and_order(pipeline_once):
    cfg, out = pipeline_once
    assert run(["ablate", "--config", cfg, "--out", out]) == 0
    lines = (out / "ablate.csv").read_text().splitlines()
    assert lines[0] == "input_variant,interaction,family,horizon,mape"
    variants = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if cells[0] not in [v[0] for v in variants]:
            variants.append((cells[0], cells[1]))
    # input variants appear in table order; interactions nested in given order
    assert [v[0] for v in variants] == ["iod", "iod_u", "full", "historical_average"]
    data = json.loads((out / "ablate.json").read_text())
    assert set(data["results"]) == {
        "iod__none", "iod__dit", "iod_u__none", "iod_u__dit",
        "full__none", "full__dit",
    }
    for rel in ("ablate/iod__none/report.json", "ablate/full__dit/checkpoint.zip"):
        assert (out / rel).exists()


def test_report_renders_summary(pipeline_once):
    cfg, out = pipeline_once
    assert run(["report", "--config", cfg, "--out", out]) == 0
    text = (out / "summary.md").read_text()
    assert "## Test metrics" in text
    assert "historical average" in text
    assert "## Ablation grid" in text


def test_report_without_inputs_fails_cleanly(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code = run(["report", "--config", cfg, "--out", tmp_path / "empty"])
    assert code != 0
    assert capsys.readouterr().err.startswith("error:")
