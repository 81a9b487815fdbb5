"""Acceptance suite: every release criterion with its stated tolerance.

Each test prints one `[criterion N] PASS/FAIL ...` line (run with `pytest -s`
to see them live). The synthetic benchmark criterion drives the bundled
configs/benchmark.yaml through the command-line pipeline end to end.
"""

import json
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import torch

from odcast import cli
from odcast.aggregation import (
    LogIndex,
    LongTermTable,
    build_compression_maps,
    build_dataset,
    build_snapshot,
    compute_dd_short,
)
from odcast.estimators import RidershipForecaster
from odcast.evaluation import evaluate, network_mape
from odcast.layers import CrossBranchAttention, gradients, init_parameters
from odcast.model import Forecaster, ModelConfig
from odcast.simulate import SimConfig, TransactionLog, generate_log
from odcast.store import load_dataset
from odcast.topology import build_graph
from odcast.training import (
    NormStats,
    TrainConfig,
    fit_norm_stats,
    mae_loss,
    tensorize,
    train,
)

from oracles import brute_force_snapshot, finite_difference_gradients, max_relative_error

REPO_ROOT = Path(__file__).resolve().parent.parent
BENCHMARK_CONFIG = REPO_ROOT / "configs" / "benchmark.yaml"
SMOKE_CONFIG = REPO_ROOT / "configs" / "smoke.yaml"


def _criterion(num: int, ok: bool, detail: str) -> None:
    print(f"\n[criterion {num}] {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num}: {detail}"


def _random_log(rng, n_stations=12, n_transactions=1000, max_interval=60, max_dur=6):
    entry_station = rng.integers(0, n_stations, n_transactions)
    exit_station = (entry_station + rng.integers(1, n_stations, n_transactions)) % n_stations
    entry_interval = rng.integers(0, max_interval, n_transactions)
    duration = rng.integers(1, max_dur + 1, n_transactions)
    return TransactionLog(
        entry_station.astype(np.int64),
        entry_interval.astype(np.int64),
        exit_station.astype(np.int64),
        (entry_interval + duration).astype(np.int64),
    ).sorted_by_entry()


# ---------------------------------------------------------------------------
# 1. aggregation oracle equivalence


def test_criterion_1_aggregation_oracle_equivalence():
    rng = np.random.default_rng(1234)
    t0 = time.time()
    mismatches = 0
    for _ in range(20):
        log = _random_log(rng)
        maps = build_compression_maps(log, 12, 5)
        index = LogIndex(log)
        for _ in range(50):
            interval = int(rng.integers(0, 66))
            reference = interval + int(rng.integers(0, 10))
            snap = build_snapshot(index, interval, reference, maps)
            iod, u, do, od = brute_force_snapshot(log, interval, reference, maps)
            if not (
                np.array_equal(snap.iod, iod)
                and np.array_equal(snap.u, u)
                and np.array_equal(snap.do, do)
                and np.array_equal(snap.od, od)
            ):
                mismatches += 1
    elapsed = time.time() - t0
    _criterion(
        1,
        mismatches == 0 and elapsed < 60.0,
        f"oracle equivalence on 20 logs x 50 (interval, reference) pairs: "
        f"{mismatches} mismatches, {elapsed:.1f}s (< 60s)",
    )


# ---------------------------------------------------------------------------
# 2. conservation and monotone completion


def test_criterion_2_conservation_and_completion():
    rng = np.random.default_rng(55)
    ok = True
    notes = []
    for _ in range(5):
        log = _random_log(rng, n_transactions=800)
        maps = build_compression_maps(log, 12, 5)
        index = LogIndex(log)
        max_dur = index.max_duration
        for interval in rng.integers(0, 60, size=8):
            interval = int(interval)
            entries = np.bincount(
                log.entry_station[log.entry_interval == interval], minlength=12
            )
            prev = None
            for reference in range(interval, interval + max_dur + 2):
                snap = build_snapshot(index, interval, reference, maps)
                if not np.array_equal(snap.iod.sum(axis=1) + snap.u, entries):
                    ok = False
                    notes.append(f"conservation broken at ({interval}, {reference})")
                if prev is not None and not (
                    np.all(snap.iod >= prev.iod) and np.all(snap.u <= prev.u)
                ):
                    ok = False
                    notes.append(f"monotone completion broken at ({interval}, {reference})")
                prev = snap
            complete = build_snapshot(index, interval, interval + max_dur, maps)
            if not (np.array_equal(complete.iod, complete.od) and complete.u.sum() == 0):
                ok = False
                notes.append(f"completion broken at interval {interval}")
    _criterion(2, ok, "conservation, monotone completion, and completion bound"
               + ("" if ok else f": {notes[:3]}"))


# ---------------------------------------------------------------------------
# 3. distribution validity


def test_criterion_3_distribution_validity():
    rng = np.random.default_rng(77)
    ok = True
    # destination distributions, fallback rows included
    log = _random_log(rng, n_stations=8, n_transactions=600, max_interval=40)
    maps = build_compression_maps(log, 8, 4)
    table = LongTermTable(log, maps, intervals_per_day=8, max_elapsed=6)
    for dow in range(7):  # dows 6+ are absent: exercises the pooled fallback
        for iv in range(8):
            for e in range(6):  # e >= max duration: uniform fallback
                rows = table.rows(dow, iv, e)
                ok &= bool(np.all(np.abs(rows.sum(axis=1) - 1.0) <= 1e-9))
                ok &= bool(np.all((rows >= 0) & (rows <= 1)))
    for interval in (2, 10, 25, 39):  # interval 2: first-day full fallback
        dds = compute_dd_short(log, interval, interval + 3, maps, 8,
                               fallback=table.rows(0, interval % 8, 3))
        ok &= bool(np.all(np.abs(dds.sum(axis=1) - 1.0) <= 1e-9))
    dd_ok = ok
    # attention rows
    att_ok = True
    for n in range(1, 17):
        att = CrossBranchAttention(8, 4)
        init_parameters(att, torch.Generator().manual_seed(n))
        h_a = torch.as_tensor(rng.normal(size=(n, 8)))
        h_b = torch.as_tensor(rng.normal(size=(n, 8)))
        with torch.no_grad():
            b2a, a2b = att.attention_weights(h_a, h_b)
        for coeff in (b2a, a2b):
            att_ok &= bool(
                np.all(np.abs(coeff.numpy().sum(axis=-1) - 1.0) <= 1e-6)
            )
    # graph weight rows
    w_ok = True
    for n in range(2, 65, 6):
        mask = rng.random((n, n)) < 0.2
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if mask[i, j]]
        g = build_graph(edges, n)
        degree = g.connectivity.sum(axis=1)
        sums = g.weights.sum(axis=1)
        w_ok &= bool(np.all(np.abs(sums[degree > 0] - 1.0) <= 1e-12))
        w_ok &= bool(np.all(sums[degree == 0] == 0.0))
    _criterion(
        3,
        dd_ok and att_ok and w_ok,
        f"row-stochasticity: dd({dd_ok}) within 1e-9, attention({att_ok}) within "
        f"1e-6, graph weights({w_ok}) within 1e-12",
    )


# ---------------------------------------------------------------------------
# 4. gradient check


def test_criterion_4_gradient_check():
    t0 = time.time()
    cfg = ModelConfig(num_stations=5, num_pairs=3, hidden_dim=8, num_heads=2,
                      input_len=2, output_len=2)
    graph = build_graph([(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)], 5)
    model = Forecaster(cfg, graph.weights, seed=7)
    rng = np.random.default_rng(7)
    T = lambda a: torch.as_tensor(np.array(a, dtype=np.float64))
    shape = (cfg.input_len, 5, 3)
    inputs = (
        T(rng.normal(size=shape)), T(rng.normal(size=shape)),
        T(rng.normal(size=shape)), T(rng.normal(size=(cfg.input_len, 5))),
        T(rng.normal(size=shape)),
    )
    od_t = T(rng.normal(size=(cfg.output_len, 5, 3)))
    do_t = T(rng.normal(size=(cfg.output_len, 5, 3)))

    def loss_value():
        with torch.no_grad():
            od, do = model(*inputs)
            return mae_loss(od, do, od_t, do_t)

    od, do = model(*inputs)
    analytic = gradients(mae_loss(od, do, od_t, do_t), model)
    numeric = finite_difference_gradients(model, loss_value, step=1e-5)
    err, worst = max_relative_error(analytic, numeric)
    n_params = sum(p.numel() for p in model.parameters())
    elapsed = time.time() - t0
    _criterion(
        4,
        err < 1e-4 and elapsed < 120.0,
        f"max relative gradient error {err:.2e} (< 1e-4) over {n_params} "
        f"parameters (worst: {worst}), {elapsed:.0f}s (< 120s)",
    )


# ---------------------------------------------------------------------------
# 5. overfit sanity


def test_criterion_5_overfit_sanity():
    t0 = time.time()
    g = build_graph([(0, 1), (1, 2), (2, 3), (3, 4)], 5)
    demand = np.ones((5, 5)) * 1.5
    np.fill_diagonal(demand, 0.0)
    d = 8
    sim = SimConfig(
        graph=g, days=6, intervals_per_day=d, base_demand=demand,
        weekday_profile=np.ones(d), weekend_profile=np.ones(d) * 0.7,
        per_hop_intervals=1.0, travel_noise=0.5, max_trip_intervals=4, seed=31,
    )
    log = generate_log(sim)
    maps = build_compression_maps(log, 5, 3)
    splits = build_dataset(log, maps, g, 2, 2, d,
                           [(0, 4 * d), (4 * d, 5 * d), (5 * d, 6 * d)])
    samples = splits.train.samples[:20]
    stats = fit_norm_stats(samples)
    data = tensorize(samples, stats)
    cfg = ModelConfig(num_stations=5, num_pairs=3, hidden_dim=8, num_heads=2,
                      input_len=2, output_len=2)
    model = Forecaster(cfg, g.weights, seed=0)
    tc = TrainConfig(batch_size=20, epochs=2000, base_lr=1e-2,
                     decay_factor=0.5, decay_every_epochs=800, seed=0)
    result = train(model, data, None, stats, tc, max_steps=2000)
    best = min(r.train_loss for r in result.history)
    elapsed = time.time() - t0
    _criterion(
        5,
        best < 0.05 and elapsed < 300.0,
        f"normalized training MAE reached {best:.4f} (< 0.05) within "
        f"{len(result.history)} steps, {elapsed:.0f}s (< 300s)",
    )


# ---------------------------------------------------------------------------
# 6. seeded synthetic benchmark


@pytest.fixture(scope="module")
def benchmark_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("benchmark")
    t0 = time.time()
    for command in ("simulate", "preprocess", "train", "evaluate"):
        code = cli.main(
            [command, "--config", str(BENCHMARK_CONFIG), "--out", str(out)]
        )
        assert code == 0, f"{command} failed"
    return SimpleNamespace(out=out, seconds=time.time() - t0)


def test_criterion_6_synthetic_benchmark(benchmark_run):
    t0 = time.time()
    out = benchmark_run.out
    report = json.loads((out / "report.json").read_text())
    full_od = report["od"]["mape"]
    full_do = report["do"]["mape"]
    ha_od = report["baseline_ha"]["od"]["mape"]
    ha_do = report["baseline_ha"]["do"]["mape"]

    splits = load_dataset(out / "store")
    from odcast.config import ExperimentConfig

    cfg = ExperimentConfig.load(BENCHMARK_CONFIG)
    variant_reports = {}
    for name, overrides in (
        ("iod_only", {"use_uod_long": False, "use_uod_short": False}),
        ("no_interaction", {"interaction": "none"}),
    ):
        est = cli._estimator_from_config(cfg, cfg.seed, model_overrides=overrides)
        est.fit(splits.train, val_set=splits.val)
        variant_reports[name] = evaluate(est, splits.test)

    iod_od_mean = float(np.mean(variant_reports["iod_only"]["od"]["mape"]))
    none_do_mean = float(np.mean(variant_reports["no_interaction"]["do"]["mape"]))
    full_od_mean = float(np.mean(full_od))
    full_do_mean = float(np.mean(full_do))

    beats_ha = all(f < h for f, h in zip(full_od, ha_od)) and all(
        f < h for f, h in zip(full_do, ha_do)
    )
    input_trend = full_od_mean <= iod_od_mean
    interaction_trend = full_do_mean <= none_do_mean
    elapsed = benchmark_run.seconds + (time.time() - t0)
    _criterion(
        6,
        beats_ha and input_trend and interaction_trend and elapsed < 1800.0,
        "benchmark: "
        f"model OD {[f'{v:.4f}' for v in full_od]} vs HA {[f'{v:.4f}' for v in ha_od]}; "
        f"model DO {[f'{v:.4f}' for v in full_do]} vs HA {[f'{v:.4f}' for v in ha_do]}; "
        f"full-input OD mean {full_od_mean:.4f} <= incomplete-only {iod_od_mean:.4f}; "
        f"cross-attention DO mean {full_do_mean:.4f} <= no-interaction {none_do_mean:.4f}; "
        f"{elapsed:.0f}s (< 1800s)",
    )


# ---------------------------------------------------------------------------
# 7. metric unit tests


def test_criterion_7_metric_units():
    hand = network_mape(
        np.array([[2.0, 1.0], [0.0, 3.0]]), np.array([[1.0, 1.0], [1.0, 3.0]])
    )
    hand_ok = hand == pytest.approx(2.0 / 6.0, abs=1e-15)

    # targets-as-predictions scores exactly zero at every horizon
    rng = np.random.default_rng(3)
    graph = build_graph([(0, 1)], 2)
    od_map = np.array([[1, -1], [0, -1]])
    from odcast.aggregation import CompressionMaps, SampleSet, SnapshotSample

    maps = CompressionMaps(od_map, od_map.copy())
    samples = []
    for ref in range(6):
        tgt = rng.integers(0, 9, (2, 2, 2)).astype(np.int64) + 1
        zero_in = np.zeros((1, 2, 2), dtype=np.int64)
        samples.append(
            SnapshotSample(ref, zero_in, np.zeros((1, 2), dtype=np.int64), zero_in,
                           np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), tgt, tgt.copy())
        )
    sample_set = SampleSet(samples, graph, maps, 4, 1, 2)

    class Identity:
        def predict(self, ss):
            return (
                np.stack([s.od_targets for s in ss.samples]).astype(float),
                np.stack([s.do_targets for s in ss.samples]).astype(float),
            )

    report = evaluate(Identity(), sample_set)
    zero_ok = all(v == 0.0 for v in report["od"]["mape"] + report["do"]["mape"])
    _criterion(
        7,
        hand_ok and zero_ok,
        f"hand MAPE {hand:.6f} == 2/6; targets-as-predictions MAPE "
        f"{report['od']['mape']} exactly zero",
    )


# ---------------------------------------------------------------------------
# 8. determinism


def test_criterion_8_determinism(benchmark_run, tmp_path):
    # first 10 optimizer steps, twice, on the benchmark store: bitwise equal
    splits = load_dataset(benchmark_run.out / "store")
    histories = []
    for _ in range(2):
        est = RidershipForecaster(hidden_dim=24, num_heads=4, epochs=1,
                                  batch_size=128, base_lr=3e-3, seed=2024,
                                  max_steps=10)
        est.fit(splits.train)
        histories.append([r.train_loss for r in est.history_])
    bitwise = histories[0] == histories[1] and len(histories[0]) == 10

    # full smoke pipeline twice: byte-identical artifacts, timestamps confined
    # to the run_meta.json sidecar
    outs = []
    for run_idx in range(2):
        out = tmp_path / f"run{run_idx}"
        for command in ("simulate", "preprocess", "train", "evaluate"):
            code = cli.main(
                [command, "--config", str(SMOKE_CONFIG), "--out", str(out)]
            )
            assert code == 0
        outs.append(out)
    compared = ["report.json", "report.csv", "history.csv", "checkpoint.zip",
                "log.csv", "store/norm_stats.json"]
    byte_identical = all(
        (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()
        for rel in compared
    )
    _criterion(
        8,
        bitwise and byte_identical,
        f"10-step loss history bitwise equal ({bitwise}); "
        f"{compared} byte-identical across reruns ({byte_identical})",
    )
