"""Network-wide error metrics, the historical-average baseline, and reports.

The headline metric is the network-wide mean absolute percentage error: total
absolute deviation over all station-pair cells divided by total true ridership,
reported per forecast horizon, in raw count units. Predictions are clamped at
zero before scoring.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .aggregation import CompressionMaps, SampleSet
from .errors import UndefinedMetricError

REPORT_SCHEMA_VERSION = 1


def network_mape(pred: np.ndarray, truth: np.ndarray) -> float:
    """sum |pred - truth| / sum |truth| over every cell of the given arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    denom = float(np.abs(truth).sum())
    if denom == 0.0:
        raise UndefinedMetricError("network MAPE undefined for all-zero truth")
    return float(np.abs(pred - truth).sum() / denom)


def split_group_mape(
    pred: np.ndarray, truth: np.ndarray, maps: CompressionMaps
) -> tuple[float | None, float | None]:
    """Network MAPE restricted to the mapped top-(K-1) columns and to the merged
    remainder column separately; a group with all-zero truth reports None."""
    k = maps.num_pairs
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.shape[-1] != k:
        raise ValueError(
            f"shape mismatch: pred {pred.shape}, truth {truth.shape}, K={k}"
        )

    def guarded(p, t):
        try:
            return network_mape(p, t)
        except UndefinedMetricError:
            return None

    return (
        guarded(pred[..., : k - 1], truth[..., : k - 1]),
        guarded(pred[..., k - 1:], truth[..., k - 1:]),
    )


class HistoricalAverageForecaster(BaseEstimator):
    """Periodic baseline: the forecast for a target interval is the mean
    OD/DO matrix over training targets sharing its weekday and interval-of-day.
    Groups unseen in training fall back to the pooled mean over all targets.
    """

    def fit(self, sample_set: SampleSet, y=None):
        d = sample_set.intervals_per_day
        w0 = sample_set.start_weekday
        sums: dict[tuple[int, int], list] = {}
        pooled_od = None
        pooled_do = None
        count = 0
        for sample in sample_set.samples:
            for j in range(sample_set.output_len):
                interval = sample.reference + 1 + j
                key = ((interval // d + w0) % 7, interval % d)
                od = sample.od_targets[j].astype(np.float64)
                do = sample.do_targets[j].astype(np.float64)
                if key not in sums:
                    sums[key] = [np.zeros_like(od), np.zeros_like(do), 0]
                sums[key][0] += od
                sums[key][1] += do
                sums[key][2] += 1
                pooled_od = od if pooled_od is None else pooled_od + od
                pooled_do = do if pooled_do is None else pooled_do + do
                count += 1
        if count == 0:
            raise ValueError("historical average needs at least one training target")
        self.group_means_ = {
            key: (od_sum / n, do_sum / n) for key, (od_sum, do_sum, n) in sums.items()
        }
        self.pooled_mean_ = (pooled_od / count, pooled_do / count)
        self.intervals_per_day_ = d
        self.start_weekday_ = w0
        return self

    def predict(self, sample_set: SampleSet) -> tuple[np.ndarray, np.ndarray]:
        d = self.intervals_per_day_
        w0 = self.start_weekday_
        od_out, do_out = [], []
        for sample in sample_set.samples:
            od_rows, do_rows = [], []
            for j in range(sample_set.output_len):
                interval = sample.reference + 1 + j
                key = ((interval // d + w0) % 7, interval % d)
                od, do = self.group_means_.get(key, self.pooled_mean_)
                od_rows.append(od)
                do_rows.append(do)
            od_out.append(np.stack(od_rows))
            do_out.append(np.stack(do_rows))
        return np.stack(od_out), np.stack(do_out)


def horizon_metrics(
    od_pred: np.ndarray,
    do_pred: np.ndarray,
    sample_set: SampleSet,
    maps: CompressionMaps,
) -> dict:
    """Per-horizon MAPE and split-group MAPE for stacked (S, m, N, K) predictions."""
    od_truth = np.stack([s.od_targets for s in sample_set.samples]).astype(np.float64)
    do_truth = np.stack([s.do_targets for s in sample_set.samples]).astype(np.float64)
    if od_pred.shape != od_truth.shape or do_pred.shape != do_truth.shape:
        raise ValueError(
            f"prediction shape {od_pred.shape}/{do_pred.shape} does not match "
            f"targets {od_truth.shape}/{do_truth.shape}"
        )
    m = sample_set.output_len
    out = {"od": _family_metrics(od_pred, od_truth, m, maps),
           "do": _family_metrics(do_pred, do_truth, m, maps)}
    return out


def _family_metrics(pred, truth, m, maps):
    mape, topk, rem = [], [], []
    for j in range(m):
        mape.append(network_mape(pred[:, j], truth[:, j]))
        t, r = split_group_mape(pred[:, j], truth[:, j], maps)
        topk.append(t)
        rem.append(r)
    return {
        "mape": mape,
        "topk_mape": topk,
        "remainder_mape": rem,
        "mape_mean": float(np.mean(mape)),
    }


def evaluate(
    predictor,
    test_set: SampleSet,
    maps: CompressionMaps | None = None,
    baseline=None,
) -> dict:
    """Score a fitted predictor (anything with ``predict(SampleSet)`` returning
    raw-count (S, m, N, K) stacks) on a sample set; optionally score a fitted
    baseline alongside for comparison."""
    maps = maps or test_set.maps
    od_pred, do_pred = predictor.predict(test_set)
    od_pred = np.clip(np.asarray(od_pred, dtype=np.float64), 0.0, None)
    do_pred = np.clip(np.asarray(do_pred, dtype=np.float64), 0.0, None)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "horizons": list(range(1, test_set.output_len + 1)),
        "num_samples": len(test_set),
    }
    report.update(horizon_metrics(od_pred, do_pred, test_set, maps))
    if baseline is not None:
        od_b, do_b = baseline.predict(test_set)
        base = horizon_metrics(
            np.clip(np.asarray(od_b, dtype=np.float64), 0.0, None),
            np.clip(np.asarray(do_b, dtype=np.float64), 0.0, None),
            test_set, maps,
        )
        report["baseline_ha"] = base
    return report


def write_report(report: dict, out_dir: str | Path) -> None:
    """report.json (sorted keys) plus a flat CSV mirror; both timestamp-free."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=1) + "\n"
    )
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "family", "metric", "horizon", "value"])
        for section, famkey in (("model", None), ("baseline_ha", "baseline_ha")):
            block = report if famkey is None else report.get(famkey)
            if block is None:
                continue
            for family in ("od", "do"):
                metrics = block.get(family)
                if not metrics:
                    continue
                for metric in ("mape", "topk_mape", "remainder_mape"):
                    for h, value in zip(report["horizons"], metrics[metric]):
                        writer.writerow(
                            [section, family, metric, h,
                             "" if value is None else repr(float(value))]
                        )
                writer.writerow(
                    [section, family, "mape_mean", "", repr(float(metrics["mape_mean"]))]
                )


def plot_report(report: dict, out_dir: str | Path, history_rows=None) -> list[Path]:
    """Static comparison plots; returns the written paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    horizons = report["horizons"]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)
    for ax, family in zip(axes, ("od", "do")):
        width = 0.35
        xs = np.arange(len(horizons))
        ax.bar(xs - width / 2, report[family]["mape"], width, label="model")
        if "baseline_ha" in report:
            ax.bar(xs + width / 2, report["baseline_ha"][family]["mape"], width,
                   label="historical average")
        ax.set_xticks(xs, [str(h) for h in horizons])
        ax.set_xlabel("horizon")
        ax.set_title(family.upper())
    axes[0].set_ylabel("network MAPE")
    axes[0].legend()
    fig.tight_layout()
    path = out_dir / "mape_by_horizon.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)
    if history_rows:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot([r.step for r in history_rows], [r.train_loss for r in history_rows],
                lw=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("training MAE (normalized)")
        fig.tight_layout()
        path = out_dir / "loss_curve.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
