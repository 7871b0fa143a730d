"""Report files and figures.

Evaluation writes a flat key-value metrics file, degree-rank CSVs, and a
rendered degree-rank figure; the comparison path aggregates several runs
into one CSV plus a bar-chart figure. The same key=value format serves
config files and checkpoint sidecars.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import DegreeTable, MetricsReport

COMPARISON_COLUMNS = ("model", "mae", "mse", "accuracy", "auroc", "precision")


def write_kv(data: dict, path) -> None:
    with open(path, "w") as fh:
        for key, value in data.items():
            fh.write(f"{key}={value}\n")


def read_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def write_metrics_report(report: MetricsReport, path, model: str = "") -> None:
    data = {"model": model} if model else {}
    data.update({k: repr(v) for k, v in report.as_flat_dict().items()})
    write_kv(data, path)


def write_degree_rank_csv(table: DegreeTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "node_id", "actual_degree", "predicted_degree"])
        for row in table.rows():
            writer.writerow(row)


def read_degree_rank_csv(path) -> list[tuple[int, int, int, int]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            rows.append(tuple(int(v) for v in row))
    return rows


def save_degree_rank_figure(ip_table: DegreeTable, port_table: DegreeTable, path) -> None:
    """Ranked connectivity curves, actual vs forecast, for IP and Port nodes.

    Each curve is independently sorted so rank k compares the k-th most
    connected node of each series.
    """
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, table, title in ((axes[0], ip_table, "IP nodes"), (axes[1], port_table, "Port nodes")):
        actual = np.sort(table.actual)[::-1]
        predicted = np.sort(table.predicted)[::-1]
        ranks = np.arange(1, len(actual) + 1)
        ax.plot(ranks, actual, marker="o", markersize=3, label="actual")
        ax.plot(ranks, predicted, marker="s", markersize=3, label="forecast")
        ax.set_title(title)
        ax.set_xlabel("rank")
        ax.set_ylabel("degree")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_comparison_table(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_COLUMNS)
        for row in rows:
            writer.writerow([row["model"]] + [f"{float(row[c]):.6f}" for c in COMPARISON_COLUMNS[1:]])


def save_comparison_figure(rows: list[dict], path) -> None:
    """Bar chart of feature errors and structural macro metrics per model."""
    models = [row["model"] for row in rows]
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.8))
    x = np.arange(len(models))
    for i, metric in enumerate(("mae", "mse")):
        axes[0].bar(x + (i - 0.5) * 0.35, [float(r[metric]) for r in rows], width=0.35, label=metric.upper())
    axes[0].set_xticks(x, models)
    axes[0].set_title("Feature reconstruction error")
    axes[0].legend()
    for i, metric in enumerate(("accuracy", "auroc", "precision")):
        axes[1].bar(x + (i - 1) * 0.27, [float(r[metric]) for r in rows], width=0.27, label=metric)
    axes[1].set_xticks(x, models)
    axes[1].set_ylim(0, 1)
    axes[1].set_title("Structural prediction")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_compscore"])
        for stats in history:
            writer.writerow([stats.epoch, repr(stats.train_loss), repr(stats.val_compscore)])


def comparison_row(model: str, report: MetricsReport) -> dict:
    return {
        "model": model,
        "mae": report.mae,
        "mse": report.mse,
        "accuracy": report.macro_accuracy,
        "auroc": report.macro_auroc,
        "precision": report.macro_precision,
    }


def comparison_row_from_metrics_file(path) -> dict:
    data = read_kv(path)
    return {
        "model": data.get("model", Path(path).parent.name),
        "mae": float(data["mae"]),
        "mse": float(data["mse"]),
        "accuracy": float(data["macro_accuracy"]),
        "auroc": float(data["macro_auroc"]),
        "precision": float(data["macro_precision"]),
    }
