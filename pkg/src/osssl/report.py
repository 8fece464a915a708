"""Run reports: CSV summaries plus rendered figures.

`report` takes a training run directory (metrics.jsonl) or an ablation
directory (ablation.csv) and writes per-epoch curves as CSV for external
plotting, a summary CSV, and PNG figures of the main curves next to them.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import DataError

_CURVE_FIELDS = (
    "test_acc",
    "auroc_baseline",
    "auroc_prototype",
    "id_density_level1",
    "id_density_level2",
    "loss_total",
    "loss_sup",
    "loss_unsup",
    "loss_cluster",
    "gate_open_ssl",
    "gate_open_cluster",
)


def load_metrics(run_dir: Path) -> list[dict]:
    path = run_dir / "metrics.jsonl"
    if not path.exists():
        raise DataError(f"no metrics.jsonl in {run_dir}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise DataError(f"empty metrics log in {run_dir}")
    return records


def write_curves_csv(records: list[dict], path: Path) -> None:
    fields = ["epoch"] + [f for f in _CURVE_FIELDS if f in records[0]]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for r in records:
            writer.writerow(r)


def write_summary_csv(records: list[dict], path: Path) -> None:
    last = records[-1]
    accs = [r["test_acc"] for r in records[-10:]]
    row = {
        "epochs": len(records),
        "final_acc_last10": float(np.mean(accs)),
        "last_test_acc": last["test_acc"],
        "auroc_baseline": last.get("auroc_baseline"),
        "auroc_prototype": last.get("auroc_prototype"),
        "id_density_level1": last.get("id_density_level1"),
        "id_density_level2": last.get("id_density_level2"),
    }
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)


def _series(records: list[dict], key: str):
    xs, ys = [], []
    for r in records:
        v = r.get(key)
        if v is not None:
            xs.append(r["epoch"])
            ys.append(v)
    return xs, ys


def render_run_figures(records: list[dict], out_dir: Path) -> list[Path]:
    written = []

    def save(fig, name):
        path = out_dir / name
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(*_series(records, "test_acc"), label="test accuracy")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    ax.legend()
    save(fig, "accuracy.png")

    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label in (("auroc_baseline", "max-prob baseline"), ("auroc_prototype", "prototype margin")):
        xs, ys = _series(records, key)
        if xs:
            ax.plot(xs, ys, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("AUROC")
    ax.grid(alpha=0.3)
    ax.legend()
    save(fig, "auroc.png")

    fig, ax = plt.subplots(figsize=(6, 4))
    any_density = False
    for key, label in (("id_density_level1", "pool level 1"), ("id_density_level2", "pool level 2")):
        xs, ys = _series(records, key)
        if xs:
            ax.plot(xs, ys, label=label)
            any_density = True
    if any_density:
        ax.set_xlabel("epoch")
        ax.set_ylabel("ID density")
        ax.set_ylim(0, 1)
        ax.grid(alpha=0.3)
        ax.legend()
        save(fig, "id_density.png")
    else:
        plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("loss_total", "loss_sup", "loss_unsup", "loss_cluster"):
        xs, ys = _series(records, key)
        if xs:
            ax.plot(xs, ys, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    ax.legend()
    save(fig, "losses.png")
    return written


def render_ablation_figure(rows: list[dict], out_dir: Path) -> Path:
    order = []
    grouped: dict[str, list[float]] = {}
    for r in rows:
        if r.get("final_acc") in (None, ""):
            continue
        name = r["row"]
        if name not in grouped:
            grouped[name] = []
            order.append(name)
        grouped[name].append(float(r["final_acc"]))
    fig, ax = plt.subplots(figsize=(7, 4))
    means = [float(np.mean(grouped[n])) for n in order]
    stds = [float(np.std(grouped[n])) for n in order]
    ax.bar(range(len(order)), means, yerr=stds, capsize=3)
    ax.set_xticks(range(len(order)))
    ax.set_xticklabels(order, rotation=30, ha="right")
    ax.set_ylabel("final accuracy (last-10 mean)")
    ax.grid(alpha=0.3, axis="y")
    path = out_dir / "ablation.png"
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def report(run_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Emit CSVs and figures for a run or ablation directory; returns the
    written paths."""
    run_path = Path(run_dir)
    out_path = Path(out_dir) if out_dir is not None else run_path
    out_path.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    ablation_csv = run_path / "ablation.csv"
    if ablation_csv.exists():
        with open(ablation_csv, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        written.append(render_ablation_figure(rows, out_path))
        return written

    records = load_metrics(run_path)
    curves = out_path / "curves.csv"
    write_curves_csv(records, curves)
    written.append(curves)
    summary = out_path / "summary.csv"
    write_summary_csv(records, summary)
    written.append(summary)
    written.extend(render_run_figures(records, out_path))
    return written
