"""Rendering of experiment reports: split-column comparison tables and plots."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from telesto.errors import DataError
from telesto.metrics import METRIC_NAMES

METRIC_LABELS = {"accuracy": "Accuracy", "recall": "Recall", "precision": "Precision", "f1": "F1-Score"}
MODEL_LABELS = {"telesto": "TELESTO", "gcn": "GCN", "gin": "GIN"}
AVERAGE = "∅"


def load_report(path: str | Path) -> dict:
    path = Path(path)
    try:
        report = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"report not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(report, dict) or not {"model", "folds", "mean"} <= set(report):
        raise DataError(f"{path}: not an experiment report")
    return report


def _split_count(reports: Sequence[Mapping]) -> int:
    return max(max((f["fold"] for f in r["folds"]), default=0) for r in reports)


def _row(cells: Sequence[str]) -> str:
    return "| " + " | ".join(cells) + " |"


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.3f}"


def comparison_table(reports: Sequence[Mapping]) -> str:
    """One row block per model: four metrics over Split 1..k plus the average."""
    if not reports:
        raise DataError("no reports to render")
    k = _split_count(reports)
    lines = [
        _row(["Model", "Metric", *(f"Split {i}" for i in range(1, k + 1)), AVERAGE]),
        _row(["---"] * (k + 3)),
    ]
    for report in reports:
        by_fold = {f["fold"]: f["mean"] for f in report["folds"]}
        name = MODEL_LABELS.get(report["model"], report["model"])
        if len({r["dataset"] for r in reports}) > 1:
            name = f"{name} ({report['dataset']})"
        for j, metric in enumerate(METRIC_NAMES):
            cells = [_fmt(by_fold[i][metric]) if i in by_fold else "" for i in range(1, k + 1)]
            lines.append(_row([name if j == 0 else "", METRIC_LABELS[metric], *cells,
                               _fmt(report["mean"][metric])]))
    return "\n".join(lines) + "\n"


def dataset_table(reports: Sequence[Mapping], metric: str = "accuracy") -> str:
    """Per-dataset rows of one metric, the layout used to compare service nodes."""
    k = _split_count(reports)
    lines = [
        _row(["Data Set", *(f"Split {i}" for i in range(1, k + 1)), AVERAGE]),
        _row(["---"] * (k + 2)),
    ]
    for report in reports:
        by_fold = {f["fold"]: f["mean"][metric] for f in report["folds"]}
        label = report["dataset"]
        if len({r["model"] for r in reports}) > 1:
            label = f"{label} ({MODEL_LABELS.get(report['model'], report['model'])})"
        lines.append(_row([label, *(_fmt(by_fold.get(i)) for i in range(1, k + 1)),
                           _fmt(report["mean"][metric])]))
    return "\n".join(lines) + "\n"


def render_markdown(reports: Sequence[Mapping]) -> str:
    out = ["## Model comparison", "", comparison_table(reports)]
    if len({r["dataset"] for r in reports}) > 1:
        out += ["## Accuracy per data set", "", dataset_table(reports)]
    return "\n".join(out)


def mean_confusion(report: Mapping) -> np.ndarray:
    """Confusion matrix summed over every fold and run."""
    mats = [np.asarray(run["confusion"]) for f in report["folds"] for run in f["runs"]]
    return np.sum(mats, axis=0)


def plot_loss_curves(report: Mapping, path: str | Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for f in report["folds"]:
        for run in f["runs"]:
            epochs = [h["epoch"] for h in run["history"]]
            ax.plot(epochs, [h["train_loss"] for h in run["history"]], color="tab:blue", alpha=0.4)
            val = [h.get("val_loss") for h in run["history"]]
            if all(v is not None for v in val):
                ax.plot(epochs, val, color="tab:orange", alpha=0.4)
    ax.plot([], [], color="tab:blue", label="train")
    ax.plot([], [], color="tab:orange", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax.set_title(f"{MODEL_LABELS.get(report['model'], report['model'])} on {report['dataset']}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_confusion(report: Mapping, path: str | Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cm = mean_confusion(report)
    classes = report["classes"]
    rates = cm / np.maximum(cm.sum(1, keepdims=True), 1)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(rates, cmap="Blues", vmin=0, vmax=1)
    ax.set_xticks(range(len(classes)), classes)
    ax.set_yticks(range(len(classes)), classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(len(classes)):
        for j in range(len(classes)):
            ax.text(j, i, int(cm[i, j]), ha="center", va="center",
                    color="white" if rates[i, j] > 0.5 else "black", fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
