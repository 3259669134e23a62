"""Training/evaluation report files: JSON lines, CSV, and rendered figures.

Figures use the Agg backend and are written next to the delimited outputs,
so a training run leaves a checkpoint, a JSONL report, a CSV of the loss
curve, and a PNG of the same curve in one place.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .training import EpochRecord


def write_train_report_jsonl(records: list[EpochRecord], path: str | Path) -> None:
    """One JSON object per epoch: {epoch, train_loss, val_loss, seconds}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def read_train_report_jsonl(path: str | Path) -> list[EpochRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        records.append(
            EpochRecord(
                epoch=int(d["epoch"]),
                train_loss=float(d["train_loss"]),
                val_loss=float(d["val_loss"]),
                seconds=float(d["seconds"]),
            )
        )
    return records


def write_train_report_csv(records: list[EpochRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for rec in records:
            writer.writerow(
                [rec.epoch, repr(rec.train_loss), repr(rec.val_loss), f"{rec.seconds:.3f}"]
            )


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_loss_curve(records: list[EpochRecord], path: str | Path) -> None:
    """Train/validation loss vs. epoch, saved as a PNG."""
    plt = _plt()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.train_loss for r in records], label="train")
    ax.plot(epochs, [r.val_loss for r in records], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("contrastive loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_recall_chart(report: dict, path: str | Path) -> None:
    """Recall@k bars for the model and the text-only baseline arm."""
    plt = _plt()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ks = [str(k) for k in report.get("ks", [])]
    model = [report["recall"][k] for k in ks]
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = range(len(ks))
    width = 0.38
    ax.bar([x - width / 2 for x in xs], model, width=width, label="model")
    baseline = report.get("baseline")
    if baseline:
        base = [baseline["recall"][k] for k in ks]
        ax.bar(
            [x + width / 2 for x in xs],
            base,
            width=width,
            label=baseline.get("label", "baseline"),
        )
    ax.set_xticks(list(xs), [f"@{k}" for k in ks])
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("recall")
    ax.set_title(f"{report.get('protocol')} / {report.get('relevance')}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
