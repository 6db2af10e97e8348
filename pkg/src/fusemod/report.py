"""Rendering of metric, bench, and training results.

Every report has two faces: tab-delimited records for machines and either a
text table or a matplotlib figure for people. Figures land in the same
directory as the records so a run leaves one self-contained folder.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evalbench import BenchReport
from .models.training import EpochStats


@dataclass(frozen=True)
class MetricRow:
    label: str
    miou: float
    moving_iou: float


# ---------------------------------------------------------------------------
# delimited records

def metric_records(rows: Sequence[MetricRow]) -> str:
    lines = ["label\tmiou\tmoving_iou"]
    for r in rows:
        lines.append(f"{r.label}\t{r.miou:.4f}\t{r.moving_iou:.4f}")
    return "\n".join(lines) + "\n"


def bench_records(reports: Sequence[BenchReport]) -> str:
    lines = ["label\theight\twidth\twarmup\titers\tfps\tmean_latency_ms"]
    for r in reports:
        lines.append(
            f"{r.label}\t{r.height}\t{r.width}\t{r.warmup}\t{r.iters}"
            f"\t{r.fps:.2f}\t{r.mean_latency_ms:.3f}"
        )
    return "\n".join(lines) + "\n"


def training_records(history: Sequence[EpochStats]) -> str:
    return "\n".join(h.line() for h in history) + "\n"


# ---------------------------------------------------------------------------
# text tables

def _table(header: List[str], rows: List[List[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), rule] + [fmt(r) for r in rows]) + "\n"


def metric_table(rows: Sequence[MetricRow]) -> str:
    body = [[r.label, f"{r.miou * 100:.2f}", f"{r.moving_iou * 100:.2f}"] for r in rows]
    return _table(["Type", "mIoU", "Moving IoU"], body)


def bench_table(reports: Sequence[BenchReport]) -> str:
    body = [[r.label, f"{r.height}x{r.width}", f"{r.fps:.2f}", f"{r.mean_latency_ms:.2f}"]
            for r in reports]
    return _table(["Type", "Resolution", "fps", "Latency (ms)"], body)


# ---------------------------------------------------------------------------
# figures

def _bar_figure(labels, series, series_names, ylabel, path):
    fig, ax = plt.subplots(figsize=(max(4.0, 1.8 * len(labels)), 3.2))
    x = range(len(labels))
    width = 0.8 / len(series)
    for i, (values, name) in enumerate(zip(series, series_names)):
        offs = [xi + (i - (len(series) - 1) / 2) * width for xi in x]
        ax.bar(offs, values, width=width, label=name)
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_metric_figure(rows: Sequence[MetricRow], path) -> None:
    _bar_figure(
        [r.label for r in rows],
        [[r.miou for r in rows], [r.moving_iou for r in rows]],
        ["mIoU", "Moving IoU"],
        "IoU",
        path,
    )


def render_bench_figure(reports: Sequence[BenchReport], path) -> None:
    _bar_figure(
        [r.label for r in reports],
        [[r.fps for r in reports]],
        ["fps"],
        "frames per second",
        path,
    )


def render_training_figure(history: Sequence[EpochStats], path) -> None:
    epochs = [h.epoch for h in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(epochs, [h.loss for h in history])
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax2.plot(epochs, [h.miou for h in history], label="mIoU")
    ax2.plot(epochs, [h.moving_iou for h in history], label="Moving IoU")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("IoU")
    ax2.set_ylim(0.0, 1.05)
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# report folders: records + figure side by side

def write_metric_report(rows: Sequence[MetricRow], out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = out / "metrics.tsv"
    records.write_text(metric_records(rows))
    figure = out / "metrics.png"
    render_metric_figure(rows, figure)
    return [records, figure]


def write_bench_report(reports: Sequence[BenchReport], out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = out / "bench.tsv"
    records.write_text(bench_records(reports))
    figure = out / "bench.png"
    render_bench_figure(reports, figure)
    return [records, figure]


def write_training_report(history: Sequence[EpochStats], out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = out / "training.tsv"
    records.write_text(training_records(history))
    figure = out / "training.png"
    render_training_figure(history, figure)
    return [records, figure]
