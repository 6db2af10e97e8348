"""Segmentation metrics, class weighting, and the fps benchmark harness.

Masks are two-class throughout: 0 = static, 1 = moving. The confusion matrix
is indexed (true, predicted), so counts[1, 0] reads "moving pixels predicted
static".
"""

import time
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import DimensionMismatch, EmptySplit, UndefinedIoU

STATIC = 0
MOVING = 1
CLASS_NAMES = ("static", "moving")

WEIGHT_CONSTANT = 1.02


@dataclass
class ConfusionMatrix:
    counts: np.ndarray = field(default_factory=lambda: np.zeros((2, 2), dtype=np.int64))

    def update(self, predicted: np.ndarray, truth: np.ndarray) -> "ConfusionMatrix":
        predicted = np.asarray(predicted)
        truth = np.asarray(truth)
        if predicted.shape != truth.shape:
            raise DimensionMismatch(
                f"prediction {predicted.shape} vs truth {truth.shape}"
            )
        idx = truth.astype(np.int64).ravel() * 2 + predicted.astype(np.int64).ravel()
        self.counts += np.bincount(idx, minlength=4).reshape(2, 2)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def iou(cm: ConfusionMatrix, cls: int) -> float:
    tp = cm.counts[cls, cls]
    fn = cm.counts[cls].sum() - tp
    fp = cm.counts[:, cls].sum() - tp
    denom = tp + fp + fn
    if denom == 0:
        raise UndefinedIoU(cls)
    return float(tp / denom)


def miou(cm: ConfusionMatrix) -> float:
    return 0.5 * (iou(cm, STATIC) + iou(cm, MOVING))


def relative_improvement(new: float, base: float) -> float:
    if base <= 0:
        raise ValueError(f"baseline must be positive, got {base}")
    return 100.0 * (new - base) / base


def class_weights(masks: Iterable[np.ndarray], constant: float = WEIGHT_CONSTANT) -> np.ndarray:
    """Bounded inverse-log frequency weights over a training split.

    w_c = 1 / ln(constant + p_c). The constant keeps the weight finite even
    when a class never occurs.
    """
    pixel_counts = np.zeros(2, dtype=np.int64)
    seen = False
    for mask in masks:
        seen = True
        mask = np.asarray(mask)
        pixel_counts[MOVING] += int((mask != 0).sum())
        pixel_counts[STATIC] += int((mask == 0).sum())
    if not seen or pixel_counts.sum() == 0:
        raise EmptySplit("train")
    p = pixel_counts / pixel_counts.sum()
    return 1.0 / np.log(constant + p)


@dataclass
class BenchReport:
    label: str
    height: int
    width: int
    warmup: int
    iters: int
    fps: float
    latencies_ms: list

    @property
    def mean_latency_ms(self) -> float:
        return float(np.mean(self.latencies_ms))


def bench_fps(
    model,
    resolution: "tuple[int, int]",
    warmup: int = 10,
    iters: int = 100,
    label: Optional[str] = None,
    clock=time.perf_counter,
) -> BenchReport:
    """Forward-only timing on a zero batch, single sample per iteration.

    `model` needs `zero_batch(h, w)` and `infer(batch)`. `clock` must be
    monotonic; it is injectable so the fps arithmetic stays testable.
    """
    height, width = resolution
    batch = model.zero_batch(height, width)
    for _ in range(warmup):
        model.infer(batch)
    latencies = []
    for _ in range(iters):
        t0 = clock()
        model.infer(batch)
        latencies.append((clock() - t0) * 1000.0)
    total_s = sum(latencies) / 1000.0
    return BenchReport(
        label=label if label is not None else getattr(model, "label", "model"),
        height=height,
        width=width,
        warmup=warmup,
        iters=iters,
        fps=iters / total_s,
        latencies_ms=latencies,
    )
