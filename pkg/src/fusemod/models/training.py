"""Deterministic training loop over manifest samples."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .. import autograd as ag
from ..errors import UndefinedIoU
from ..evalbench import ConfusionMatrix, class_weights, iou, miou
from .data import ManifestEntry, Sample, batch_samples, load_samples
from .network import FusionNet, mask_from_logits


@dataclass
class Hyper:
    epochs: int = 200
    batch: int = 6
    lr: float = 1e-4
    l2: float = 5e-4
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 disables
    checkpoint_path: Optional[Path] = None
    bn_refresh_updates: int = 70  # post-training stat re-estimation; 0 disables


@dataclass
class EpochStats:
    epoch: int
    loss: float
    miou: float
    moving_iou: float

    def line(self) -> str:
        return (
            f"epoch {self.epoch} loss {self.loss:.6f} "
            f"miou {self.miou:.4f} moving_iou {self.moving_iou:.4f}"
        )


def _safe_iou(cm: ConfusionMatrix, cls: int) -> float:
    try:
        return iou(cm, cls)
    except UndefinedIoU:
        return 0.0


def _safe_miou(cm: ConfusionMatrix) -> float:
    try:
        return miou(cm)
    except UndefinedIoU:
        return 0.0


def train(
    model: FusionNet,
    entries: Sequence[ManifestEntry],
    hyper: Hyper,
    log: Optional[Callable[[str], None]] = None,
) -> List[EpochStats]:
    """Adam on weighted cross-entropy; per-epoch stats from the training batches."""
    train_entries = [e for e in entries if e.split == "train"]
    samples = load_samples(model.plan, train_entries)
    weights = class_weights(s.mask for s in samples)
    optimizer = ag.Adam(model.params(), lr=hyper.lr, l2=hyper.l2)
    order_rng = np.random.default_rng(hyper.seed)
    history: List[EpochStats] = []
    for epoch in range(1, hyper.epochs + 1):
        order = order_rng.permutation(len(samples))
        cm = ConfusionMatrix()
        losses = []
        for start in range(0, len(order), hyper.batch):
            chunk = [samples[i] for i in order[start : start + hyper.batch]]
            streams, masks = batch_samples(chunk)
            logits = model.forward(streams, training=True)
            loss = ag.weighted_cross_entropy(logits, masks, weights)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.data))
            cm.update(mask_from_logits(logits.data).astype(np.int64), masks)
        stats = EpochStats(
            epoch=epoch,
            loss=float(np.mean(losses)),
            miou=_safe_miou(cm),
            moving_iou=_safe_iou(cm, 1),
        )
        history.append(stats)
        if log is not None:
            log(stats.line())
        if (
            hyper.checkpoint_every
            and hyper.checkpoint_path is not None
            and epoch % hyper.checkpoint_every == 0
        ):
            model.save(hyper.checkpoint_path, scalars={"epoch": float(epoch)})
    _refresh_running_stats(model, samples, hyper)
    return history


def _refresh_running_stats(model: FusionNet, samples: Sequence[Sample], hyper: Hyper) -> None:
    # the running buffers trail the weight updates; on small datasets the lag
    # is large enough to wreck eval-mode outputs, so re-estimate at the final
    # weights with forward-only passes. The buffers decay by 0.9 per update,
    # so ~70 updates shrink the stale share below 0.1%.
    if hyper.bn_refresh_updates <= 0:
        return
    n_batches = max(1, (len(samples) + hyper.batch - 1) // hyper.batch)
    passes = -(-hyper.bn_refresh_updates // n_batches)
    for _ in range(passes):
        for start in range(0, len(samples), hyper.batch):
            streams, _ = batch_samples(samples[start : start + hyper.batch])
            with ag.no_grad():
                model.forward(streams, training=True)


def evaluate(model: FusionNet, entries: Sequence[ManifestEntry]) -> ConfusionMatrix:
    """Eval-mode confusion matrix over the given manifest rows."""
    samples = load_samples(model.plan, entries)
    cm = ConfusionMatrix()
    for sample in samples:
        streams, masks = batch_samples([sample])
        predicted = model.predict_mask(streams).astype(np.int64)
        cm.update(predicted, masks)
    return cm
