"""Manifest-driven sample loading and signal assembly.

Manifest lines are `split rgb flow lidarflow mask [depth]` with paths
relative to the manifest file and `-` marking an absent input. Signals are
scaled to comparable ranges before stacking: images are already in [0,1],
flows take 0.05 per pixel of displacement, depth 0.02 per metre.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ..errors import DataError
from ..kitti_ingest import load_depth_png, load_flow_file, load_mask_file, load_rgb
from .plan import FusionPlan, InputSignal

FLOW_SCALE = 0.05
DEPTH_SCALE = 0.02


@dataclass
class ManifestEntry:
    split: str
    rgb: Path
    flow: Optional[Path]
    lidarflow: Optional[Path]
    mask: Path
    depth: Optional[Path]


def read_manifest(path) -> List[ManifestEntry]:
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        fields = stripped.split()
        if len(fields) not in (5, 6):
            raise DataError(f"{path}:{lineno}: expected 5 or 6 columns, got {len(fields)}")

        def resolve(token):
            return None if token == "-" else base / token

        rgb = resolve(fields[1])
        mask = resolve(fields[4])
        if rgb is None or mask is None:
            raise DataError(f"{path}:{lineno}: rgb and mask paths are required")
        entries.append(
            ManifestEntry(
                split=fields[0],
                rgb=rgb,
                flow=resolve(fields[2]),
                lidarflow=resolve(fields[3]),
                mask=mask,
                depth=resolve(fields[5]) if len(fields) == 6 else None,
            )
        )
    if not entries:
        raise DataError(f"{path}: empty manifest")
    return entries


def split_entries(entries: Sequence[ManifestEntry], split: str) -> List[ManifestEntry]:
    return [e for e in entries if e.split == split]


def _chw(img: np.ndarray) -> np.ndarray:
    return np.transpose(img, (2, 0, 1))


def _flow_channels(path: Optional[Path], what: str) -> np.ndarray:
    if path is None:
        raise DataError(f"manifest row lacks a {what} input required by the plan")
    flow = load_flow_file(path)
    return np.stack([flow.u, flow.v]).astype(np.float64) * FLOW_SCALE


def _depth_channel(path: Optional[Path]) -> np.ndarray:
    if path is None:
        raise DataError("manifest row lacks a depth input required by the plan")
    return load_depth_png(path)[None].astype(np.float64) * DEPTH_SCALE


def _signal_channels(
    signal: InputSignal, entry: ManifestEntry, entry_t1: Optional[ManifestEntry]
) -> np.ndarray:
    if signal.temporal and entry_t1 is None:
        raise DataError(f"signal {signal.name} needs a consecutive next frame")
    if signal.name in ("rgb", "rgb_t"):
        return _chw(load_rgb(entry.rgb))
    if signal.name == "rgb_t1":
        return _chw(load_rgb(entry_t1.rgb))
    if signal.name == "rgbflow":
        return _flow_channels(entry.flow, "flow")
    if signal.name == "lidarflow":
        return _flow_channels(entry.lidarflow, "lidar flow")
    if signal.name in ("depth", "depth_t"):
        return _depth_channel(entry.depth)
    if signal.name == "depth_t1":
        return _depth_channel(entry_t1.depth)
    raise DataError(f"no loader for signal {signal.name}")


def assemble_streams(
    plan: FusionPlan, entry: ManifestEntry, entry_t1: Optional[ManifestEntry] = None
) -> List[np.ndarray]:
    """One (C, H, W) array per stream, signals concatenated channel-wise."""
    streams = []
    for stream in plan.streams:
        parts = [_signal_channels(s, entry, entry_t1) for s in stream]
        ref = parts[0].shape[1:]
        for p in parts:
            if p.shape[1:] != ref:
                raise DataError(f"signal resolutions disagree: {ref} vs {p.shape[1:]}")
        streams.append(np.concatenate(parts, axis=0))
    return streams


@dataclass
class Sample:
    streams: List[np.ndarray]  # (C, H, W) each
    mask: np.ndarray  # (H, W) in {0,1}


def load_samples(plan: FusionPlan, entries: Sequence[ManifestEntry]) -> List[Sample]:
    """Materialize samples; temporal plans pair each row with its successor.

    Rows pair only within the same split, in manifest order; the final row of
    a split run is dropped when the plan needs t+1.
    """
    samples = []
    for i, entry in enumerate(entries):
        entry_t1 = None
        if plan.temporal:
            if i + 1 >= len(entries) or entries[i + 1].split != entry.split:
                continue
            entry_t1 = entries[i + 1]
        streams = assemble_streams(plan, entry, entry_t1)
        mask = load_mask_file(entry.mask)
        samples.append(Sample(streams, mask))
    if not samples:
        raise DataError("no usable samples for this plan")
    return samples


def batch_samples(samples: Sequence[Sample]) -> "tuple[List[np.ndarray], np.ndarray]":
    """Stack samples into per-stream (N, C, H, W) arrays plus (N, H, W) masks."""
    n_streams = len(samples[0].streams)
    streams = [
        np.stack([s.streams[k] for s in samples]).astype(np.float64)
        for k in range(n_streams)
    ]
    masks = np.stack([s.mask for s in samples]).astype(np.int64)
    return streams, masks
