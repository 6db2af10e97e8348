"""Weak motion annotation: per-object speed labels, mask refinement, export.

Objects are classified on ego-compensated world speed, so a parked car seen
from a moving vehicle stays Static. Drives are split whole into train/test to
keep temporal neighbours out of opposite splits.
"""

import enum
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DimensionMismatch,
    FrameOutOfRange,
    IncompleteDrive,
)
from .geometry import (
    BBox2D,
    CameraModel,
    RigidTransform,
    box_corners,
    corners_to_bbox2d,
    finite_velocity,
    oxts_to_pose,
)
from .kitti_ingest import (
    OxtsRecord,
    Tracklet,
    load_rgb,
    parse_calib,
    parse_instance_sidecar,
    parse_oxts,
    parse_timestamps,
    parse_tracklets,
    read_u16_png,
    write_mask_png,
)

DEFAULT_THRESHOLD = 1.0  # m/s
TRAIN_FRACTION = 0.8

POSE_DIFF = "pose_diff"
OXTS_CHANNELS = "oxts_channels"


class MotionLabel(enum.Enum):
    STATIC = "static"
    MOVING = "moving"


@dataclass
class ObjectMotionLabel:
    tracklet_id: int
    frame_index: int
    speed_abs: float
    label: MotionLabel
    bbox2d: BBox2D


@dataclass
class InstanceMaskSet:
    masks: List[np.ndarray]
    categories: List[str]

    @classmethod
    def from_id_map(cls, id_map: np.ndarray, categories: Optional[Dict[int, str]] = None):
        ids = sorted(int(k) for k in np.unique(id_map) if k != 0)
        masks = [id_map == k for k in ids]
        cats = [(categories or {}).get(k, "unknown") for k in ids]
        return cls(masks, cats)


def ego_velocity(
    oxts_seq: Sequence[OxtsRecord],
    timestamps: Sequence[float],
    mode: str = POSE_DIFF,
) -> np.ndarray:
    if mode == OXTS_CHANNELS:
        return np.array([[r.ve, r.vn, 0.0] for r in oxts_seq])
    if mode != POSE_DIFF:
        raise ConfigError(f"unknown ego velocity mode {mode!r}")
    origin = oxts_seq[0]
    positions = np.array(
        [oxts_to_pose(rec, origin).translation for rec in oxts_seq]
    )
    return finite_velocity(positions, np.asarray(timestamps, dtype=np.float64))


def ego_poses(oxts_seq: Sequence[OxtsRecord]) -> List[RigidTransform]:
    origin = oxts_seq[0]
    return [oxts_to_pose(rec, origin) for rec in oxts_seq]


def object_world_velocity(
    tracklet: Tracklet,
    poses: Sequence[RigidTransform],
    timestamps: Sequence[float],
) -> np.ndarray:
    """World-frame velocity per tracklet frame, ego motion compensated."""
    frames = list(tracklet.frames())
    for f in frames:
        if f < 0 or f >= len(poses):
            raise FrameOutOfRange(f, len(poses))
    world = np.array(
        [poses[f].apply(tracklet.poses[k, :3]) for k, f in enumerate(frames)]
    )
    times = np.asarray([timestamps[f] for f in frames], dtype=np.float64)
    if len(frames) == 1:
        # a single observation carries no motion evidence
        return np.zeros((1, 3))
    return finite_velocity(world, times)


def classify_motion(speed_abs: float, threshold: float = DEFAULT_THRESHOLD) -> MotionLabel:
    if threshold <= 0:
        raise ConfigError(f"threshold must be positive, got {threshold}")
    return MotionLabel.MOVING if speed_abs > threshold else MotionLabel.STATIC


def label_objects(
    camera: CameraModel,
    oxts_seq: Sequence[OxtsRecord],
    timestamps: Sequence[float],
    tracklets: Sequence[Tracklet],
    image_size: Tuple[int, int],
    threshold: float = DEFAULT_THRESHOLD,
) -> List[List[ObjectMotionLabel]]:
    """Per-frame motion labels with projected 2D boxes for every tracklet."""
    poses = ego_poses(oxts_seq)
    per_frame: List[List[ObjectMotionLabel]] = [[] for _ in oxts_seq]
    for tid, tracklet in enumerate(tracklets):
        velocities = object_world_velocity(tracklet, poses, timestamps)
        speeds = np.linalg.norm(velocities, axis=1)
        for k, f in enumerate(tracklet.frames()):
            corners = box_corners(tracklet, k)
            bbox = corners_to_bbox2d(camera, corners, image_size=image_size)
            per_frame[f].append(
                ObjectMotionLabel(
                    tracklet_id=tid,
                    frame_index=f,
                    speed_abs=float(speeds[k]),
                    label=classify_motion(float(speeds[k]), threshold),
                    bbox2d=bbox,
                )
            )
    return per_frame


def _bbox_slice(bbox: BBox2D, height: int, width: int):
    r0 = max(0, int(np.floor(bbox.v_min)))
    r1 = min(height - 1, int(np.ceil(bbox.v_max)))
    c0 = max(0, int(np.floor(bbox.u_min)))
    c1 = min(width - 1, int(np.ceil(bbox.u_max)))
    if r1 < r0 or c1 < c0:
        return None
    return slice(r0, r1 + 1), slice(c0, c1 + 1)


def refine_mask(
    labels: Sequence[ObjectMotionLabel],
    instances: Optional[InstanceMaskSet],
    image_size: Tuple[int, int],
) -> np.ndarray:
    """Union of instances claimed by Moving boxes; bare rectangles otherwise.

    An instance belongs to a box when at least half its pixels fall inside.
    A Moving box that claims no instance degrades to its own rectangle, so
    frames without instance masks still get weak labels.
    """
    width, height = image_size
    out = np.zeros((height, width), dtype=np.uint8)
    moving = [l for l in labels if l.label is MotionLabel.MOVING and not l.bbox2d.all_behind]
    inst_masks = instances.masks if instances is not None else []
    for mask in inst_masks:
        if mask.shape != (height, width):
            raise DimensionMismatch(f"instance mask {mask.shape} vs image {(height, width)}")

    claimed = [False] * len(moving)
    for mask in inst_masks:
        area = int(mask.sum())
        if area == 0:
            continue
        is_moving = False
        for bi, label in enumerate(moving):
            window = _bbox_slice(label.bbox2d, height, width)
            overlap = int(mask[window].sum()) if window is not None else 0
            if overlap / area >= 0.5:
                is_moving = True
                claimed[bi] = True
        if is_moving:
            out[mask] = 1
    for bi, label in enumerate(moving):
        if claimed[bi]:
            continue
        window = _bbox_slice(label.bbox2d, height, width)
        if window is not None:
            out[window] = 1
    return out


# ---------------------------------------------------------------------------
# drive loading and export


@dataclass
class Drive:
    name: str
    camera: CameraModel
    oxts: List[OxtsRecord]
    timestamps: List[float]
    tracklets: List[Tracklet]
    image_paths: List[Path]
    image_size: Tuple[int, int]  # (width, height)
    flow_paths: List[Optional[Path]] = field(default_factory=list)
    lidarflow_paths: List[Optional[Path]] = field(default_factory=list)
    depth_paths: List[Optional[Path]] = field(default_factory=list)
    instance_paths: List[Optional[Path]] = field(default_factory=list)
    instance_categories: Dict[Tuple[int, int], str] = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.image_paths)


def _find_calib(drive_dir: Path, name: str) -> Path:
    for base in (drive_dir, drive_dir.parent):
        candidate = base / name
        if candidate.exists():
            return candidate
    raise IncompleteDrive(drive_dir.name, f"missing {name}")


def _optional_series(drive_dir: Path, sub: str, suffix: str, n: int) -> List[Optional[Path]]:
    folder = drive_dir / sub
    if not folder.is_dir():
        return [None] * n
    return [
        p if p.exists() else None
        for p in (folder / f"{i:010d}{suffix}" for i in range(n))
    ]


def load_drive(drive_dir, camera_index: int = 2) -> Drive:
    drive_dir = Path(drive_dir)
    name = drive_dir.name
    cam_text = _find_calib(drive_dir, "calib_cam_to_cam.txt").read_text()
    velo_text = _find_calib(drive_dir, "calib_velo_to_cam.txt").read_text()
    try:
        cam, velo = parse_calib(cam_text, velo_text)
        camera = CameraModel.from_calib(cam, velo)
    except DataError as err:
        raise IncompleteDrive(name, f"bad calibration: {err}") from err

    oxts_dir = drive_dir / "oxts"
    if (oxts_dir / "data").is_dir():
        records = []
        for path in sorted((oxts_dir / "data").glob("*.txt")):
            records.extend(parse_oxts(path.read_text()))
        ts_file = oxts_dir / "timestamps.txt"
    elif (drive_dir / "oxts.txt").exists():
        records = parse_oxts((drive_dir / "oxts.txt").read_text())
        ts_file = drive_dir / "timestamps.txt"
    else:
        raise IncompleteDrive(name, "missing oxts data")
    if not records:
        raise IncompleteDrive(name, "empty oxts data")
    if not ts_file.exists():
        raise IncompleteDrive(name, "missing timestamps")
    timestamps = parse_timestamps(ts_file.read_text())

    tracklet_file = drive_dir / "tracklet_labels.xml"
    if not tracklet_file.exists():
        raise IncompleteDrive(name, "missing tracklet_labels.xml")
    tracklets = parse_tracklets(tracklet_file.read_text())

    image_dir = drive_dir / f"image_{camera_index:02d}" / "data"
    image_paths = sorted(image_dir.glob("*.png")) if image_dir.is_dir() else []
    if not image_paths:
        raise IncompleteDrive(name, "missing images")
    counts = {len(records), len(timestamps), len(image_paths)}
    if len(counts) != 1:
        raise IncompleteDrive(
            name,
            f"frame count mismatch: oxts={len(records)} "
            f"timestamps={len(timestamps)} images={len(image_paths)}",
        )
    first = load_rgb(image_paths[0])
    height, width = first.shape[:2]
    n = len(image_paths)

    sidecar = drive_dir / "instances.txt"
    categories = parse_instance_sidecar(sidecar.read_text()) if sidecar.exists() else {}
    return Drive(
        name=name,
        camera=camera,
        oxts=records,
        timestamps=timestamps,
        tracklets=tracklets,
        image_paths=image_paths,
        image_size=(width, height),
        flow_paths=_optional_series(drive_dir, "flow", ".flo", n),
        lidarflow_paths=_optional_series(drive_dir, "lidarflow", ".png", n),
        depth_paths=_optional_series(drive_dir, "depth", ".png", n),
        instance_paths=_optional_series(drive_dir, "instances", ".png", n),
        instance_categories=categories,
    )


def split_drives(
    frame_counts: Dict[str, int], seed: int, train_fraction: float = TRAIN_FRACTION
) -> Dict[str, str]:
    """Whole-drive assignment whose train share lands closest to the target.

    Subset-sum over drive lengths; the seeded shuffle decides which optimal
    subset wins when several are equally close.
    """
    names = sorted(frame_counts)
    random.Random(seed).shuffle(names)
    total = sum(frame_counts.values())
    target = train_fraction * total
    # parent[s] = (previous sum, drive index used to reach s)
    parent: Dict[int, Optional[Tuple[int, int]]] = {0: None}
    for i, name in enumerate(names):
        w = frame_counts[name]
        for s in sorted(parent, reverse=True):
            if s + w not in parent:
                parent[s + w] = (s, i)
    best = min(parent, key=lambda s: (abs(s - target), s))
    chosen = set()
    s = best
    while parent[s] is not None:
        s, i = parent[s]
        chosen.add(i)
    return {name: ("train" if i in chosen else "test") for i, name in enumerate(names)}


@dataclass
class ManifestRecord:
    split: str
    rgb: str
    flow: str
    lidarflow: str
    mask: str
    depth: str


@dataclass
class DatasetManifest:
    records: List[ManifestRecord]
    path: Path

    @property
    def n_frames(self) -> int:
        return len(self.records)


def _relpath(path: Optional[Path], base: Path) -> str:
    return "-" if path is None else os.path.relpath(path, base)


def export_dataset(
    drives: Sequence[Drive],
    out_dir,
    threshold: float = DEFAULT_THRESHOLD,
    split_seed: int = 0,
    manifest_name: str = "manifest.txt",
) -> DatasetManifest:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    assignment = split_drives({d.name: d.n_frames for d in drives}, split_seed)
    records: List[ManifestRecord] = []
    for drive in sorted(drives, key=lambda d: d.name):
        split = assignment[drive.name]
        labels = label_objects(
            drive.camera,
            drive.oxts,
            drive.timestamps,
            drive.tracklets,
            drive.image_size,
            threshold,
        )
        mask_dir = out_dir / "masks" / drive.name
        mask_dir.mkdir(parents=True, exist_ok=True)
        for f in range(drive.n_frames):
            instances = None
            if f < len(drive.instance_paths) and drive.instance_paths[f] is not None:
                id_map = read_u16_png(drive.instance_paths[f].read_bytes())
                cats = {
                    inst: cat
                    for (frame, inst), cat in drive.instance_categories.items()
                    if frame == f
                }
                instances = InstanceMaskSet.from_id_map(id_map, cats)
            mask = refine_mask(labels[f], instances, drive.image_size)
            mask_path = mask_dir / f"{f:010d}.png"
            mask_path.write_bytes(write_mask_png(mask))
            records.append(
                ManifestRecord(
                    split=split,
                    rgb=_relpath(drive.image_paths[f], out_dir),
                    flow=_relpath(drive.flow_paths[f], out_dir),
                    lidarflow=_relpath(drive.lidarflow_paths[f], out_dir),
                    mask=_relpath(mask_path, out_dir),
                    depth=_relpath(drive.depth_paths[f], out_dir),
                )
            )
    manifest_path = out_dir / manifest_name
    with open(manifest_path, "w", encoding="ascii") as fh:
        for r in records:
            fh.write(f"{r.split} {r.rgb} {r.flow} {r.lidarflow} {r.mask} {r.depth}\n")
    return DatasetManifest(records, manifest_path)
