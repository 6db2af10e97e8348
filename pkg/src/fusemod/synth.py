"""Deterministic synthetic scenes: textured rectangles with exact ground truth.

Every frame carries rgb, dense flow, sparse lidar flow, depth, and a motion
mask that are mutually consistent by construction. Velocities are integer
pixels per frame so that warping frame t by the flow reproduces frame t+1
bit-exactly on non-occluded pixels.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, ObjectOutOfBounds
from .kitti_ingest import (
    FlowMap,
    FrameSample,
    save_depth_png,
    save_flow_file,
    save_mask_file,
    save_rgb,
)

BACKGROUND_DEPTH = 50.0


@dataclass(frozen=True)
class SceneObject:
    x: int
    y: int
    width: int
    height: int
    vx: int = 0
    vy: int = 0
    contrast: float = 0.5

    @property
    def moving(self) -> bool:
        return self.vx != 0 or self.vy != 0

    def position(self, frame: int) -> "tuple[int, int]":
        return self.x + frame * self.vx, self.y + frame * self.vy


@dataclass
class SceneSpec:
    seed: int
    height: int
    width: int
    objects: Sequence[SceneObject] = field(default_factory=tuple)
    background_scale: int = 8
    lidar_fraction: float = 0.5
    frames: int = 2


@dataclass
class DegradeSpec:
    gain: float = 1.0
    gamma: float = 1.0
    noise_sigma: float = 0.0
    flow_noise_sigma: float = 0.0
    flow_dropout: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.gain <= 1.0:
            raise ConfigError(f"gain must be in (0,1], got {self.gain}")
        if self.gamma < 1.0:
            raise ConfigError(f"gamma must be >= 1, got {self.gamma}")
        if self.noise_sigma < 0 or self.flow_noise_sigma < 0:
            raise ConfigError("noise sigmas must be non-negative")
        if not 0.0 <= self.flow_dropout < 1.0:
            raise ConfigError(f"flow_dropout must be in [0,1), got {self.flow_dropout}")


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed, *tags])


def _validate(spec: SceneSpec) -> None:
    if spec.frames < 1:
        raise ConfigError("frame count must be >= 1")
    if not 0.0 < spec.lidar_fraction <= 1.0:
        raise ConfigError(f"lidar_fraction must be in (0,1], got {spec.lidar_fraction}")
    if spec.background_scale < 1:
        raise ConfigError("background_scale must be >= 1")
    for i, obj in enumerate(spec.objects):
        if obj.width < 1 or obj.height < 1:
            raise ObjectOutOfBounds(f"object {i} has empty extent")
        for t in range(spec.frames):
            x, y = obj.position(t)
            if x < 0 or y < 0 or x + obj.width > spec.width or y + obj.height > spec.height:
                raise ObjectOutOfBounds(
                    f"object {i} leaves the {spec.height}x{spec.width} frame at t={t}"
                )


def _background(spec: SceneSpec) -> np.ndarray:
    rng = _rng(spec.seed, 0)
    s = spec.background_scale
    coarse = rng.random(
        (math.ceil(spec.height / s), math.ceil(spec.width / s), 3), dtype=np.float64
    )
    tile = np.repeat(np.repeat(coarse, s, axis=0), s, axis=1)
    return tile[: spec.height, : spec.width].astype(np.float32)


def _object_texture(spec: SceneSpec, index: int) -> np.ndarray:
    obj = spec.objects[index]
    rng = _rng(spec.seed, 1, index)
    base = 0.25 + 0.5 * rng.random(3)
    pattern = rng.random((obj.height, obj.width, 3)) - 0.5
    return np.clip(base[None, None] + obj.contrast * pattern, 0.0, 1.0).astype(np.float32)


def _object_depth(spec: SceneSpec, index: int) -> float:
    # later objects paint on top, so they must sit nearer than earlier ones
    n = len(spec.objects)
    return 10.0 + 10.0 * (n - 1 - index) / max(1, n - 1)


def _render_frame(spec: SceneSpec, t: int, background, textures) -> FrameSample:
    rgb = background.copy()
    owner = np.full((spec.height, spec.width), -1, dtype=np.int64)
    for i, obj in enumerate(spec.objects):
        x, y = obj.position(t)
        rgb[y : y + obj.height, x : x + obj.width] = textures[i]
        owner[y : y + obj.height, x : x + obj.width] = i

    u = np.zeros((spec.height, spec.width), dtype=np.float32)
    v = np.zeros_like(u)
    depth = np.full((spec.height, spec.width), BACKGROUND_DEPTH, dtype=np.float32)
    mask = np.zeros((spec.height, spec.width), dtype=np.uint8)
    for i, obj in enumerate(spec.objects):
        here = owner == i
        u[here] = obj.vx
        v[here] = obj.vy
        depth[here] = _object_depth(spec, i)
        if obj.moving:
            mask[here] = 1

    keep = _rng(spec.seed, 2, t).random((spec.height, spec.width)) < spec.lidar_fraction
    lidar = FlowMap(np.where(keep, u, 0.0), np.where(keep, v, 0.0), keep.copy())
    return FrameSample(
        rgb=rgb,
        rgb_flow=FlowMap(u, v),
        lidar_flow=lidar,
        depth=depth,
        mask=mask,
    )


def gen_scene(spec: SceneSpec) -> List[FrameSample]:
    _validate(spec)
    background = _background(spec)
    textures = [_object_texture(spec, i) for i in range(len(spec.objects))]
    return [_render_frame(spec, t, background, textures) for t in range(spec.frames)]


def degrade_low_light(image: np.ndarray, spec: DegradeSpec, seed: int = 0) -> np.ndarray:
    out = spec.gain * np.power(image.astype(np.float64), spec.gamma)
    if spec.noise_sigma > 0:
        out = out + _rng(seed, 3).normal(0.0, spec.noise_sigma, size=image.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def degrade_flow(flow: FlowMap, spec: DegradeSpec, seed: int = 0) -> FlowMap:
    rng = _rng(seed, 4)
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    if spec.flow_noise_sigma > 0:
        u = u + rng.normal(0.0, spec.flow_noise_sigma, size=u.shape)
        v = v + rng.normal(0.0, spec.flow_noise_sigma, size=v.shape)
    if spec.flow_dropout > 0:
        dropped = rng.random(u.shape) < spec.flow_dropout
        u = np.where(dropped, 0.0, u)
        v = np.where(dropped, 0.0, v)
    return FlowMap(u.astype(np.float32), v.astype(np.float32), flow.valid.copy())


def write_scene(
    out_dir,
    spec: SceneSpec,
    split: str = "train",
    degrade: Optional[DegradeSpec] = None,
    manifest_name: str = "manifest.txt",
    append: bool = False,
) -> Path:
    """Render a scene to the on-disk layout the training manifest expects.

    One line per frame: `split rgb flow lidarflow mask depth`, paths relative
    to the manifest. Degradation, when given, hits rgb and the dense flow
    only; lidar flow stays sparse but clean.
    """
    out_dir = Path(out_dir)
    frame_dir = out_dir / split
    frame_dir.mkdir(parents=True, exist_ok=True)
    samples = gen_scene(spec)
    lines = []
    for t, sample in enumerate(samples):
        rgb = sample.rgb
        flow = sample.rgb_flow
        if degrade is not None:
            rgb = degrade_low_light(rgb, degrade, seed=spec.seed + 7919 * t)
            flow = degrade_flow(flow, degrade, seed=spec.seed + 7919 * t)
        stem = f"frame_{t:05d}"
        rel = {
            "rgb": f"{split}/{stem}_rgb.png",
            "flow": f"{split}/{stem}_flow.flo",
            "lidarflow": f"{split}/{stem}_lidarflow.png",
            "mask": f"{split}/{stem}_mask.png",
            "depth": f"{split}/{stem}_depth.png",
        }
        save_rgb(out_dir / rel["rgb"], rgb)
        save_flow_file(out_dir / rel["flow"], flow)
        save_flow_file(out_dir / rel["lidarflow"], sample.lidar_flow)
        save_mask_file(out_dir / rel["mask"], sample.mask)
        save_depth_png(out_dir / rel["depth"], sample.depth)
        lines.append(
            " ".join([split, rel["rgb"], rel["flow"], rel["lidarflow"], rel["mask"], rel["depth"]])
        )
    manifest = out_dir / manifest_name
    mode = "a" if append and manifest.exists() else "w"
    with open(manifest, mode, encoding="ascii") as fh:
        for line in lines:
            fh.write(line + "\n")
    return manifest
