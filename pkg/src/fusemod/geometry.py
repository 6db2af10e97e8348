"""Rigid transforms, OXTS-to-world poses and the velodyne-to-pixel chain."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import BehindCamera, NonMonotonicTime, NonOrthonormal, PoleSingularity
from .kitti_ingest import CalibCamToCam, CalibVeloToCam, Tracklet

EARTH_RADIUS = 6378137.0  # devkit Mercator sphere, metres
BEHIND_EPS = 1e-9


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


@dataclass
class RigidTransform:
    """SE(3) transform: apply(x) = rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        dev = float(np.abs(self.rotation.T @ self.rotation - np.eye(3)).max())
        dev = max(dev, abs(float(np.linalg.det(self.rotation)) - 1.0))
        if dev > 1e-4:
            raise NonOrthonormal(dev)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: result.apply(x) == self.apply(other.apply(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def invert(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            return self.rotation @ points + self.translation
        return points @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def oxts_to_pose(rec, origin) -> RigidTransform:
    """Devkit Mercator pose of one OXTS record.

    The origin record only sets the Mercator scale, so poses of one drive
    share a metric frame (x east, y north, z up). Undefined at the poles.
    """
    if abs(rec.lat) >= 90.0 or abs(origin.lat) >= 90.0:
        raise PoleSingularity(rec.lat if abs(rec.lat) >= 90.0 else origin.lat)
    scale = math.cos(math.radians(origin.lat))
    x = scale * EARTH_RADIUS * math.radians(rec.lon)
    y = scale * EARTH_RADIUS * math.log(math.tan(math.pi / 4.0 + math.radians(rec.lat) / 2.0))
    rotation = rot_z(rec.yaw) @ rot_y(rec.pitch) @ rot_x(rec.roll)
    return RigidTransform(rotation, np.array([x, y, rec.alt]))


# ---------------------------------------------------------------------------
# camera projection


@dataclass
class CameraModel:
    """Rectified camera-02 model over the velodyne frame."""

    p_rect: np.ndarray  # 3 x 4
    r_rect: np.ndarray  # 3 x 3
    velo_to_cam: RigidTransform
    _chain: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.p_rect = np.asarray(self.p_rect, dtype=np.float64).reshape(3, 4)
        self.r_rect = np.asarray(self.r_rect, dtype=np.float64).reshape(3, 3)
        rr = np.eye(4)
        rr[:3, :3] = self.r_rect
        self._chain = self.p_rect @ rr @ self.velo_to_cam.matrix()

    @classmethod
    def from_calib(cls, cam: CalibCamToCam, velo: CalibVeloToCam) -> "CameraModel":
        return cls(cam.p_rect, cam.r_rect, RigidTransform(velo.rotation, velo.translation))


def project_points(cam: CameraModel, points: np.ndarray):
    """Project N x 3 velodyne points; returns (uv, depth, in_front).

    Does not raise on points behind the camera, callers filter on in_front.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    homo = np.hstack([points, np.ones((points.shape[0], 1))])
    y = homo @ cam._chain.T
    depth = y[:, 2]
    in_front = depth > BEHIND_EPS
    uv = np.empty((points.shape[0], 2))
    uv[in_front] = y[in_front, :2] / depth[in_front, None]
    uv[~in_front] = np.nan
    return uv, depth, in_front


def project(cam: CameraModel, point) -> tuple[float, float, float]:
    """Project one velodyne point to (u, v, depth); raises behind the camera."""
    uv, depth, in_front = project_points(cam, np.asarray(point, dtype=np.float64).reshape(1, 3))
    if not in_front[0]:
        raise BehindCamera(float(depth[0]))
    return float(uv[0, 0]), float(uv[0, 1]), float(depth[0])


# ---------------------------------------------------------------------------
# tracklet boxes


def box_corners(tracklet: Tracklet, pose_index: int) -> np.ndarray:
    """8 x 3 corners of the tracklet box at one pose, in the velodyne frame.

    The box origin sits at the bottom face center, yaw rz about +z.
    """
    tx, ty, tz, rz = tracklet.poses[pose_index]
    half_l, half_w = tracklet.l / 2.0, tracklet.w / 2.0
    xs = np.array([half_l, half_l, -half_l, -half_l] * 2)
    ys = np.array([half_w, -half_w, -half_w, half_w] * 2)
    zs = np.array([0.0] * 4 + [tracklet.h] * 4)
    corners = np.stack([xs, ys, zs], axis=1)
    return corners @ rot_z(rz).T + np.array([tx, ty, tz])


class BBox2D(NamedTuple):
    u_min: float
    v_min: float
    u_max: float
    v_max: float
    all_behind: bool


def corners_to_bbox2d(cam: CameraModel, corners: np.ndarray, image_size=None) -> BBox2D:
    """Axis-aligned hull of the projected corners.

    Corners behind the camera are dropped; image_size (H, W) clamps the hull
    to pixel bounds. all_behind flags a box with no visible corner.
    """
    uv, _, in_front = project_points(cam, corners)
    if not in_front.any():
        return BBox2D(0.0, 0.0, 0.0, 0.0, True)
    uv = uv[in_front]
    u_min, v_min = uv.min(axis=0)
    u_max, v_max = uv.max(axis=0)
    if image_size is not None:
        h, w = image_size
        u_min, u_max = np.clip([u_min, u_max], 0.0, w - 1.0)
        v_min, v_max = np.clip([v_min, v_max], 0.0, h - 1.0)
    return BBox2D(float(u_min), float(v_min), float(u_max), float(v_max), False)


# ---------------------------------------------------------------------------
# finite differencing


def finite_velocity(positions: np.ndarray, times) -> np.ndarray:
    """Forward-difference velocities; the last sample repeats the previous one."""
    positions = np.asarray(positions, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if positions.shape[0] != times.shape[0]:
        raise ValueError(f"{positions.shape[0]} positions vs {times.shape[0]} times")
    if positions.shape[0] < 2:
        raise ValueError("need at least two samples to differentiate")
    dt = np.diff(times)
    bad = np.nonzero(dt <= 0)[0]
    if bad.size:
        raise NonMonotonicTime(int(bad[0]))
    velocities = np.empty_like(positions)
    velocities[:-1] = np.diff(positions, axis=0) / dt[:, None]
    velocities[-1] = velocities[-2]
    return velocities
