"""Readers and writers for the KITTI raw drive layout and related formats.

Covers camera/velodyne calibration text, OXTS GPS/IMU records, tracklet XML,
velodyne binary scans, optical flow files (Middlebury .flo and 16-bit PNG),
8-bit motion mask PNGs and 16-bit instance/depth PNGs. Parsing works on text
or bytes so tests can run without touching disk; thin path helpers sit at the
bottom.
"""

from __future__ import annotations

import calendar
import struct
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import (
    BadMagic,
    BadPixelValue,
    DataError,
    DimensionMismatch,
    MalformedNumber,
    MissingKey,
    NonOrthonormal,
    TooSmall,
    TruncatedRecord,
    WrongFieldCount,
    XmlStructure,
)

# flow container formats accepted by read_flow / write_flow
FLO = "flo"
PNG16 = "png16"

_FLO_MAGIC = 202021.25

# standard network crop: bottom rows, centered columns
CROP_HEIGHT = 256
CROP_WIDTH = 1224

OXTS_FIELD_COUNT = 30


def _check_rotation(r, tol=1e-4):
    dev = float(np.abs(r.T @ r - np.eye(3)).max())
    if dev > tol:
        raise NonOrthonormal(dev)


# ---------------------------------------------------------------------------
# calibration


@dataclass
class CalibCamToCam:
    """Rectified projection for camera 02."""

    p_rect: np.ndarray  # 3 x 4
    r_rect: np.ndarray  # 3 x 3, orthonormal

    def __post_init__(self):
        self.p_rect = np.asarray(self.p_rect, dtype=np.float64).reshape(3, 4)
        self.r_rect = np.asarray(self.r_rect, dtype=np.float64).reshape(3, 3)
        _check_rotation(self.r_rect)


@dataclass
class CalibVeloToCam:
    """Rigid velodyne-to-camera transform."""

    rotation: np.ndarray  # 3 x 3, orthonormal
    translation: np.ndarray  # 3

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        _check_rotation(self.rotation)


def _calib_lines(text):
    # key: v1 v2 ... ; keeps the raw line for error reporting
    table = {}
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or ":" not in stripped:
            continue
        key, _, rest = stripped.partition(":")
        table[key.strip()] = (rest.strip(), stripped)
    return table


def _calib_floats(table, key, count):
    if key not in table:
        raise MissingKey(key)
    raw, line = table[key]
    try:
        values = [float(tok) for tok in raw.split()]
    except ValueError:
        raise MalformedNumber(line) from None
    if len(values) != count:
        raise MalformedNumber(line)
    return np.array(values, dtype=np.float64)


def parse_calib(cam_text: str, velo_text: str):
    """Parse calib_cam_to_cam.txt and calib_velo_to_cam.txt contents.

    Only the keys needed for the camera-02 projection chain are read
    (P_rect_02, R_rect_00, R, T); unknown keys are ignored.
    """
    cam = _calib_lines(cam_text)
    velo = _calib_lines(velo_text)
    p_rect = _calib_floats(cam, "P_rect_02", 12).reshape(3, 4)
    r_rect = _calib_floats(cam, "R_rect_00", 9).reshape(3, 3)
    rotation = _calib_floats(velo, "R", 9).reshape(3, 3)
    translation = _calib_floats(velo, "T", 3)
    return CalibCamToCam(p_rect, r_rect), CalibVeloToCam(rotation, translation)


# ---------------------------------------------------------------------------
# OXTS GPS/IMU


@dataclass
class OxtsRecord:
    lat: float
    lon: float
    alt: float
    roll: float
    pitch: float
    yaw: float
    vn: float
    ve: float
    vf: float
    vl: float
    vu: float
    extra: tuple  # remaining 19 fields, kept opaque


def parse_oxts(text: str) -> list[OxtsRecord]:
    """Parse OXTS records, one per non-empty line of 30 numeric fields."""
    records = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        tokens = stripped.split()
        if len(tokens) != OXTS_FIELD_COUNT:
            raise WrongFieldCount(len(tokens))
        try:
            values = [float(tok) for tok in tokens]
        except ValueError:
            raise MalformedNumber(stripped) from None
        records.append(OxtsRecord(*values[:11], extra=tuple(values[11:])))
    return records


def parse_timestamps(text: str) -> list[float]:
    """KITTI timestamp lines (date, time, nanosecond fraction) to epoch seconds."""
    out = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        base, _, frac = stripped.partition(".")
        try:
            whole = calendar.timegm(time.strptime(base, "%Y-%m-%d %H:%M:%S"))
            fraction = float("0." + frac) if frac else 0.0
        except ValueError:
            raise MalformedNumber(stripped) from None
        out.append(whole + fraction)
    return out


# ---------------------------------------------------------------------------
# tracklets


@dataclass
class Tracklet:
    object_type: str
    h: float
    w: float
    l: float
    first_frame: int
    poses: np.ndarray  # M x 4, columns tx ty tz rz (velodyne frame)

    @property
    def n_frames(self) -> int:
        return self.poses.shape[0]

    def frames(self):
        return range(self.first_frame, self.first_frame + self.n_frames)


def _child_text(elem, name, path):
    child = elem.find(name)
    if child is None or child.text is None:
        raise XmlStructure(f"{path}/{name}")
    return child.text.strip()


def _child_float(elem, name, path):
    raw = _child_text(elem, name, path)
    try:
        return float(raw)
    except ValueError:
        raise MalformedNumber(f"{path}/{name}") from None


def parse_tracklets(xml_text: str) -> list[Tracklet]:
    """Parse tracklet_labels.xml (boost-serialization layout).

    Keeps object type, box size, first frame and per-pose tx ty tz rz; the
    remaining pose fields (state, occlusion, ...) are dropped.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError:
        raise XmlStructure("document") from None
    tree = root if root.tag == "tracklets" else root.find("tracklets")
    if tree is None:
        raise XmlStructure("tracklets")

    tracklets = []
    for index, item in enumerate(tree.findall("item")):
        path = f"tracklets/item[{index}]"
        object_type = _child_text(item, "objectType", path)
        h = _child_float(item, "h", path)
        w = _child_float(item, "w", path)
        l = _child_float(item, "l", path)
        first_frame = int(_child_float(item, "first_frame", path))
        poses_elem = item.find("poses")
        if poses_elem is None:
            raise XmlStructure(f"{path}/poses")
        declared = int(_child_float(poses_elem, "count", f"{path}/poses"))
        pose_items = poses_elem.findall("item")
        if len(pose_items) != declared:
            raise XmlStructure(f"{path}/poses")
        poses = np.empty((len(pose_items), 4), dtype=np.float64)
        for j, pose in enumerate(pose_items):
            pose_path = f"{path}/poses/item[{j}]"
            poses[j, 0] = _child_float(pose, "tx", pose_path)
            poses[j, 1] = _child_float(pose, "ty", pose_path)
            poses[j, 2] = _child_float(pose, "tz", pose_path)
            poses[j, 3] = _child_float(pose, "rz", pose_path)
        tracklets.append(Tracklet(object_type, h, w, l, first_frame, poses))
    return tracklets


# ---------------------------------------------------------------------------
# velodyne scans

_POINT_BYTES = 16  # x, y, z, reflectance as little-endian float32


def read_velodyne(data: bytes) -> np.ndarray:
    """Decode a velodyne scan into an N x 4 float32 array (x y z reflectance)."""
    remainder = len(data) % _POINT_BYTES
    if remainder:
        raise TruncatedRecord(len(data) - remainder)
    return np.frombuffer(data, dtype="<f4").reshape(-1, 4).copy()


def write_velodyne(points: np.ndarray) -> bytes:
    points = np.asarray(points)
    if points.ndim != 2 or points.shape[1] != 4:
        raise DimensionMismatch(f"point cloud shape {points.shape}, want (N, 4)")
    return np.ascontiguousarray(points, dtype="<f4").tobytes()


# ---------------------------------------------------------------------------
# optical flow


@dataclass
class FlowMap:
    """Per-pixel displacement in pixels, with a validity mask."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float32)
        self.v = np.asarray(self.v, dtype=np.float32)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise DimensionMismatch(f"flow components {self.u.shape} vs {self.v.shape}")
        if self.valid is None:
            self.valid = np.ones(self.u.shape, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.u.shape:
                raise DimensionMismatch(f"valid mask {self.valid.shape} vs {self.u.shape}")

    @property
    def shape(self):
        return self.u.shape


def _read_flo(data: bytes) -> FlowMap:
    if len(data) < 12:
        raise DimensionMismatch(f"flo header needs 12 bytes, got {len(data)}")
    (magic,) = struct.unpack("<f", data[:4])
    if magic != np.float32(_FLO_MAGIC):
        raise BadMagic(magic)
    width, height = struct.unpack("<ii", data[4:12])
    if width <= 0 or height <= 0:
        raise DimensionMismatch(f"flo size {width}x{height}")
    expected = 12 + 8 * width * height
    if len(data) != expected:
        raise DimensionMismatch(f"flo payload {len(data)} bytes, want {expected}")
    payload = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width, 2)
    return FlowMap(payload[:, :, 0].copy(), payload[:, :, 1].copy())


def _read_flow_png16(data: bytes) -> FlowMap:
    img = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise BadMagic("undecodable image")
    if img.dtype != np.uint16 or img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatch(f"want 16-bit 3-channel png, got {img.dtype} {img.shape}")
    # cv2 decodes BGR, the file stores (u, v, valid) in RGB order
    u = (img[:, :, 2].astype(np.float32) - 2 ** 15) / 64.0
    v = (img[:, :, 1].astype(np.float32) - 2 ** 15) / 64.0
    valid = img[:, :, 0] > 0
    u[~valid] = 0.0
    v[~valid] = 0.0
    return FlowMap(u, v, valid)


def read_flow(data: bytes, fmt: str = FLO) -> FlowMap:
    """Decode flow bytes in either container format ("flo" or "png16")."""
    if fmt == FLO:
        return _read_flo(data)
    if fmt == PNG16:
        return _read_flow_png16(data)
    raise ValueError(f"unknown flow format {fmt!r}")


def write_flow(flow: FlowMap, fmt: str = FLO) -> bytes:
    """Encode a FlowMap; .flo round-trips bit-exactly, png16 within 1/64 px."""
    height, width = flow.shape
    if fmt == FLO:
        payload = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
        return struct.pack("<fii", _FLO_MAGIC, width, height) + payload.tobytes()
    if fmt == PNG16:
        valid = flow.valid

        def quantize(comp):
            q = np.rint(comp.astype(np.float64) * 64.0 + 2 ** 15)
            q[~valid] = 2 ** 15  # invalid pixels carry zero displacement
            return np.clip(q, 0, 2 ** 16 - 1).astype(np.uint16)

        bgr = np.stack(
            [valid.astype(np.uint16), quantize(flow.v), quantize(flow.u)], axis=-1
        )
        ok, buf = cv2.imencode(".png", bgr)
        if not ok:
            raise DataError("png encoding failed")
        return buf.tobytes()
    raise ValueError(f"unknown flow format {fmt!r}")


# ---------------------------------------------------------------------------
# masks and 16-bit single-channel images


def write_mask_png(mask: np.ndarray) -> bytes:
    """Encode a {0,1} motion mask as an 8-bit PNG with values {0, 255}."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DimensionMismatch(f"mask shape {mask.shape}, want H x W")
    ok, buf = cv2.imencode(".png", (mask > 0).astype(np.uint8) * 255)
    if not ok:
        raise DataError("png encoding failed")
    return buf.tobytes()


def read_mask_png(data: bytes) -> np.ndarray:
    img = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise BadMagic("undecodable image")
    if img.ndim != 2 or img.dtype != np.uint8:
        raise DimensionMismatch(f"want 8-bit single-channel png, got {img.dtype} {img.shape}")
    bad = (img != 0) & (img != 255)
    if bad.any():
        raise BadPixelValue(int(img[bad][0]))
    return (img == 255).astype(np.uint8)


def write_u16_png(values: np.ndarray) -> bytes:
    """16-bit single-channel PNG, used for instance ids and quantized depth."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise DimensionMismatch(f"image shape {values.shape}, want H x W")
    ok, buf = cv2.imencode(".png", values.astype(np.uint16))
    if not ok:
        raise DataError("png encoding failed")
    return buf.tobytes()


def read_u16_png(data: bytes) -> np.ndarray:
    img = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise BadMagic("undecodable image")
    if img.ndim != 2 or img.dtype != np.uint16:
        raise DimensionMismatch(f"want 16-bit single-channel png, got {img.dtype} {img.shape}")
    return img


def parse_instance_sidecar(text: str) -> dict:
    """Sidecar lines `frame_id instance_id category` to a lookup dict."""
    table = {}
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        tokens = stripped.split()
        if len(tokens) != 3:
            raise MalformedNumber(stripped)
        try:
            frame, instance = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise MalformedNumber(stripped) from None
        table[(frame, instance)] = tokens[2]
    return table


# ---------------------------------------------------------------------------
# frame bundles and the standard crop


@dataclass
class FrameSample:
    """Aligned per-frame bundle; optional parts are None when a stream is absent."""

    rgb: np.ndarray  # H x W x 3 float in [0, 1]
    rgb_flow: FlowMap | None = None
    lidar_flow: FlowMap | None = None
    depth: np.ndarray | None = None  # H x W metres
    mask: np.ndarray | None = None  # H x W uint8 in {0, 1}


def crop_standard(img: np.ndarray, height: int = CROP_HEIGHT, width: int = CROP_WIDTH):
    """Keep the bottom `height` rows and the centered `width` columns."""
    h, w = img.shape[:2]
    if h < height or w < width:
        raise TooSmall(h, w)
    top = h - height
    left = (w - width) // 2
    return img[top : top + height, left : left + width]


def crop_flow(flow: FlowMap, height: int = CROP_HEIGHT, width: int = CROP_WIDTH) -> FlowMap:
    return FlowMap(
        crop_standard(flow.u, height, width).copy(),
        crop_standard(flow.v, height, width).copy(),
        crop_standard(flow.valid, height, width).copy(),
    )


def crop_sample(sample: FrameSample, height: int = CROP_HEIGHT, width: int = CROP_WIDTH) -> FrameSample:
    """Apply the same crop window to every stream of one frame."""

    def maybe(img):
        return None if img is None else crop_standard(img, height, width).copy()

    return FrameSample(
        rgb=crop_standard(sample.rgb, height, width).copy(),
        rgb_flow=None if sample.rgb_flow is None else crop_flow(sample.rgb_flow, height, width),
        lidar_flow=None if sample.lidar_flow is None else crop_flow(sample.lidar_flow, height, width),
        depth=maybe(sample.depth),
        mask=maybe(sample.mask),
    )


# ---------------------------------------------------------------------------
# path helpers (all disk access funnels through these)


def load_rgb(path) -> np.ndarray:
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise DataError(f"cannot read image {path}")
    return bgr[:, :, ::-1].astype(np.float64) / 255.0


def save_rgb(path, rgb: np.ndarray):
    bgr = np.clip(np.rint(np.asarray(rgb)[:, :, ::-1] * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), bgr):
        raise DataError(f"cannot write image {path}")


def load_flow_file(path) -> FlowMap:
    path = Path(path)
    fmt = FLO if path.suffix == ".flo" else PNG16
    return read_flow(path.read_bytes(), fmt)


def save_flow_file(path, flow: FlowMap):
    path = Path(path)
    fmt = FLO if path.suffix == ".flo" else PNG16
    path.write_bytes(write_flow(flow, fmt))


def load_mask_file(path) -> np.ndarray:
    return read_mask_png(Path(path).read_bytes())


def save_mask_file(path, mask: np.ndarray):
    Path(path).write_bytes(write_mask_png(mask))


DEPTH_PNG_SCALE = 256.0  # metres quantized to 1/256 in 16-bit depth PNGs


def load_depth_png(path) -> np.ndarray:
    return read_u16_png(Path(path).read_bytes()).astype(np.float64) / DEPTH_PNG_SCALE


def save_depth_png(path, depth: np.ndarray):
    q = np.clip(np.rint(np.asarray(depth) * DEPTH_PNG_SCALE), 0, 2 ** 16 - 1)
    Path(path).write_bytes(write_u16_png(q.astype(np.uint16)))
