"""Error types shared across the package.

Three buckets matter for the CLI exit code: ConfigError (bad flags or config
keys, exit 2), DataError (unreadable or inconsistent input data, exit 3) and
everything else (runtime failure, exit 4).
"""


class FusemodError(Exception):
    pass


class ConfigError(FusemodError):
    """Bad configuration: unknown key, unparsable value, invalid plan text."""


class DataError(FusemodError):
    """Input data violates its format or an internal consistency rule."""


# ---------------------------------------------------------------------------
# parsers

class MissingKey(DataError):
    def __init__(self, name):
        super().__init__(f"required calibration key missing: {name}")
        self.name = name


class MalformedNumber(DataError):
    def __init__(self, where):
        super().__init__(f"malformed numeric field at {where!r}")
        self.where = where


class WrongFieldCount(DataError):
    def __init__(self, got, want=30):
        super().__init__(f"expected {want} fields, got {got}")
        self.got = got


class XmlStructure(DataError):
    def __init__(self, path):
        super().__init__(f"unexpected XML structure at {path}")
        self.path = path


class TruncatedRecord(DataError):
    def __init__(self, byte_offset):
        super().__init__(f"truncated record starting at byte {byte_offset}")
        self.byte_offset = byte_offset


class BadMagic(DataError):
    def __init__(self, got):
        super().__init__(f"bad magic value {got!r}")
        self.got = got


class DimensionMismatch(DataError):
    def __init__(self, detail):
        super().__init__(f"dimension mismatch: {detail}")
        self.detail = detail


class TooSmall(DataError):
    def __init__(self, h, w):
        super().__init__(f"image {h}x{w} smaller than crop window")
        self.h = h
        self.w = w


class BadPixelValue(DataError):
    def __init__(self, value):
        super().__init__(f"mask pixel value {value} not in {{0, 255}}")
        self.value = value


# ---------------------------------------------------------------------------
# geometry

class NonOrthonormal(FusemodError):
    def __init__(self, deviation):
        super().__init__(f"rotation not orthonormal, deviation {deviation:.3e}")
        self.deviation = deviation


class PoleSingularity(FusemodError):
    def __init__(self, lat):
        super().__init__(f"Mercator undefined at latitude {lat}")
        self.lat = lat


class BehindCamera(FusemodError):
    def __init__(self, depth):
        super().__init__(f"point behind camera, depth {depth:.3e}")
        self.depth = depth


class NonMonotonicTime(FusemodError):
    def __init__(self, index):
        super().__init__(f"timestamps not strictly increasing at index {index}")
        self.index = index


class FrameOutOfRange(DataError):
    def __init__(self, frame, n_frames):
        super().__init__(f"frame {frame} outside drive of {n_frames} frames")
        self.frame = frame
        self.n_frames = n_frames


# ---------------------------------------------------------------------------
# annotation / datasets

class IncompleteDrive(DataError):
    def __init__(self, name, detail=""):
        msg = f"drive {name} is missing required pieces"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.name = name
        self.detail = detail


class EmptySplit(DataError):
    def __init__(self, split):
        super().__init__(f"split {split!r} has no frames")
        self.split = split


class ObjectOutOfBounds(FusemodError):
    def __init__(self, detail):
        super().__init__(f"object leaves the frame: {detail}")
        self.detail = detail


# ---------------------------------------------------------------------------
# tensor / models

class ShapeMismatch(FusemodError):
    def __init__(self, detail):
        super().__init__(f"shape mismatch: {detail}")
        self.detail = detail


class InvalidPlan(ConfigError):
    def __init__(self, text, reason):
        super().__init__(f"invalid fusion plan {text!r}: {reason}")
        self.text = text
        self.reason = reason


class UndefinedIoU(FusemodError):
    def __init__(self, class_index):
        super().__init__(f"IoU undefined for class {class_index} (empty denominator)")
        self.class_index = class_index
