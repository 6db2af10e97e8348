"""fusemod: camera + LiDAR fusion toolkit for moving object detection."""

__version__ = "0.1.0"
