"""Fusion plans: which signals feed which encoder stream.

Text syntax mirrors the experiment tables: `+` separates streams (their
features are concatenated before the decoder), `x` concatenates signals at
the data level inside one stream. Parentheses are optional grouping sugar,
e.g. `rgb + (rgbflow x lidarflow)`.
"""

from dataclasses import dataclass
from typing import List, Tuple

from ..errors import InvalidPlan


@dataclass(frozen=True)
class InputSignal:
    name: str
    channels: int
    temporal: bool  # needs the frame at t+1


RGB = InputSignal("rgb", 3, False)
RGB_FLOW = InputSignal("rgbflow", 2, False)
LIDAR_FLOW = InputSignal("lidarflow", 2, False)
LIDAR_DEPTH = InputSignal("depth", 1, False)
RGB_T = InputSignal("rgb_t", 3, False)
RGB_T1 = InputSignal("rgb_t1", 3, True)
DEPTH_T = InputSignal("depth_t", 1, False)
DEPTH_T1 = InputSignal("depth_t1", 1, True)

SIGNALS = {
    s.name: s
    for s in (RGB, RGB_FLOW, LIDAR_FLOW, LIDAR_DEPTH, RGB_T, RGB_T1, DEPTH_T, DEPTH_T1)
}


@dataclass(frozen=True)
class FusionPlan:
    streams: Tuple[Tuple[InputSignal, ...], ...]

    @property
    def stream_channels(self) -> List[int]:
        return [sum(s.channels for s in stream) for stream in self.streams]

    @property
    def temporal(self) -> bool:
        return any(s.temporal for stream in self.streams for s in stream)

    @property
    def text(self) -> str:
        parts = []
        for stream in self.streams:
            inner = " x ".join(s.name for s in stream)
            parts.append(f"({inner})" if len(stream) > 1 else inner)
        return " + ".join(parts)


def parse_plan(text: str) -> FusionPlan:
    if not text or not text.strip():
        raise InvalidPlan(text, "empty plan")
    streams = []
    for chunk in text.split("+"):
        tokens = chunk.replace("(", " ").replace(")", " ").lower().split()
        if not tokens:
            raise InvalidPlan(text, "empty stream")
        # expect signal (x signal)*
        if len(tokens) % 2 == 0:
            raise InvalidPlan(text, f"malformed stream {chunk.strip()!r}")
        signals = []
        for i, tok in enumerate(tokens):
            if i % 2 == 1:
                if tok != "x":
                    raise InvalidPlan(text, f"expected 'x' between signals, got {tok!r}")
                continue
            if tok not in SIGNALS:
                raise InvalidPlan(text, f"unknown signal {tok!r}")
            signal = SIGNALS[tok]
            if signal in signals:
                raise InvalidPlan(text, f"signal {tok!r} repeated within a stream")
            signals.append(signal)
        streams.append(tuple(signals))
    return FusionPlan(tuple(streams))


@dataclass(frozen=True)
class EncoderSpec:
    conv1_channels: int
    conv1_stride: int
    stages: Tuple[Tuple[int, int], ...]  # (units, out_channels) per stage
    groups: int

    def __post_init__(self):
        for units, channels in self.stages:
            if channels % self.groups:
                raise InvalidPlan(
                    str(self.stages), f"stage channels {channels} not divisible by g={self.groups}"
                )
            if (channels // 4) % self.groups:
                raise InvalidPlan(
                    str(self.stages),
                    f"bottleneck {channels // 4} not divisible by g={self.groups}",
                )
            if units < 1:
                raise InvalidPlan(str(self.stages), "stage needs at least one unit")


# desk-scale default; the full-size profile matches the published architecture
TINY_ENCODER = EncoderSpec(conv1_channels=8, conv1_stride=2, stages=((3, 16), (3, 32), (2, 64)), groups=2)
FULL_ENCODER = EncoderSpec(conv1_channels=24, conv1_stride=2, stages=((4, 240), (8, 480), (4, 960)), groups=3)

ENCODER_PROFILES = {"tiny": TINY_ENCODER, "full": FULL_ENCODER}
