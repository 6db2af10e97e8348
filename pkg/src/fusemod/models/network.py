"""Multi-stream encoder with an FCN8s head, assembled from a FusionPlan.

Each stream gets its own encoder; same-stage features are concatenated
across streams, scored by 1x1 convs, and upsampled with learned bilinear
deconvolutions. Output logits always match the input resolution.
"""

import json
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .. import autograd as ag
from ..errors import DataError, InvalidPlan, ShapeMismatch, TooSmall
from .blocks import ConvBN, Registry, ShuffleUnit
from .plan import TINY_ENCODER, EncoderSpec, FusionPlan, parse_plan

MIN_SIDE = 32


def mask_from_logits(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the two channels; ties go to static."""
    return (logits[:, 1] > logits[:, 0]).astype(np.uint8)


def adapt_first_layer(weight: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    """Widen or narrow a first conv layer trained on 3-channel input.

    Extra channels copy the original slices cyclically, plus a small seeded
    perturbation (clipped at five sigma) so the copies can diverge.
    """
    weight = np.asarray(weight)
    if weight.ndim != 4 or weight.shape[1] != 3:
        raise ShapeMismatch(f"expected (C_out, 3, k, k), got {weight.shape}")
    if n < 1:
        raise ShapeMismatch(f"target channel count must be >= 1, got {n}")
    if n <= 3:
        return weight[:, :n].copy()
    extra = weight[:, [i % 3 for i in range(n - 3)]].copy()
    sigma = 1e-3
    noise = np.clip(
        np.random.default_rng(seed).normal(0.0, sigma, size=extra.shape),
        -5 * sigma,
        5 * sigma,
    )
    return np.concatenate([weight, extra + noise], axis=1)


class _Encoder:
    def __init__(self, reg: Registry, name: str, cin: int, spec: EncoderSpec):
        self.conv1 = ConvBN(
            reg, f"{name}.conv1", cin, spec.conv1_channels, k=3, stride=spec.conv1_stride, pad=1
        )
        self.stages = []
        channels = spec.conv1_channels
        for si, (units, cout) in enumerate(spec.stages, start=2):
            stage = []
            for ui in range(units):
                stage.append(
                    ShuffleUnit(
                        reg,
                        f"{name}.stage{si}.unit{ui}",
                        channels if ui == 0 else cout,
                        cout,
                        spec.groups,
                        stride=2 if ui == 0 else 1,
                    )
                )
            channels = cout
            self.stages.append(stage)

    def __call__(self, x, training):
        h = self.conv1(x, training)
        h = ag.maxpool(h, k=3, stride=2, pad=1)
        taps = []
        for stage in self.stages:
            for unit in stage:
                h = unit(h, training)
            taps.append(h)
        return taps  # stride 8, 16, 32 features


class _ScoreConv:
    def __init__(self, reg: Registry, name: str, cin: int):
        # small random init: zeros would block every encoder gradient
        self.w = reg.small_weight(f"{name}.w", (2, cin, 1, 1))
        self.b = reg.bias(f"{name}.b", 2)

    def __call__(self, x):
        return ag.conv2d(x, self.w.tensor, self.b.tensor)


def _bilinear_pair(k: int) -> np.ndarray:
    w = np.zeros((2, 2, k, k))
    w[0, 0] = w[1, 1] = ag.bilinear_kernel(k)
    return w


class FusionNet:
    def __init__(self, plan: FusionPlan, spec: EncoderSpec = TINY_ENCODER, seed: int = 0):
        if not plan.streams or any(not s for s in plan.streams):
            raise InvalidPlan(plan.text if plan.streams else "", "plan needs non-empty streams")
        self.plan = plan
        self.spec = spec
        self.seed = seed
        reg = Registry(np.random.default_rng(seed))
        self.reg = reg
        self.encoders = [
            _Encoder(reg, f"enc{i}", cin, spec) for i, cin in enumerate(plan.stream_channels)
        ]
        k = len(plan.streams)
        stage_ch = [cout for _, cout in spec.stages]
        self.score2 = _ScoreConv(reg, "dec.score2", k * stage_ch[0])
        self.score3 = _ScoreConv(reg, "dec.score3", k * stage_ch[1])
        self.score4 = _ScoreConv(reg, "dec.score4", k * stage_ch[2])
        self.up4 = reg.fixed_weight("dec.up4.w", _bilinear_pair(4))
        self.up3 = reg.fixed_weight("dec.up3.w", _bilinear_pair(4))
        self.up8 = reg.fixed_weight("dec.up8.w", _bilinear_pair(16))

    @property
    def label(self) -> str:
        return self.plan.text

    # ------------------------------------------------------------------
    # forward

    def _check_streams(self, streams: Sequence[np.ndarray]):
        if len(streams) != len(self.plan.streams):
            raise ShapeMismatch(
                f"plan has {len(self.plan.streams)} streams, got {len(streams)} inputs"
            )
        ref = streams[0].shape
        for s, want_c in zip(streams, self.plan.stream_channels):
            if s.ndim != 4 or s.shape[1] != want_c:
                raise ShapeMismatch(f"stream shape {s.shape}, expected {want_c} channels")
            if s.shape[0] != ref[0] or s.shape[2:] != ref[2:]:
                raise ShapeMismatch(f"stream shapes disagree: {ref} vs {s.shape}")
        if ref[2] < MIN_SIDE or ref[3] < MIN_SIDE:
            raise TooSmall(ref[2], ref[3])

    def forward(self, streams: Sequence[np.ndarray], training: bool = False) -> ag.Tensor:
        streams = [np.asarray(s, dtype=np.float64) for s in streams]
        self._check_streams(streams)
        height, width = streams[0].shape[2:]
        taps = [
            enc(ag.tensor(s), training) for enc, s in zip(self.encoders, streams)
        ]
        fused = [
            taps[0][i] if len(taps) == 1 else ag.concat_channels([t[i] for t in taps])
            for i in range(3)
        ]
        f2, f3, f4 = fused
        h = self.score4(f4)
        h = ag.transposed_conv2d(h, self.up4.tensor, stride=2, pad=1)
        h = ag.crop_hw(h, f3.data.shape[2], f3.data.shape[3])
        h = ag.add(h, self.score3(f3))
        h = ag.transposed_conv2d(h, self.up3.tensor, stride=2, pad=1)
        h = ag.crop_hw(h, f2.data.shape[2], f2.data.shape[3])
        h = ag.add(h, self.score2(f2))
        h = ag.transposed_conv2d(h, self.up8.tensor, stride=8, pad=4)
        return ag.crop_hw(h, height, width)

    def infer(self, streams: Sequence[np.ndarray]) -> np.ndarray:
        with ag.no_grad():
            return self.forward(streams, training=False).data

    def predict_mask(self, streams: Sequence[np.ndarray]) -> np.ndarray:
        return mask_from_logits(self.infer(streams))

    def zero_batch(self, height: int, width: int, n: int = 1) -> List[np.ndarray]:
        return [np.zeros((n, c, height, width)) for c in self.plan.stream_channels]

    # ------------------------------------------------------------------
    # bookkeeping

    def params(self) -> List[ag.Param]:
        return self.reg.param_list()

    def param_counts(self) -> dict:
        counts: dict = {}
        for name, p in self.reg.params.items():
            top = name.split(".")[0]
            counts[top] = counts.get(top, 0) + p.data.size
        counts["total"] = sum(v for k, v in counts.items() if k != "total")
        return counts

    # ------------------------------------------------------------------
    # persistence

    def state_arrays(self) -> dict:
        arrays = {name: p.data for name, p in self.reg.params.items()}
        for name, state in self.reg.bn.items():
            arrays[f"{name}.mean"] = state.mean
            arrays[f"{name}.var"] = state.var
        return arrays

    def save(self, path, scalars: Optional[dict] = None, meta: Optional[dict] = None):
        path = Path(path)
        ag.save_checkpoint(path, self.state_arrays(), scalars or {})
        sidecar = {
            "plan": self.plan.text,
            "seed": self.seed,
            "encoder": {
                "conv1_channels": self.spec.conv1_channels,
                "conv1_stride": self.spec.conv1_stride,
                "stages": [list(s) for s in self.spec.stages],
                "groups": self.spec.groups,
            },
        }
        sidecar.update(meta or {})
        meta_path = path.with_name(path.name + ".meta.json")
        meta_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    def load_arrays(self, arrays: dict):
        for name, p in self.reg.params.items():
            if name not in arrays:
                raise DataError(f"checkpoint is missing parameter {name}")
            if arrays[name].shape != p.data.shape:
                raise ShapeMismatch(
                    f"{name}: checkpoint {arrays[name].shape} vs model {p.data.shape}"
                )
            p.tensor.data = arrays[name].copy()
        for name, state in self.reg.bn.items():
            state.mean = arrays[f"{name}.mean"].copy()
            state.var = arrays[f"{name}.var"].copy()

    @classmethod
    def load(cls, path) -> "tuple[FusionNet, dict]":
        path = Path(path)
        meta_path = path.with_name(path.name + ".meta.json")
        if not meta_path.exists():
            raise DataError(f"missing checkpoint sidecar {meta_path}")
        meta = json.loads(meta_path.read_text())
        spec = EncoderSpec(
            conv1_channels=meta["encoder"]["conv1_channels"],
            conv1_stride=meta["encoder"]["conv1_stride"],
            stages=tuple(tuple(s) for s in meta["encoder"]["stages"]),
            groups=meta["encoder"]["groups"],
        )
        net = cls(parse_plan(meta["plan"]), spec, seed=meta.get("seed", 0))
        arrays, scalars = ag.load_checkpoint(path)
        net.load_arrays(arrays)
        return net, {"meta": meta, "scalars": scalars}


def build_model(plan: FusionPlan, spec: EncoderSpec = TINY_ENCODER, seed: int = 0) -> FusionNet:
    return FusionNet(plan, spec, seed)
