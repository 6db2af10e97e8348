"""Layer blocks that register their parameters and BN buffers by name."""

import math
from typing import Dict

import numpy as np

from .. import autograd as ag
from ..errors import ShapeMismatch


class Registry:
    """Owns every parameter tensor and BN state of a network, keyed by name."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: Dict[str, ag.Param] = {}
        self.bn: Dict[str, ag.BNState] = {}

    def add_param(self, name, data, weight_decay) -> ag.Param:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        param = ag.Param(name, ag.tensor(data, requires_grad=True), weight_decay=weight_decay)
        self.params[name] = param
        return param

    def conv_weight(self, name, shape) -> ag.Param:
        fan_in = shape[1] * shape[2] * shape[3]
        data = self.rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        return self.add_param(name, data, weight_decay=True)

    def fixed_weight(self, name, data) -> ag.Param:
        return self.add_param(name, data, weight_decay=True)

    def small_weight(self, name, shape, sigma=1e-3) -> ag.Param:
        return self.add_param(name, self.rng.normal(0.0, sigma, size=shape), weight_decay=True)

    def bias(self, name, channels) -> ag.Param:
        return self.add_param(name, np.zeros(channels), weight_decay=False)

    def bn_pair(self, name, channels):
        gamma = self.add_param(f"{name}.gamma", np.ones(channels), weight_decay=False)
        beta = self.add_param(f"{name}.beta", np.zeros(channels), weight_decay=False)
        self.bn[name] = ag.BNState.fresh(channels)
        return gamma, beta

    def param_list(self):
        return list(self.params.values())


class ConvBN:
    """conv (no bias) -> BN -> optional ReLU."""

    def __init__(self, reg, name, cin, cout, k, stride=1, pad=0, groups=1, relu=True):
        self.w = reg.conv_weight(f"{name}.w", (cout, cin // groups, k, k))
        self.gamma, self.beta = reg.bn_pair(f"{name}.bn", cout)
        self.state = reg.bn[f"{name}.bn"]
        self.stride, self.pad, self.groups, self.relu = stride, pad, groups, relu

    def __call__(self, x, training):
        y = ag.conv2d(x, self.w.tensor, stride=self.stride, pad=self.pad, groups=self.groups)
        y = ag.batch_norm(y, self.gamma.tensor, self.beta.tensor, self.state, training)
        return ag.relu(y) if self.relu else y


class ShuffleUnit:
    """Grouped pointwise / shuffle / depthwise bottleneck.

    Stride 1 keeps channels and adds the input back; stride 2 halves the grid
    and concatenates an average-pooled shortcut, so the branch only produces
    the channel growth.
    """

    def __init__(self, reg, name, cin, cout, groups, stride):
        if stride not in (1, 2):
            raise ShapeMismatch(f"{name}: stride must be 1 or 2, got {stride}")
        if stride == 1 and cin != cout:
            raise ShapeMismatch(f"{name}: residual unit needs cin == cout, got {cin}->{cout}")
        branch_out = cout - cin if stride == 2 else cout
        if branch_out <= 0 or branch_out % groups:
            raise ShapeMismatch(
                f"{name}: branch channels {branch_out} incompatible with g={groups}"
            )
        mid = cout // 4
        self.groups, self.stride = groups, stride
        self.pw1 = ConvBN(reg, f"{name}.pw1", cin, mid, k=1, groups=groups, relu=True)
        self.dw = ConvBN(
            reg, f"{name}.dw", mid, mid, k=3, stride=stride, pad=1, groups=mid, relu=False
        )
        self.pw2 = ConvBN(reg, f"{name}.pw2", mid, branch_out, k=1, groups=groups, relu=False)

    def __call__(self, x, training):
        h = self.pw1(x, training)
        h = ag.channel_shuffle(h, self.groups)
        h = self.dw(h, training)
        h = self.pw2(h, training)
        if self.stride == 1:
            return ag.relu(ag.add(h, x))
        shortcut = ag.avgpool(x, k=3, stride=2, pad=1)
        return ag.relu(ag.concat_channels([shortcut, h]))
