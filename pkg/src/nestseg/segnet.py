"""A small U-Net style encoder-decoder on top of the tensor core.

Layout for ``depth = D`` and ``base = b`` (stage ``d`` has ``c_d = b * 2**d``
channels):

* encoder stage ``d < D``: two 3x3 same convs + ReLU, then 2x2 max-pool
* bottleneck: two 3x3 convs + ReLU at ``c_D`` channels
* decoder stage ``d``: nearest upsample, concat with the encoder skip,
  two 3x3 convs + ReLU down to ``c_d`` channels
* head: 1x1 conv to 1 channel (multi-level) or ``m + 1`` (softmax)

Inputs are shifted and scaled by fixed constants before the first conv.
The head output is the raw map ``x``; no activation is applied here.

Parameter count, with ``conv(i, o, k) = o*i*k*k + o`` and ``c_{-1} = C_in``::

    sum_{d<D} [conv(c_{d-1}, c_d, 3) + conv(c_d, c_d, 3)]
  + conv(c_{D-1}, c_D, 3) + conv(c_D, c_D, 3)
  + sum_{d<D} [conv(c_{d+1} + c_d, c_d, 3) + conv(c_d, c_d, 3)]
  + conv(c_0, n_out, 1)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .optim import ParamStore

HEAD_GAIN = 0.1
# fixed affine input normalisation: scene intensities in [0, 1] -> roughly [-2, 2]
INPUT_CENTER = 0.5
INPUT_SCALE = 0.25


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 3
    base_channels: int = 16
    input_channels: int = 1
    head: str = "multilevel"
    m: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth = {self.depth}: requires depth >= 1")
        if self.base_channels < 1 or self.input_channels < 1:
            raise ConfigError("base_channels and input_channels must be >= 1")
        if self.head not in ("multilevel", "softmax"):
            raise ConfigError(f"head = {self.head!r}: must be 'multilevel' or 'softmax'")
        if self.m < 1:
            raise ConfigError(f"m = {self.m}: requires m >= 1")

    @property
    def out_channels(self):
        return 1 if self.head == "multilevel" else self.m + 1

    @property
    def channels(self):
        return [self.base_channels * 2**d for d in range(self.depth + 1)]

    def to_dict(self):
        return asdict(self)


def conv_param_count(cin, cout, k):
    return cout * cin * k * k + cout


def parameter_count(cfg):
    c = cfg.channels
    D = cfg.depth
    total = 0
    cin = cfg.input_channels
    for d in range(D):
        total += conv_param_count(cin, c[d], 3) + conv_param_count(c[d], c[d], 3)
        cin = c[d]
    total += conv_param_count(c[D - 1], c[D], 3) + conv_param_count(c[D], c[D], 3)
    for d in range(D):
        total += conv_param_count(c[d + 1] + c[d], c[d], 3) + conv_param_count(c[d], c[d], 3)
    total += conv_param_count(c[0], cfg.out_channels, 1)
    return total


class SegNet:
    def __init__(self, cfg, zero_head=False):
        self.cfg = cfg
        self.params = ParamStore(seed=cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        c = cfg.channels
        D = cfg.depth

        def conv(name, cin, cout, k=3, gain=1.0):
            std = gain * np.sqrt(2.0 / (cin * k * k))
            self.params.add(f"{name}.weight", rng.normal(0.0, std, size=(cout, cin, k, k)))
            self.params.add(f"{name}.bias", np.zeros(cout))

        cin = cfg.input_channels
        for d in range(D):
            conv(f"enc{d}.conv1", cin, c[d])
            conv(f"enc{d}.conv2", c[d], c[d])
            cin = c[d]
        conv("mid.conv1", c[D - 1], c[D])
        conv("mid.conv2", c[D], c[D])
        for d in reversed(range(D)):
            conv(f"dec{d}.conv1", c[d + 1] + c[d], c[d])
            conv(f"dec{d}.conv2", c[d], c[d])
        conv("head", c[0], cfg.out_channels, k=1, gain=0.0 if zero_head else HEAD_GAIN)

    def _block(self, name, x):
        p = self.params
        x = T.relu(T.conv2d(x, p[f"{name}.conv1.weight"], p[f"{name}.conv1.bias"]))
        return T.relu(T.conv2d(x, p[f"{name}.conv2.weight"], p[f"{name}.conv2.bias"]))

    def check_input(self, shape):
        cfg = self.cfg
        if len(shape) != 4 or shape[1] != cfg.input_channels:
            raise T.ShapeError(f"expected input [B, {cfg.input_channels}, H, W], got {tuple(shape)}")
        k = 2**cfg.depth
        if shape[2] % k or shape[3] % k:
            raise T.ShapeError(f"input H and W must be divisible by 2**depth = {k}, got {shape[2]}x{shape[3]}")

    def forward(self, image):
        """Map ``image[B, C_in, H, W]`` to the raw head output ``x[B, C_out, H, W]``."""
        if not isinstance(image, T.Tensor):
            image = T.Tensor(image)
        self.check_input(image.shape)
        skips = []
        x = T.scale(T.add(image, -INPUT_CENTER), 1.0 / INPUT_SCALE)
        for d in range(self.cfg.depth):
            x = self._block(f"enc{d}", x)
            skips.append(x)
            x = T.max_pool2(x)
        x = self._block("mid", x)
        for d in reversed(range(self.cfg.depth)):
            x = T.concat_channels(T.upsample2(x), skips[d])
            x = self._block(f"dec{d}", x)
        p = self.params
        return T.conv2d(x, p["head.weight"], p["head.bias"])

    __call__ = forward


def build_network(cfg, zero_head=False):
    """Return ``(param_store, forward)`` for ``cfg``."""
    net = SegNet(cfg, zero_head=zero_head)
    return net.params, net.forward
