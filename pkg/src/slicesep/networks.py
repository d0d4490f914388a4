"""Untrained convolutional generator networks.

Two flavours share one encoder-decoder skeleton. The deep generators map a
fixed random field to an image through four stride-2 levels with wide channel
schedules; the shallow three-level variant keeps every intermediate tensor at
one channel and is used as a trainable filter. Skip branches are 1x1
convolutions from each encoder scale (the network input counts as scale
zero), concatenated ahead of the matching decoder convolution. All main
kernels are 5x5, activations are leaky ReLU, and the 1x1 output head is
linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from hashlib import blake2s

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor

DEFAULT_DEPTH = 4
# sized for single-core CPU training; (16, 32, 64, 64) is the larger schedule
# for when runtime is no object
DEFAULT_CHANNELS = (4, 8, 16, 16)
DEFAULT_SKIP_CHANNELS = 4
LEAKY_SLOPE = 0.2
Z_RANGE = 0.5  # fixed network inputs are uniform on [-Z_RANGE, Z_RANGE]


def parameter_stream(seed, label):
    """Independent generator for one network, derived from the run seed.

    The label is hashed so streams for different networks never collide and
    adding a network never shifts the draws of an existing one.
    """
    digest = blake2s(label.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), int.from_bytes(digest, "little")])
    )


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative description of one generator network."""

    kind: str
    in_channels: int
    out_channels: int
    depth: int
    channels_per_level: tuple
    skip_channels: int
    main_kernel: int = 5
    skip_kernel: int = 1
    leaky_slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if self.kind not in ("deep_dip", "shallow_dip"):
            raise ConfigurationError(f"unknown network kind {self.kind!r}")
        if len(self.channels_per_level) != self.depth:
            raise ConfigurationError(
                f"channels_per_level has {len(self.channels_per_level)} entries "
                f"for depth {self.depth}"
            )
        if self.depth < 1 or min(self.channels_per_level) < 1:
            raise ConfigurationError("depth and channel counts must be positive")
        if self.kind == "shallow_dip":
            if self.depth != 3 or any(c != 1 for c in self.channels_per_level):
                raise ConfigurationError(
                    "shallow variant is fixed at 3 levels of 1 channel"
                )


@dataclass
class DipNetwork:
    """A built generator: specification, trainable tensors, fixed input field."""

    spec: NetworkSpec
    encoder: list = field(default_factory=list)  # (kernel, bias) per level
    skips: list = field(default_factory=list)  # (kernel, bias), source scale 0..depth-1
    decoder: list = field(default_factory=list)
    head: tuple = None
    fixed_input: Tensor = None

    @property
    def parameters(self):
        params = []
        for group in (self.encoder, self.skips, self.decoder, [self.head]):
            for kernel, bias in group:
                params.append(kernel)
                params.append(bias)
        return params

    def parameter_count(self):
        return sum(p.size for p in self.parameters)

    def forward(self, x=None):
        """Run the generator; with no argument the fixed input field is used."""
        if x is None:
            x = self.fixed_input
        if x.data.ndim != 3 or x.data.shape[0] != self.spec.in_channels:
            raise ConfigurationError(
                f"forward expects [{self.spec.in_channels},H,W], got {x.data.shape}"
            )
        slope = self.spec.leaky_slope
        scales = [x]
        for kernel, bias in self.encoder:
            scales.append(
                T.leaky_relu(
                    T.conv2d(scales[-1], kernel, bias=bias, stride=2, padding="reflect"),
                    slope,
                )
            )
        out = scales[-1]
        for level, (kernel, bias) in enumerate(self.decoder):
            source = scales[self.spec.depth - 1 - level]
            up = T.upsample2(out)
            th, tw = source.data.shape[-2:]
            if up.data.shape[-2:] != (th, tw):
                up = T.crop2d(up, th, tw)
            skern, sbias = self.skips[self.spec.depth - 1 - level]
            branch = T.conv2d(source, skern, bias=sbias, stride=1, padding="reflect")
            out = T.leaky_relu(
                T.conv2d(
                    T.concat_channels([up, branch]), kernel, bias=bias,
                    stride=1, padding="reflect",
                ),
                slope,
            )
        hkern, hbias = self.head
        return T.conv2d(out, hkern, bias=hbias, stride=1, padding="reflect")


def _draw_conv(rng, c_out, c_in, k, scale, dtype):
    fan_in = c_in * k * k
    a = 0.5 if scale == "half_range" else (1.0 / fan_in) ** 0.5
    kernel = Tensor(
        rng.uniform(-a, a, (c_out, c_in, k, k)).astype(dtype), requires_grad=True
    )
    bias = Tensor(rng.uniform(-a, a, c_out).astype(dtype), requires_grad=True)
    return kernel, bias


def _build(spec, h, w, rng, scale, dtype):
    if h < 2**spec.depth or w < 2**spec.depth:
        raise ConfigurationError(
            f"{h}x{w} input is smaller than the 2^{spec.depth} the network contracts by"
        )
    z = Tensor(
        rng.uniform(-Z_RANGE, Z_RANGE, (spec.in_channels, h, w)).astype(dtype)
    )
    net = DipNetwork(spec=spec, fixed_input=z)
    widths = [spec.in_channels] + list(spec.channels_per_level)
    for i in range(spec.depth):
        net.encoder.append(
            _draw_conv(rng, widths[i + 1], widths[i], spec.main_kernel, scale, dtype)
        )
    for i in range(spec.depth):
        net.skips.append(
            _draw_conv(rng, spec.skip_channels, widths[i], spec.skip_kernel, scale, dtype)
        )
    ch = spec.channels_per_level
    for level in range(spec.depth):
        i = spec.depth - level  # this conv produces the tensor at scale i-1
        c_in = ch[i - 1] + spec.skip_channels
        c_out = ch[max(i - 2, 0)]
        net.decoder.append(_draw_conv(rng, c_out, c_in, spec.main_kernel, scale, dtype))
    net.head = _draw_conv(rng, spec.out_channels, ch[0], spec.skip_kernel, scale, dtype)
    return net


def build_deep_dip(
    h,
    w,
    in_channels=1,
    out_channels=1,
    seed=0,
    label="dip",
    depth=DEFAULT_DEPTH,
    channels=DEFAULT_CHANNELS,
    skip_channels=DEFAULT_SKIP_CHANNELS,
    dtype=np.float64,
):
    """Image-generating network driven by a fixed random field.

    Weights are uniform with a fan-in dependent range; the input field is
    uniform on [-0.5, 0.5] and never trained.
    """
    spec = NetworkSpec(
        kind="deep_dip",
        in_channels=in_channels,
        out_channels=out_channels,
        depth=depth,
        channels_per_level=tuple(channels),
        skip_channels=skip_channels,
    )
    rng = seed if isinstance(seed, np.random.Generator) else parameter_stream(seed, label)
    return _build(spec, h, w, rng, "fan_in", dtype)


def build_shallow_dip(h, w, seed=0, label="fdip", dtype=np.float64):
    """Three-level single-channel network used as a trainable filter.

    Every parameter is initialized uniformly on [-0.5, 0.5].
    """
    if h < 8 or w < 8:
        raise ConfigurationError(f"shallow network needs at least 8x8 input, got {h}x{w}")
    spec = NetworkSpec(
        kind="shallow_dip",
        in_channels=1,
        out_channels=1,
        depth=3,
        channels_per_level=(1, 1, 1),
        skip_channels=1,
    )
    rng = seed if isinstance(seed, np.random.Generator) else parameter_stream(seed, label)
    return _build(spec, h, w, rng, "half_range", dtype)
