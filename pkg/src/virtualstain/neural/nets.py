"""U-Net generator and convolutional discriminator on the tensor core."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class Architecture:
    """Widths and depths of both networks.

    The generator has ``levels`` down blocks starting at ``base_width`` and
    doubling; the discriminator has ``disc_blocks`` blocks after a first
    conv to ``disc_width``, each halving the spatial size and doubling the
    channels, then ``disc_pool`` x ``disc_pool`` average pooling.
    """

    levels: int = 4
    base_width: int = 64
    disc_width: int = 64
    disc_blocks: int = 5
    disc_pool: int = 8
    patch: int = 256

    def __post_init__(self):
        if self.levels < 1 or self.disc_blocks < 1:
            raise ValueError("levels and disc_blocks must be >= 1")
        if self.patch % self.divisor:
            raise ValueError(f"patch {self.patch} must be divisible by {self.divisor}")
        if self.patch // 2**self.disc_blocks != self.disc_pool:
            raise ValueError(
                f"discriminator reduces {self.patch} to {self.patch // 2**self.disc_blocks}, "
                f"but pooling expects {self.disc_pool}")

    @property
    def divisor(self) -> int:
        """Spatial sizes must be multiples of this (one factor 2 per pooling, plus one)."""
        return 2**self.levels

    @property
    def down_widths(self):
        return [self.base_width * 2**i for i in range(self.levels)]

    @property
    def pooled_width(self) -> int:
        return self.disc_width * 2**self.disc_blocks

    def to_dict(self):
        return asdict(self)


PAPER = Architecture()
DESK = Architecture(levels=2, base_width=16, disc_width=8, disc_blocks=3, disc_pool=8, patch=64)
PROFILES = {"paper": PAPER, "desk": DESK}


def generator_shapes(arch: Architecture):
    """Ordered parameter names and shapes of the generator."""
    shapes = {}
    cin = 1
    for i, c in enumerate(arch.down_widths):
        shapes[f"down{i}.conv0.w"] = (3, 3, cin, c)
        shapes[f"down{i}.conv1.w"] = (3, 3, c, c)
        shapes[f"down{i}.conv2.w"] = (3, 3, c, c)
        shapes[f"down{i}.skip.w"] = (1, 1, cin, c)
        for j in range(3):
            shapes[f"down{i}.conv{j}.b"] = (c,)
        shapes[f"down{i}.skip.b"] = (c,)
        cin = c
    shapes["bridge.w"] = (3, 3, cin, cin)
    shapes["bridge.b"] = (cin,)
    prev = cin
    for i in reversed(range(arch.levels)):
        skip = arch.down_widths[i]
        cat = prev + skip
        out = cat // 4
        shapes[f"up{i}.conv0.w"] = (3, 3, cat, out)
        shapes[f"up{i}.conv1.w"] = (3, 3, out, out)
        shapes[f"up{i}.conv2.w"] = (3, 3, out, out)
        for j in range(3):
            shapes[f"up{i}.conv{j}.b"] = (out,)
        prev = out
    shapes["out.w"] = (3, 3, prev, 3)
    shapes["out.b"] = (3,)
    return shapes


def discriminator_shapes(arch: Architecture):
    shapes = {"in.w": (3, 3, 3, arch.disc_width), "in.b": (arch.disc_width,)}
    c = arch.disc_width
    for i in range(arch.disc_blocks):
        shapes[f"block{i}.conv0.w"] = (3, 3, c, c)
        shapes[f"block{i}.conv0.b"] = (c,)
        shapes[f"block{i}.conv1.w"] = (3, 3, c, 2 * c)
        shapes[f"block{i}.conv1.b"] = (2 * c,)
        c *= 2
    shapes["fc0.w"] = (c, c)
    shapes["fc0.b"] = (c,)
    shapes["fc1.w"] = (c, 1)
    shapes["fc1.b"] = (1,)
    return shapes


def init_params(shapes, seed=0, dtype=np.float32):
    """Fan-in scaled uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


# output layers start small so the generator begins near mid-grey YCbCr and the
# discriminator near 0.5 instead of a saturated sigmoid
OUTPUT_INIT_SCALE = 0.1
GENERATOR_OUTPUT_BIAS = 0.5


def count_params(shapes) -> int:
    return int(sum(np.prod(s) for s in shapes.values()))


def _leaves(params, requires_grad):
    return {k: T.Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


def _conv(x, p, name, stride=1):
    return T.conv2d(x, p[name + ".w"], p[name + ".b"], stride=stride)


def generator_graph(p, x, arch: Architecture):
    """Generator forward on tensors ``p`` (name -> Tensor) and input ``x`` (N, H, W, 1)."""
    n, h, w, c = x.shape
    if c != 1:
        raise ValueError(f"generator input must have 1 channel, got {c}")
    if h % arch.divisor or w % arch.divisor:
        raise ValueError(f"spatial size {h}x{w} must be divisible by {arch.divisor}")
    skips = []
    for i in range(arch.levels):
        if i > 0:
            x = T.avgpool2(x)
        y = T.lrelu(_conv(x, p, f"down{i}.conv0"))
        y = T.lrelu(_conv(y, p, f"down{i}.conv1"))
        y = T.lrelu(_conv(y, p, f"down{i}.conv2"))
        x = T.add(y, _conv(x, p, f"down{i}.skip"))
        skips.append(x)
    x = T.lrelu(_conv(x, p, "bridge"))
    for i in reversed(range(arch.levels)):
        if i < arch.levels - 1:
            x = T.bilinear_up2(x)
        x = T.concat_channels(x, skips[i])
        for j in range(3):
            x = T.lrelu(_conv(x, p, f"up{i}.conv{j}"))
    return _conv(x, p, "out")


def discriminator_graph(p, x, arch: Architecture):
    """Discriminator forward: probability per sample, shape (N, 1)."""
    n, h, w, c = x.shape
    if c != 3:
        raise ValueError(f"discriminator input must have 3 channels, got {c}")
    if h != arch.patch or w != arch.patch:
        raise ValueError(f"discriminator expects {arch.patch}x{arch.patch} input, got {h}x{w}")
    x = T.lrelu(_conv(x, p, "in"))
    for i in range(arch.disc_blocks):
        x = T.lrelu(_conv(x, p, f"block{i}.conv0"))
        x = T.lrelu(_conv(x, p, f"block{i}.conv1", stride=2))
    x = T.flatten(T.avgpool(x, arch.disc_pool))
    x = T.lrelu(T.fully_connected(x, p["fc0.w"], p["fc0.b"]))
    return T.sigmoid(T.fully_connected(x, p["fc1.w"], p["fc1.b"]))


class Generator:
    """Generator weights plus their architecture."""

    def __init__(self, arch: Architecture = PAPER, params=None, seed=0, dtype=np.float32):
        self.arch = arch
        shapes = generator_shapes(arch)
        if params is None:
            params = init_params(shapes, seed, dtype)
            params["out.w"] *= OUTPUT_INIT_SCALE
            params["out.b"][:] = GENERATOR_OUTPUT_BIAS
        self.params = params
        for name, shape in shapes.items():
            if self.params[name].shape != tuple(shape):
                raise ValueError(f"{name}: expected {shape}, got {self.params[name].shape}")

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=next(iter(self.params.values())).dtype)
        return generator_graph(_leaves(self.params, False), T.Tensor(x), self.arch).data

    __call__ = forward

    def copy(self):
        return Generator(self.arch, {k: v.copy() for k, v in self.params.items()})


class Discriminator:
    def __init__(self, arch: Architecture = PAPER, params=None, seed=1, dtype=np.float32):
        self.arch = arch
        shapes = discriminator_shapes(arch)
        if params is None:
            params = init_params(shapes, seed, dtype)
            params["fc1.w"] *= OUTPUT_INIT_SCALE
        self.params = params
        for name, shape in shapes.items():
            if self.params[name].shape != tuple(shape):
                raise ValueError(f"{name}: expected {shape}, got {self.params[name].shape}")

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=next(iter(self.params.values())).dtype)
        return discriminator_graph(_leaves(self.params, False), T.Tensor(x), self.arch).data[:, 0]

    __call__ = forward

    def copy(self):
        return Discriminator(self.arch, {k: v.copy() for k, v in self.params.items()})


def generator_forward(gen: Generator, x):
    return gen.forward(x)


def discriminator_forward(disc: Discriminator, x):
    return disc.forward(x)
