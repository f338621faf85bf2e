"""Conditional 3-D U-Net that predicts x0 logits from ``(x_t, image, t)``.

Layout at ``depth = 2``, ``base = 8`` (channels ``8, 16, 32``)::

    enc0: [x_t | I] -conv-bn-relu-conv-bn-relu->  e0 (8, S)      + c0  -> skip 0
    enc1: e0 -conv/2-bn-relu-conv-bn-relu->       e1 (16, S/2)   + c1  -> skip 1
    enc2: e1 -conv/2-bn-relu-conv-bn-relu->       e2 (32, S/4)   + c2  + time
    dec1: up(relu(bn(conv(h)))) || skip 1 -> conv-bn-relu
    dec0: up(relu(bn(conv(h)))) || skip 0 -> conv-bn-relu -> 1x1 conv -> logits

``c_l`` are the condition-encoder features of the raw image. Each skip
passes through a :class:`~fdiff.fuzzy.FuzzyLayer` when enabled for its level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fdiff.errors import InvalidConfig, ShapeMismatch
from fdiff.fuzzy import FuzzyLayer
from fdiff.numerics import ops
from fdiff.numerics.nn import BatchNorm3d, Conv3d, Linear, Module
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor


@dataclass
class UNetConfig:
    mask_channels: int = 2
    image_channels: int = 1
    depth: int = 2
    base_channels: int = 8
    time_embed_dim: int = 16
    M: int = 5
    flm_enabled: list[bool] | None = field(default=None)

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1 or self.mask_channels < 1 or self.image_channels < 1:
            raise InvalidConfig("depth, base_channels and channel counts must be >= 1")
        if self.time_embed_dim % 2:
            raise InvalidConfig(f"time_embed_dim must be even, got {self.time_embed_dim}")
        if self.flm_enabled is None:
            self.flm_enabled = [True] * self.depth
        if len(self.flm_enabled) != self.depth:
            raise InvalidConfig("flm_enabled needs one flag per skip level")

    @property
    def in_channels(self) -> int:
        return self.mask_channels + self.image_channels

    @property
    def out_channels(self) -> int:
        return self.mask_channels

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def check_spatial(self, spatial) -> None:
        step = 2 ** self.depth
        if any(s % step for s in spatial):
            raise ShapeMismatch(f"spatial dims {tuple(spatial)} must be divisible by {step}")


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding ``[sin(t w_i), cos(t w_i)]``, ``w_i = 10000**(-i/(dim/2))``.

    Returns ``[dim]`` for scalar ``t`` and ``[N, dim]`` for a vector.
    """
    if dim % 2 or dim < 2:
        raise InvalidConfig(f"embedding dim must be even and >= 2, got {dim}")
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


class _ConvBnRelu(Module):
    def __init__(self, c_in: int, c_out: int, rng: SeededRng, stride: int = 1):
        self.conv = Conv3d(c_in, c_out, 3, rng, stride=stride)
        self.bn = BatchNorm3d(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))


class CondEncoder(Module):
    """Stride-2 convolution pyramid over the image, channel-matched to the encoder."""

    def __init__(self, cfg: UNetConfig, rng: SeededRng):
        self.convs = [Conv3d(cfg.image_channels, cfg.channels(0), 3, rng)]
        for level in range(1, cfg.depth + 1):
            self.convs.append(Conv3d(cfg.channels(level - 1), cfg.channels(level), 3, rng, stride=2))

    def __call__(self, image: Tensor) -> list[Tensor]:
        return cond_encode(image, self)


def cond_encode(image: Tensor, params: CondEncoder) -> list[Tensor]:
    feats, h = [], image
    for conv in params.convs:
        h = ops.relu(conv(h))
        feats.append(h)
    return feats


class _EncoderLevel(Module):
    def __init__(self, c_in: int, c_out: int, rng: SeededRng, stride: int):
        self.a = _ConvBnRelu(c_in, c_out, rng, stride)
        self.b = _ConvBnRelu(c_out, c_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.b(self.a(x))


class _DecoderLevel(Module):
    def __init__(self, c_deep: int, c_out: int, rng: SeededRng):
        self.up = _ConvBnRelu(c_deep, c_out, rng)
        self.merge = _ConvBnRelu(2 * c_out, c_out, rng)

    def __call__(self, h: Tensor, skip: Tensor) -> Tensor:
        up = ops.upsample_nearest(self.up(h), 2)
        return self.merge(ops.concat([up, skip], axis=1))


class UNet3D(Module):
    def __init__(self, cfg: UNetConfig, rng: SeededRng):
        self.cfg = cfg
        self.encoder = [_EncoderLevel(cfg.in_channels, cfg.channels(0), rng, 1)]
        for level in range(1, cfg.depth + 1):
            self.encoder.append(_EncoderLevel(cfg.channels(level - 1), cfg.channels(level), rng, 2))
        self.fuzzy = [FuzzyLayer(cfg.channels(level), cfg.M, rng) if on else None
                      for level, on in enumerate(cfg.flm_enabled)]
        self.time_proj = Linear(cfg.time_embed_dim, cfg.channels(cfg.depth), rng)
        self.decoder = [_DecoderLevel(cfg.channels(level + 1), cfg.channels(level), rng)
                        for level in range(cfg.depth)]
        self.head = Conv3d(cfg.channels(0), cfg.out_channels, 1, rng)

    def fuzzy_layers(self) -> list[FuzzyLayer]:
        return [f for f in self.fuzzy if f is not None]


def denoise_forward(x_t: Tensor, image: Tensor, t, unet: UNet3D, cond: CondEncoder) -> Tensor:
    """x0 logits ``[N, mask_channels, D, H, W]`` (batch axis required)."""
    cfg = unet.cfg
    if x_t.ndim != 5 or image.ndim != 5:
        raise ShapeMismatch("denoise_forward expects batched [N, C, D, H, W] inputs")
    if x_t.shape[0] != image.shape[0] or x_t.shape[2:] != image.shape[2:]:
        raise ShapeMismatch(f"x_t {x_t.shape} and image {image.shape} are not aligned")
    if x_t.shape[1] != cfg.mask_channels or image.shape[1] != cfg.image_channels:
        raise ShapeMismatch("channel counts do not match the U-Net configuration")
    cfg.check_spatial(x_t.shape[2:])
    n = x_t.shape[0]

    cond_feats = cond(image)
    h = ops.concat([x_t, image], axis=1)
    feats = []
    for level, enc in enumerate(unet.encoder):
        h = ops.add(enc(h), cond_feats[level])
        feats.append(h)

    t_arr = np.broadcast_to(np.asarray(t), (n,))
    emb = Tensor(timestep_embedding(t_arr, cfg.time_embed_dim).astype(x_t.dtype))
    t_vec = unet.time_proj(emb)
    h = ops.add(feats[-1], ops.reshape(t_vec, (n, -1, 1, 1, 1)))

    skips = [fl(f) if fl is not None else f for f, fl in zip(feats[:-1], unet.fuzzy)]
    for level in reversed(range(cfg.depth)):
        h = unet.decoder[level](h, skips[level])
    return unet.head(h)


class Denoiser(Module):
    """U-Net plus condition encoder as one parameter tree."""

    def __init__(self, cfg: UNetConfig, rng: SeededRng):
        self.cfg = cfg
        self.unet = UNet3D(cfg, rng)
        self.cond = CondEncoder(cfg, rng)

    def __call__(self, x_t: Tensor, image: Tensor, t) -> Tensor:
        return denoise_forward(x_t, image, t, self.unet, self.cond)
