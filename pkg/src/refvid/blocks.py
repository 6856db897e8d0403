"""Reusable network blocks: convolutions, attention, normalization, embeddings.

Temporal layers follow the factorized pattern: a 1D convolution over frames
after each 2D convolution, and an attention over frames after each spatial
attention. Both are built so a fresh model is transparent — delta kernels
for temporal convs, a zeroed output projection for temporal attention — and
the 3D network initially equals the 2D network applied per frame.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ContractError
from .numerics import (
    Module,
    Parameter,
    Tensor,
    attention,
    bilinear_resize2d,
    conv1d_video,
    conv2d,
    group_norm,
    linear,
    silu,
)


def norm_group_count(channels: int, want: int = 8) -> int:
    g = min(want, channels)
    while channels % g:
        g -= 1
    return g


def lecun_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) / math.sqrt(fan_in)).astype(np.float32)


def sinusoidal_embedding(value: float, dim: int) -> np.ndarray:
    """Sin/cos features of a scalar at geometrically spaced frequencies."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = value * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb.astype(np.float32)


class Conv2d(Module):
    def __init__(self, rng, cin: int, cout: int, k: int = 3, stride: int = 1,
                 pad: int | None = None, zero_init: bool = False):
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        if zero_init:
            self.weight = Parameter(np.zeros((cout, cin, k, k), np.float32))
        else:
            self.weight = Parameter(lecun_normal(rng, (cout, cin, k, k), cin * k * k))
        self.bias = Parameter(np.zeros(cout, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Linear(Module):
    def __init__(self, rng, cin: int, cout: int, zero_init: bool = False):
        if zero_init:
            self.weight = Parameter(np.zeros((cout, cin), np.float32))
        else:
            self.weight = Parameter(lecun_normal(rng, (cout, cin), cin))
        self.bias = Parameter(np.zeros(cout, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int | None = None, eps: float = 1e-5):
        self.groups = norm_group_count(channels) if groups is None else groups
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, np.float32))
        self.beta = Parameter(np.zeros(channels, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return group_norm(x, self.groups, self.gamma, self.beta, eps=self.eps)


class TemporalConv(Module):
    """Per-spatial-position 1D conv over frames, initialized as the identity."""

    def __init__(self, channels: int, k: int = 3):
        w = np.zeros((channels, channels, k), np.float32)
        w[np.arange(channels), np.arange(channels), (k - 1) // 2] = 1.0
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(channels, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return conv1d_video(x, self.weight, self.bias)


class TemporalAttention(Module):
    """Residual attention across frames at each spatial position.

    The output projection starts at zero, so the branch contributes nothing
    until trained. A learned per-frame embedding is added before attention
    unless positional encoding is disabled.
    """

    def __init__(self, rng, channels: int, num_frames: int, pos_encoding: bool = True):
        self.norm = GroupNorm(channels)
        self.q = Linear(rng, channels, channels)
        self.k = Linear(rng, channels, channels)
        self.v = Linear(rng, channels, channels)
        self.proj = Linear(rng, channels, channels, zero_init=True)
        self.pos_encoding = pos_encoding
        self.pos = Parameter(0.02 * rng.standard_normal((num_frames, channels)).astype(np.float32))

    def forward(self, x: Tensor) -> Tensor:
        t, c, h, w = x.shape
        n = self.norm.forward(x)
        seq = n.transpose(2, 3, 0, 1).reshape(h * w, t, c)
        if self.pos_encoding:
            if t != self.pos.shape[0]:
                raise ContractError(
                    f"temporal attention built for {self.pos.shape[0]} frames, got {t}")
            seq = seq + self.pos
        out = attention(self.q.forward(seq), self.k.forward(seq), self.v.forward(seq))
        out = self.proj.forward(out).reshape(h, w, t, c).transpose(2, 3, 0, 1)
        return x + out


class SelfAttention2d(Module):
    """Residual single-head attention within each frame."""

    def __init__(self, rng, channels: int):
        self.norm = GroupNorm(channels)
        self.q = Linear(rng, channels, channels)
        self.k = Linear(rng, channels, channels)
        self.v = Linear(rng, channels, channels)
        self.proj = Linear(rng, channels, channels)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        z = self.norm.forward(x).transpose(0, 2, 3, 1).reshape(n, h * w, c)
        out = attention(self.q.forward(z), self.k.forward(z), self.v.forward(z))
        out = self.proj.forward(out).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        return x + out


class CrossAttention2d(Module):
    """Residual attention from pixels to a shared token sequence [L, D]."""

    def __init__(self, rng, channels: int, context_dim: int):
        self.norm = GroupNorm(channels)
        self.q = Linear(rng, channels, channels)
        self.k = Linear(rng, context_dim, channels)
        self.v = Linear(rng, context_dim, channels)
        self.proj = Linear(rng, channels, channels)

    def forward(self, x: Tensor, context: Tensor) -> Tensor:
        n, c, h, w = x.shape
        z = self.norm.forward(x).transpose(0, 2, 3, 1).reshape(n, h * w, c)
        out = attention(self.q.forward(z), self.k.forward(context), self.v.forward(context))
        out = self.proj.forward(out).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        return x + out


class ResBlock(Module):
    """GN -> SiLU -> conv twice with a residual skip; optional time injection.

    With `temporal`, each 2D convolution is followed by an identity-initialized
    temporal convolution (skipped when the forward pass runs in 2D mode).
    """

    def __init__(self, rng, cin: int, cout: int, time_dim: int | None = None,
                 temporal: bool = False):
        self.norm1 = GroupNorm(cin)
        self.conv1 = Conv2d(rng, cin, cout, 3)
        self.norm2 = GroupNorm(cout)
        self.conv2 = Conv2d(rng, cout, cout, 3)
        if time_dim is not None:
            self.time_proj = Linear(rng, time_dim, cout)
        else:
            self.time_proj = None
        if temporal:
            self.tconv1 = TemporalConv(cout)
            self.tconv2 = TemporalConv(cout)
        else:
            self.tconv1 = self.tconv2 = None
        if cin != cout:
            self.skip = Conv2d(rng, cin, cout, 1, pad=0)
        else:
            self.skip = None

    def forward(self, x: Tensor, temb: Tensor | None = None, temporal: bool = False) -> Tensor:
        h = self.conv1.forward(silu(self.norm1.forward(x)))
        if temporal and self.tconv1 is not None:
            h = self.tconv1.forward(h)
        if temb is not None and self.time_proj is not None:
            h = h + self.time_proj.forward(silu(temb)).reshape(1, -1, 1, 1)
        h = self.conv2.forward(silu(self.norm2.forward(h)))
        if temporal and self.tconv2 is not None:
            h = self.tconv2.forward(h)
        return h + (self.skip.forward(x) if self.skip is not None else x)


class Downsample(Module):
    def __init__(self, rng, channels: int):
        self.conv = Conv2d(rng, channels, channels, 3, stride=2, pad=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv.forward(x)


class Upsample(Module):
    def __init__(self, rng, channels: int):
        self.conv = Conv2d(rng, channels, channels, 3)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv.forward(bilinear_resize2d(x, 2))


class MLPEmbed(Module):
    """Two-layer projection applied to a sinusoidal embedding."""

    def __init__(self, rng, in_dim: int, out_dim: int):
        self.fc1 = Linear(rng, in_dim, out_dim)
        self.fc2 = Linear(rng, out_dim, out_dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2.forward(silu(self.fc1.forward(x)))
