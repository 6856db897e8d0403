"""Image encoder/decoder pair defining the latent space, the temporally
extended enhancing video decoder, and the degradation pipeline that trains it.

The image codec is a small convolutional VAE trained from scratch on the
clip corpus. The video decoder shares the image decoder's 2D weights (same
parameter names) and adds identity-initialized temporal layers, so a fresh
video decoder reproduces the image decoder frame for frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import Conv2d, GroupNorm, ResBlock, SelfAttention2d, TemporalAttention, Upsample
from .errors import ContractError, ShapeError
from .numerics import Module, Tensor, clip, silu
from .numerics.tensor import exp as texp


@dataclass(frozen=True)
class CodecConfig:
    latent_channels: int = 4
    factor: int = 4        # spatial downsampling; one stride-2 stage per factor of 2
    width: int = 32

    def __post_init__(self):
        if self.factor < 2 or self.factor & (self.factor - 1):
            raise ContractError(f"codec factor must be a power of two >= 2, got {self.factor}")

    @property
    def num_stages(self) -> int:
        return int(math.log2(self.factor))


class Encoder(Module):
    def __init__(self, rng, cfg: CodecConfig):
        w = cfg.width
        self.conv_in = Conv2d(rng, 3, w)
        self.stages = []
        for _ in range(cfg.num_stages):
            self.stages.append(ResBlock(rng, w, w))
            self.stages.append(Conv2d(rng, w, w, 3, stride=2, pad=1))
        self.mid = ResBlock(rng, w, w)
        self.norm_out = GroupNorm(w)
        self.conv_out = Conv2d(rng, w, 2 * cfg.latent_channels)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = self.conv_in.forward(x)
        for stage in self.stages:
            h = stage.forward(h)
        h = self.mid.forward(h)
        h = self.conv_out.forward(silu(self.norm_out.forward(h)))
        c = h.shape[1] // 2
        return h[:, :c], h[:, c:]


class Decoder(Module):
    """Latents back to pixels; `temporal` adds the video-decoder layers.

    Temporal attention here carries no positional encoding so the decoder
    accepts any frame count, including temporally super-resolved clips.
    """

    def __init__(self, rng, cfg: CodecConfig, temporal: bool):
        w = cfg.width
        self.temporal = temporal
        self.conv_in = Conv2d(rng, cfg.latent_channels, w)
        self.mid1 = ResBlock(rng, w, w, temporal=temporal)
        self.attn = SelfAttention2d(rng, w)
        if temporal:
            self.tattn = TemporalAttention(rng, w, num_frames=1, pos_encoding=False)
        self.mid2 = ResBlock(rng, w, w, temporal=temporal)
        self.ups = []
        for _ in range(cfg.num_stages):
            self.ups.append(Upsample(rng, w))
            self.ups.append(ResBlock(rng, w, w, temporal=temporal))
        self.norm_out = GroupNorm(w)
        self.conv_out = Conv2d(rng, w, 3)

    def forward(self, z: Tensor, temporal: bool | None = None) -> Tensor:
        temporal = self.temporal if temporal is None else (temporal and self.temporal)
        h = self.conv_in.forward(z)
        h = self.mid1.forward(h, temporal=temporal)
        h = self.attn.forward(h)
        if temporal:
            h = self.tattn.forward(h)
        h = self.mid2.forward(h, temporal=temporal)
        for up in self.ups:
            if isinstance(up, ResBlock):
                h = up.forward(h, temporal=temporal)
            else:
                h = up.forward(h)
        h = self.conv_out.forward(silu(self.norm_out.forward(h)))
        return clip(h, -1.0, 1.0)


class ImageCodec(Module):
    """Per-frame VAE; encode_image returns the posterior mean."""

    def __init__(self, cfg: CodecConfig = CodecConfig(), seed: int = 0):
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.cfg = cfg
        self.enc = Encoder(rng, cfg)
        self.dec = Decoder(rng, cfg, temporal=False)

    def _check_divisible(self, h: int, w: int) -> None:
        f = self.cfg.factor
        if h % f or w % f:
            raise ShapeError("encode_image",
                             f"spatial size {h}x{w} not divisible by factor {f}")

    def encode_frames(self, frames) -> np.ndarray:
        """[T,3,H,W] pixels in [-1,1] -> [T,C,H/f,W/f] posterior means."""
        arr = frames.data if isinstance(frames, Tensor) else np.asarray(frames, np.float32)
        self._check_divisible(arr.shape[-2], arr.shape[-1])
        if float(np.abs(arr).max()) > 1.0 + 1e-4:
            raise ContractError("pixel values must lie in [-1, 1]")
        mu, _ = self.enc.forward(Tensor(arr))
        return mu.data

    def encode_image(self, img) -> np.ndarray:
        """[3,H,W] -> [C,H/f,W/f], deterministic."""
        arr = img.data if isinstance(img, Tensor) else np.asarray(img, np.float32)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ShapeError("encode_image", f"expected [3,H,W], got {arr.shape}")
        return self.encode_frames(arr[None])[0]

    def posterior(self, frames: Tensor) -> tuple[Tensor, Tensor]:
        """(mu, logvar) with gradients, for codec training."""
        return self.enc.forward(frames)

    def decode_frames(self, latents) -> np.ndarray:
        """[T,C,h,w] -> [T,3,f*h,f*w] clamped to [-1,1], frames independent."""
        arr = latents.data if isinstance(latents, Tensor) else np.asarray(latents, np.float32)
        return self.dec.forward(Tensor(arr), temporal=False).data


def decode_image_frames(codec: ImageCodec, latents) -> np.ndarray:
    return codec.decode_frames(latents)


class VideoDecoder(Module):
    """Image decoder plus identity-initialized temporal layers."""

    def __init__(self, cfg: CodecConfig = CodecConfig(), seed: int = 0):
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.cfg = cfg
        self.dec = Decoder(rng, cfg, temporal=True)

    def init_from_image_decoder(self, codec: ImageCodec) -> None:
        """Copy every 2D weight; temporal layers stay at identity."""
        state = codec.dec.state_dict()
        params = self.dec.named_parameters()
        for name, arr in state.items():
            if name not in params:
                raise ShapeError("video_decoder_init", f"image decoder parameter '{name}' has no "
                                                       f"counterpart in the video decoder")
            if params[name].data.shape != arr.shape:
                raise ShapeError("video_decoder_init",
                                 f"parameter '{name}' shape {params[name].data.shape} != {arr.shape}")
            params[name].data = arr.copy()

    def forward(self, latents: Tensor, temporal: bool = True) -> Tensor:
        return self.dec.forward(latents, temporal=temporal)

    def decode_video(self, latents) -> np.ndarray:
        """[T,C,h,w] -> [T,3,f*h,f*w]; frames interact through temporal layers."""
        arr = latents.data if isinstance(latents, Tensor) else np.asarray(latents, np.float32)
        return self.dec.forward(Tensor(arr)).data


def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean KL(q || N(0,1)) over all latent elements."""
    return ((mu * mu + texp(logvar) - logvar - 1.0) * 0.5).mean()


# -- degradation pipeline ------------------------------------------------------

@dataclass(frozen=True)
class DegradationConfig:
    """Clip-level corruption: blur, then noise, then block quantization.

    One draw of (noise sigma, blur sigma, quantization on/off) per clip,
    applied to every frame. The all-off configuration is the identity.
    """

    noise_sigma: tuple[float, float] = (0.0, 0.0)
    blur_sigma: tuple[float, float] = (0.0, 0.0)
    quant_levels: int | None = None
    quant_prob: float = 0.5

    def __post_init__(self):
        for name, rng_ in (("noise_sigma", self.noise_sigma), ("blur_sigma", self.blur_sigma)):
            if len(rng_) != 2 or rng_[0] < 0 or rng_[1] < rng_[0]:
                raise ContractError(f"{name} must be a non-empty range of reals >= 0, got {rng_}")
        if self.quant_levels is not None and self.quant_levels < 2:
            raise ContractError(f"quant_levels must be >= 2, got {self.quant_levels}")

    @property
    def is_identity(self) -> bool:
        return (self.noise_sigma == (0.0, 0.0) and self.blur_sigma == (0.0, 0.0)
                and self.quant_levels is None)


def _block_quantize(video: np.ndarray, levels: int, block: int = 8) -> np.ndarray:
    t, c, h, w = video.shape
    if h % block or w % block:
        raise ContractError(f"quantization needs {block}-divisible frames, got {h}x{w}")
    v = video.reshape(t, c, h // block, block, w // block, block)
    vmin = v.min(axis=(3, 5), keepdims=True)
    vmax = v.max(axis=(3, 5), keepdims=True)
    span = vmax - vmin
    span_safe = np.where(span > 0, span, 1.0)
    q = np.round((v - vmin) / span_safe * (levels - 1)) / (levels - 1)
    out = np.where(span > 0, q * span + vmin, v)
    return out.reshape(t, c, h, w).astype(video.dtype)


def degrade(video: np.ndarray, cfg: DegradationConfig, seed: int) -> np.ndarray:
    """Corrupt a clip [T,3,H,W]; deterministic given the seed."""
    if cfg.is_identity:
        return video
    from .numerics import lowpass_gaussian

    rng = np.random.default_rng(np.random.PCG64(seed))
    blur = float(rng.uniform(*cfg.blur_sigma))
    noise = float(rng.uniform(*cfg.noise_sigma))
    quant_on = cfg.quant_levels is not None and rng.random() < cfg.quant_prob

    out = np.asarray(video, np.float32)
    if blur > 1e-6:
        out = lowpass_gaussian(Tensor(out), blur).data
    if noise > 0:
        out = out + noise * rng.standard_normal(out.shape).astype(np.float32)
    if quant_on:
        out = _block_quantize(out, cfg.quant_levels)
    return np.clip(out, -1.0, 1.0)
