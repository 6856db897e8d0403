"""Factorized spatio-temporal denoising UNet with three condition injections.

Conditions enter the network as:
  * text tokens through cross-attention at the attention levels;
  * the target frame rate as a sinusoidal embedding, projected and added
    to the timestep embedding;
  * the reference latent concatenated to the noisy input at frame 0, with
    zeros at every other frame (and, for super-resolution stages, the
    upsampled previous-stage latent concatenated at every frame).

One model class serves all three cascade stages and, with the temporal path
disabled, the 2D refiner used by temporal super-resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import (
    Conv2d,
    CrossAttention2d,
    GroupNorm,
    MLPEmbed,
    ResBlock,
    SelfAttention2d,
    TemporalAttention,
    sinusoidal_embedding,
)
from .errors import ContractError, ShapeError
from .numerics import Module, Tensor, bilinear_resize2d, concat, silu


@dataclass(frozen=True)
class STUNetConfig:
    latent_channels: int = 4
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2)
    attn_levels: tuple[int, ...] = (1,)
    temporal_enabled: bool = True
    text_dim: int = 64
    num_frames: int = 16
    ref_channels: int = 4        # reference block width; 0 disables the ref input
    prev_channels: int = 0       # previous-stage block width; > 0 for SR stages
    time_dim: int = 64
    temporal_pos_encoding: bool = True

    def __post_init__(self):
        if len(self.channel_mults) < 2:
            raise ContractError("channel_mults needs at least 2 levels")
        if self.num_frames < 1:
            raise ContractError("num_frames must be >= 1")

    @property
    def in_channels(self) -> int:
        return self.latent_channels + self.ref_channels + self.prev_channels


@dataclass
class ConditionSet:
    """Everything a denoising call is conditioned on."""

    text_emb: Tensor | None      # [L, D] or None when the model is textless
    fps: int
    ref_latent: np.ndarray | None        # [C, h, w] at the stage resolution
    prev_stage: np.ndarray | None = None  # [T, C, h, w], SR stages only

    def without_text(self) -> "ConditionSet":
        if self.text_emb is None:
            return self
        zeros = Tensor(np.zeros_like(self.text_emb.data))
        return ConditionSet(text_emb=zeros, fps=self.fps,
                            ref_latent=self.ref_latent, prev_stage=self.prev_stage)


def fps_embedding(fps: int, dim: int) -> Tensor:
    """Sinusoidal embedding of the frame rate (the pre-projection features)."""
    if fps < 1:
        raise ContractError(f"fps must be >= 1, got {fps}")
    return Tensor(sinusoidal_embedding(float(fps), dim))


def assemble_conditions(x_t, cond: ConditionSet) -> Tensor:
    """Channel-concatenate [x_t | reference block | previous-stage block].

    The reference block equals the reference latent at frame 0 and is
    exactly zero at frames 1..T-1; the previous-stage block, when present,
    fills every frame.
    """
    x = x_t.data if isinstance(x_t, Tensor) else np.asarray(x_t, np.float32)
    t, c, h, w = x.shape
    parts = [x]
    if cond.ref_latent is not None:
        ref = np.asarray(cond.ref_latent, np.float32)
        if ref.shape[-2:] != (h, w):
            raise ShapeError("assemble_conditions",
                             f"reference latent is {ref.shape[-2]}x{ref.shape[-1]}, "
                             f"stage latent is {h}x{w}")
        block = np.zeros((t, ref.shape[0], h, w), np.float32)
        block[0] = ref
        parts.append(block)
    if cond.prev_stage is not None:
        prev = np.asarray(cond.prev_stage, np.float32)
        if prev.shape[0] != t or prev.shape[-2:] != (h, w):
            raise ShapeError("assemble_conditions",
                             f"previous-stage latent {prev.shape} does not match frames/size "
                             f"of the stage input {(t, c, h, w)}")
        parts.append(prev)
    return Tensor(np.concatenate(parts, axis=1))


class _AttentionGroup(Module):
    """Spatial self-attention, optional text cross-attention, optional
    temporal attention — stacked in that order."""

    def __init__(self, rng, channels: int, cfg: STUNetConfig):
        self.spatial = SelfAttention2d(rng, channels)
        if cfg.text_dim > 0:
            self.cross = CrossAttention2d(rng, channels, cfg.text_dim)
        else:
            self.cross = None
        if cfg.temporal_enabled:
            self.temporal = TemporalAttention(rng, channels, cfg.num_frames,
                                              pos_encoding=cfg.temporal_pos_encoding)
        else:
            self.temporal = None

    def forward(self, x: Tensor, text: Tensor | None, temporal: bool) -> Tensor:
        x = self.spatial.forward(x)
        if self.cross is not None:
            if text is None:
                raise ContractError("model was built with text conditioning; "
                                    "pass a text embedding or a zeroed one")
            x = self.cross.forward(x, text)
        if temporal and self.temporal is not None:
            x = self.temporal.forward(x)
        return x


class STUNet(Module):
    """The denoiser: predicts epsilon for a latent video [T, C, h, w]."""

    def __init__(self, cfg: STUNetConfig, seed: int = 0):
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.cfg = cfg
        b = cfg.base_channels
        widths = [b * m for m in cfg.channel_mults]

        self.time_embed = MLPEmbed(rng, b, cfg.time_dim)
        self.fps_embed = MLPEmbed(rng, b, cfg.time_dim)

        self.conv_in = Conv2d(rng, cfg.in_channels, widths[0])
        self.down_res = []
        self.down_attn = []
        self.downs = []
        ch = widths[0]
        for i, w in enumerate(widths):
            self.down_res.append(ResBlock(rng, ch, w, time_dim=cfg.time_dim,
                                          temporal=cfg.temporal_enabled))
            self.down_attn.append(_AttentionGroup(rng, w, cfg) if i in cfg.attn_levels else None)
            ch = w
            if i < len(widths) - 1:
                self.downs.append(Conv2d(rng, w, w, 3, stride=2, pad=1))

        self.mid_res1 = ResBlock(rng, ch, ch, time_dim=cfg.time_dim, temporal=cfg.temporal_enabled)
        self.mid_attn = _AttentionGroup(rng, ch, cfg)
        self.mid_res2 = ResBlock(rng, ch, ch, time_dim=cfg.time_dim, temporal=cfg.temporal_enabled)

        self.up_res = []
        self.up_attn = []
        self.ups = []
        for i in reversed(range(len(widths))):
            w = widths[i]
            self.up_res.append(ResBlock(rng, ch + w, w, time_dim=cfg.time_dim,
                                        temporal=cfg.temporal_enabled))
            self.up_attn.append(_AttentionGroup(rng, w, cfg) if i in cfg.attn_levels else None)
            ch = w
            if i > 0:
                self.ups.append(Conv2d(rng, w, w, 3))

        self.norm_out = GroupNorm(ch)
        self.conv_out = Conv2d(rng, ch, cfg.latent_channels)

    # -- embeddings -----------------------------------------------------------

    def _embedding(self, t: int, fps: int) -> Tensor:
        b = self.cfg.base_channels
        temb = self.time_embed.forward(Tensor(sinusoidal_embedding(float(t), b)))
        femb = self.fps_embed.forward(fps_embedding(fps, b))
        return temb + femb

    # -- forward ----------------------------------------------------------------

    def forward(self, x_in, t: int, cond: ConditionSet | None,
                temporal: bool | None = None) -> Tensor:
        """Denoise an already condition-assembled input [T, C_in, h, w]."""
        x = x_in if isinstance(x_in, Tensor) else Tensor(np.asarray(x_in, np.float32))
        cfg = self.cfg
        if x.ndim != 4:
            raise ShapeError("forward_denoise", f"expected [T,C,h,w], got {x.shape}")
        if x.shape[1] != cfg.in_channels:
            raise ShapeError("forward_denoise",
                             f"input has {x.shape[1]} channels, model expects {cfg.in_channels}")
        temporal = cfg.temporal_enabled if temporal is None else (temporal and cfg.temporal_enabled)
        if temporal and x.shape[0] != cfg.num_frames:
            raise ShapeError("forward_denoise",
                             f"fixed-length model: got {x.shape[0]} frames, expected {cfg.num_frames}")

        fps = cond.fps if cond is not None else 1
        text = cond.text_emb if cond is not None else None
        emb = self._embedding(t, fps)

        h = self.conv_in.forward(x)
        skips = []
        for i in range(len(self.down_res)):
            h = self.down_res[i].forward(h, emb, temporal=temporal)
            if self.down_attn[i] is not None:
                h = self.down_attn[i].forward(h, text, temporal)
            skips.append(h)
            if i < len(self.downs):
                h = self.downs[i].forward(h)

        h = self.mid_res1.forward(h, emb, temporal=temporal)
        h = self.mid_attn.forward(h, text, temporal)
        h = self.mid_res2.forward(h, emb, temporal=temporal)

        for j in range(len(self.up_res)):
            skip = skips.pop()
            h = concat((h, skip), axis=1)
            h = self.up_res[j].forward(h, emb, temporal=temporal)
            if self.up_attn[j] is not None:
                h = self.up_attn[j].forward(h, text, temporal)
            if j < len(self.ups):
                h = self.ups[j].forward(bilinear_resize2d(h, 2))

        return self.conv_out.forward(silu(self.norm_out.forward(h)))

    def forward_2d(self, x_in, t: int, cond: ConditionSet | None) -> Tensor:
        """The per-frame 2D path: temporal layers skipped entirely."""
        return self.forward(x_in, t, cond, temporal=False)

    def denoise(self, x_t, t: int, cond: ConditionSet) -> Tensor:
        """Assemble conditions, then predict epsilon — the sampler entry point."""
        return self.forward(assemble_conditions(x_t, cond), t, cond)


def init_video_unet(cfg: STUNetConfig, image_weights: dict[str, np.ndarray] | None = None,
                    seed: int = 0) -> STUNet:
    """Fresh model with identity temporal layers; optionally import 2D weights.

    `image_weights` maps parameter names (the model's own naming scheme) to
    arrays for the 2D convolution / spatial-attention subset; shapes must
    match exactly or the import fails listing the offending names.
    """
    model = STUNet(cfg, seed=seed)
    if image_weights is not None:
        params = model.named_parameters()
        unknown = [n for n in image_weights if n not in params]
        if unknown:
            raise ShapeError("init_video_unet", f"no such parameters: {sorted(unknown)}")
        bad = [n for n, arr in image_weights.items()
               if params[n].data.shape != np.asarray(arr).shape]
        if bad:
            detail = ", ".join(
                f"{n}: model {params[n].data.shape} vs import {np.asarray(image_weights[n]).shape}"
                for n in sorted(bad))
            raise ShapeError("init_video_unet", f"shape mismatch on import: {detail}")
        for n, arr in image_weights.items():
            params[n].data = np.asarray(arr, np.float32).copy()
    return model


def two_d_parameter_names(model: STUNet) -> list[str]:
    """Names of the non-temporal parameters (the importable 2D subset)."""
    temporal_markers = (".tconv1.", ".tconv2.", ".temporal.")
    return [n for n in model.named_parameters()
            if not any(m in n for m in temporal_markers)]
