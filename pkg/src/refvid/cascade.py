"""Three-stage cascade: base denoiser plus two spatial super-resolution stages.

Each stage is reference-conditioned at its own resolution; stages after the
first also receive the bilinear 2x-upsampled output of the previous stage,
concatenated into the input at every frame. Stage n+1 weights start from
stage n, with the extra input channels zero-initialized so the new condition
is ignored until trained.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule, SamplerConfig, sample_loop
from .errors import ContractError, ShapeError
from .latent_codec import ImageCodec
from .numerics import Tensor, bilinear_resize2d, resize_bilinear
from .video_unet import ConditionSet, STUNet, STUNetConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CascadeConfig:
    stage_resolutions: tuple[int, int, int] = (16, 32, 64)
    num_frames: int = 16

    def __post_init__(self):
        if len(self.stage_resolutions) != 3:
            raise ContractError(f"the cascade is exactly 3 stages, got {len(self.stage_resolutions)}")
        for a, b in zip(self.stage_resolutions, self.stage_resolutions[1:]):
            if b != 2 * a:
                raise ContractError(
                    f"stage resolutions must double: {self.stage_resolutions}")
        if self.num_frames < 1:
            raise ContractError("num_frames must be >= 1")


def stage_unet_config(base: STUNetConfig, stage: int) -> STUNetConfig:
    """Per-stage model config: SR stages add the previous-stage input block."""
    if stage == 1:
        return base
    return STUNetConfig(
        latent_channels=base.latent_channels, base_channels=base.base_channels,
        channel_mults=base.channel_mults, attn_levels=base.attn_levels,
        temporal_enabled=base.temporal_enabled, text_dim=base.text_dim,
        num_frames=base.num_frames, ref_channels=base.ref_channels,
        prev_channels=base.latent_channels, time_dim=base.time_dim,
        temporal_pos_encoding=base.temporal_pos_encoding)


def encode_reference(codec: ImageCodec, ref_image: np.ndarray,
                     latent_size: int) -> np.ndarray:
    """Resize the reference image to the stage's pixel size, then encode."""
    img = np.asarray(ref_image, np.float32)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError("encode_reference", f"reference image must be [3,H,W], got {img.shape}")
    pixel = latent_size * codec.cfg.factor
    resized = resize_bilinear(Tensor(img), (pixel, pixel)).data
    return codec.encode_image(np.clip(resized, -1.0, 1.0))


def run_cascade(models: list[STUNet], codec: ImageCodec, cfg: CascadeConfig,
                sched: NoiseSchedule, samplers: list[SamplerConfig],
                text_emb: Tensor, fps: int, ref_image: np.ndarray,
                seed: int) -> np.ndarray:
    """Sample the full cascade; returns latents [T, C, r3, r3].

    Deterministic given (seed, weights, conditions): stage i uses seed + i.
    """
    if len(models) != 3 or len(samplers) != 3:
        raise ContractError("run_cascade needs exactly 3 models and 3 sampler configs")
    t = cfg.num_frames
    prev: np.ndarray | None = None
    for i, (model, res, sampler) in enumerate(zip(models, cfg.stage_resolutions, samplers)):
        stage = i + 1
        c = model.cfg.latent_channels
        ref = encode_reference(codec, ref_image, res)
        if prev is not None:
            prev = bilinear_resize2d(Tensor(prev), 2).data
            if prev.shape[-1] != res:
                raise ShapeError(f"cascade stage {stage}",
                                 f"upsampled previous latents are {prev.shape[-1]}, "
                                 f"stage expects {res}")
        cond = ConditionSet(text_emb=text_emb, fps=fps, ref_latent=ref, prev_stage=prev)
        uncond = cond.without_text() if sampler.guidance_scale != 1.0 else None
        out = sample_loop(model.denoise, (t, c, res, res), cond, sched, sampler,
                          seed + i, uncond=uncond)
        if out.shape != (t, c, res, res):
            raise ShapeError(f"cascade stage {stage}",
                             f"produced {out.shape}, expected {(t, c, res, res)}")
        prev = out.data
    return prev


def init_from_previous(prev_state: dict[str, np.ndarray], model: STUNet) -> list[str]:
    """Initialize a stage from the previous stage's checkpoint.

    Matching-shape tensors are copied bit-exactly. The input convolution,
    whose extra channels carry the previous-stage block, copies the
    overlapping channels and zeroes the new ones. Anything else that does
    not match keeps its fresh initialization; those names are returned and
    logged.
    """
    params = model.named_parameters()
    fresh: list[str] = []
    for name, param in params.items():
        if name not in prev_state:
            fresh.append(name)
            continue
        src = np.asarray(prev_state[name], np.float32)
        if src.shape == param.data.shape:
            param.data = src.copy()
        elif (name == "conv_in.weight" and src.ndim == 4
              and src.shape[0] == param.data.shape[0]
              and src.shape[2:] == param.data.shape[2:]
              and src.shape[1] < param.data.shape[1]):
            merged = np.zeros_like(param.data)
            merged[:, :src.shape[1]] = src
            param.data = merged
            log.info("init_from_previous: zero-extended %s from %d to %d input channels",
                     name, src.shape[1], param.data.shape[1])
        else:
            fresh.append(name)
    if fresh:
        log.info("init_from_previous: freshly initialized tensors: %s", sorted(fresh))
    return sorted(fresh)
