"""Desk-scale training loops for every trainable component.

All loops are single-threaded and deterministic given (seed, data, config).
The three diffusion stages are the only consumers of captions; the flow /
temporal-SR networks and the video decoder train from unpaired clips and
never touch caption fields.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..cascade import encode_reference, init_from_previous
from ..data import SyntheticSceneSpec, VideoClip, make_tsr_pairs
from ..diffusion import NoiseSchedule, epsilon_mse, q_sample
from ..errors import ContractError
from ..flow_tsr import FlowNet, FlowNetConfig, coarse_midframes, midframe_flow_targets
from ..latent_codec import (
    CodecConfig,
    DegradationConfig,
    ImageCodec,
    VideoDecoder,
    degrade,
    kl_divergence,
)
from ..numerics import GradTape, Tensor, concat, resize_bilinear, tabs
from ..numerics.tensor import exp as texp
from ..text_encoder import embed_text
from ..video_unet import ConditionSet, STUNet, STUNetConfig, assemble_conditions, init_video_unet
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int = 1
    lr: float = 1e-3
    seed: int = 0
    cond_dropout: float = 0.1
    eval_every: int = 50

    def __post_init__(self):
        if self.steps < 1:
            raise ContractError(f"steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ContractError(f"learning rate must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if not 0 <= self.cond_dropout < 1:
            raise ContractError("cond_dropout must lie in [0, 1)")


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.PCG64(seed))


def _log_step(name: str, step: int, total: int, loss: float, every: int) -> None:
    if step % every == 0 or step == total - 1:
        log.info("%s step %d/%d loss %.5f", name, step, total, loss)


# -- image codec -----------------------------------------------------------------

def train_codec(clips: list[VideoClip], codec_cfg: CodecConfig, tcfg: TrainConfig,
                kl_weight: float = 1e-4) -> tuple[ImageCodec, list[float]]:
    """Reconstruction + small-KL training of the per-frame VAE."""
    codec = ImageCodec(codec_cfg, seed=tcfg.seed)
    params = codec.parameters()
    opt = Adam(params, lr=tcfg.lr)
    rng = _rng(tcfg.seed)
    pool = np.concatenate([c.frames for c in clips], axis=0)
    losses: list[float] = []
    for step in range(tcfg.steps):
        idx = rng.integers(0, len(pool), size=tcfg.batch_size)
        batch = Tensor(pool[idx])
        noise = Tensor(rng.standard_normal((tcfg.batch_size, codec_cfg.latent_channels,
                                            pool.shape[2] // codec_cfg.factor,
                                            pool.shape[3] // codec_cfg.factor),
                                           dtype=np.float32))
        with GradTape() as tape:
            mu, logvar = codec.posterior(batch)
            z = mu + texp(logvar * 0.5) * noise
            recon = codec.dec.forward(z, temporal=False)
            d = recon - batch
            loss = (d * d).mean() + kl_divergence(mu, logvar) * kl_weight
            grads = tape.gradients(loss, params)
        opt.step(grads)
        losses.append(loss.item())
        _log_step("codec", step, tcfg.steps, losses[-1], tcfg.eval_every)
    return codec, losses


# -- cascade diffusion stages -------------------------------------------------------

def prepare_stage_data(clips: list[VideoClip], codec: ImageCodec, latent_size: int,
                       num_frames: int, with_prev: bool):
    """Per-clip latents, references, and conditions for one cascade stage."""
    f = codec.cfg.factor
    pixel = latent_size * f
    entries = []
    for clip in clips:
        if clip.num_frames < num_frames:
            raise ContractError(
                f"clip has {clip.num_frames} frames, stage needs {num_frames}")
        if clip.caption is None:
            raise ContractError("diffusion stages train on text-paired clips; caption missing")
        frames = clip.frames[:num_frames]
        resized = resize_bilinear(Tensor(frames), (pixel, pixel)).data
        resized = np.clip(resized, -1.0, 1.0)
        z0 = codec.encode_frames(resized)
        ref = encode_reference(codec, clip.frames[0], latent_size)
        prev = None
        if with_prev:
            half = latent_size // 2
            low = resize_bilinear(Tensor(frames), (half * f, half * f)).data
            prev_lat = codec.encode_frames(np.clip(low, -1.0, 1.0))
            prev = resize_bilinear(Tensor(prev_lat), (latent_size, latent_size)).data
        entries.append({
            "z0": z0, "ref": ref, "prev": prev, "fps": clip.fps,
            "text": embed_text(clip.caption),
        })
    return entries


def train_diffusion_stage(stage: int, clips: list[VideoClip], codec: ImageCodec,
                          unet_cfg: STUNetConfig, latent_size: int,
                          sched: NoiseSchedule, tcfg: TrainConfig,
                          prev_state: dict[str, np.ndarray] | None = None,
                          ) -> tuple[STUNet, list[float]]:
    """Epsilon-MSE training of one cascade stage.

    Stages 2 and 3 must be given the previous stage's checkpoint state; its
    matching tensors are copied and the extra input channels zeroed.
    """
    if stage not in (1, 2, 3):
        raise ContractError(f"stage must be 1, 2 or 3, got {stage}")
    if stage > 1 and prev_state is None:
        raise ContractError(f"stage {stage} requires the stage-{stage - 1} checkpoint")

    model = init_video_unet(unet_cfg, seed=tcfg.seed)
    if prev_state is not None:
        init_from_previous(prev_state, model)
    params = model.parameters()
    opt = Adam(params, lr=tcfg.lr)
    rng = _rng(tcfg.seed + stage)
    entries = prepare_stage_data(clips, codec, latent_size, unet_cfg.num_frames,
                                 with_prev=stage > 1)
    zero_text = Tensor(np.zeros_like(entries[0]["text"].data))

    losses: list[float] = []
    for step in range(tcfg.steps):
        batch_grads = None
        batch_loss = 0.0
        for _ in range(tcfg.batch_size):
            e = entries[int(rng.integers(len(entries)))]
            t = int(rng.integers(sched.steps))
            eps = Tensor(rng.standard_normal(e["z0"].shape, dtype=np.float32))
            x_t = q_sample(Tensor(e["z0"]), t, eps, sched)
            text = zero_text if rng.random() < tcfg.cond_dropout else e["text"]
            cond = ConditionSet(text_emb=text, fps=e["fps"], ref_latent=e["ref"],
                                prev_stage=e["prev"])
            x_in = assemble_conditions(x_t, cond)
            with GradTape() as tape:
                pred = model.forward(x_in, t, cond)
                loss = epsilon_mse(pred, eps)
                grads = tape.gradients(loss, params)
            batch_loss += loss.item()
            if batch_grads is None:
                batch_grads = grads
            else:
                batch_grads = [a + b for a, b in zip(batch_grads, grads)]
        opt.step([g / tcfg.batch_size for g in batch_grads])
        losses.append(batch_loss / tcfg.batch_size)
        _log_step(f"stage{stage}", step, tcfg.steps, losses[-1], tcfg.eval_every)
    return model, losses


# -- flow-based temporal super-resolution ----------------------------------------------

@dataclass
class TsrDataset:
    """Flattened stride-2 training pairs in latent space."""

    z_a: np.ndarray        # [M, C, h, w]
    z_b: np.ndarray
    z_mid: np.ndarray
    flow_a: np.ndarray | None   # analytic targets, None when unsupervised
    flow_b: np.ndarray | None


def build_tsr_dataset(clips: list[VideoClip], codec: ImageCodec,
                      scenes: list[SyntheticSceneSpec] | None = None) -> TsrDataset:
    """Encode stride-2 pairs; attach analytic flow targets when scenes are given.

    Only frames and fps are read from the clips — captions stay untouched,
    these networks train on unpaired video.
    """
    if scenes is not None and len(scenes) != len(clips):
        raise ContractError("scenes list must align with clips")
    a, b, mid, fa, fb = [], [], [], [], []
    f = codec.cfg.factor
    for ci, clip in enumerate(clips):
        pairs = make_tsr_pairs(clip, codec.encode_frames)
        n_mid = pairs.targets.shape[0]
        a.append(pairs.low[:-1])
        b.append(pairs.low[1:])
        mid.append(pairs.targets)
        if scenes is not None:
            for k in range(n_mid):
                ta, tb = midframe_flow_targets(scenes[ci], float(2 * k + 1), f)
                fa.append(ta)
                fb.append(tb)
    return TsrDataset(
        z_a=np.concatenate(a), z_b=np.concatenate(b), z_mid=np.concatenate(mid),
        flow_a=np.stack(fa) if fa else None,
        flow_b=np.stack(fb) if fb else None)


def train_flow_net(data: TsrDataset, flow_cfg: FlowNetConfig, tcfg: TrainConfig,
                   flow_supervision: bool = True,
                   supervision_weight: float = 1.0) -> tuple[FlowNet, list[float]]:
    """L1 warp-reconstruction training, plus analytic flow supervision."""
    if flow_supervision and data.flow_a is None:
        raise ContractError("flow supervision requested but the dataset has no targets")
    net = FlowNet(flow_cfg, seed=tcfg.seed)
    params = net.parameters()
    opt = Adam(params, lr=tcfg.lr)
    rng = _rng(tcfg.seed)
    m = data.z_a.shape[0]
    losses: list[float] = []
    for step in range(tcfg.steps):
        idx = rng.integers(0, m, size=tcfg.batch_size)
        za, zb = Tensor(data.z_a[idx]), Tensor(data.z_b[idx])
        zmid = Tensor(data.z_mid[idx])
        with GradTape() as tape:
            fa, fb = net.forward(za, zb)
            warped = coarse_midframes(za, zb, fa, fb)
            loss = tabs(warped - zmid).mean()
            if flow_supervision:
                sup = tabs(fa - Tensor(data.flow_a[idx])).mean() + \
                      tabs(fb - Tensor(data.flow_b[idx])).mean()
                loss = loss + sup * supervision_weight
            grads = tape.gradients(loss, params)
        opt.step(grads)
        losses.append(loss.item())
        _log_step("flownet", step, tcfg.steps, losses[-1], tcfg.eval_every)
    return net, losses


def train_tsr_refiner(data: TsrDataset, flownet: FlowNet, refiner_cfg: STUNetConfig,
                      sched: NoiseSchedule, tcfg: TrainConfig) -> tuple[STUNet, list[float]]:
    """Epsilon-MSE training of the midframe refiner, conditioned on the warp."""
    fa, fb = flownet.forward(Tensor(data.z_a), Tensor(data.z_b))
    coarse = coarse_midframes(Tensor(data.z_a), Tensor(data.z_b), fa, fb).data

    refiner = init_video_unet(refiner_cfg, seed=tcfg.seed)
    params = refiner.parameters()
    opt = Adam(params, lr=tcfg.lr)
    rng = _rng(tcfg.seed + 7)
    m = coarse.shape[0]
    losses: list[float] = []
    for step in range(tcfg.steps):
        idx = rng.integers(0, m, size=tcfg.batch_size)
        t = int(rng.integers(sched.steps))
        eps = Tensor(rng.standard_normal(data.z_mid[idx].shape, dtype=np.float32))
        x_t = q_sample(Tensor(data.z_mid[idx]), t, eps, sched)
        x_in = concat((x_t, Tensor(coarse[idx])), axis=1)
        with GradTape() as tape:
            pred = refiner.forward(x_in, t, None, temporal=False)
            loss = epsilon_mse(pred, eps)
            grads = tape.gradients(loss, params)
        opt.step(grads)
        losses.append(loss.item())
        _log_step("refiner", step, tcfg.steps, losses[-1], tcfg.eval_every)
    return refiner, losses


def train_flow_tsr(clips: list[VideoClip], codec: ImageCodec,
                   flow_cfg: FlowNetConfig, refiner_cfg: STUNetConfig,
                   sched: NoiseSchedule, flow_tcfg: TrainConfig,
                   refiner_tcfg: TrainConfig,
                   scenes: list[SyntheticSceneSpec] | None = None,
                   flow_supervision: bool = True):
    """Both temporal-SR networks; returns (flownet, refiner, flow losses, refiner losses)."""
    data = build_tsr_dataset(clips, codec, scenes if flow_supervision else None)
    flownet, flow_losses = train_flow_net(data, flow_cfg, flow_tcfg,
                                          flow_supervision=flow_supervision)
    refiner, ref_losses = train_tsr_refiner(data, flownet, refiner_cfg, sched, refiner_tcfg)
    return flownet, refiner, flow_losses, ref_losses


# -- video decoder ------------------------------------------------------------------

def train_video_decoder(clips: list[VideoClip], codec: ImageCodec,
                        deg_cfg: DegradationConfig, tcfg: TrainConfig,
                        ) -> tuple[VideoDecoder, list[float]]:
    """L1 training on degraded-latent -> clean-video pairs.

    The decoder starts as the image decoder (identity temporal layers) and
    learns to undo the degradations the encoder saw. Captions are never read.
    """
    vdec = VideoDecoder(codec.cfg, seed=tcfg.seed)
    vdec.init_from_image_decoder(codec)
    params = vdec.parameters()
    opt = Adam(params, lr=tcfg.lr)
    rng = _rng(tcfg.seed)
    losses: list[float] = []
    for step in range(tcfg.steps):
        clip = clips[int(rng.integers(len(clips)))]
        dirty = degrade(clip.frames, deg_cfg, seed=int(rng.integers(2**31)))
        z = codec.encode_frames(dirty)
        target = Tensor(clip.frames)
        with GradTape() as tape:
            out = vdec.forward(Tensor(z))
            loss = tabs(out - target).mean()
            grads = tape.gradients(loss, params)
        opt.step(grads)
        losses.append(loss.item())
        _log_step("video_decoder", step, tcfg.steps, losses[-1], tcfg.eval_every)
    return vdec, losses
