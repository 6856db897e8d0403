"""Training loops, optimizer, and checkpoint persistence."""

from ..checkpoint import load_checkpoint, save_checkpoint
from .loops import (
    TrainConfig,
    TsrDataset,
    build_tsr_dataset,
    prepare_stage_data,
    train_codec,
    train_diffusion_stage,
    train_flow_net,
    train_flow_tsr,
    train_tsr_refiner,
    train_video_decoder,
)
from .optim import Adam

__all__ = [
    "Adam", "TrainConfig", "TsrDataset", "build_tsr_dataset",
    "load_checkpoint", "prepare_stage_data", "save_checkpoint",
    "train_codec", "train_diffusion_stage", "train_flow_net",
    "train_flow_tsr", "train_tsr_refiner", "train_video_decoder",
]
