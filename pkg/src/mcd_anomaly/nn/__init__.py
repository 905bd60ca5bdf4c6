from .ops import channel_dropout, conv2d_forward
from .model import (
    StageSpec,
    InpainterModel,
    build_inpainter,
    inpaint_forward,
    backward_pass,
    save_checkpoint,
    load_checkpoint,
)
from .train import TrainConfig, TrainHistory, train_inpainter, gradient_check

__all__ = [
    "channel_dropout",
    "conv2d_forward",
    "StageSpec",
    "InpainterModel",
    "build_inpainter",
    "inpaint_forward",
    "backward_pass",
    "save_checkpoint",
    "load_checkpoint",
    "TrainConfig",
    "TrainHistory",
    "train_inpainter",
    "gradient_check",
]
