from .layers import (
    BatchNorm1d,
    DepthwiseConv1d,
    Dropout,
    Embedding,
    Param,
    PointwiseConv1d,
    ReLU,
    ResidualBlock,
    SubBlock,
    gaussian_upsample,
    gaussian_upsample_backward,
    gaussian_weights,
)
from .optim import Adam, clip_global_norm, cosine_warmup_lr
from .gradcheck import finite_diff_gradcheck, scalar_projection_loss

__all__ = [
    "Adam",
    "BatchNorm1d",
    "DepthwiseConv1d",
    "Dropout",
    "Embedding",
    "Param",
    "PointwiseConv1d",
    "ReLU",
    "ResidualBlock",
    "SubBlock",
    "clip_global_norm",
    "cosine_warmup_lr",
    "finite_diff_gradcheck",
    "scalar_projection_loss",
    "gaussian_upsample",
    "gaussian_upsample_backward",
    "gaussian_weights",
]
