from deepfont.numerics.layers import (
    conv2d_backward,
    conv2d_forward,
    fc_backward,
    fc_forward,
    matmul,
    maxpool2d,
    maxpool2d_backward,
    mse_loss,
    relu,
    relu_backward,
    softmax,
    softmax_xent,
    upsample_nearest,
    upsample_nearest_backward,
)
from deepfont.numerics.linalg import (SvdResult, numerical_rank_ratio, rank_project, svd,
                                      truncated_svd)

__all__ = [
    "SvdResult",
    "conv2d_backward",
    "conv2d_forward",
    "fc_backward",
    "fc_forward",
    "matmul",
    "maxpool2d",
    "maxpool2d_backward",
    "mse_loss",
    "numerical_rank_ratio",
    "rank_project",
    "relu",
    "relu_backward",
    "softmax",
    "softmax_xent",
    "svd",
    "truncated_svd",
    "upsample_nearest",
    "upsample_nearest_backward",
]
