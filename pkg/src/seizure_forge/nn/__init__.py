from .tensor import Tensor, as_tensor, no_grad, stack_mean
from .functional import (
    avg_pool2d,
    batch_norm2d,
    concat_channels,
    conv2d,
    conv2d_direct,
    dropout,
    global_avg_pool2d,
    linear,
    log_softmax,
    relu,
    softmax,
    softmax_cross_entropy,
)
from .layers import AvgPool2d, BatchNorm2d, Conv2d, Dropout, Linear, Module, ReLU, Sequential
from .optim import ParamStore, adam_step
from .gradcheck import finite_diff_gradcheck
from .checkpoint import load_checkpoint, save_checkpoint
