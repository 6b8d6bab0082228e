from app.autodiff.tensor import Tensor, Tape, backward
from app.autodiff.losses import binary_cross_entropy, smooth_l1, softmax_cross_entropy
from app.autodiff.ops import grad_reverse, conv2d
from app.autodiff.optim import OptimizerState, SGD, sgd_step
from app.autodiff.params import ParameterStore

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "binary_cross_entropy",
    "smooth_l1",
    "softmax_cross_entropy",
    "grad_reverse",
    "conv2d",
    "OptimizerState",
    "SGD",
    "sgd_step",
    "ParameterStore",
]
