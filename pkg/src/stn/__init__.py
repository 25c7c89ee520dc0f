"""Self-tuning networks: hyperparameters tuned online through learned best-response approximations."""

from .hyperspace import HyperParam, HyperSpace
from .layers import Dense, GatedLinearNet, HyperConv, HyperDense
from .optim import OptimizerSpec
from .regularizers import RegularizerBinding
from .tensor import Tensor, backward, grad_check, no_grad
from .trainer import LambdaDistribution, TrainConfig, fit_fixed, global_fit, stn_fit

__version__ = "0.1.0"

__all__ = [
    "HyperParam", "HyperSpace", "Dense", "GatedLinearNet", "HyperConv", "HyperDense",
    "OptimizerSpec", "RegularizerBinding", "Tensor", "backward", "grad_check", "no_grad",
    "LambdaDistribution", "TrainConfig", "fit_fixed", "global_fit", "stn_fit",
]
