"""Dense numpy tensors with reverse-mode differentiation."""
from . import functional
from .checkpoint import CheckpointError
from .nn import MLP, Activation, Dropout, Embedding, LayerFactory, Linear, Module, Norm, Parameter, RngStream
from .optim import Adam, NonFiniteGradientError, clip_grad_norm, global_norm
from .tensor import Tape, TapeConsumedError, Tensor, backward, default_dtype, no_grad, precision, set_default_dtype

__all__ = [
    "Activation", "Adam", "CheckpointError", "Dropout", "Embedding", "LayerFactory", "Linear", "MLP",
    "Module", "NonFiniteGradientError", "Norm", "Parameter", "RngStream", "Tape", "TapeConsumedError",
    "Tensor", "backward", "clip_grad_norm", "default_dtype", "functional", "global_norm", "no_grad",
    "precision", "set_default_dtype",
]
