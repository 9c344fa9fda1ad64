"""Numerical substrate: autodiff tensors, special functions, Adam."""
from .gradcheck import finite_diff_grad, relative_error
from .optim import AdamState, adam_step, xavier_init
from .special import EULER_GAMMA, digamma, gammaln, trigamma
from .tensor import (Gradients, NonFiniteError, Tape, TapeError, Tensor, as_tensor,
                     backward, grad)
from . import tensor as ops

__all__ = [
    "AdamState", "EULER_GAMMA", "Gradients", "NonFiniteError", "Tape", "TapeError",
    "Tensor", "adam_step", "as_tensor", "backward", "digamma", "finite_diff_grad",
    "gammaln", "grad", "ops", "relative_error", "trigamma", "xavier_init",
]
