"""Numeric substrate: autodiff tensors, MLPs, Adam, and checkpoint files."""

from .tensor import (
    Tensor, as_tensor, no_grad, gradients, grad_arrays, toposort,
    add, sub, mul, div, neg, matmul, bmm, tsum, tmean, broadcast_to,
    reshape, transpose, getitem, gather_rows, scatter_rows, concat, flip,
    cumsum, exp, log, sin, cos, sqrt, tabs, relu, softplus, sigmoid, tanh,
    maximum, minimum, clip, pow_const, max_reduce, min_reduce,
    stop_gradient, softmax,
)
from .nn import (
    Mlp, positional_encode, positional_encode_raw,
    logistic_cdf, logistic_density,
)
from .optim import AdamState, adam_step
from .container import (
    save_container, load_container,
    FIELD_MAGIC, BODY_MAGIC, SHAPE_CODEBOOK_MAGIC, POSE_CODEBOOK_MAGIC,
)

__all__ = [name for name in dir() if not name.startswith("_")]
