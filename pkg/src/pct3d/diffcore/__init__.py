"""Dense float64 tensors with reverse-mode differentiation."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, grad_errors
from .nn import LBR, BatchNorm, Linear, Module, dropout, param_count
from .ops import (
    BatchNormState,
    add,
    batch_norm,
    broadcast_to,
    concat,
    mean,
    reduce_sum,
    gather_rows,
    matmul,
    max_reduce,
    relu,
    reshape,
    scale,
    softmax,
    softmax_cross_entropy,
    split,
    sub,
    transpose,
)
from .tensor import Parameter, Tape, Tensor, backward, no_grad

__all__ = [
    "BatchNorm", "BatchNormState", "LBR", "Linear", "Module", "Parameter", "Tape", "Tensor",
    "add", "backward", "batch_norm", "broadcast_to", "concat", "dropout", "gather_rows",
    "grad_check", "grad_errors", "load_checkpoint", "matmul", "max_reduce", "no_grad", "ops",
    "mean", "param_count", "reduce_sum", "relu", "reshape", "save_checkpoint", "scale", "softmax",
    "softmax_cross_entropy", "split", "sub", "transpose",
]
