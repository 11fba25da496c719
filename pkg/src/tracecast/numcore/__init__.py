from .tensor import (
    LEAKY_SLOPE,
    NumericError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_batch,
    concat,
    getitem,
    leaky_relu,
    masked_softmax,
    matmul,
    mean,
    mul,
    neg,
    parameters,
    pair_sum,
    relu,
    reshape,
    square,
    sub,
    sum,
    transpose,
)
from .optim import (
    FitResult,
    OptimizerState,
    TrainConfig,
    adam_step,
    early_stop,
    fit,
    plateau_schedule,
)
from .checkpoint import Checkpoint, CheckpointError
from .gradcheck import max_relative_error, numerical_gradient

__all__ = [
    "LEAKY_SLOPE", "NumericError", "ShapeError", "Tensor", "add", "as_tensor", "backward",
    "broadcast_batch", "concat", "getitem", "leaky_relu", "masked_softmax", "matmul", "mean",
    "mul", "neg", "parameters", "pair_sum", "relu", "reshape", "square", "sub", "sum", "transpose",
    "FitResult", "OptimizerState", "TrainConfig", "adam_step", "early_stop", "fit",
    "plateau_schedule", "Checkpoint", "CheckpointError", "max_relative_error",
    "numerical_gradient",
]
