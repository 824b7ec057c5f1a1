from .tensor import (
    Tensor,
    concat,
    layer_norm,
    layer_norm_np,
    sigmoid_np,
    softmax_np,
    softplus_np,
)
from .nn import (
    MLP,
    LayerNorm,
    Linear,
    copy_params,
    params_hash,
    polyak_update,
    xavier_uniform,
    zero_grads,
)
from .optim import Adam
from .check import gradient_check

__all__ = [
    "Tensor", "concat", "layer_norm", "layer_norm_np",
    "sigmoid_np", "softmax_np", "softplus_np",
    "MLP", "LayerNorm", "Linear", "copy_params", "params_hash",
    "polyak_update", "xavier_uniform", "zero_grads",
    "Adam", "gradient_check",
]
