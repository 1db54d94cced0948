"""Side-by-side residual transformer blocks, fixed-step ODE integrators, and a
deterministic f64 training core, bound from C++."""

from ._core import (
    Model,
    default_config,
    gelu,
    gradcheck,
    layer_norm,
    measure_block_order,
    preset_config,
    share_map,
    softmax_rows,
)

__all__ = [
    "Model",
    "default_config",
    "gelu",
    "gradcheck",
    "layer_norm",
    "measure_block_order",
    "preset_config",
    "share_map",
    "softmax_rows",
]
