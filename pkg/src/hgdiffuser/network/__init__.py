from .checkpoint import load_params, save_params
from .model import (
    Batch,
    dit_block,
    encode_gripper,
    encode_object,
    encode_step,
    forward_batch,
    forward_with_gradients,
)
from .params import NetworkConfig, Params, init_params, param_count

__all__ = [
    "Batch",
    "NetworkConfig",
    "Params",
    "dit_block",
    "encode_gripper",
    "encode_object",
    "encode_step",
    "forward_batch",
    "forward_with_gradients",
    "init_params",
    "load_params",
    "param_count",
    "save_params",
]
