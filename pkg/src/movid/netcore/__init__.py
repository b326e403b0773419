"""Minimal float64 network stack with reverse-mode gradients."""
from .model import EncoderConfig, encode_keypoints, init_params, param_shapes
from .params import ParamStore, load_params, save_params

__all__ = ["EncoderConfig", "ParamStore", "encode_keypoints", "init_params", "load_params",
           "param_shapes", "save_params"]
