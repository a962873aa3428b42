"""Numpy reference of the single-path depth decoder, with analytic counters."""
from .bench import bench, format_latency
from .config import DPT_PARAMS_M, ENCODERS, DecoderConfig, EncoderSpec
from .counting import CONVENTIONS, count_flops, count_params, encoder_flops, flops_breakdown
from .decoder import (dysample2x, forward, fuse, head, map_to_tokens, project_layer, sde,
                      softmax, tokens_to_map, upsample16)
from .params import DecoderParams, init_params, is_buffer, param_shapes
from .tokens import TokenFormatError, TokenLayer, TokenSet, random_tokens, read_tokens, write_tokens

__all__ = [
    "DPT_PARAMS_M", "ENCODERS", "CONVENTIONS", "DecoderConfig", "DecoderParams", "EncoderSpec",
    "TokenFormatError", "TokenLayer", "TokenSet", "bench", "count_flops", "count_params",
    "dysample2x", "encoder_flops", "flops_breakdown", "format_latency", "forward", "fuse",
    "head", "init_params", "is_buffer", "map_to_tokens", "param_shapes", "project_layer",
    "random_tokens", "read_tokens", "sde", "softmax", "tokens_to_map", "upsample16",
    "write_tokens",
]
