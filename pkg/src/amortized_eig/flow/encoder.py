"""Set-invariant design encoder: per-unit embedding, optional self-attention, sum, emitter."""
from __future__ import annotations

import numpy as np

from ..tensor import Tensor, ops
from ..tensor.nn import ParamSet, init_linear, init_residual_net, linear, residual_net
from .config import EncoderConfig


def init_encoder(params: ParamSet, rng, cfg: EncoderConfig, input_width: int) -> None:
    init_residual_net(params, rng, "embed", input_width, cfg.embed_width, cfg.token_width, cfg.embed_blocks)
    if cfg.encoder_kind == "attention":
        for layer in range(cfg.attn_layers):
            if layer > 0:
                init_linear(params, rng, f"attn{layer}.reembed", cfg.post_attn_projection, cfg.token_width)
            for proj in "qkv":
                init_linear(params, rng, f"attn{layer}.{proj}", cfg.token_width, cfg.token_width,
                            scale=np.sqrt(1.0 / cfg.token_width))
            init_linear(params, rng, f"attn{layer}.proj", cfg.token_width, cfg.post_attn_projection)
    else:
        init_residual_net(params, rng, "unitnet", cfg.token_width, cfg.residual_width,
                          cfg.post_attn_projection, cfg.residual_blocks)
    init_residual_net(params, rng, "emit", cfg.post_attn_projection, cfg.emitter_width,
                      cfg.emitter_width, cfg.emitter_blocks)


def context_width(cfg: EncoderConfig) -> int:
    return cfg.emitter_width


def _self_attention(p, layer, h, cfg: EncoderConfig):
    b, s, _ = h.shape
    heads, dh = cfg.attn_heads, cfg.head_dim

    def split(name):
        t = linear(p, f"attn{layer}.{name}", h)
        return ops.transpose(ops.reshape(t, (b, s, heads, dh)), (0, 2, 1, 3))

    out = ops.attention(split("q"), split("k"), split("v"))
    return ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (b, s, heads * dh))


def encode(p: dict, cfg: EncoderConfig, units, training: bool = False, rng=None) -> Tensor:
    """Map a batch of unit sets (B, S, width) to design contexts (B, context_width).

    Rows are ``[d_i ; y_i-encoding]``. Units interact only through attention
    and the final sum, so the context is invariant to their order.
    """
    units = units if isinstance(units, Tensor) else Tensor(units)
    if units.ndim != 3 or units.shape[1] == 0:
        raise ValueError(f"encode needs a (B, S>0, width) batch, got {units.shape}")
    h = residual_net(p, "embed", units, cfg.embed_blocks)
    if cfg.encoder_kind == "attention":
        for layer in range(cfg.attn_layers):
            if layer > 0:
                h = linear(p, f"attn{layer}.reembed", ops.relu(h))
            h = _self_attention(p, layer, h, cfg)
            h = ops.dropout(h, cfg.dropout_p, rng, training)
            h = linear(p, f"attn{layer}.proj", h)
            h = ops.dropout(h, cfg.dropout_p, rng, training)
    else:
        h = residual_net(p, "unitnet", ops.relu(h), cfg.residual_blocks)
    pooled = ops.sum(h, axis=1)
    return residual_net(p, "emit", pooled, cfg.emitter_blocks)
