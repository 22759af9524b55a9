"""Multiscale transformer encoder.

Every scale is down-projected by a 1x1 conv and flattened to (T*H_s*W_s, d).
Encoded scales then run a stack of pre-norm within-scale self-attention
blocks; afterwards, going coarse to fine, each finer encoded scale queries
the within-scale output of the adjacent coarser one. The coarsest scale
passes through unchanged.

Parameter names:
    encoder.proj.s{s}.weight/bias
    encoder.within.s{s}.layer{l}.{ln1,attn,ln2,ffn}
    encoder.between.s{s}.{ln_q,ln_kv,attn,ln2,ffn}   (s = the finer scale)
"""

import logging
from typing import Dict, Mapping, Optional, Tuple

from medvt.core.autodiff import functional as F
from medvt.core.autodiff.graph import Graph, Var
from medvt.core.exceptions import ConfigError, DimensionError
from medvt.core.model import layers
from medvt.core.model.attention import MultiheadWeights, mha, positional_encoding
from medvt.core.model.layers import ParamInit
from medvt.domain.models.configs import EncoderConfig, ModelConfig

logger = logging.getLogger(__name__)

Pyramid = Mapping[int, Var]


def init_encoder(init: ParamInit, cfg: ModelConfig, in_channels: Mapping[int, int]) -> None:
    """Registers encoder parameters for the scales in `in_channels` (scale -> C_s)."""
    enc = cfg.encoder
    d, heads, hd = cfg.d, cfg.num_heads, cfg.head_dim
    for s, channels in sorted(in_channels.items()):
        init.conv2d(f"encoder.proj.s{s}", 1, 1, channels, d)
    for s in sorted(enc.encoded_scales):
        for layer in range(enc.blocks_per_scale[s]):
            prefix = f"encoder.within.s{s}.layer{layer}"
            init.layer_norm(f"{prefix}.ln1", d)
            init.multihead(f"{prefix}.attn", d, d, heads, hd, d)
            init.layer_norm(f"{prefix}.ln2", d)
            init.ffn(f"{prefix}.ffn", d, enc.ffn_mult)
        if s + 1 in enc.encoded_scales:
            prefix = f"encoder.between.s{s}"
            init.layer_norm(f"{prefix}.ln_q", d)
            init.layer_norm(f"{prefix}.ln_kv", d)
            init.multihead(f"{prefix}.attn", d, d, heads, hd, d)
            if enc.between_ffn:
                init.layer_norm(f"{prefix}.ln2", d)
                init.ffn(f"{prefix}.ffn", d, enc.ffn_mult)


def init_positional_encodings(init: ParamInit, cfg: ModelConfig, scales, image_hw: Tuple[int, int]) -> None:
    """Learnable p_s at the configured resolution; sinusoidal ones need no parameters."""
    if cfg.encoder.pe_kind != "learnable":
        return
    h, w = image_hw
    for s in sorted(scales):
        stride = 2 ** (s + 1)
        init.normal(f"pe.s{s}", (cfg.num_frames, h // stride, w // stride, cfg.d), 0.02)


def down_project(graph: Graph, f_s: Var, scale: int) -> Var:
    """phi: 1x1 conv with bias, flattened in (t, y, x) order."""
    return layers.flatten_tokens(layers.conv2d(graph, f"encoder.proj.s{scale}", f_s))


def encoder_block(graph: Graph, prefix: str, x: Var, p: Var, cfg: ModelConfig) -> Var:
    h = layers.layer_norm(graph, f"{prefix}.ln1", x, cfg.norm_eps)
    qk = F.add(h, p)
    w = MultiheadWeights.from_graph(graph, f"{prefix}.attn", cfg.num_heads, cfg.head_dim)
    x = F.add(x, mha(qk, qk, h, w, cfg.encoder.scale_by_head_dim))
    return F.add(x, layers.ffn(graph, f"{prefix}.ffn", layers.layer_norm(graph, f"{prefix}.ln2", x, cfg.norm_eps)))


def within_scale(graph: Graph, x: Var, p: Var, scale: int, num_layers: int, cfg: ModelConfig) -> Var:
    """W(f_s, p_s) = M(f_s + p_s, f_s + p_s, f_s), stacked `num_layers` times."""
    if p.shape != x.shape:
        raise DimensionError(f"positional encoding does not match scale {scale} features", x.shape, p.shape)
    for layer in range(num_layers):
        x = encoder_block(graph, f"encoder.within.s{scale}.layer{layer}", x, p, cfg)
    return x


def between_scale(graph: Graph, fine: Var, p_fine: Var, coarse: Var, p_coarse: Var,
                  scales: Tuple[int, int], cfg: ModelConfig) -> Var:
    """M(f_{s-1} + p_{s-1}, f_s + p_s, f_s): finer tokens query the adjacent coarser scale.

    Raises:
        ConfigError: if `scales` = (fine, coarse) are not adjacent.
    """
    fine_s, coarse_s = scales
    if coarse_s != fine_s + 1:
        raise ConfigError(f"between-scale attention needs adjacent scales, got {scales}")
    prefix = f"encoder.between.s{fine_s}"
    q = F.add(layers.layer_norm(graph, f"{prefix}.ln_q", fine, cfg.norm_eps), p_fine)
    kv = layers.layer_norm(graph, f"{prefix}.ln_kv", coarse, cfg.norm_eps)
    w = MultiheadWeights.from_graph(graph, f"{prefix}.attn", cfg.num_heads, cfg.head_dim)
    x = F.add(fine, mha(q, F.add(kv, p_coarse), kv, w, cfg.encoder.scale_by_head_dim))
    if cfg.encoder.between_ffn:
        x = F.add(x, layers.ffn(graph, f"{prefix}.ffn", layers.layer_norm(graph, f"{prefix}.ln2", x, cfg.norm_eps)))
    return x


def encode(graph: Graph, pyramid: Pyramid, cfg: ModelConfig, encoder: Optional[EncoderConfig] = None) -> Dict[int, Var]:
    """F^B: down-projects every scale given, encodes the scales in encoded_scales.

    Returns scale -> (T*H_s*W_s, d). An empty encoded set returns the
    down-projections alone.
    """
    enc = encoder or cfg.encoder
    projected: Dict[int, Var] = {}
    encodings: Dict[int, Var] = {}
    for s, f_s in sorted(pyramid.items()):
        projected[s] = down_project(graph, f_s, s)
        if s in enc.encoded_scales:
            t, h, w, _ = f_s.shape
            encodings[s] = positional_encoding(graph, enc.pe_kind, s, t, h, w, cfg.d, projected[s].dtype)

    missing = [s for s in enc.encoded_scales if s not in pyramid]
    if missing:
        raise DimensionError(f"encoded scales {missing} are absent from the pyramid")

    within = {s: within_scale(graph, projected[s], encodings[s], s, enc.blocks_per_scale[s], cfg)
              for s in sorted(enc.encoded_scales, reverse=True)}
    out = dict(projected)
    for s in sorted(within, reverse=True):
        if s + 1 in within:
            out[s] = between_scale(graph, within[s], encodings[s], within[s + 1], encodings[s + 1], (s, s + 1), cfg)
        else:
            out[s] = within[s]
    logger.debug(f"Encoded scales {sorted(within)} of pyramid {sorted(pyramid)}")
    return out
