"""Pixel decoder (FPN) and the coarse-to-fine query decoder.

Parameter names:
    decoder.lateral.s{s}.weight/bias            1x1 lateral convs, C_s -> d
    decoder.scale_embed.s{s}                     (1, d)
    decoder.query_init                           Q^r, (N_q, d)
    decoder.query_pos.s{s}                       (N_q, d), learnable kind only
    decoder.block.i{i}.s{s}.{ln1,self_attn,ln2,cross_attn,ln3,ffn}
    decoder.affinity.wq/wk                       object attention map
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from medvt.core.autodiff import functional as F
from medvt.core.autodiff.graph import Graph, Var
from medvt.core.exceptions import ConfigError, DimensionError
from medvt.core.model import layers
from medvt.core.model.attention import (
    MultiheadWeights,
    attention_scale,
    mha,
    positional_encoding,
    query_encoding,
    scale_embedding,
)
from medvt.core.model.layers import ParamInit
from medvt.domain.models.configs import DecoderConfig, ModelConfig

logger = logging.getLogger(__name__)


@dataclass
class QuerySet:
    """Adaptive queries with the ordered trace of decoder blocks that produced them."""
    queries: Var
    mode: str
    trace: List[str] = field(default_factory=list)


def init_decoder(init: ParamInit, cfg: ModelConfig, in_channels: Mapping[int, int]) -> None:
    """in_channels: scale -> channels of the feature entering the pixel decoder."""
    dec = cfg.decoder
    d, heads, hd, nq = cfg.d, cfg.num_heads, cfg.head_dim, cfg.num_queries
    for s, channels in sorted(in_channels.items()):
        init.conv2d(f"decoder.lateral.s{s}", 1, 1, channels, d)
    for s in dec.decoder_scales:
        init.normal(f"decoder.scale_embed.s{s}", (1, d), 0.02)
        if dec.query_pos_kind == "learnable":
            init.normal(f"decoder.query_pos.s{s}", (nq, d), 0.02)
    init.normal("decoder.query_init", (nq, d), dec.query_init_std)
    for i in range(1, dec.num_iterations + 1):
        for s in dec.decoder_scales:
            prefix = f"decoder.block.i{i}.s{s}"
            init.layer_norm(f"{prefix}.ln1", d)
            init.multihead(f"{prefix}.self_attn", d, d, heads, hd, d)
            init.layer_norm(f"{prefix}.ln2", d)
            init.multihead(f"{prefix}.cross_attn", d, d, heads, hd, d)
            init.layer_norm(f"{prefix}.ln3", d)
            init.ffn(f"{prefix}.ffn", d, cfg.encoder.ffn_mult)
    init.multihead("decoder.affinity", d, d, heads, hd, None, values=False)


def pixel_decode(graph: Graph, features: Mapping[int, Var]) -> Dict[int, Var]:
    """FPN fusion, coarse to fine: acc_s = lateral_s(f_s) + upsample(relu(acc_{s+1})).

    `features` maps scale -> (T, H_s, W_s, C_s) for every scale 1..s_max;
    every output f^P_s is (T, H_s, W_s, d).

    Raises:
        DimensionError: if a scale between 1 and the coarsest is missing.
    """
    if not features:
        raise DimensionError("pixel decoding needs at least one scale")
    coarsest = max(features)
    missing = [s for s in range(1, coarsest + 1) if s not in features]
    if missing:
        raise DimensionError(f"pixel decoding is missing scales {missing}")
    out: Dict[int, Var] = {}
    acc = layers.conv2d(graph, f"decoder.lateral.s{coarsest}", features[coarsest])
    out[coarsest] = acc
    for s in range(coarsest - 1, 0, -1):
        lateral = layers.conv2d(graph, f"decoder.lateral.s{s}", features[s])
        up = F.bilinear_upsample(F.relu(acc), lateral.shape[1], lateral.shape[2])
        acc = F.add(lateral, up)
        out[s] = acc
    return out


def decoder_block(graph: Graph, prefix: str, queries: Var, query_pos: Var, memory: Var, memory_pos: Var,
                  scale_embed: Var, cfg: ModelConfig) -> Var:
    """Self attention, cross attention to scale-embedded pixel features, feedforward; pre-norm residuals.

    memory: flattened f^P_s (N, d); memory_pos: p_s (N, d); scale_embed: p^sigma_s repeated (N, d).
    """
    if scale_embed.shape != memory.shape or memory_pos.shape != memory.shape:
        raise DimensionError("scale embedding and encoding must match the pixel features", memory.shape,
                             scale_embed.shape, memory_pos.shape)
    by_head = cfg.encoder.scale_by_head_dim
    h = layers.layer_norm(graph, f"{prefix}.ln1", queries, cfg.norm_eps)
    qk = F.add(h, query_pos)
    w_self = MultiheadWeights.from_graph(graph, f"{prefix}.self_attn", cfg.num_heads, cfg.head_dim)
    queries = F.add(queries, mha(qk, qk, h, w_self, by_head))

    h = layers.layer_norm(graph, f"{prefix}.ln2", queries, cfg.norm_eps)
    keys = F.add(F.add(memory, memory_pos), scale_embed)
    w_cross = MultiheadWeights.from_graph(graph, f"{prefix}.cross_attn", cfg.num_heads, cfg.head_dim)
    queries = F.add(queries, mha(F.add(h, query_pos), keys, memory, w_cross, by_head))

    h = layers.layer_norm(graph, f"{prefix}.ln3", queries, cfg.norm_eps)
    return F.add(queries, layers.ffn(graph, f"{prefix}.ffn", h))


def learn_queries(graph: Graph, pixel_features: Mapping[int, Var], cfg: ModelConfig,
                  decoder: Optional[DecoderConfig] = None) -> QuerySet:
    """Refines Q^r into Q^o: for i = 1..N_d, one block per decoder scale, coarse to fine."""
    dec = decoder or cfg.decoder
    absent = [s for s in dec.decoder_scales if s not in pixel_features]
    if absent:
        raise DimensionError(f"decoder scales {absent} are absent from the pixel features")
    queries = graph.param("decoder.query_init")
    nq = queries.shape[0]
    memories: Dict[int, Tuple[Var, Var, Var]] = {}
    for s in dec.decoder_scales:
        t, h, w, _ = pixel_features[s].shape
        memory = layers.flatten_tokens(pixel_features[s])
        pos = positional_encoding(graph, cfg.encoder.pe_kind, s, t, h, w, cfg.d, memory.dtype)
        memories[s] = (memory, pos, scale_embedding(graph, s, memory.shape[0]))

    trace: List[str] = []
    for i in range(1, dec.num_iterations + 1):
        for s in dec.decoder_scales:
            memory, pos, sigma = memories[s]
            query_pos = query_encoding(graph, dec.query_pos_kind, s, nq, cfg.d, memory.dtype)
            queries = decoder_block(graph, f"decoder.block.i{i}.s{s}", queries, query_pos, memory, pos, sigma, cfg)
            trace.append(f"i{i}.s{s}")
    logger.debug(f"Query decoder applied {len(trace)} blocks: {trace}")
    return QuerySet(queries=queries, mode=dec.query_mode, trace=trace)


def _affinity_rows(graph: Graph, queries: Var, finest: Var, cfg: ModelConfig) -> List[Var]:
    """Per head, the (N_q, T*H_1*W_1) row-stochastic affinity softmax."""
    keys = layers.flatten_tokens(finest)
    Q = F.matmul(queries, graph.param("decoder.affinity.wq"))
    K = F.matmul(keys, graph.param("decoder.affinity.wk"))
    scale = attention_scale(cfg.num_heads, cfg.head_dim, cfg.encoder.scale_by_head_dim)
    rows = []
    for head in range(cfg.num_heads):
        cols = slice(head * cfg.head_dim, (head + 1) * cfg.head_dim)
        qh = F.slice_(Q, (slice(None), cols))
        kh = F.transpose(F.slice_(K, (slice(None), cols)), (1, 0))
        rows.append(F.softmax(F.scale(F.matmul(qh, kh), scale), axis=-1))
    return rows


def object_attention(graph: Graph, query_set: QuerySet, finest: Var, cfg: ModelConfig,
                     full_row: Optional[bool] = None) -> Var:
    """F^A (T, H_1, W_1, N_h) from per-head softmax(Q Wq_h (K Wk_h)^T / sqrt(d)) over all T*H_1*W_1 pixels.

    per_frame (N_q = T): frame t's map is query t's row restricted to frame t.
    per_clip (N_q = 1): the single row reshaped to (T, H_1, W_1).
    full_row: per_frame alternative averaging every query's row at each pixel.
    """
    full_row = cfg.decoder.full_row if full_row is None else full_row
    t, h, w, _ = finest.shape
    hw = h * w
    nq = query_set.queries.shape[0]
    if nq not in (1, t):
        raise ConfigError(f"object attention needs N_q in {{1, T={t}}}, got {nq}")

    maps: List[Var] = []
    for rows in _affinity_rows(graph, query_set.queries, finest, cfg):
        if nq == 1:
            per_pixel = F.reshape(rows, (t, h, w, 1))
        elif full_row:
            per_pixel = F.reshape(F.mean(rows, axis=0, keepdims=True), (t, h, w, 1))
        else:
            frames = [F.slice_(rows, (slice(f, f + 1), slice(f * hw, (f + 1) * hw))) for f in range(t)]
            per_pixel = F.reshape(F.concat(frames, axis=0) if t > 1 else frames[0], (t, h, w, 1))
        maps.append(per_pixel)
    return F.concat(maps, axis=-1) if len(maps) > 1 else maps[0]


def raw_object_attention(graph: Graph, query_set: QuerySet, finest: Var, cfg: ModelConfig) -> np.ndarray:
    """(N_h, N_q, T*H_1*W_1) stochastic matrices behind F^A, for inspection."""
    return np.stack([rows.value for rows in _affinity_rows(graph, query_set.queries, finest, cfg)])


def decoder_output(attention: Var, finest: Var) -> Var:
    """F^D = F^A concatenated with f^P_1 along channels, attention channels first."""
    if attention.shape[:3] != finest.shape[:3]:
        raise DimensionError("object attention and finest features differ spatially", attention.shape, finest.shape)
    return F.concat([attention, finest], axis=-1)
