"""Multihead attention, its frame-masked variant, and the positional and
scale embeddings that feed it.

Tokens are always flattened in (t, y, x) row-major order, so the frame of
token i is tau(i) = i // (H * W). Masks are never materialized: masked
attention is evaluated block-wise, one query frame at a time, against the
key frames its rule permits.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from medvt.core.autodiff import functional as F
from medvt.core.autodiff.graph import Graph, Var
from medvt.core.exceptions import ConfigError, DegenerateRowError, DimensionError
from medvt.core.tensor import ops
from medvt.domain.models.common import Tensor

logger = logging.getLogger(__name__)

DEGENERATE_POLICIES = ("raise", "skip")


def attention_scale(num_heads: int, head_dim: int, scale_by_head_dim: bool = False) -> float:
    """1/sqrt(d) with d the model dim, or 1/sqrt(d_head) when asked."""
    return 1.0 / math.sqrt(head_dim if scale_by_head_dim else num_heads * head_dim)


# === Frame index and mask rules ===

@dataclass(frozen=True)
class FrameIndex:
    num_frames: int
    tokens_per_frame: int

    def __post_init__(self):
        if self.num_frames < 1 or self.tokens_per_frame < 1:
            raise DimensionError(f"frame index needs T >= 1 and HW >= 1, got {(self.num_frames, self.tokens_per_frame)}")

    @property
    def num_tokens(self) -> int:
        return self.num_frames * self.tokens_per_frame

    def frame_of(self, i: int) -> int:
        return i // self.tokens_per_frame

    def frame_rows(self, t: int) -> slice:
        return slice(t * self.tokens_per_frame, (t + 1) * self.tokens_per_frame)

    def tau(self) -> np.ndarray:
        return np.arange(self.num_tokens) // self.tokens_per_frame


class MaskRule(ABC):
    """Decides which key frames a query frame may attend to."""

    name = "rule"

    def __init__(self, index: FrameIndex):
        self.index = index

    @abstractmethod
    def permits(self, query_frame: int, key_frame: int) -> bool:
        ...

    def allowed_frames(self, query_frame: int) -> List[int]:
        return [t for t in range(self.index.num_frames) if self.permits(query_frame, t)]

    def allowed(self) -> np.ndarray:
        """Dense boolean (N, N) matrix of permitted pairs; for oracles and tests only."""
        tau = self.index.tau()
        frames = self.index.num_frames
        table = np.array([[self.permits(a, b) for b in range(frames)] for a in range(frames)], dtype=bool)
        return table[tau[:, None], tau[None, :]]

    def dense(self, dtype=np.float64) -> np.ndarray:
        """Additive mask: 0 for permitted pairs, -inf otherwise."""
        return np.where(self.allowed(), 0.0, -np.inf).astype(dtype)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(T={self.index.num_frames}, HW={self.index.tokens_per_frame})"


class ManyToManyRule(MaskRule):
    """Every frame draws from all other frames; same-frame pairs are masked."""

    name = "mtom"

    def permits(self, query_frame: int, key_frame: int) -> bool:
        return key_frame != query_frame


class ManyToOneRule(MaskRule):
    """Causal: a frame draws only from strictly earlier frames."""

    name = "mto1"

    def permits(self, query_frame: int, key_frame: int) -> bool:
        return key_frame < query_frame


class UnmaskedRule(MaskRule):
    name = "none"

    def permits(self, query_frame: int, key_frame: int) -> bool:
        return True


def mask_rule_mtom(index: FrameIndex) -> MaskRule:
    return ManyToManyRule(index)


def mask_rule_mto1(index: FrameIndex) -> MaskRule:
    return ManyToOneRule(index)


def make_rule(name: str, index: FrameIndex) -> MaskRule:
    rules = {"mtom": mask_rule_mtom, "mto1": mask_rule_mto1, "none": UnmaskedRule}
    if name not in rules:
        raise ConfigError(f"Unknown mask rule '{name}'. Choose one of {tuple(rules)}.")
    return rules[name](index)


def _frame_runs(frames: List[int]) -> List[Tuple[int, int]]:
    """Merges sorted frame ids into [start, stop) runs."""
    runs: List[Tuple[int, int]] = []
    for t in frames:
        if runs and runs[-1][1] == t:
            runs[-1] = (runs[-1][0], t + 1)
        else:
            runs.append((t, t + 1))
    return runs


# === Multihead attention ===

@dataclass(frozen=True)
class MultiheadWeights:
    """Per-head projections packed along columns: head h owns columns [h*d_head, (h+1)*d_head).

    Without wv/wo the heads attend over the raw values and are averaged,
    which keeps every output row a convex combination of value rows.
    """
    wq: Var
    wk: Var
    wv: Optional[Var]
    wo: Optional[Var]
    num_heads: int
    head_dim: int

    def __post_init__(self):
        width = self.num_heads * self.head_dim
        if self.wq.shape[1] != width or self.wk.shape[1] != width:
            raise DimensionError(f"query/key projections must have {width} columns", self.wq.shape, self.wk.shape)
        if (self.wv is None) != (self.wo is None):
            raise ConfigError("value and output projections must be given together")

    @classmethod
    def from_graph(cls, graph: Graph, prefix: str, num_heads: int, head_dim: int, values: bool = True) -> "MultiheadWeights":
        wv = graph.param(f"{prefix}.wv") if values else None
        wo = graph.param(f"{prefix}.wo") if values else None
        return cls(graph.param(f"{prefix}.wq"), graph.param(f"{prefix}.wk"), wv, wo, num_heads, head_dim)


def _attend(qh: Var, kh: Var, vh: Var, scale: float) -> Var:
    scores = F.scale(F.matmul(qh, F.transpose(kh, (1, 0))), scale)
    return F.matmul(F.softmax(scores, axis=-1), vh)


def _combine_heads(heads: List[Var], w: MultiheadWeights) -> Var:
    if w.wo is not None:
        return F.matmul(F.concat(heads, axis=1) if len(heads) > 1 else heads[0], w.wo)
    acc = heads[0]
    for h in heads[1:]:
        acc = F.add(acc, h)
    return F.scale(acc, 1.0 / len(heads))


def _value_cols(w: MultiheadWeights, h: int, width: int) -> slice:
    return slice(h * w.head_dim, (h + 1) * w.head_dim) if w.wv is not None else slice(0, width)


def mha(q: Var, k: Var, v: Var, w: MultiheadWeights, scale_by_head_dim: bool = False) -> Var:
    """Concat_h softmax(scale * (q Wq_h)(k Wk_h)^T)(v Wv_h), projected by Wo."""
    return masked_mha(q, k, v, w, None, scale_by_head_dim)


def masked_mha(q: Var, k: Var, v: Var, w: MultiheadWeights, rule: Optional[MaskRule],
               scale_by_head_dim: bool = False, degenerate: str = "raise") -> Var:
    """Multihead attention where query frame t only sees the key frames `rule` permits.

    Args:
        degenerate: "raise" fails on a query frame with no permitted keys;
            "skip" returns zero rows for it (the caller must replace them).

    Raises:
        DegenerateRowError: a query row has every key masked (MtoM with T=1, Mto1 frame 0).
    """
    if k.shape[0] != v.shape[0]:
        raise DimensionError("keys and values need the same token count", k.shape, v.shape)
    if degenerate not in DEGENERATE_POLICIES:
        raise ConfigError(f"degenerate policy must be one of {DEGENERATE_POLICIES}")
    scale = attention_scale(w.num_heads, w.head_dim, scale_by_head_dim)
    Q = F.matmul(q, w.wq)
    K = F.matmul(k, w.wk)
    V = F.matmul(v, w.wv) if w.wv is not None else v
    v_width = V.shape[1]

    heads: List[Var] = []
    for h in range(w.num_heads):
        cols = slice(h * w.head_dim, (h + 1) * w.head_dim)
        vcols = _value_cols(w, h, v_width)
        if rule is None:
            qh = F.slice_(Q, (slice(None), cols))
            kh = F.slice_(K, (slice(None), cols))
            vh = F.slice_(V, (slice(None), vcols)) if w.wv is not None else V
            heads.append(_attend(qh, kh, vh, scale))
            continue
        heads.append(_masked_head(Q, K, V, cols, vcols, rule, scale, degenerate))
    return _combine_heads(heads, w)


def _masked_head(Q: Var, K: Var, V: Var, cols: slice, vcols: slice, rule: MaskRule, scale: float,
                 degenerate: str) -> Var:
    index = rule.index
    if Q.shape[0] != index.num_tokens or K.shape[0] != index.num_tokens:
        raise DimensionError(f"masked attention expects {index.num_tokens} query and key tokens", Q.shape, K.shape)
    blocks: List[Var] = []
    for tq in range(index.num_frames):
        rows = index.frame_rows(tq)
        frames = rule.allowed_frames(tq)
        if not frames:
            if degenerate == "raise":
                raise DegenerateRowError(f"query frame {tq} has no permitted key frames under {rule!r}",
                                         rows=list(range(rows.start, rows.stop)))
            width = vcols.stop - vcols.start
            blocks.append(Q.graph.constant(np.zeros((index.tokens_per_frame, width), dtype=V.dtype)))
            continue
        key_parts, value_parts = [], []
        for start, stop in _frame_runs(frames):
            span = slice(start * index.tokens_per_frame, stop * index.tokens_per_frame)
            key_parts.append(F.slice_(K, (span, cols)))
            value_parts.append(F.slice_(V, (span, vcols)))
        kh = key_parts[0] if len(key_parts) == 1 else F.concat(key_parts, axis=0)
        vh = value_parts[0] if len(value_parts) == 1 else F.concat(value_parts, axis=0)
        blocks.append(_attend(F.slice_(Q, (rows, cols)), kh, vh, scale))
    return blocks[0] if len(blocks) == 1 else F.concat(blocks, axis=0)


# === Array-level oracles ===

def dense_masked_mha(q: Tensor, k: Tensor, v: Tensor, wq: Tensor, wk: Tensor, wv: Optional[Tensor],
                     wo: Optional[Tensor], num_heads: int, head_dim: int, rule: Optional[MaskRule],
                     scale_by_head_dim: bool = False) -> Tensor:
    """Reference evaluation with a fully materialized additive -inf mask."""
    scale = attention_scale(num_heads, head_dim, scale_by_head_dim)
    Q, K = ops.matmul(q, wq), ops.matmul(k, wk)
    V = ops.matmul(v, wv) if wv is not None else v
    mask = rule.dense(Q.dtype) if rule is not None else None
    heads = []
    for h in range(num_heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        vcols = cols if wv is not None else slice(None)
        scores = ops.scale(ops.matmul(Q[:, cols], ops.transpose(K[:, cols], (1, 0))), scale)
        if mask is not None:
            scores = scores + mask
        heads.append(ops.matmul(ops.softmax(scores, axis=-1), np.ascontiguousarray(V[:, vcols])))
    if wo is not None:
        return ops.matmul(np.concatenate(heads, axis=1), wo)
    acc = heads[0]
    for h in heads[1:]:
        acc = acc + h
    return ops.scale(acc, 1.0 / len(heads))


def attention_maps(q: Tensor, k: Tensor, wq: Tensor, wk: Tensor, num_heads: int, head_dim: int,
                   rule: MaskRule, scale_by_head_dim: bool = False) -> Tuple[Tensor, Tensor]:
    """Raw scores (N_h, N, N) and the block-wise masked attention weights (N_h, N, N).

    Weights are computed exactly as masked_mha computes them; masked pairs hold 0.
    """
    scale = attention_scale(num_heads, head_dim, scale_by_head_dim)
    Q, K = ops.matmul(q, wq), ops.matmul(k, wk)
    n = Q.shape[0]
    index = rule.index
    scores = np.empty((num_heads, n, n), dtype=Q.dtype)
    weights = np.zeros((num_heads, n, n), dtype=Q.dtype)
    for h in range(num_heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        scores[h] = ops.scale(ops.matmul(Q[:, cols], ops.transpose(K[:, cols], (1, 0))), scale)
        for tq in range(index.num_frames):
            rows = index.frame_rows(tq)
            frames = rule.allowed_frames(tq)
            if not frames:
                raise DegenerateRowError(f"query frame {tq} has no permitted key frames", rows=list(range(rows.start, rows.stop)))
            key_idx = np.concatenate([np.arange(index.frame_rows(t).start, index.frame_rows(t).stop) for t in frames])
            # weights[h, rows] is a view, so the fancy assignment lands in `weights`.
            weights[h, rows][:, key_idx] = ops.softmax(scores[h, rows][:, key_idx], axis=-1)
    return scores, weights


# === Positional and scale embeddings ===

def _frequency_ladder(width: int) -> np.ndarray:
    return 1.0 / np.power(10000.0, 2.0 * np.arange(width // 2) / width)


def _interleave(positions: np.ndarray, width: int) -> np.ndarray:
    """[sin(p f0), cos(p f0), sin(p f1), cos(p f1), ...] per position."""
    angles = positions[:, None] * _frequency_ladder(width)[None, :]
    out = np.empty((len(positions), width), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def sinusoidal_pe(t: int, h: int, w: int, d: int) -> Tensor:
    """(T*H*W, d) encoding: d splits into equal t, y, x blocks, each a sin/cos frequency ladder.

    Raises:
        ConfigError: if d is not divisible by 6 (three even-width blocks).
    """
    if d % 6:
        raise ConfigError(f"3-D sinusoidal encoding needs d divisible by 6, got {d}")
    block = d // 3
    tt, yy, xx = np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij")
    parts = [_interleave(axis.reshape(-1).astype(np.float64), block) for axis in (tt, yy, xx)]
    return np.concatenate(parts, axis=1)


def sinusoidal_1d(n: int, d: int) -> Tensor:
    if d % 2:
        raise ConfigError(f"1-D sinusoidal encoding needs an even d, got {d}")
    return _interleave(np.arange(n, dtype=np.float64), d)


def positional_encoding(graph: Graph, kind: str, scale: int, t: int, h: int, w: int, d: int, dtype) -> Var:
    """p_s for scale s, flattened to (T*H_s*W_s, d).

    Learnable encodings are stored at the configured resolution as
    (T, H_s, W_s, d) and bilinearly resized for other input sizes.
    """
    if kind == "sinusoidal3d":
        return graph.constant(sinusoidal_pe(t, h, w, d).astype(dtype))
    if kind != "learnable":
        raise ConfigError(f"Unknown positional encoding kind '{kind}'")
    p = graph.param(f"pe.s{scale}")
    if p.shape[0] != t or p.shape[3] != d:
        raise DimensionError(f"learnable encoding for scale {scale} does not match (T, d)", p.shape, (t, d))
    if p.shape[1:3] != (h, w):
        p = F.resize_bilinear(p, h, w)
    return F.reshape(p, (t * h * w, d))


def scale_embedding(graph: Graph, scale: int, num_tokens: int) -> Var:
    """p^sigma_s repeated over every token of scale s."""
    return F.repeat(graph.param(f"decoder.scale_embed.s{scale}"), num_tokens, axis=0)


def query_encoding(graph: Graph, kind: str, scale: int, num_queries: int, d: int, dtype) -> Var:
    if kind == "sinusoidal":
        return graph.constant(sinusoidal_1d(num_queries, d).astype(dtype))
    return graph.param(f"decoder.query_pos.s{scale}")
