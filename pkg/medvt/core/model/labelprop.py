"""Many-to-many temporal label propagation.

The initial head logits Y' are embedded by a small CNN (E_L), propagated with
frame-masked attention whose queries and keys are the decoder features F^D
and whose values are the label embeddings, decoded back to class logits by a
three-layer CNN (D_L), and averaged with Y'.

Parameter names:
    labelprop.encoder.conv1/conv2     3x3, C_cls -> D -> D
    labelprop.attn.wq/wk              (d + N_h, d)
    labelprop.decoder.conv1/conv2     3x3, D -> D, relu
    labelprop.decoder.conv3           1x1, D -> C_cls
"""

import logging
from typing import Optional

import numpy as np

from medvt.core.autodiff import functional as F
from medvt.core.autodiff.graph import Graph, Var
from medvt.core.exceptions import ConfigError, DegenerateRowError, DimensionError
from medvt.core.model import layers
from medvt.core.model.attention import FrameIndex, MaskRule, MultiheadWeights, attention_maps, make_rule, masked_mha
from medvt.core.model.layers import ParamInit
from medvt.core.tensor import ops
from medvt.domain.models.common import Tensor
from medvt.domain.models.configs import ModelConfig
from medvt.domain.models.reports import SpectralReport

logger = logging.getLogger(__name__)

SPECTRAL_TOLERANCE = 1e-10


def init_labelprop(init: ParamInit, cfg: ModelConfig) -> None:
    dim, classes = cfg.labelprop.embed_dim, cfg.num_classes
    width = cfg.d + cfg.num_heads
    init.conv2d("labelprop.encoder.conv1", 3, 3, classes, dim)
    init.conv2d("labelprop.encoder.conv2", 3, 3, dim, dim)
    init.multihead("labelprop.attn", width, width, cfg.num_heads, cfg.head_dim, None, values=False)
    init.conv2d("labelprop.decoder.conv1", 3, 3, dim, dim)
    init.conv2d("labelprop.decoder.conv2", 3, 3, dim, dim)
    init.conv2d("labelprop.decoder.conv3", 1, 1, dim, classes)


def encode_labels(graph: Graph, initial_logits: Var) -> Var:
    """E_L: conv3x3 -> relu -> conv3x3, flattened to (T*H_1*W_1, D)."""
    x = F.relu(layers.conv2d(graph, "labelprop.encoder.conv1", initial_logits))
    return layers.flatten_tokens(layers.conv2d(graph, "labelprop.encoder.conv2", x))


def propagator_weights(graph: Graph, cfg: ModelConfig) -> MultiheadWeights:
    return MultiheadWeights.from_graph(graph, "labelprop.attn", cfg.num_heads, cfg.head_dim, values=False)


def propagate(graph: Graph, features: Var, labels: Var, rule: MaskRule, cfg: ModelConfig) -> Var:
    """Masked attention with queries = keys = flattened F^D and values = label embeddings.

    Every output row is a convex combination of the label rows its frame may
    draw from. Under a causal rule, frame 0 has no sources and comes back as
    zeros; the caller replaces it.

    Raises:
        DegenerateRowError: MtoM with a single frame.
    """
    if features.shape[0] != labels.shape[0]:
        raise DimensionError("features and label embeddings need the same token count", features.shape, labels.shape)
    degenerate = "skip" if rule.name == "mto1" else "raise"
    return masked_mha(features, features, labels, propagator_weights(graph, cfg), rule,
                      cfg.encoder.scale_by_head_dim, degenerate=degenerate)


def decode_labels(graph: Graph, propagated: Var, t: int, h: int, w: int) -> Var:
    """D_L: conv3x3-relu, conv3x3-relu, conv1x1 to class logits."""
    x = layers.unflatten_tokens(propagated, t, h, w)
    x = F.relu(layers.conv2d(graph, "labelprop.decoder.conv1", x))
    x = F.relu(layers.conv2d(graph, "labelprop.decoder.conv2", x))
    return layers.conv2d(graph, "labelprop.decoder.conv3", x)


def combine(decoded: Var, initial_logits: Var, mode: str = "logits") -> Var:
    """Y_hat = (D_L(Y~) + Y') / 2 in logit space, or the log of averaged class probabilities."""
    if decoded.shape != initial_logits.shape:
        raise DimensionError("decoded labels and initial logits differ", decoded.shape, initial_logits.shape)
    if mode == "logits":
        return F.scale(F.add(decoded, initial_logits), 0.5)
    if mode == "probs":
        mixed = F.scale(F.add(F.softmax(decoded, axis=-1), F.softmax(initial_logits, axis=-1)), 0.5)
        return F.log(mixed)
    raise ConfigError(f"Unknown combination mode '{mode}'")


def decode_and_combine(graph: Graph, propagated: Var, initial_logits: Var, rule: Optional[MaskRule] = None,
                       mode: str = "logits") -> Var:
    t, h, w, _ = initial_logits.shape
    combined = combine(decode_labels(graph, propagated, t, h, w), initial_logits, mode)
    if rule is not None and rule.name == "mto1":
        # Frame 0 has no earlier frame to draw from: it keeps Y'.
        first = F.slice_(initial_logits, (slice(0, 1),))
        if t == 1:
            return first
        return F.concat([first, F.slice_(combined, (slice(1, t),))], axis=0)
    return combined


def label_propagation(graph: Graph, decoder_features: Var, initial_logits: Var, cfg: ModelConfig) -> Var:
    """Full propagator: E_L, masked attention, D_L and the final combination."""
    t, h, w, _ = initial_logits.shape
    if decoder_features.shape[:3] != (t, h, w):
        raise DimensionError("decoder features and initial logits differ spatially", decoder_features.shape,
                             initial_logits.shape)
    rule = make_rule(cfg.labelprop.rule, FrameIndex(t, h * w))
    embedded = encode_labels(graph, initial_logits)
    propagated = propagate(graph, layers.flatten_tokens(decoder_features), embedded, rule, cfg)
    return decode_and_combine(graph, propagated, initial_logits, rule, cfg.labelprop.combine)


def spectral_oracle(scores: Tensor, rule: MaskRule, attention: Optional[Tensor] = None,
                    tolerance: float = SPECTRAL_TOLERANCE) -> SpectralReport:
    """Checks that masked attention is the random walk D^-1 W of W_ij = exp(score_ij) on permitted pairs.

    `attention` defaults to the block-wise masked softmax of `scores`.

    Raises:
        DegenerateRowError: if some row has zero degree.
    """
    scores = np.asarray(scores, dtype=np.float64)
    allowed = rule.allowed()
    if scores.shape != allowed.shape:
        raise DimensionError("scores do not match the rule's token count", scores.shape, allowed.shape)
    affinity = np.where(allowed, np.exp(np.where(allowed, scores, 0.0)), 0.0)
    degree = affinity.sum(axis=1)
    empty = np.flatnonzero(degree == 0)
    if len(empty):
        raise DegenerateRowError(f"{len(empty)} rows have zero degree", rows=empty.tolist())
    walk = affinity / degree[:, None]
    if attention is None:
        attention = masked_softmax(scores, rule)
    laplacian = np.eye(len(walk)) - walk
    report = SpectralReport(
        rule=rule.name,
        max_abs_error=float(np.max(np.abs(walk - attention))),
        max_laplacian_row_sum=float(np.max(np.abs(laplacian.sum(axis=1)))),
        tolerance=tolerance,
    )
    logger.debug(f"Spectral oracle ({rule.name}): max |D^-1W - A| = {report.max_abs_error:.2e}")
    return report


def masked_softmax(scores: Tensor, rule: MaskRule) -> Tensor:
    """Block-wise masked row softmax of a dense (N, N) score matrix; masked pairs are 0."""
    index = rule.index
    out = np.zeros_like(scores)
    for tq in range(index.num_frames):
        rows = index.frame_rows(tq)
        frames = rule.allowed_frames(tq)
        if not frames:
            raise DegenerateRowError(f"query frame {tq} has no permitted key frames",
                                     rows=list(range(rows.start, rows.stop)))
        keys = np.concatenate([np.arange(index.frame_rows(t).start, index.frame_rows(t).stop) for t in frames])
        out[rows][:, keys] = ops.softmax(scores[rows][:, keys], axis=-1)
    return out


def propagator_attention(features: Tensor, wq: Tensor, wk: Tensor, rule: MaskRule, cfg: ModelConfig):
    """(scores, weights) per head of the propagator, computed the way propagate computes them."""
    return attention_maps(features, features, wq, wk, cfg.num_heads, cfg.head_dim, rule,
                          cfg.encoder.scale_by_head_dim)
