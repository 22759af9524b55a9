"""End-to-end model assembly.

clip -> toy backbone -> multiscale encoder (coarse scales) -> pixel decoder
-> query decoder -> object attention -> F^D -> task head Y' -> optional
label propagation.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from medvt.core.autodiff import functional as F
from medvt.core.autodiff.graph import Graph, Var
from medvt.core.autodiff.params import ParamStore
from medvt.core.exceptions import ConfigError, DimensionError
from medvt.core.model import layers
from medvt.core.model.backbone import init_backbone, toy_backbone
from medvt.core.model.decoder import (
    decoder_output,
    init_decoder,
    learn_queries,
    object_attention,
    pixel_decode,
)
from medvt.core.model.encoder import encode, init_encoder, init_positional_encodings
from medvt.core.model.head import init_head, task_head
from medvt.core.model.labelprop import init_labelprop, label_propagation
from medvt.core.model.layers import ParamInit
from medvt.core.model.losses import combined_loss
from medvt.core.tensor import ops
from medvt.domain.models.common import LabelMap, Tensor
from medvt.domain.models.configs import NUM_SCALES, ModelConfig

logger = logging.getLogger(__name__)


@dataclass
class ForwardOutput:
    initial_logits: Var            # Y', (T, H_1, W_1, C_cls)
    final_logits: Optional[Var]    # Y_hat after label propagation
    attention: Var                 # F^A, (T, H_1, W_1, N_h)
    decoder_features: Var          # F^D, (T, H_1, W_1, N_h + d)
    query_trace: List[str]

    def logits(self, on: str = "final") -> Var:
        if on == "final" and self.final_logits is not None:
            return self.final_logits
        if on not in ("initial", "final"):
            raise ConfigError(f"loss target must be 'initial' or 'final', got '{on}'")
        if on == "final":
            raise ConfigError("final logits requested but label propagation did not run")
        return self.initial_logits


class MedVT:
    """Stateless model definition; parameters live in a ParamStore."""

    def __init__(self, config: ModelConfig):
        self.config = config.validate()

    def pixel_decoder_channels(self) -> Dict[int, int]:
        cfg = self.config
        return {s: cfg.d if s in cfg.encoder.encoded_scales else cfg.backbone.widths[s - 1]
                for s in range(1, NUM_SCALES + 1)}

    def initialize(self, seed: int, dtype=np.float64) -> ParamStore:
        """Glorot-normal weights, zero biases, unit norm gains; deterministic in seed."""
        cfg = self.config
        store = ParamStore()
        init = ParamInit(store, seed, dtype)
        init_backbone(init, cfg.backbone)
        init_encoder(init, cfg, {s: cfg.backbone.widths[s - 1] for s in cfg.encoder.encoded_scales})
        pe_scales = set(cfg.encoder.encoded_scales) | set(cfg.decoder.decoder_scales)
        init_positional_encodings(init, cfg, pe_scales, cfg.image_size)
        init_decoder(init, cfg, self.pixel_decoder_channels())
        init_head(init, cfg)
        if cfg.labelprop.enabled:
            init_labelprop(init, cfg)
        logger.info(f"Initialized {len(store)} parameter tensors ({store.num_values()} values) with seed {seed}")
        return store

    def forward(self, graph: Graph, clip: Tensor, encoded_scales: Optional[Tuple[int, ...]] = None,
                use_labelprop: Optional[bool] = None) -> ForwardOutput:
        """Runs the model on one (T, H, W, 3) clip.

        encoded_scales narrows the encoder to a subset of the configured
        scales; the others get the down-projection only.
        """
        cfg = self.config
        if clip.shape[0] != cfg.num_frames:
            raise DimensionError(f"model expects T={cfg.num_frames} frames", clip.shape)
        use_labelprop = cfg.labelprop.enabled if use_labelprop is None else use_labelprop
        if use_labelprop and not cfg.labelprop.enabled:
            raise ConfigError("label propagation requested but the model was built without it")
        encoder_cfg = cfg.encoder
        if encoded_scales is not None:
            if not set(encoded_scales) <= set(cfg.encoder.encoded_scales):
                raise ConfigError(f"encoded_scales {encoded_scales} exceed the configured {cfg.encoder.encoded_scales}")
            encoder_cfg = replace(cfg.encoder, encoded_scales=tuple(encoded_scales))

        x = graph.constant(clip)
        pyramid = toy_backbone(graph, x, cfg)
        encoded = encode(graph, {s: pyramid[s] for s in cfg.encoder.encoded_scales}, cfg, encoder_cfg)
        pixel_in = {}
        for s, f_s in pyramid.items():
            if s in encoded:
                t, h, w, _ = f_s.shape
                pixel_in[s] = layers.unflatten_tokens(encoded[s], t, h, w)
            else:
                pixel_in[s] = f_s
        pixel = pixel_decode(graph, pixel_in)
        queries = learn_queries(graph, pixel, cfg)
        attention = object_attention(graph, queries, pixel[1], cfg)
        features = decoder_output(attention, pixel[1])
        initial = task_head(graph, features, cfg)
        final = label_propagation(graph, features, initial, cfg) if use_labelprop else None
        return ForwardOutput(initial, final, attention, features, queries.trace)

    def loss(self, output: ForwardOutput, targets: LabelMap, on: str = "initial") -> Var:
        """Combined focal + Dice loss of the chosen logits, upsampled to the target size."""
        logits = output.logits(on)
        t, h, w = np.asarray(targets).shape
        return combined_loss(F.bilinear_upsample(logits, h, w), targets, self.config.loss)

    def predict_logits(self, params: ParamStore, clip: Tensor, use_labelprop: Optional[bool] = None,
                       with_attention: bool = False):
        """Full-resolution logits (T, H, W, C_cls) without recording gradients."""
        frozen = params.with_trainable(lambda name: False)
        graph = Graph(frozen)
        out = self.forward(graph, clip, use_labelprop=use_labelprop)
        logits = out.final_logits if out.final_logits is not None else out.initial_logits
        full = ops.resize_bilinear(logits.value, clip.shape[1], clip.shape[2])
        if with_attention:
            return full, out.attention.value
        return full
