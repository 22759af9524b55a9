"""Frozen configuration value objects for the model, its parts and training.

Defaults are the desk-scale values; `published_dims()` gives the published
sizes (d=384, N_h=8, 6+1 encoder blocks) for shape tracing only.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

from medvt.core.exceptions import ConfigError

NUM_SCALES = 4
PE_KINDS = ("sinusoidal3d", "learnable")
QUERY_MODES = ("per_frame", "per_clip")
QUERY_POS_KINDS = ("learnable", "sinusoidal")
RULES = ("mtom", "mto1")
COMBINE_MODES = ("logits", "probs")


@dataclass(frozen=True)
class BackboneConfig:
    """Toy strided convnet: strides 4/8/16/32 relative to the input."""
    widths: Tuple[int, int, int, int] = (16, 32, 64, 64)
    groups: int = 4
    in_channels: int = 3

    def validate(self) -> None:
        if len(self.widths) != NUM_SCALES:
            raise ConfigError(f"backbone needs {NUM_SCALES} stage widths, got {self.widths}")
        for w in self.widths:
            if w < 1 or w % self.groups:
                raise ConfigError(f"backbone width {w} not divisible into {self.groups} groups")


@dataclass(frozen=True)
class EncoderConfig:
    blocks_per_scale: Dict[int, int] = field(default_factory=lambda: {4: 2, 3: 1})
    encoded_scales: Tuple[int, ...] = (4, 3)
    pe_kind: str = "sinusoidal3d"
    ffn_mult: int = 4
    between_ffn: bool = True
    scale_by_head_dim: bool = False

    def validate(self) -> None:
        if not self.encoded_scales:
            raise ConfigError("encoded_scales must name at least one scale")
        expected = tuple(range(NUM_SCALES, NUM_SCALES - len(self.encoded_scales), -1))
        if tuple(sorted(self.encoded_scales, reverse=True)) != expected:
            raise ConfigError(f"encoded_scales must be contiguous from the coarsest scale, got {self.encoded_scales}")
        for s in self.encoded_scales:
            if self.blocks_per_scale.get(s, 0) < 1:
                raise ConfigError(f"encoded scale {s} needs at least one within-scale block")
        if self.pe_kind not in PE_KINDS:
            raise ConfigError(f"pe_kind must be one of {PE_KINDS}, got '{self.pe_kind}'")


@dataclass(frozen=True)
class DecoderConfig:
    decoder_scales: Tuple[int, ...] = (4, 3, 2)
    num_iterations: int = 3
    query_mode: str = "per_frame"
    query_pos_kind: str = "learnable"
    query_init_std: float = 0.02
    full_row: bool = False

    def validate(self) -> None:
        if self.num_iterations < 1:
            raise ConfigError("N_d must be >= 1")
        if not self.decoder_scales or list(self.decoder_scales) != sorted(self.decoder_scales, reverse=True):
            raise ConfigError(f"decoder_scales must be non-empty and ordered coarse to fine, got {self.decoder_scales}")
        if any(not 1 <= s <= NUM_SCALES for s in self.decoder_scales):
            raise ConfigError(f"decoder_scales must lie in 1..{NUM_SCALES}")
        if self.query_mode not in QUERY_MODES:
            raise ConfigError(f"query_mode must be one of {QUERY_MODES}")
        if self.query_pos_kind not in QUERY_POS_KINDS:
            raise ConfigError(f"query_pos_kind must be one of {QUERY_POS_KINDS}")


@dataclass(frozen=True)
class LabelPropConfig:
    enabled: bool = True
    embed_dim: int = 16
    rule: str = "mtom"
    combine: str = "logits"

    def validate(self) -> None:
        if self.rule not in RULES:
            raise ConfigError(f"rule must be one of {RULES}, got '{self.rule}'")
        if self.combine not in COMBINE_MODES:
            raise ConfigError(f"combine must be one of {COMBINE_MODES}, got '{self.combine}'")
        if self.embed_dim < 1:
            raise ConfigError("label embedding dim D must be >= 1")


@dataclass(frozen=True)
class LossConfig:
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    dice_eps: float = 1.0
    lambda_focal: float = 1.0
    lambda_dice: float = 1.0

    def validate(self) -> None:
        values = (self.focal_alpha, self.focal_gamma, self.dice_eps, self.lambda_focal, self.lambda_dice)
        if any(v < 0 for v in values):
            raise ConfigError(f"loss parameters must be nonnegative, got {values}")
        if self.lambda_focal == 0 and self.lambda_dice == 0:
            raise ConfigError("lambda_focal and lambda_dice cannot both be zero")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 48
    num_heads: int = 4
    num_frames: int = 6
    num_classes: int = 2
    image_size: Tuple[int, int] = (64, 64)
    head_groups: int = 4
    norm_eps: float = 1e-5
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    labelprop: LabelPropConfig = field(default_factory=LabelPropConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    @property
    def head_dim(self) -> int:
        return self.d // self.num_heads

    @property
    def num_queries(self) -> int:
        return self.num_frames if self.decoder.query_mode == "per_frame" else 1

    def validate(self) -> "ModelConfig":
        if self.num_heads < 1 or self.d % self.num_heads:
            raise ConfigError(f"d={self.d} is not divisible by N_h={self.num_heads}")
        if self.encoder.pe_kind == "sinusoidal3d" and self.d % 6:
            raise ConfigError(f"sinusoidal 3-D encodings need d divisible by 6, got d={self.d}")
        if self.decoder.query_pos_kind == "sinusoidal" and self.d % 2:
            raise ConfigError(f"sinusoidal query encodings need an even d, got d={self.d}")
        if self.num_classes < 2:
            raise ConfigError("C_cls must be >= 2")
        if self.num_frames < 1:
            raise ConfigError("T must be >= 1")
        if self.d % self.head_groups:
            raise ConfigError(f"task head width d={self.d} not divisible into {self.head_groups} groups")
        h, w = self.image_size
        if h % 32 or w % 32 or h <= 0 or w <= 0:
            raise ConfigError(f"image_size must be positive multiples of 32, got {self.image_size}")
        for part in (self.backbone, self.encoder, self.decoder, self.labelprop, self.loss):
            part.validate()
        return self


def desk_config(**overrides) -> ModelConfig:
    return replace(ModelConfig(), **overrides).validate()


def micro_config(**overrides) -> ModelConfig:
    """Smallest model honouring every contract; used for end-to-end gradient checks."""
    base = ModelConfig(
        d=8, num_heads=2, num_frames=2, image_size=(32, 32),
        backbone=BackboneConfig(widths=(4, 8, 8, 8)),
        encoder=EncoderConfig(blocks_per_scale={4: 1, 3: 1}, pe_kind="learnable"),
        decoder=DecoderConfig(num_iterations=1),
        labelprop=LabelPropConfig(embed_dim=4),
    )
    return replace(base, **overrides).validate()


def published_dims(**overrides) -> ModelConfig:
    """Published sizes: d=384, N_h=8, six and one encoder blocks, T=6, N_q=6."""
    base = ModelConfig(
        d=384, num_heads=8, num_frames=6,
        backbone=BackboneConfig(widths=(256, 512, 1024, 2048)),
        encoder=EncoderConfig(blocks_per_scale={4: 6, 3: 1}),
    )
    return replace(base, **overrides).validate()


@dataclass(frozen=True)
class StageSpec:
    """One training stage.

    train_prefixes: parameters trained in this stage (empty = everything not excluded).
    exclude_prefixes: parameters frozen in this stage.
    loss_on: "initial" (head logits Y') or "final" (propagated logits).
    """
    name: str
    iterations: int
    train_prefixes: Tuple[str, ...] = ()
    exclude_prefixes: Tuple[str, ...] = ()
    loss_on: str = "initial"
    use_labelprop: bool = False
    encoded_scales: Optional[Tuple[int, ...]] = None

    def is_trainable(self, name: str) -> bool:
        if self.train_prefixes and not name.startswith(self.train_prefixes):
            return False
        return not name.startswith(self.exclude_prefixes) if self.exclude_prefixes else True


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    stage2_iterations: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_power: float = 0.9
    backbone_lr_scale: float = 0.01
    hflip_prob: float = 0.5
    checkpoint_every: int = 0
    preset: str = "two_stage"

    def validate(self) -> "TrainConfig":
        if self.iterations < 0 or self.stage2_iterations < 0:
            raise ConfigError("iteration counts must be nonnegative")
        if self.lr < 0:
            raise ConfigError("lr must be nonnegative")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError("hflip_prob must lie in [0, 1]")
        if self.preset not in ("two_stage", "three_stage"):
            raise ConfigError(f"unknown training preset '{self.preset}'")
        return self
