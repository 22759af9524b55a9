"""Provides functions for loading and accessing configuration settings.

Sources, highest priority first:
1. Test overrides (set_config_for_testing)
2. Environment variables named MEDVT_<KEY>
3. The configuration file: flat UTF-8 key=value, or YAML (nested
   sections are flattened to dotted keys)
4. Defaults of the Settings dataclass

Command-line flags are applied on top by build_settings(overrides).
"""

import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import yaml
from dotenv import dotenv_values, find_dotenv, load_dotenv

from medvt.core.exceptions import ConfigError
from medvt.domain.models.configs import (
    BackboneConfig,
    DecoderConfig,
    EncoderConfig,
    LabelPropConfig,
    LossConfig,
    ModelConfig,
    TrainConfig,
    desk_config,
)

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "MEDVT_CONFIG"
ENV_PREFIX = "MEDVT_"
YAML_SUFFIXES = (".yaml", ".yml")
DTYPES = {"float32": np.float32, "float64": np.float64}

# Names used in the model description, mapped onto Settings fields.
ALIASES = {
    "N_h": "num_heads",
    "N_d": "num_iterations",
    "T": "num_frames",
    "D": "embed_dim",
    "C_cls": "num_classes",
    "H": "height",
    "W": "width",
}

# --- Global Configuration Store ---
_config: Dict[str, Any] = {}
_test_config: Dict[str, Any] = {}
_source: Optional[str] = None


@dataclass(frozen=True)
class Settings:
    """Every tunable of a run, named as in the configuration file."""
    # model
    d: int = 48
    num_heads: int = 4
    num_frames: int = 6
    num_classes: int = 2
    height: int = 64
    width: int = 64
    backbone_widths: Tuple[int, ...] = (16, 32, 64, 64)
    encoded_scales: Tuple[int, ...] = (4, 3)
    encoder_blocks: Tuple[int, ...] = (2, 1)
    pe_kind: str = "sinusoidal3d"
    between_ffn: bool = True
    scale_by_head_dim: bool = False
    decoder_scales: Tuple[int, ...] = (4, 3, 2)
    num_iterations: int = 3
    N_q: int = 0  # 0 follows query_mode; 1 or T selects it
    query_mode: str = "per_frame"
    query_pos_kind: str = "learnable"
    full_row: bool = False
    labelprop: bool = True
    embed_dim: int = 16
    rule: str = "mtom"
    combine: str = "logits"
    # loss
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    dice_eps: float = 1.0
    lambda_focal: float = 1.0
    lambda_dice: float = 1.0
    # training
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
    # data, inference, evaluation
    seed: int = 0
    texture: str = "camouflage"
    window_stride: int = 1
    boundary_tolerance: int = 1
    # runtime
    summation: str = "ordered"
    dtype: str = "float64"
    threads: int = 0  # 0 = logical cores
    log_level: str = "INFO"
    log_file: str = ""

    def model_config(self) -> ModelConfig:
        if len(self.encoder_blocks) < len(self.encoded_scales):
            raise ConfigError(f"encoder_blocks {self.encoder_blocks} must give a block count for every "
                              f"encoded scale {self.encoded_scales}")
        query_mode = self.query_mode
        if self.N_q:
            if self.N_q == 1:
                query_mode = "per_clip"
            elif self.N_q == self.num_frames:
                query_mode = "per_frame"
            else:
                raise ConfigError(f"N_q must be 1 or T={self.num_frames}, got {self.N_q}")
        return desk_config(
            d=self.d, num_heads=self.num_heads, num_frames=self.num_frames, num_classes=self.num_classes,
            image_size=(self.height, self.width),
            backbone=BackboneConfig(widths=tuple(self.backbone_widths)),
            encoder=EncoderConfig(
                blocks_per_scale=dict(zip(self.encoded_scales, self.encoder_blocks)),
                encoded_scales=tuple(self.encoded_scales), pe_kind=self.pe_kind,
                between_ffn=self.between_ffn, scale_by_head_dim=self.scale_by_head_dim,
            ),
            decoder=DecoderConfig(decoder_scales=tuple(self.decoder_scales), num_iterations=self.num_iterations,
                                  query_mode=query_mode, query_pos_kind=self.query_pos_kind,
                                  full_row=self.full_row),
            labelprop=LabelPropConfig(enabled=self.labelprop, embed_dim=self.embed_dim, rule=self.rule,
                                      combine=self.combine),
            loss=LossConfig(focal_alpha=self.focal_alpha, focal_gamma=self.focal_gamma, dice_eps=self.dice_eps,
                            lambda_focal=self.lambda_focal, lambda_dice=self.lambda_dice),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations, stage2_iterations=self.stage2_iterations, lr=self.lr,
            weight_decay=self.weight_decay, beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps,
            lr_power=self.lr_power, backbone_lr_scale=self.backbone_lr_scale, hflip_prob=self.hflip_prob,
            checkpoint_every=self.checkpoint_every, preset=self.preset,
        ).validate()

    @property
    def numpy_dtype(self):
        return DTYPES[self.dtype]

    def validate(self) -> "Settings":
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {tuple(DTYPES)}, got '{self.dtype}'")
        if self.summation not in ("ordered", "blas"):
            raise ConfigError(f"summation must be 'ordered' or 'blas', got '{self.summation}'")
        if self.threads < 0 or self.window_stride < 1 or self.boundary_tolerance < 0:
            raise ConfigError("threads, window_stride and boundary_tolerance must be nonnegative (stride >= 1)")
        if self.texture not in ("contrast", "camouflage"):
            raise ConfigError(f"texture must be 'contrast' or 'camouflage', got '{self.texture}'")
        if getattr(logging, self.log_level.upper(), None) is None:
            raise ConfigError(f"unknown log level '{self.log_level}'")
        self.model_config()
        self.train_config()
        return self


FIELDS = {f.name: f for f in fields(Settings)}
DEFAULTS = {name: f.default for name, f in FIELDS.items()}


def canonical_key(key: str) -> str:
    """Maps 'train.lr', 'N_h' or 'LR' style keys onto a Settings field name."""
    name = key.strip().split(".")[-1]
    if name in ALIASES:
        return ALIASES[name]
    if name in FIELDS:
        return name
    lowered = name.lower()
    return lowered if lowered in FIELDS else name


def _flatten(data: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, Mapping):
            flat.update(_flatten(value, dotted))
        else:
            flat[dotted] = value
    return flat


def _read_file(path: Path) -> Dict[str, Any]:
    if path.suffix.lower() in YAML_SUFFIXES:
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise ConfigError(f"Malformed YAML configuration {path}: {e}") from e
        if loaded is None:
            return {}
        if not isinstance(loaded, Mapping):
            raise ConfigError(f"YAML configuration {path} must hold a mapping")
        return _flatten(loaded)
    values = dotenv_values(path, encoding="utf-8")
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"Malformed configuration {path}: keys without '=value': {missing}")
    return dict(values)


def load_configuration(config_file: Optional[Union[str, Path]] = None, env_file: Optional[Union[str, Path]] = None) -> None:
    """Loads the configuration file and any .env file.

    Args:
        config_file: Path to the file; defaults to $MEDVT_CONFIG. An explicit
            path that does not exist is an error.
        env_file: .env to load (searched upwards from the working directory if None).
            Variables already set in the environment win.

    Raises:
        ConfigError: missing explicit file or malformed content.
    """
    global _config, _source
    dotenv_path = str(env_file) if env_file else find_dotenv(usecwd=True)
    if dotenv_path and load_dotenv(dotenv_path=dotenv_path, override=False):
        logger.info(f"Loaded environment variables from: {dotenv_path}")

    _config = {}
    _source = None
    chosen = config_file or os.environ.get(CONFIG_ENV_VAR)
    if not chosen:
        logger.debug("No configuration file given; using defaults and environment.")
        return
    path = Path(chosen)
    if not path.is_file():
        raise ConfigError(f"Configuration file not found: {path}")
    for key, value in _read_file(path).items():
        _config[canonical_key(key)] = value
    _source = str(path)
    logger.info(f"Loaded {len(_config)} configuration keys from {path}")


def _from_string(value: str) -> Any:
    lowered = value.strip().lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def get_config(key: str, default: Any = None) -> Any:
    """Get a configuration value by key (test override > MEDVT_<KEY> env > file > default)."""
    key = canonical_key(key)
    if key in _test_config:
        return _test_config[key]
    env_key = f"{ENV_PREFIX}{key.upper()}"
    if env_key in os.environ:
        return _from_string(os.environ[env_key])
    if key in _config:
        return _config[key]
    logger.debug(f"Config key '{key}' not set. Returning default: {default}")
    return default


def set_config(key: str, value: Any) -> None:
    key = canonical_key(key)
    logger.debug(f"Setting config: {key} = {value!r}")
    _config[key] = value


def set_config_for_testing(config_dict: Mapping[str, Any]) -> None:
    """Overrides that win over every other source until clear_test_config()."""
    _test_config.update({canonical_key(k): v for k, v in config_dict.items()})
    logger.debug(f"Set testing configuration: {dict(config_dict)}")


def clear_test_config() -> None:
    _test_config.clear()
    logger.debug("Cleared testing configuration")


def reset_configuration() -> None:
    global _source
    _config.clear()
    _test_config.clear()
    _source = None


def config_source() -> Optional[str]:
    return _source


# --- Typed settings ---

def _coerce(key: str, value: Any, default: Any) -> Any:
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            parsed = _from_string(str(value))
            if isinstance(parsed, bool):
                return parsed
            if parsed in (0, 1) and not isinstance(parsed, float):
                return bool(parsed)
            raise ValueError(value)
        if isinstance(default, int):
            if isinstance(value, bool):
                raise ValueError(value)
            if isinstance(value, float):
                if not value.is_integer():
                    raise ValueError(value)
                return int(value)
            return int(str(value).strip())
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if isinstance(default, tuple):
            items = value if isinstance(value, (list, tuple)) else [p for p in str(value).split(",") if p.strip()]
            element = type(default[0]) if default else int
            return tuple(_coerce(key, item, element(0)) for item in items)
        return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Malformed value for '{key}': {value!r}") from e


def build_settings(overrides: Optional[Mapping[str, Any]] = None) -> Settings:
    """Settings from every source, with `overrides` (command-line flags, None = unset) on top.

    Raises:
        ConfigError: unknown keys, un-coercible values or invalid combinations.
    """
    unknown = sorted(k for k in list(_config) + list(_test_config) if k not in FIELDS)
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {unknown}")
    given = {canonical_key(k): v for k, v in (overrides or {}).items() if v is not None}
    bad = sorted(k for k in given if k not in FIELDS)
    if bad:
        raise ConfigError(f"Unknown settings: {bad}")
    values = {}
    for name, default in DEFAULTS.items():
        raw = given[name] if name in given else get_config(name, default)
        values[name] = _coerce(name, raw, default)
    settings = Settings(**values).validate()
    logger.debug(f"Settings resolved (config file: {_source or 'none'})")
    return settings
