"""Staged training of MedVT on labelled clips.

two_stage (default):
    stage1: everything except the label propagator, loss on Y'
    stage2: the label propagator alone, loss on the propagated logits
three_stage:
    stage1_single_scale: coarsest-scale encoder only, no propagation
    stage2_between_scale: the added within/between-scale attention only
    stage3_labelprop: the label propagator alone
A pseudo-label hook runs between stages; it is the identity here.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from medvt.core.autodiff.graph import Graph
from medvt.core.autodiff.optim import AdamWState, adamw_step, polynomial_lr
from medvt.core.autodiff.params import ParamStore
from medvt.core.exceptions import ConfigError, DimensionError, TrainingDivergedError
from medvt.core.model.medvt import MedVT
from medvt.core.tensor.rng import Rng, derive_seed, make_rng
from medvt.domain.events.training_events import (
    CheckpointSaved,
    DomainEvent,
    IterationCompleted,
    StageCompleted,
    StageStarted,
    TrainingDiverged,
)
from medvt.domain.interfaces.checkpoint_store import CheckpointStore
from medvt.domain.models.common import LabelMap, LossRecord, Tensor
from medvt.domain.models.configs import ModelConfig, StageSpec, TrainConfig

logger = logging.getLogger(__name__)

LABELPROP_PREFIX = "labelprop."
BACKBONE_PREFIX = "backbone."
FINAL_CHECKPOINT = "final"
LAST_GOOD_CHECKPOINT = "last_good"

TrainingClip = Tuple[Tensor, LabelMap]
EventListener = Callable[[DomainEvent], None]


def build_stages(model_cfg: ModelConfig, train_cfg: TrainConfig) -> List[StageSpec]:
    """Stage list for the configured preset; propagation stages drop out when the model has none."""
    lp = model_cfg.labelprop.enabled
    if train_cfg.preset == "two_stage":
        stages = [StageSpec("stage1", train_cfg.iterations, exclude_prefixes=(LABELPROP_PREFIX,), loss_on="initial")]
        if lp:
            stages.append(StageSpec("stage2", train_cfg.stage2_iterations, train_prefixes=(LABELPROP_PREFIX,),
                                    loss_on="final", use_labelprop=True))
        return stages
    if train_cfg.preset == "three_stage":
        coarsest = max(model_cfg.encoder.encoded_scales)
        added = tuple(f"encoder.within.s{s}." for s in model_cfg.encoder.encoded_scales if s != coarsest)
        stages = [
            StageSpec("stage1_single_scale", train_cfg.iterations, exclude_prefixes=(LABELPROP_PREFIX,),
                      loss_on="initial", encoded_scales=(coarsest,)),
        ]
        if added:
            stages.append(StageSpec("stage2_between_scale", train_cfg.iterations,
                                    train_prefixes=added + ("encoder.between.",), loss_on="initial"))
        if lp:
            stages.append(StageSpec("stage3_labelprop", train_cfg.stage2_iterations,
                                    train_prefixes=(LABELPROP_PREFIX,), loss_on="final", use_labelprop=True))
        return stages
    raise ConfigError(f"unknown training preset '{train_cfg.preset}'")


class PseudoLabelHook:
    """Relabels training clips between stages. The identity: synthetic clips are fully annotated."""

    def __call__(self, stage: StageSpec, clips: Sequence[TrainingClip]) -> List[TrainingClip]:
        return list(clips)


def sample_window(rng: Rng, clips: Sequence[TrainingClip], num_frames: int, hflip_prob: float) -> TrainingClip:
    """Random clip, random T-frame window, horizontal flip with probability hflip_prob."""
    frames, masks = clips[int(rng.integers(len(clips)))]
    if frames.shape[0] < num_frames:
        raise DimensionError(f"training clips need at least T={num_frames} frames", frames.shape)
    start = int(rng.integers(0, frames.shape[0] - num_frames + 1))
    frames = frames[start:start + num_frames]
    masks = masks[start:start + num_frames]
    if rng.random() < hflip_prob:
        frames = frames[:, :, ::-1]
        masks = masks[:, :, ::-1]
    return np.ascontiguousarray(frames), np.ascontiguousarray(masks)


@dataclass
class TrainResult:
    params: ParamStore
    losses: List[LossRecord] = field(default_factory=list)
    checkpoint: Optional[str] = None
    stages: List[str] = field(default_factory=list)

    def stage_losses(self, stage: str) -> List[float]:
        return [r["loss"] for r in self.losses if r["stage"] == stage]


class TrainService:
    """Runs the stages, emitting domain events to the registered listeners."""

    def __init__(self, checkpoints: CheckpointStore, listeners: Optional[List[EventListener]] = None,
                 pseudo_labels: Optional[PseudoLabelHook] = None):
        self.checkpoints = checkpoints
        self.listeners = list(listeners or [])
        self.pseudo_labels = pseudo_labels or PseudoLabelHook()

    def subscribe(self, listener: EventListener) -> None:
        self.listeners.append(listener)

    def _emit(self, event: DomainEvent) -> None:
        for listener in self.listeners:
            listener(event)

    def train(self, model: MedVT, clips: Sequence[TrainingClip], train_cfg: TrainConfig, seed: int,
              dtype=np.float64, out_dir: Optional[str] = None, params: Optional[ParamStore] = None) -> TrainResult:
        """Trains every stage of the preset.

        Args:
            params: starting point; a fresh seeded initialization if None.
            out_dir: where per-stage and final checkpoints go (nothing is written if None).

        Raises:
            TrainingDivergedError: a non-finite loss; carries the last good checkpoint path.
        """
        train_cfg.validate()
        if not clips:
            raise ConfigError("training needs at least one clip")
        cfg = model.config
        params = params if params is not None else model.initialize(seed, dtype)
        clips = [(np.asarray(f, dtype=dtype), np.asarray(m)) for f, m in clips]
        result = TrainResult(params=params)
        lr_scales = {BACKBONE_PREFIX: train_cfg.backbone_lr_scale}

        for stage in build_stages(cfg, train_cfg):
            clips = self.pseudo_labels(stage, clips)
            params = params.with_trainable(stage.is_trainable)
            state = AdamWState()
            rng = make_rng(derive_seed(seed, "train", stage.name))
            self._emit(StageStarted(stage.name, stage.iterations, params.num_values(trainable_only=True)))
            logger.info(f"Stage '{stage.name}': {stage.iterations} iterations, "
                        f"{len(params.trainable_names())} trainable tensors")
            loss_value = float("nan")
            last_good = params
            for it in range(stage.iterations):
                frames, masks = sample_window(rng, clips, cfg.num_frames, train_cfg.hflip_prob)
                graph = Graph(params)
                output = model.forward(graph, frames, encoded_scales=stage.encoded_scales,
                                       use_labelprop=stage.use_labelprop)
                loss = model.loss(output, masks, stage.loss_on)
                loss_value = float(loss.value)
                if not np.isfinite(loss_value):
                    checkpoint = self._save(last_good, out_dir, LAST_GOOD_CHECKPOINT)
                    self._emit(TrainingDiverged(stage.name, it, checkpoint))
                    logger.error(f"Stage '{stage.name}' diverged at iteration {it} (loss {loss_value})")
                    raise TrainingDivergedError(it, stage.name, checkpoint)
                last_good = params
                lr = polynomial_lr(train_cfg.lr, it, stage.iterations, train_cfg.lr_power)
                grads = graph.backward(loss)
                params, state = adamw_step(params, grads, state, lr, train_cfg.weight_decay,
                                           (train_cfg.beta1, train_cfg.beta2), train_cfg.adam_eps, lr_scales)
                result.losses.append(LossRecord(iter=it, stage=stage.name, loss=loss_value))
                self._emit(IterationCompleted(stage.name, it, loss_value, lr))
                if train_cfg.checkpoint_every and (it + 1) % train_cfg.checkpoint_every == 0:
                    path = self._save(params, out_dir, LAST_GOOD_CHECKPOINT)
                    if path:
                        self._emit(CheckpointSaved(stage.name, it, path))
            path = self._save(params, out_dir, stage.name)
            if path:
                self._emit(CheckpointSaved(stage.name, stage.iterations, path))
            self._emit(StageCompleted(stage.name, stage.iterations, loss_value))
            result.stages.append(stage.name)

        result.params = params.with_trainable(lambda name: True)
        result.checkpoint = self._save(result.params, out_dir, FINAL_CHECKPOINT)
        return result

    def _save(self, params: ParamStore, out_dir: Optional[str], name: str) -> Optional[str]:
        if out_dir is None:
            return None
        return self.checkpoints.save(params, str(Path(out_dir) / name))
