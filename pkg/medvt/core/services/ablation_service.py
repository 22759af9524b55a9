"""Component ablations on synthetic camouflage clips.

Rows, each trained and scored once per seed:
    baseline         single-scale encoder and decoder, no propagation
    +MS decoder      decoder over scales 4, 3, 2
    +MS encoder      encoder over scales 4, 3
    +LP              label propagation with the many-to-many rule
    Mto1 / MtoM      the two propagation rules side by side

The propagation rows share the +MS encoder trunk of the same seed and only
train the propagator on top of it, so their difference to +MS encoder is
the effect of propagation alone. MtoM is the +LP model itself.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from medvt.core.autodiff.params import ParamStore
from medvt.core.data.synthclip import synthesize
from medvt.core.model.medvt import MedVT
from medvt.core.services.evaluation_service import EvaluationService, ScoredClip
from medvt.core.services.inference_service import InferenceService
from medvt.core.services.train_service import TrainService, TrainingClip
from medvt.core.tensor.rng import derive_seed
from medvt.domain.interfaces.user_interface import UserInterface
from medvt.domain.models.common import ManifestEntry
from medvt.domain.models.configs import ModelConfig, TrainConfig
from medvt.domain.models.reports import AblationReport, AblationRow
from medvt.domain.models.scene import SyntheticClip

logger = logging.getLogger(__name__)

ORDERING_SLACK = 0.02
DEFAULT_SEEDS = (0, 1, 2)


@dataclass(frozen=True)
class AblationCell:
    label: str
    multiscale_encoder: bool
    multiscale_decoder: bool
    rule: Optional[str] = None

    @property
    def label_propagation(self) -> bool:
        return self.rule is not None


GRID = (
    AblationCell("baseline", False, False),
    AblationCell("+MS decoder", False, True),
    AblationCell("+MS encoder", True, True),
    AblationCell("+LP", True, True, "mtom"),
)
RULE_PAIR = (
    AblationCell("Mto1", True, True, "mto1"),
    AblationCell("MtoM", True, True, "mtom"),
)


def cell_config(base: ModelConfig, cell: AblationCell) -> ModelConfig:
    coarsest = max(base.encoder.blocks_per_scale)
    scales = (coarsest, coarsest - 1) if cell.multiscale_encoder else (coarsest,)
    blocks = {s: max(1, base.encoder.blocks_per_scale.get(s, 1)) for s in scales}
    decoder_scales = (coarsest, coarsest - 1, coarsest - 2) if cell.multiscale_decoder else (coarsest,)
    return replace(
        base,
        encoder=replace(base.encoder, encoded_scales=scales, blocks_per_scale=blocks),
        decoder=replace(base.decoder, decoder_scales=decoder_scales),
        labelprop=replace(base.labelprop, enabled=cell.label_propagation, rule=cell.rule or base.labelprop.rule),
    ).validate()


def ordering_failures(rows: Dict[str, AblationRow], slack: float = ORDERING_SLACK) -> List[str]:
    """Pairs (better, worse) whose seed-averaged mIoU violates better >= worse - slack."""
    failures = []
    for better, worse in (("+LP", "+MS encoder"), ("+MS encoder", "baseline"), ("MtoM", "Mto1")):
        if better in rows and worse in rows and rows[better].j_mean < rows[worse].j_mean - slack:
            failures.append(f"mIoU({better})={rows[better].j_mean:.4f} < "
                            f"mIoU({worse})={rows[worse].j_mean:.4f} - {slack}")
    return failures


class AblationService:
    """Trains every ablation cell and reports held-out mIoU per seed."""

    def __init__(self, ui: UserInterface, trainer: TrainService, inference: InferenceService,
                 evaluator: EvaluationService):
        self.ui = ui
        self.trainer = trainer
        self.inference = inference
        self.evaluator = evaluator

    def _score(self, model: MedVT, params: ParamStore, val: Sequence[Tuple[ManifestEntry, SyntheticClip]],
               dtype) -> float:
        scored = []
        for entry, clip in val:
            prediction = self.inference.infer_video(model, params, clip.frames.astype(dtype))
            scored.append(ScoredClip(entry, prediction.labels, clip.masks))
        return self.evaluator.evaluate(scored).j.mean

    def _run_seed(self, base: ModelConfig, train_cfg: TrainConfig, seed: int, train: List[TrainingClip],
                  val, dtype) -> Dict[str, float]:
        scores: Dict[str, float] = {}
        trunk: Optional[ParamStore] = None
        for cell in GRID[:3]:
            model = MedVT(cell_config(base, cell))
            result = self.trainer.train(model, train, train_cfg, seed, dtype)
            scores[cell.label] = self._score(model, result.params, val, dtype)
            trunk = result.params
            self.ui.display_progress(f"seed {seed}: {cell.label} mIoU={scores[cell.label]:.4f}")

        # Stage 1 was trained above; only the propagator is trained on the trunk.
        propagation_only = replace(train_cfg, iterations=0)
        for cell in RULE_PAIR:
            model = MedVT(cell_config(base, cell))
            params = model.initialize(seed, dtype)
            params = params.with_values({name: trunk.value(name) for name in trunk.names()})
            result = self.trainer.train(model, train, propagation_only, seed, dtype, params=params)
            scores[cell.label] = self._score(model, result.params, val, dtype)
            self.ui.display_progress(f"seed {seed}: {cell.label} mIoU={scores[cell.label]:.4f}")
        scores["+LP"] = scores["MtoM"]
        return scores

    def run(self, base: ModelConfig, train_cfg: TrainConfig, seeds: Sequence[int] = DEFAULT_SEEDS,
            n_train: int = 8, n_val: int = 4, texture: str = "camouflage", data_seed: int = 0,
            dtype=np.float64) -> AblationReport:
        """Trains the 4-row component grid and the rule pair for every seed.

        Each seed draws its own dataset from data_seed, so seeds vary both
        the initialization and the clips.
        """
        height, width = base.image_size
        report = AblationReport(seeds=list(seeds))
        per_seed: List[Dict[str, float]] = []
        for seed in seeds:
            clips = synthesize(n_train, n_val, derive_seed(data_seed, "ablate", seed), texture,
                               base.num_frames, height, width)
            train = [(clip.frames, clip.masks) for entry, clip in clips if entry["split"] == "train"]
            val = [(entry, clip) for entry, clip in clips if entry["split"] == "val"]
            logger.info(f"Ablation seed {seed}: {len(train)} train / {len(val)} val clips")
            per_seed.append(self._run_seed(base, train_cfg, seed, train, val, dtype))

        for cell in GRID + RULE_PAIR:
            report.rows.append(AblationRow(
                label=cell.label,
                encoder=cell.multiscale_encoder,
                decoder=cell.multiscale_decoder,
                label_propagation=cell.label_propagation,
                rule=cell.rule or "none",
                j_mean_per_seed=[scores[cell.label] for scores in per_seed],
            ))
        report.failures = ordering_failures({row.label: row for row in report.rows})
        for failure in report.failures:
            logger.warning(f"Ablation ordering violated: {failure}")
        return report
