"""Command Handler: Orchestrates CLI command execution.

Receives commands from the main entry point (main.py), delegates the work
to the application services and turns their results into console output.
Every handle_* method returns the process exit code: 0 on success, 1 for a
failed check or a runtime error, 2 for a configuration error.
"""

import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from medvt.core.exceptions import CheckFailedError, ConfigError, MedvtError
from medvt.core.model.medvt import MedVT
from medvt.core.services.ablation_service import AblationService
from medvt.core.services.check_service import CheckService
from medvt.core.services.dataset_service import DatasetService
from medvt.core.services.evaluation_service import EvaluationService
from medvt.core.services.inference_service import InferenceService
from medvt.core.services.train_service import TrainService
from medvt.domain.events.training_events import (
    CheckpointSaved,
    DomainEvent,
    IterationCompleted,
    StageCompleted,
    StageStarted,
)
from medvt.domain.interfaces.checkpoint_store import CheckpointStore
from medvt.domain.interfaces.dataset_store import DatasetStore
from medvt.domain.interfaces.file_system import FileSystem
from medvt.domain.interfaces.user_interface import UserInterface
from medvt.domain.models.reports import AblationReport, CheckSuiteReport, EvalReport
from medvt.infrastructure.config.settings import Settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

LOSS_CURVE_NAME = "loss_curve.csv"
PROGRESS_EVERY = 20


class CommandHandler:
    """Handles incoming commands and delegates to the appropriate services."""

    def __init__(
        self,
        settings: Settings,
        ui: UserInterface,
        files: FileSystem,
        checkpoints: CheckpointStore,
        dataset_store: Callable[[str], DatasetStore],
        dataset_service: DatasetService,
        train_service: TrainService,
        inference_service: InferenceService,
        evaluation_service: EvaluationService,
        check_service: CheckService,
        ablation_service: AblationService,
        json_output: bool = False,
    ):
        self.settings = settings
        self.ui = ui
        self.files = files
        self.checkpoints = checkpoints
        self.dataset_store = dataset_store
        self.dataset_service = dataset_service
        self.train_service = train_service
        self.inference_service = inference_service
        self.evaluation_service = evaluation_service
        self.check_service = check_service
        self.ablation_service = ablation_service
        self.json_output = json_output
        self.train_service.subscribe(self._on_training_event)

    def _run(self, command: str, action: Callable[[], int]) -> int:
        try:
            return action()
        except ConfigError as e:
            logger.error(f"{command}: configuration error: {e}", exc_info=True)
            self.ui.display_error(str(e))
            return EXIT_USAGE
        except MedvtError as e:
            logger.error(f"{command} failed: {e}", exc_info=True)
            self.ui.display_error(f"{command} failed: {e}")
            return EXIT_FAILURE

    def _on_training_event(self, event: DomainEvent) -> None:
        if isinstance(event, StageStarted):
            self.ui.display_info(f"Stage {event.stage}: {event.iterations} iterations, "
                                 f"{event.trainable_params} trainable values")
        elif isinstance(event, IterationCompleted):
            if (event.iteration + 1) % PROGRESS_EVERY == 0:
                self.ui.display_progress(f"{event.stage} iter {event.iteration + 1}: loss {event.loss:.5f}")
        elif isinstance(event, CheckpointSaved):
            logger.info(f"Checkpoint for {event.stage} written to {event.path}")
        elif isinstance(event, StageCompleted):
            self.ui.display_info(f"Stage {event.stage} done, final loss {event.final_loss:.5f}")

    def _model(self) -> MedVT:
        return MedVT(self.settings.model_config())

    def _emit(self, payload: Dict[str, Any], render: Callable[[], None]) -> None:
        if self.json_output:
            self.ui.display_json(payload)
        else:
            render()

    # --- gen ---

    def handle_gen(self, out: str, n_train: int, n_val: int) -> int:
        def action() -> int:
            s = self.settings
            summary = self.dataset_service.generate(self.dataset_store(out), n_train, n_val, s.seed, s.texture,
                                                    s.num_frames, s.height, s.width)
            payload = {"root": summary.root, "train": summary.train, "val": summary.val}
            self._emit(payload, lambda: self.ui.display_table(
                f"Dataset {summary.root}", ["split", "clips"],
                [["train", len(summary.train)], ["val", len(summary.val)]]))
            return EXIT_OK
        return self._run("gen", action)

    # --- train ---

    def handle_train(self, data: str, out: str) -> int:
        def action() -> int:
            clips = self.dataset_service.load(self.dataset_store(data), "train")
            if not clips:
                raise ConfigError(f"dataset {data} has no training clips")
            dtype = self.settings.numpy_dtype
            result = self.train_service.train(self._model(), [(c.frames, c.masks) for c in clips],
                                              self.settings.train_config(), self.settings.seed, dtype, out_dir=out)
            curve = self.files.write_loss_curve(Path(out) / LOSS_CURVE_NAME, result.losses)
            final = {stage: (result.stage_losses(stage) or [float("nan")])[-1] for stage in result.stages}
            payload = {"checkpoint": result.checkpoint, "loss_curve": str(curve), "stages": result.stages,
                       "final_loss": final}
            self._emit(payload, lambda: self.ui.display_table(
                f"Training finished, checkpoint {result.checkpoint}", ["stage", "iterations", "final loss"],
                [[stage, len(result.stage_losses(stage)), loss] for stage, loss in final.items()]))
            return EXIT_OK
        return self._run("train", action)

    # --- infer ---

    def handle_infer(self, checkpoint: str, data: str, out: str, split: Optional[str] = "val",
                     scales: Optional[Sequence[float]] = None, fmt: str = "pgm",
                     dump_attention: bool = False) -> int:
        def action() -> int:
            params = self.checkpoints.load(checkpoint).astype(self.settings.numpy_dtype)
            model = self._model()
            written: Dict[str, List[str]] = {}
            for clip in self.dataset_service.load(self.dataset_store(data), split):
                prediction = self.inference_service.predict(
                    model, params, clip.frames.astype(self.settings.numpy_dtype), scales,
                    self.settings.window_stride, dump_attention)
                paths = self.inference_service.write_prediction(out, clip.entry["id"], prediction, fmt)
                written[clip.entry["id"]] = [str(p) for p in paths]
                self.ui.display_progress(f"Predicted clip {clip.entry['id']} ({len(prediction.labels)} frames)")
            payload = {"out": out, "format": fmt, "clips": written}
            self._emit(payload, lambda: self.ui.display_info(f"Wrote predictions for {len(written)} clips to {out}"))
            return EXIT_OK
        return self._run("infer", action)

    # --- eval ---

    def handle_eval(self, data: str, split: Optional[str] = "val", checkpoint: Optional[str] = None,
                    predictions: Optional[str] = None, scales: Optional[Sequence[float]] = None,
                    out: Optional[str] = None) -> int:
        def action() -> int:
            if (checkpoint is None) == (predictions is None):
                raise ConfigError("eval needs exactly one of --checkpoint or --predictions")
            clips = self.dataset_service.load(self.dataset_store(data), split)
            if checkpoint is not None:
                params = self.checkpoints.load(checkpoint).astype(self.settings.numpy_dtype)
                clips = [c._replace(frames=c.frames.astype(self.settings.numpy_dtype)) for c in clips]
                report = self.evaluation_service.evaluate_model(self._model(), params, clips, scales,
                                                                self.settings.window_stride)
            else:
                report = self.evaluation_service.evaluate_directory(predictions, clips)
            if out:
                self.files.write_json(out, report.to_dict())
            self._emit(report.to_dict(), lambda: self._render_eval(report))
            return EXIT_OK
        return self._run("eval", action)

    def _render_eval(self, report: EvalReport) -> None:
        rows = [["J (region)", report.j.mean, report.j.recall, report.j.decay],
                ["F (boundary)", report.f.mean, report.f.recall, report.f.decay]]
        self.ui.display_table(f"Evaluation over {report.clips} clips", ["measure", "mean", "recall", "decay"], rows)
        if report.moca is not None:
            self.ui.display_table("Box success rate", ["threshold", "rate"],
                                  [[f"SR@{tau}", rate] for tau, rate in report.moca.success_rates.items()]
                                  + [["mean", report.moca.sr_mean]])
        self.ui.display_table("Per-category mIoU", ["category", "mIoU"],
                              [[c, v] for c, v in report.categories.items()] + [["overall", report.category_mean]])

    # --- gradcheck / propcheck ---

    def _check_outcome(self, report: CheckSuiteReport) -> int:
        def render() -> None:
            rows = [[r.label, r.max_rel_error, "ok" if r.passed else "FAIL"] for r in report.grad_checks
                    if not r.passed or r.label.startswith("micro_model")]
            rows += [[f"spectral.{r.rule}", r.max_abs_error, "ok" if r.passed else "FAIL"]
                     for r in report.spectral_checks[:1]]
            rows += [[key, value, ""] for key, value in sorted(report.extra.items())]
            self.ui.display_table(f"{report.kind}: {'passed' if report.passed else 'FAILED'}",
                                  ["check", "value", "status"], rows)
            for failure in report.failures:
                self.ui.display_warning(failure)
        self._emit(report.to_dict(), render)
        if not report.passed:
            raise CheckFailedError(f"{report.kind} did not pass")
        return EXIT_OK

    def handle_gradcheck(self, trials: int = 10, include_model: bool = True,
                         ops: Optional[List[str]] = None) -> int:
        def action() -> int:
            report = self.check_service.run_gradcheck(self.settings.seed, trials, include_model, ops_filter=ops)
            return self._check_outcome(report)
        return self._run("gradcheck", action)

    def handle_propcheck(self, published_dims: bool = False) -> int:
        def action() -> int:
            report = self.check_service.run_propcheck(
                self.settings.seed, structure_config=None if published_dims else self.settings.model_config(),
                use_published_dims=published_dims)
            return self._check_outcome(report)
        return self._run("propcheck", action)

    # --- ablate ---

    def handle_ablate(self, seeds: Sequence[int], n_train: int = 8, n_val: int = 4, strict: bool = False) -> int:
        def action() -> int:
            report = self.ablation_service.run(self.settings.model_config(), self.settings.train_config(),
                                               seeds, n_train, n_val, self.settings.texture, self.settings.seed,
                                               self.settings.numpy_dtype)
            self._emit(report.to_dict(), lambda: self._render_ablation(report))
            if report.failures and strict:
                raise CheckFailedError(f"{len(report.failures)} ordering rule(s) violated")
            return EXIT_OK
        return self._run("ablate", action)

    def _render_ablation(self, report: AblationReport) -> None:
        rows = [[r.label, "x" if r.encoder else "", "x" if r.decoder else "", "x" if r.label_propagation else "",
                 r.rule, r.j_mean] for r in report.rows]
        self.ui.display_table(f"Ablation over seeds {report.seeds}", ["row", "MS enc", "MS dec", "LP", "rule", "mIoU"],
                              rows)
        for failure in report.failures:
            self.ui.display_warning(f"ordering: {failure}")
