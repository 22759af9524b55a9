import pytest
import numpy as np

from types import SimpleNamespace
from unittest.mock import MagicMock

from medvt.core.services.ablation_service import (
    GRID,
    RULE_PAIR,
    AblationService,
    cell_config,
    ordering_failures,
)
from medvt.core.services.evaluation_service import EvaluationService
from medvt.core.services.inference_service import InferenceService, VideoPrediction
from medvt.core.services.train_service import TrainResult, TrainService
from medvt.domain.interfaces.checkpoint_store import CheckpointStore
from medvt.domain.interfaces.file_system import FileSystem
from medvt.domain.models.configs import TrainConfig, desk_config, micro_config
from medvt.domain.models.reports import AblationRow


def row(label, *scores):
    return AblationRow(label, True, True, False, "none", list(scores))


# --- Grid ---

def test_cells_narrow_the_model_as_labelled():
    base = micro_config()
    baseline, ms_decoder, ms_encoder, lp = (cell_config(base, cell) for cell in GRID)

    assert baseline.encoder.encoded_scales == (4,)
    assert baseline.decoder.decoder_scales == (4,)
    assert not baseline.labelprop.enabled
    assert ms_decoder.encoder.encoded_scales == (4,)
    assert ms_decoder.decoder.decoder_scales == (4, 3, 2)
    assert ms_encoder.encoder.encoded_scales == (4, 3)
    assert (lp.labelprop.enabled, lp.labelprop.rule) == (True, "mtom")
    assert cell_config(base, RULE_PAIR[0]).labelprop.rule == "mto1"


def test_ordering_allows_the_slack():
    rows = {r.label: r for r in (row("baseline", 0.50), row("+MS encoder", 0.49), row("+LP", 0.60),
                                 row("Mto1", 0.60), row("MtoM", 0.60))}
    assert ordering_failures(rows) == []


def test_ordering_reports_each_violated_pair():
    rows = {r.label: r for r in (row("baseline", 0.70, 0.70), row("+MS encoder", 0.50, 0.60),
                                 row("+LP", 0.60), row("Mto1", 0.62), row("MtoM", 0.55))}
    failures = ordering_failures(rows)

    assert len(failures) == 2
    assert failures[0].startswith("mIoU(+MS encoder)=0.5500 < mIoU(baseline)=0.7000")
    assert failures[1].startswith("mIoU(MtoM)=0.5500 < mIoU(Mto1)=0.6200")


# --- Runs ---

@pytest.fixture
def trainer():
    trainer = MagicMock(spec=TrainService)
    trainer.train.side_effect = lambda model, clips, cfg, seed, dtype, params=None: TrainResult(
        params if params is not None else model.initialize(seed, dtype))
    return trainer


@pytest.fixture
def inference():
    inference = MagicMock(spec=InferenceService)
    inference.infer_video.side_effect = lambda model, params, frames: VideoPrediction(
        np.zeros(frames.shape[:3], dtype=np.int64), np.zeros(frames.shape[:3] + (2,)))
    return inference


def scripted_evaluator(scores):
    evaluator = MagicMock(spec=EvaluationService)
    values = iter(scores)
    evaluator.evaluate.side_effect = lambda scored: SimpleNamespace(j=SimpleNamespace(mean=next(values)))
    return evaluator


def test_run_trains_every_cell_and_reuses_the_trunk(mock_ui, trainer, inference):
    """Three trunk trainings, then two propagator-only trainings on the +MS encoder trunk."""
    evaluator = scripted_evaluator([0.50, 0.60, 0.70, 0.65, 0.80])
    service = AblationService(mock_ui, trainer, inference, evaluator)

    report = service.run(micro_config(), TrainConfig(iterations=3, stage2_iterations=2), seeds=[0],
                         n_train=1, n_val=1)

    assert [r.label for r in report.rows] == ["baseline", "+MS decoder", "+MS encoder", "+LP", "Mto1", "MtoM"]
    assert {r.label: r.j_mean_per_seed for r in report.rows} == {
        "baseline": [0.50], "+MS decoder": [0.60], "+MS encoder": [0.70], "+LP": [0.80],
        "Mto1": [0.65], "MtoM": [0.80],
    }
    assert report.passed
    calls = trainer.train.call_args_list
    assert len(calls) == 5
    assert [c.args[2].iterations for c in calls] == [3, 3, 3, 0, 0]
    trunk = calls[2].args[0].config
    for call in calls[3:]:
        assert call.args[0].config.encoder == trunk.encoder
        assert call.kwargs["params"] is not None
    assert inference.infer_video.call_count == 5


def test_run_reports_ordering_failures_across_seeds(mock_ui, trainer, inference):
    """Rows average their seeds before the ordering is checked."""
    evaluator = scripted_evaluator([0.5, 0.5, 0.6, 0.7, 0.5,
                                    0.5, 0.5, 0.6, 0.7, 0.6])
    service = AblationService(mock_ui, trainer, inference, evaluator)

    report = service.run(micro_config(), TrainConfig(iterations=1, stage2_iterations=1), seeds=[0, 1],
                         n_train=1, n_val=1)

    rows = {r.label: r for r in report.rows}
    assert rows["MtoM"].j_mean == pytest.approx(0.55)
    assert rows["Mto1"].j_mean == pytest.approx(0.7)
    assert not report.passed
    assert len(report.failures) == 2
    assert report.to_dict()["seeds"] == [0, 1]


@pytest.mark.slow
def test_default_grid_keeps_its_ordering_over_three_seeds(mock_ui):
    """Real training on the desk model: seed-averaged rows respect every ordering rule."""
    files = MagicMock(spec=FileSystem)
    inference = InferenceService(files)
    service = AblationService(mock_ui, TrainService(MagicMock(spec=CheckpointStore)), inference,
                              EvaluationService(mock_ui, files, inference))

    report = service.run(desk_config(), TrainConfig(), seeds=[0, 1, 2], n_train=8, n_val=4)

    assert report.failures == []
    assert report.passed
