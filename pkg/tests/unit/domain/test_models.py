import json

import pytest

from medvt.core.exceptions import ConfigError, SceneError
from medvt.domain.models.configs import LossConfig, StageSpec, TrainConfig
from medvt.domain.models.reports import (
    AblationReport,
    AblationRow,
    CheckSuiteReport,
    EvalReport,
    FStatistics,
    GradCheckReport,
    JStatistics,
    MocaResult,
    ParamGradCheck,
    SpectralReport,
)
from medvt.domain.models.scene import SceneSpec


def test_stage_spec_trainability():
    """train_prefixes narrows, exclude_prefixes removes, neither means everything."""
    assert StageSpec("all", 1).is_trainable("backbone.stage1.conv.weight")
    only_lp = StageSpec("lp", 1, train_prefixes=("labelprop.",))
    assert only_lp.is_trainable("labelprop.attn.wq")
    assert not only_lp.is_trainable("decoder.queries")
    no_lp = StageSpec("trunk", 1, exclude_prefixes=("labelprop.",))
    assert no_lp.is_trainable("decoder.queries")
    assert not no_lp.is_trainable("labelprop.attn.wq")


@pytest.mark.parametrize("config", [
    TrainConfig(iterations=-1),
    TrainConfig(lr=-1e-3),
    TrainConfig(hflip_prob=1.5),
    TrainConfig(preset="curriculum"),
])
def test_train_config_validation(config):
    with pytest.raises(ConfigError):
        config.validate()


def test_loss_config_needs_one_term():
    with pytest.raises(ConfigError):
        LossConfig(lambda_focal=0.0, lambda_dice=0.0).validate()
    with pytest.raises(ConfigError):
        LossConfig(focal_gamma=-1.0).validate()


def test_scene_validation_returns_the_spec():
    spec = SceneSpec(seed=0)
    assert spec.validate() is spec
    with pytest.raises(SceneError):
        SceneSpec(seed=0, size=0.5).validate()
    with pytest.raises(SceneError):
        SceneSpec(seed=0, trajectory="zigzag").validate()


def test_check_suite_passes_only_without_failures():
    ok = GradCheckReport("add#0", 1e-5, 1e-4, [ParamGradCheck("x", 4, 1e-10, 1e-9, True)])
    report = CheckSuiteReport(kind="gradcheck", grad_checks=[ok])
    assert report.passed
    report.spectral_checks.append(SpectralReport("mtom", 1e-3, 0.0, 1e-10))
    assert not report.passed
    data = report.to_dict()
    assert data["passed"] is False
    assert data["grad_checks"][0]["max_rel_error"] == 1e-9
    json.dumps(data)


def test_eval_report_keys():
    report = EvalReport(clips=2, j=JStatistics(0.5, 0.5, 0.1), f=FStatistics(0.6, 0.5, 0.0),
                        moca=MocaResult({"0.5": 1.0, "0.9": 0.0}, 0.5))
    data = report.to_dict()
    assert data["SR@0.5"] == 1.0
    assert data["SR@0.9"] == 0.0
    assert data["SR_mean"] == 0.5
    assert {"J_mean", "J_recall", "J_decay", "F_mean", "F_recall", "F_decay", "categories",
            "category_mean", "per_clip", "clips"} <= set(data)


def test_ablation_rows_average_their_seeds():
    row = AblationRow("+LP", True, True, True, "mtom", [0.5, 0.7])
    assert row.j_mean == pytest.approx(0.6)
    assert AblationRow("x", False, False, False, "none", []).j_mean == 0.0
    report = AblationReport(seeds=[0, 1], rows=[row])
    assert report.to_dict()["rows"][0]["j_mean"] == pytest.approx(0.6)
    assert report.passed
