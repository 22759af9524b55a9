import pytest

from medvt.core.autodiff.functional import DIFFERENTIABLE_OPS
from medvt.core.exceptions import MedvtError
from medvt.core.services.check_service import CheckService, op_case
from medvt.core.tensor import ops
from medvt.core.tensor.rng import make_rng
from medvt.domain.models.configs import micro_config
from medvt.domain.models.reports import CheckSuiteReport, GradCheckReport, ParamGradCheck


@pytest.fixture
def service(mock_ui):
    return CheckService(mock_ui)


def test_every_differentiable_op_has_a_passing_case(service, mock_ui):
    """One seeded case per op on the tape, all within tolerance."""
    report = service.run_gradcheck(seed=0, trials=1, include_model=False)

    assert report.kind == "gradcheck"
    assert [r.label for r in report.grad_checks] == [f"{name}#0" for name in DIFFERENTIABLE_OPS]
    assert report.passed, report.failures
    assert mock_ui.display_progress.call_count == len(DIFFERENTIABLE_OPS)


def test_op_filter_and_unknown_ops(service):
    report = service.run_gradcheck(seed=3, trials=2, include_model=False, ops_filter=["softmax"])
    assert [r.label for r in report.grad_checks] == ["softmax#0", "softmax#1"]
    with pytest.raises(MedvtError):
        op_case("cosh", make_rng(0))


def test_suites_restore_the_summation_mode(service):
    """The suites force ordered sums and put the previous mode back."""
    ops.set_summation_mode("blas")
    service.run_gradcheck(trials=1, include_model=False, ops_filter=["matmul"])
    assert ops.get_summation_mode() == "blas"


def test_failures_name_the_worst_parameter():
    report = CheckSuiteReport(kind="gradcheck")
    result = GradCheckReport(label="relu#4", step=1e-5, tolerance=1e-4, near_kink=True, params=[
        ParamGradCheck("x", 6, 1e-9, 1e-8, True),
        ParamGradCheck("y", 6, 2e-3, 5e-2, False),
    ])

    CheckService._note(report, result)

    assert len(report.failures) == 1
    assert report.failures[0].startswith("relu#4: 'y' rel error 5.00e-02")
    assert report.failures[0].endswith("(near relu kink)")


@pytest.mark.slow
def test_micro_model_losses_pass_end_to_end(service):
    report = service.run_gradcheck(seed=0, trials=0, include_model=True, model_entries=2)
    assert [r.label for r in report.grad_checks] == ["micro_model.stage1", "micro_model.stage2"]
    assert report.passed, report.failures


def test_propagation_suite_passes_on_a_small_run(service, mock_ui):
    """Mask semantics, the spectral oracle, dense-mask equivalence and structure all hold."""
    report = service.run_propcheck(seed=0, mask_instances=4, spectral_instances=3, dense_instances=4,
                                   structure_config=micro_config())

    assert report.kind == "propcheck"
    assert report.passed, report.failures
    assert report.extra["mask_violations.mtom"] == 0.0
    assert report.extra["mask_violations.mto1"] == 0.0
    assert report.extra["dense.mismatches"] == 0.0
    assert report.extra["spectral.max_abs_error"] < 1e-9
    assert report.extra["decoder.blocks"] == 3.0
    assert report.extra["decoder_output.channels"] == 10.0
    assert report.extra["object_attention.row_sum_error"] <= 1e-12
    assert mock_ui.display_progress.call_count == 4
