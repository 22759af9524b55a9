import pytest
import numpy as np

from medvt.core.evaluation.metrics import (
    boundary,
    boundary_f,
    box_iou,
    disk,
    f_statistics,
    iou,
    j_statistics,
    largest_component_box,
    moca_success,
    per_category_mean,
    success_rates,
)
from medvt.core.exceptions import MetricsError


def square(size=16, top=4, left=4, side=6):
    mask = np.zeros((size, size), dtype=np.int64)
    mask[top:top + side, left:left + side] = 1
    return mask


# --- Region similarity ---

def test_iou_of_half_overlapping_strips_is_one_third():
    pred = np.zeros((4, 6))
    gt = np.zeros((4, 6))
    pred[:, 0:4] = 1
    gt[:, 2:6] = 1
    assert iou(pred, gt) == pytest.approx(1 / 3)


def test_iou_edge_cases():
    empty = np.zeros((5, 5))
    assert iou(empty, empty) == 1.0
    assert iou(empty, square(5, 1, 1, 2)) == 0.0
    with pytest.raises(MetricsError):
        iou(np.zeros((3, 3)), np.zeros((3, 4)))


def test_j_statistics_decay_and_recall():
    stats = j_statistics([0.9, 0.8, 0.7, 0.6])
    assert stats.mean == pytest.approx(0.75)
    assert stats.recall == 1.0
    assert stats.decay == pytest.approx(0.3)


def test_decay_is_floored_at_zero_and_recall_is_strict():
    stats = j_statistics([0.2, 0.5, 0.6, 0.9, 1.0])
    assert stats.decay == 0.0
    assert stats.recall == pytest.approx(3 / 5)


def test_short_clips_keep_mean_and_recall_without_decay():
    stats = j_statistics([0.9, 0.6, 0.3])
    assert stats.mean == pytest.approx(0.6)
    assert stats.recall == pytest.approx(2 / 3)
    assert stats.decay == 0.0
    assert f_statistics([0.4]).mean == 0.4


def test_statistics_need_a_frame():
    with pytest.raises(MetricsError):
        f_statistics([])


# --- Boundary F ---

def test_boundary_is_the_four_connected_rim():
    rim = boundary(square(7, 1, 1, 5))
    assert np.count_nonzero(rim) == 16
    assert not rim[3, 3]


def test_boundary_counts_the_image_border_as_outside():
    assert boundary(np.ones((3, 3))).sum() == 8


def test_disk_footprint():
    np.testing.assert_array_equal(disk(1), [[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def test_one_pixel_shift_is_forgiven_by_the_tolerance():
    gt = square()
    shifted = square(left=5)
    assert boundary_f(shifted, gt, tolerance_px=1) == 1.0
    assert boundary_f(shifted, gt, tolerance_px=0) < 1.0
    assert boundary_f(gt, gt, tolerance_px=0) == 1.0


def test_boundary_f_empty_cases():
    empty = np.zeros((16, 16))
    assert boundary_f(empty, empty) == 1.0
    assert boundary_f(empty, square()) == 0.0
    assert boundary_f(square(), empty) == 0.0


# --- Box success rate ---

def test_largest_component_is_eight_connected():
    pred = np.zeros((10, 10))
    pred[0:2, 0:2] = 1
    pred[5, 5] = pred[6, 6] = pred[7, 7] = pred[7, 8] = pred[8, 8] = 1
    assert largest_component_box(pred) == (5, 5, 8, 8)
    assert largest_component_box(np.zeros((3, 3))) is None


def test_box_iou_is_inclusive():
    assert box_iou((0, 0, 9, 9), (0, 0, 9, 9)) == 1.0
    assert box_iou((0, 0, 9, 9), (0, 0, 9, 5)) == pytest.approx(0.6)
    assert box_iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0


def test_box_iou_of_point_six_succeeds_only_at_one_half():
    pred = np.zeros((12, 12))
    pred[0:10, 0:10] = 1
    hits = moca_success(pred, (0, 0, 9, 5))
    assert hits == {0.5: True, 0.6: False, 0.7: False, 0.8: False, 0.9: False}


def test_empty_prediction_never_succeeds():
    assert not any(moca_success(np.zeros((4, 4)), (0, 0, 1, 1)).values())


def test_success_rates_are_monotone_in_threshold(rng):
    pairs = []
    for k in range(8):
        pred = np.zeros((20, 20))
        pred[2:12, 2:2 + 4 + k] = 1
        pairs.append((pred, (2, 2, 9, 11)))
    result = success_rates(pairs)
    rates = [result.success_rates[key] for key in ("0.5", "0.6", "0.7", "0.8", "0.9")]
    assert rates == sorted(rates, reverse=True)
    assert 0.0 < rates[0] <= 1.0
    assert result.sr_mean == pytest.approx(sum(rates) / 5)
    with pytest.raises(MetricsError):
        success_rates([])


# --- Per-category table ---

def test_categories_are_weighted_equally():
    videos = {"001": ("disk", 1.0), "002": ("disk", 1.0), "003": ("blob", 0.0)}
    table, mean = per_category_mean(videos)
    assert table == {"blob": 0.0, "disk": 1.0}
    assert list(table) == ["blob", "disk"]
    assert mean == 0.5
    with pytest.raises(MetricsError):
        per_category_mean({})
