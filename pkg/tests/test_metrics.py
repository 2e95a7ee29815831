import math

import numpy as np
import pytest

from hapnet.metrics import ConfusionMatrix


def loop_confusion(gt, pred, num_classes, ignore=255):
    """Independent per-pixel counting loop used only by tests."""
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for g, p in zip(np.asarray(gt).flatten(), np.asarray(pred).flatten()):
        if g == ignore:
            continue
        counts[g, p] += 1
    return counts


class TestAccumulate:
    def test_identical_maps_diagonal(self):
        cm = ConfusionMatrix(3)
        gt = np.zeros((4, 4), dtype=np.int64)
        cm.accumulate(gt, gt)
        assert cm.counts[0, 0] == 16
        assert cm.counts.sum() == 16

    def test_hand_counted_two_by_two(self):
        cm = ConfusionMatrix(2)
        cm.accumulate(np.array([[0, 0], [1, 1]]), np.array([[0, 1], [1, 1]]))
        assert cm.counts.tolist() == [[1, 1], [0, 2]]

    def test_all_ignored_unchanged(self):
        cm = ConfusionMatrix(2)
        cm.accumulate(np.full((3, 3), 255), np.zeros((3, 3), dtype=np.int64))
        assert cm.counts.sum() == 0

    def test_ignored_pixels_skipped(self):
        cm = ConfusionMatrix(2)
        cm.accumulate(np.array([0, 255, 1]), np.array([1, 0, 1]))
        assert cm.counts.tolist() == [[0, 1], [0, 1]]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            ConfusionMatrix(2).accumulate(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_out_of_range_errors(self):
        with pytest.raises(ValueError, match="ground-truth label out of range"):
            ConfusionMatrix(2).accumulate(np.array([5]), np.array([0]))
        with pytest.raises(ValueError, match="prediction out of range"):
            ConfusionMatrix(2).accumulate(np.array([0]), np.array([5]))

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(30):
            n = int(rng.integers(2, 7))
            gt = rng.integers(0, n, (9, 9))
            gt[rng.random((9, 9)) < 0.1] = 255
            pred = rng.integers(0, n, (9, 9))
            cm = ConfusionMatrix(n)
            cm.accumulate(gt, pred)
            assert np.array_equal(cm.counts, loop_confusion(gt, pred, n)), f"trial {trial}"

    def test_order_independent_and_merge(self):
        rng = np.random.default_rng(1)
        images = [(rng.integers(0, 3, (5, 5)), rng.integers(0, 3, (5, 5))) for _ in range(6)]
        forward = ConfusionMatrix(3)
        for g, p in images:
            forward.accumulate(g, p)
        backward = ConfusionMatrix(3)
        for g, p in reversed(images):
            backward.accumulate(g, p)
        assert np.array_equal(forward.counts, backward.counts)
        merged = ConfusionMatrix(3)
        for g, p in images[:3]:
            merged.accumulate(g, p)
        other = ConfusionMatrix(3)
        for g, p in images[3:]:
            other.accumulate(g, p)
        merged.merge(other)
        assert np.array_equal(merged.counts, forward.counts)

    def test_merge_size_mismatch(self):
        with pytest.raises(ValueError, match="different sizes"):
            ConfusionMatrix(2).merge(ConfusionMatrix(3))


class TestPerClass:
    def test_diagonal_gives_ones(self):
        cm = ConfusionMatrix(3)
        cm.counts[:] = np.diag([4, 2, 7])
        acc, iou = cm.per_class()
        assert np.allclose(acc, 1.0) and np.allclose(iou, 1.0)

    def test_hand_example(self):
        cm = ConfusionMatrix(2)
        cm.counts[:] = [[1, 1], [0, 2]]
        acc, iou = cm.per_class()
        assert abs(acc[0] - 0.5) < 1e-12 and abs(acc[1] - 1.0) < 1e-12
        assert abs(iou[0] - 0.5) < 1e-12 and abs(iou[1] - 2.0 / 3.0) < 1e-12

    def test_absent_class_is_nan(self):
        cm = ConfusionMatrix(3)
        cm.counts[0, 0] = 5
        cm.counts[1, 1] = 5
        acc, iou = cm.per_class()
        assert math.isnan(acc[2]) and math.isnan(iou[2])

    def test_iou_never_exceeds_acc_when_diag_positive(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            n = int(rng.integers(2, 6))
            cm = ConfusionMatrix(n)
            cm.counts[:] = rng.integers(0, 20, (n, n))
            acc, iou = cm.per_class()
            for c in range(n):
                if cm.counts[c, c] > 0:
                    assert iou[c] <= acc[c] + 1e-12


class TestReduce:
    def test_hand_example(self):
        cm = ConfusionMatrix(2)
        cm.counts[:] = [[1, 1], [0, 2]]
        macc, miou = cm.reduce()
        assert abs(macc - 0.75) < 1e-9
        assert abs(miou - (0.5 + 2.0 / 3.0) / 2.0) < 1e-9  # ~0.5833

    def test_absent_classes_excluded_from_mean(self):
        cm = ConfusionMatrix(4)
        cm.counts[1, 1] = 3
        cm.counts[1, 2] = 1
        macc, miou = cm.reduce()
        # only class 1 (gt) and class 2 (pred-only, iou 0) are present
        assert abs(macc - 0.75) < 1e-12
        assert abs(miou - (0.75 + 0.0) / 2.0) < 1e-12

    def test_single_class(self):
        cm = ConfusionMatrix(3)
        cm.counts[0, 0] = 9
        macc, miou = cm.reduce()
        assert macc == 1.0 and miou == 1.0

    def test_empty_matrix_is_nan(self):
        macc, miou = ConfusionMatrix(2).reduce()
        assert math.isnan(macc) and math.isnan(miou)


class TestCsv:
    def test_header_rows_and_mean(self):
        cm = ConfusionMatrix(2)
        cm.counts[:] = [[1, 1], [0, 2]]
        text = cm.to_csv(["unlabeled", "car"])
        lines = text.strip().split("\n")
        assert lines[0] == "class,acc,iou"
        assert lines[1] == "unlabeled,0.500000,0.500000"
        assert lines[2] == "car,1.000000,0.666667"
        assert lines[3] == "mean,0.750000,0.583333"

    def test_default_names_are_indices(self):
        cm = ConfusionMatrix(2)
        cm.counts[:] = np.eye(2, dtype=np.int64)
        lines = cm.to_csv().strip().split("\n")
        assert lines[1].startswith("0,") and lines[2].startswith("1,")

    def test_name_count_checked(self):
        with pytest.raises(ValueError, match="class_names length"):
            ConfusionMatrix(2).to_csv(["only-one"])
