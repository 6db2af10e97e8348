import math

import numpy as np
import pytest

from fusemod.errors import DimensionMismatch, EmptySplit, UndefinedIoU
from fusemod.evalbench import (
    MOVING,
    STATIC,
    BenchReport,
    ConfusionMatrix,
    bench_fps,
    class_weights,
    iou,
    miou,
    relative_improvement,
)


def test_identical_masks_off_diagonal_zero():
    rng = np.random.default_rng(0)
    mask = rng.integers(0, 2, size=(16, 32))
    cm = ConfusionMatrix().update(mask, mask)
    assert cm.counts[0, 1] == 0 and cm.counts[1, 0] == 0
    assert cm.total == mask.size


def test_hand_counted_cells():
    truth = np.array([[1, 1], [1, 1]])
    pred = np.array([[1, 1], [0, 0]])
    cm = ConfusionMatrix().update(pred, truth)
    assert cm.counts[MOVING, MOVING] == 2
    assert cm.counts[MOVING, STATIC] == 2
    truth2 = np.array([[0]])
    pred2 = np.array([[1]])
    cm.update(pred2, truth2)
    assert cm.counts[STATIC, MOVING] == 1


def test_update_matches_brute_force_tally():
    rng = np.random.default_rng(1)
    truth = rng.integers(0, 2, size=(7, 9))
    pred = rng.integers(0, 2, size=(7, 9))
    cm = ConfusionMatrix().update(pred, truth)
    want = np.zeros((2, 2), dtype=np.int64)
    for i in range(7):
        for j in range(9):
            want[truth[i, j], pred[i, j]] += 1
    np.testing.assert_array_equal(cm.counts, want)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        ConfusionMatrix().update(np.zeros((2, 2)), np.zeros((2, 3)))


def test_merge_equals_concatenated_update():
    rng = np.random.default_rng(2)
    frames = [
        (rng.integers(0, 2, size=(4, 5)), rng.integers(0, 2, size=(4, 5)))
        for _ in range(6)
    ]
    merged = ConfusionMatrix()
    for pred, truth in frames:
        merged = merged.merge(ConfusionMatrix().update(pred, truth))
    whole = ConfusionMatrix()
    whole.update(
        np.concatenate([p.ravel() for p, _ in frames]),
        np.concatenate([t.ravel() for _, t in frames]),
    )
    np.testing.assert_array_equal(merged.counts, whole.counts)


def test_iou_forced_arithmetic():
    # moving: TP=2, FP=1, FN=2 -> 2/5
    cm = ConfusionMatrix(np.array([[10, 1], [2, 2]], dtype=np.int64))
    assert iou(cm, MOVING) == pytest.approx(0.4)


def test_perfect_prediction():
    cm = ConfusionMatrix(np.array([[5, 0], [0, 7]], dtype=np.int64))
    assert iou(cm, STATIC) == 1.0
    assert iou(cm, MOVING) == 1.0
    assert miou(cm) == 1.0


def test_miou_is_plain_two_class_mean():
    cm = ConfusionMatrix(np.array([[50, 5], [10, 20]], dtype=np.int64))
    assert miou(cm) == pytest.approx(0.5 * (iou(cm, 0) + iou(cm, 1)))


def test_undefined_iou():
    cm = ConfusionMatrix(np.array([[4, 0], [0, 0]], dtype=np.int64))
    with pytest.raises(UndefinedIoU) as info:
        iou(cm, MOVING)
    assert info.value.class_index == MOVING


def test_iou_symmetric_under_swap():
    rng = np.random.default_rng(3)
    pred = rng.integers(0, 2, size=(10, 10))
    truth = rng.integers(0, 2, size=(10, 10))
    a = ConfusionMatrix().update(pred, truth)
    b = ConfusionMatrix().update(truth, pred)
    for cls in (STATIC, MOVING):
        assert iou(a, cls) == pytest.approx(iou(b, cls))


def test_relative_improvement_values():
    assert relative_improvement(43.5, 39.5) == pytest.approx(10.13, abs=0.005)
    assert relative_improvement(51.46, 49.36) == pytest.approx(4.25, abs=0.005)
    assert relative_improvement(7.7, 7.7) == 0.0
    with pytest.raises(ValueError):
        relative_improvement(1.0, 0.0)


def test_class_weights_balanced_split():
    masks = [np.array([[0, 1], [1, 0]])]
    w = class_weights(masks)
    want = 1.0 / math.log(1.02 + 0.5)
    np.testing.assert_allclose(w, [want, want])


def test_class_weights_rare_moving_class():
    mask = np.zeros((10, 10), dtype=np.int64)
    mask[0, 0] = 1  # p_moving = 0.01
    w = class_weights([mask])
    ratio = w[MOVING] / w[STATIC]
    assert ratio == pytest.approx(math.log(2.01) / math.log(1.03), rel=1e-12)
    assert ratio > 20


def test_class_weights_all_static_finite():
    w = class_weights([np.zeros((4, 4), dtype=np.int64)])
    assert w[MOVING] == pytest.approx(1.0 / math.log(1.02))
    assert np.all(np.isfinite(w)) and np.all(w > 0)


def test_class_weights_positive_over_frequency_range():
    for p in np.linspace(0.0, 1.0, 11):
        mask = np.zeros(1000, dtype=np.int64)
        mask[: int(round(p * 1000))] = 1
        w = class_weights([mask.reshape(20, 50)])
        assert np.all(np.isfinite(w)) and np.all(w > 0)


def test_class_weights_empty_split():
    with pytest.raises(EmptySplit):
        class_weights([])


class _NullModel:
    label = "null"

    def zero_batch(self, h, w):
        return np.zeros((1, 1, h, w))

    def infer(self, batch):
        return batch


def test_bench_fps_arithmetic_with_fake_clock():
    ticks = iter(np.arange(0.0, 100.0, 0.05))
    report = bench_fps(_NullModel(), (8, 8), warmup=0, iters=10, clock=lambda: next(ticks))
    # each iteration consumes two ticks, so every latency is exactly 0.05 s
    assert report.fps == pytest.approx(20.0)
    assert len(report.latencies_ms) == 10
    assert report.latencies_ms[0] == pytest.approx(50.0)
    assert report.label == "null"
    assert (report.height, report.width) == (8, 8)


def test_bench_fps_real_clock_runs():
    report = bench_fps(_NullModel(), (4, 4), warmup=1, iters=3, label="tiny")
    assert report.fps > 0
    assert report.iters == 3 and report.warmup == 1
    assert report.label == "tiny"
    assert isinstance(report, BenchReport)
    assert report.mean_latency_ms >= 0.0
