import itertools

import numpy as np
import pytest
from conftest import random_image, random_partition
from hypothesis import given, settings
from hypothesis import strategies as st

from bilateral_inception.errors import InvalidArgumentError
from bilateral_inception.superpixel import (
    FeatureKind,
    LabelMap,
    Partition,
    agglomerative_merge,
    majority_labels,
    mean_features,
    project_labels,
    quantization_error,
)


def loop_features(image, labels):
    h, w = labels.shape
    m = labels.max() + 1
    acc = np.zeros((m, 5))
    n = np.zeros(m)
    scale = max(h, w)
    for y in range(h):
        for x in range(w):
            k = labels[y, x]
            acc[k] += [x / scale, y / scale, *image[y, x]]
            n[k] += 1
    return acc / n[:, None]


def test_partition_rejects_gaps():
    with pytest.raises(InvalidArgumentError):
        Partition(np.array([[0, 2], [2, 0]]))
    with pytest.raises(InvalidArgumentError):
        Partition(np.array([[0, -1]]))


def test_from_labels_compacts_in_raster_order():
    part = Partition.from_labels(np.array([[7, 7, 3], [9, 3, 3]]))
    np.testing.assert_array_equal(part.labels, [[0, 0, 1], [2, 1, 1]])
    np.testing.assert_array_equal(part.sizes, [2, 3, 1])


def test_mean_features_single_gray_segment():
    image = np.full((2, 2, 3), 0.5)
    feats = mean_features(image, Partition(np.zeros((2, 2), dtype=int)))
    np.testing.assert_array_equal(feats, [[0.25, 0.25, 0.5, 0.5, 0.5]])


def test_mean_features_solid_segments_exact():
    image = np.zeros((4, 6, 3))
    image[:, :3] = [0.1, 0.7, 0.3]
    image[:, 3:] = [0.9, 0.2, 0.6]
    labels = np.zeros((4, 6), dtype=int)
    labels[:, 3:] = 1
    feats = mean_features(image, Partition(labels))
    assert np.all(feats[0, 2:] == image[0, 0])
    assert np.all(feats[1, 2:] == image[0, 5])


def test_mean_features_match_double_loop(rng):
    for _ in range(5):
        image = random_image(rng, 8, 8)
        part = random_partition(rng, 8, 8, 6)
        feats = mean_features(image, part)
        assert np.max(np.abs(feats - loop_features(image, part.labels))) < 1e-12
        pos = mean_features(image, part, FeatureKind.POSITION)
        np.testing.assert_array_equal(pos, feats[:, :2])


def test_mean_features_position_scaled_by_long_side(rng):
    image = random_image(rng, 3, 7)
    part = random_partition(rng, 3, 7, 4)
    assert np.max(np.abs(mean_features(image, part) - loop_features(image, part.labels))) < 1e-12


def test_mean_features_dimension_mismatch(rng):
    with pytest.raises(InvalidArgumentError):
        mean_features(random_image(rng, 4, 4), Partition(np.zeros((4, 5), dtype=int)))


def test_project_labels_single_segment():
    out = project_labels(Partition(np.zeros((3, 4), dtype=int)), [3], 4)
    assert np.all(out.labels == 3)


def test_project_labels_identity_partition(rng):
    part = Partition(np.arange(12).reshape(3, 4))
    labels = rng.integers(0, 5, size=12)
    np.testing.assert_array_equal(project_labels(part, labels, 5).labels, labels.reshape(3, 4))


def test_project_labels_match_loop(rng):
    part = random_partition(rng, 9, 7, 10)
    sp = rng.integers(0, 4, size=10)
    out = project_labels(part, sp, 4).labels
    for y in range(9):
        for x in range(7):
            assert out[y, x] == sp[part.labels[y, x]]


def test_project_labels_rejects_bad_class():
    with pytest.raises(InvalidArgumentError):
        project_labels(Partition(np.zeros((2, 2), dtype=int)), [4], 4)


def test_majority_ties_go_to_smaller_id():
    part = Partition(np.zeros((1, 4), dtype=int))
    gt = LabelMap(np.array([[2, 1, 2, 1]]), 3)
    assert majority_labels(part, gt)[0] == 1


def test_quantization_perfect_when_boundaries_match_gt():
    gt = np.zeros((6, 6), dtype=int)
    gt[2:5, 1:4] = 1
    gt[:, 5] = 2
    q = quantization_error(Partition.from_labels(gt), LabelMap(gt, 3))
    assert q == {"bestPixelAccuracy": 1.0, "bestIoU": 1.0}


def test_quantization_single_segment_60_40():
    gt = np.zeros((5, 4), dtype=int)
    gt[3:] = 1
    q = quantization_error(Partition(np.zeros((5, 4), dtype=int)), LabelMap(gt, 2))
    assert q["bestPixelAccuracy"] == pytest.approx(0.6, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_quantization_singletons_always_perfect(h, w, k, seed):
    gt = np.random.default_rng(seed).integers(0, k, size=(h, w))
    part = Partition(np.arange(h * w).reshape(h, w))
    assert quantization_error(part, LabelMap(gt, k))["bestPixelAccuracy"] == 1.0


def test_quantization_nested_refinements_monotone(rng):
    """100 partitions, each refining the one before it (by splitting a
    segment), on a fixed ground truth."""
    gt = LabelMap(rng.integers(0, 3, size=(12, 12)), 3)
    labels = np.zeros((12, 12), dtype=np.int64)
    prev = quantization_error(Partition(labels), gt)["bestPixelAccuracy"]
    for step in range(1, 100):
        seg = rng.integers(0, labels.max() + 1)
        members = np.flatnonzero(labels.ravel() == seg)
        if members.size < 2:
            continue
        moved = members[rng.random(members.size) < 0.5]
        if moved.size in (0, members.size):
            moved = members[:1]
        labels.ravel()[moved] = labels.max() + 1
        acc = quantization_error(Partition.from_labels(labels), gt)["bestPixelAccuracy"]
        assert acc >= prev
        prev = acc


def brute_force_merge(features, sizes, target):
    """Exhaustive nearest-pair simulation over live clusters."""
    clusters = {i: (np.array(f, dtype=float), float(s)) for i, (f, s) in enumerate(zip(features, sizes))}
    order = []
    while len(clusters) > target:
        best = None
        for i, j in itertools.combinations(sorted(clusters), 2):
            d = float(np.sum((clusters[i][0] - clusters[j][0]) ** 2))
            if best is None or d < best[0]:
                best = (d, i, j)
        _, i, j = best
        (fi, si), (fj, sj) = clusters[i], clusters[j]
        clusters[i] = ((si * fi + sj * fj) / (si + sj), si + sj)
        del clusters[j]
        order.append((i, j))
    return order


def test_merge_order_matches_exhaustive_simulation():
    feats = np.array([[0.0, 0.0], [0.1, 0.0], [1.0, 1.0], [1.0, 1.3], [3.0, 0.0]])
    part = Partition(np.array([[0, 1, 2, 3, 4], [0, 0, 2, 4, 4]]))
    for target in range(1, 6):
        _, hist = agglomerative_merge(part, feats, target, return_history=True)
        assert hist == brute_force_merge(feats, part.sizes, target)


def test_merge_random_matches_simulation(rng):
    for _ in range(5):
        part = random_partition(rng, 6, 6, 9)
        feats = rng.random((9, 3))
        _, hist = agglomerative_merge(part, feats, 2, return_history=True)
        assert hist == brute_force_merge(feats, part.sizes, 2)


def test_merge_two_to_one():
    part = Partition(np.array([[0, 1]]))
    merged = agglomerative_merge(part, [[0.0], [5.0]], 1)
    np.testing.assert_array_equal(merged.labels, [[0, 0]])


def test_merge_to_same_count_is_identity(rng):
    part = random_partition(rng, 5, 5, 7)
    merged = agglomerative_merge(part, rng.random((7, 2)), 7)
    np.testing.assert_array_equal(merged.labels, part.labels)


def test_merge_rejects_zero_target(rng):
    part = random_partition(rng, 5, 5, 7)
    with pytest.raises(InvalidArgumentError):
        agglomerative_merge(part, rng.random((7, 2)), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 15), st.data())
def test_merge_count_and_coverage(m, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31 - 1)))
    target = data.draw(st.integers(1, m))
    part = random_partition(rng, 6, 5, m)
    merged = agglomerative_merge(part, rng.random((m, 3)), target)
    assert merged.num_segments == target
    assert merged.sizes.sum() == part.sizes.sum() == 30
    # every merged segment is a union of original segments
    for k in range(m):
        assert np.unique(merged.labels[part.labels == k]).size == 1
