"""Superpixel partitions and the operations that move data between pixel
and superpixel resolution.

Images are plain ``(H, W, 3)`` float arrays with channels in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidArgumentError


class FeatureKind(str, Enum):
    POSITION = "POSITION"
    POSITION_COLOR = "POSITION_COLOR"

    @classmethod
    def parse(cls, value) -> "FeatureKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise InvalidArgumentError(f"unknown feature kind {value!r}") from None


def check_image(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise InvalidArgumentError(f"image must have shape (H, W, 3), got {image.shape}")
    if not np.all(np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        raise InvalidArgumentError("image channels must lie in [0, 1]")
    return image


@dataclass(frozen=True)
class Partition:
    """Per-pixel segment ids ``0..M-1``; every segment non-empty."""

    labels: np.ndarray
    num_segments: int = field(init=False)
    sizes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise InvalidArgumentError(f"partition labels must be a non-empty 2-d array, got {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise InvalidArgumentError("partition labels must be integers")
        labels = labels.astype(np.int64)
        if labels.min() < 0:
            raise InvalidArgumentError("negative segment id")
        sizes = np.bincount(labels.ravel())
        if np.any(sizes == 0):
            raise InvalidArgumentError("segment ids are not contiguous (empty segment)")
        labels.setflags(write=False)
        sizes.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_segments", int(sizes.size))
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Build a partition from arbitrary integer ids, compacting them to
        ``0..M-1`` in order of first appearance in raster order."""
        labels = np.asarray(labels)
        if labels.ndim != 2:
            raise InvalidArgumentError(f"labels must be 2-d, got shape {labels.shape}")
        flat = labels.ravel()
        uniq, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
        rank = np.empty(uniq.size, dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(uniq.size)
        return cls(rank[inverse].reshape(labels.shape))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self):
        return self.labels.shape


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or not np.issubdtype(labels.dtype, np.integer):
            raise InvalidArgumentError("label map must be a 2-d integer array")
        if self.num_classes < 1:
            raise InvalidArgumentError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidArgumentError(f"labels must lie in [0, {self.num_classes})")
        labels = labels.astype(np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", int(self.num_classes))


def _segment_means(part: Partition, values: np.ndarray) -> np.ndarray:
    ids = part.labels.ravel()
    # accumulate offsets from each segment's first pixel: constant segments
    # then come out exact and large offsets cancel before summation
    _, first = np.unique(ids, return_index=True)
    ref = values[first]
    resid = values - ref[ids]
    out = np.empty((part.num_segments, values.shape[1]))
    for k in range(values.shape[1]):
        out[:, k] = np.bincount(ids, weights=resid[:, k], minlength=part.num_segments)
    return ref + out / part.sizes[:, None]


def mean_features(image, part: Partition, kind=FeatureKind.POSITION_COLOR) -> np.ndarray:
    """Per-segment mean features, one row per segment.

    Columns are ``(u, v)`` for ``POSITION`` and ``(u, v, r, g, b)`` for
    ``POSITION_COLOR``. ``u``/``v`` are the mean column/row index divided by
    ``max(W, H)``; colors are channel means in [0, 1].
    """
    kind = FeatureKind.parse(kind)
    image = check_image(image)
    if image.shape[:2] != part.shape:
        raise InvalidArgumentError(
            f"image is {image.shape[1]}x{image.shape[0]} but partition is {part.width}x{part.height}")
    height, width = part.shape
    rows, cols = np.indices((height, width))
    scale = float(max(width, height))
    columns = [cols.ravel() / scale, rows.ravel() / scale]
    if kind is FeatureKind.POSITION_COLOR:
        columns.extend(image.reshape(-1, 3).T)
    return _segment_means(part, np.stack(columns, axis=1))


def project_labels(part: Partition, superpixel_labels, num_classes: int) -> LabelMap:
    """Give every pixel the class of the segment containing it."""
    superpixel_labels = np.asarray(superpixel_labels)
    if superpixel_labels.shape != (part.num_segments,):
        raise InvalidArgumentError(
            f"expected {part.num_segments} superpixel labels, got shape {superpixel_labels.shape}")
    if superpixel_labels.size and (superpixel_labels.min() < 0 or superpixel_labels.max() >= num_classes):
        raise InvalidArgumentError(f"class ids must lie in [0, {num_classes})")
    return LabelMap(superpixel_labels.astype(np.int64)[part.labels], num_classes)


def majority_labels(part: Partition, ground_truth: LabelMap) -> np.ndarray:
    """Most frequent ground-truth class per segment; ties go to the smaller id."""
    counts = np.zeros((part.num_segments, ground_truth.num_classes), dtype=np.int64)
    np.add.at(counts, (part.labels.ravel(), ground_truth.labels.ravel()), 1)
    # argmax returns the first maximum, i.e. the smallest class id
    return counts.argmax(axis=1)


def confusion_matrix(truth, pred, num_classes: int) -> np.ndarray:
    truth = np.asarray(truth).ravel()
    pred = np.asarray(pred).ravel()
    return np.bincount(truth * num_classes + pred,
                       minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def mean_iou(confusion: np.ndarray, classes=None) -> float:
    """Mean intersection-over-union over ``classes`` (default: classes present
    in the ground truth, i.e. non-empty rows)."""
    confusion = np.asarray(confusion, dtype=np.float64)
    inter = np.diag(confusion)
    union = confusion.sum(0) + confusion.sum(1) - inter
    if classes is None:
        classes = np.flatnonzero(confusion.sum(1) > 0)
    if len(classes) == 0:
        return 0.0
    return float(np.mean(inter[classes] / union[classes]))


def quantization_error(part: Partition, ground_truth: LabelMap) -> dict:
    """Best achievable scores when each segment takes its majority label."""
    if part.shape != ground_truth.labels.shape:
        raise InvalidArgumentError("partition and ground truth dimensions differ")
    best = project_labels(part, majority_labels(part, ground_truth), ground_truth.num_classes)
    conf = confusion_matrix(ground_truth.labels, best.labels, ground_truth.num_classes)
    return {
        "bestPixelAccuracy": float(np.trace(conf) / conf.sum()),
        "bestIoU": mean_iou(conf),
    }


def agglomerative_merge(part: Partition, features, target_count: int,
                        return_history: bool = False):
    """Merge the closest pair of segments in feature space until
    ``target_count`` segments remain.

    The merged segment keeps the smaller id and takes the size-weighted mean
    feature. Ties go to the lexicographically smallest ``(i, j)`` pair. Ids are
    compacted at the end, preserving the order of the surviving ids.
    """
    features = np.array(features, dtype=np.float64)
    m = part.num_segments
    if features.ndim != 2 or features.shape[0] != m:
        raise InvalidArgumentError(f"features must have {m} rows, got shape {features.shape}")
    if not 1 <= target_count <= m:
        raise InvalidArgumentError(f"target count must lie in [1, {m}], got {target_count}")
    sizes = part.sizes.astype(np.float64)
    owner = np.arange(m)

    diff = features[:, None, :] - features[None, :, :]
    dist = np.einsum("ijk,ijk->ij", diff, diff)
    # only the strict upper triangle is live, so a flat argmin yields the
    # smallest (i, j) among equal distances
    dist[np.tril_indices(m)] = np.inf
    history = []
    for _ in range(m - target_count):
        flat = int(np.argmin(dist))
        i, j = divmod(flat, m)
        history.append((i, j))
        total = sizes[i] + sizes[j]
        features[i] = (sizes[i] * features[i] + sizes[j] * features[j]) / total
        sizes[i] = total
        owner[owner == j] = i
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        alive = np.isfinite(dist[:i, i])
        d = features - features[i]
        d = np.einsum("ij,ij->i", d, d)
        col = dist[:i, i]
        col[alive] = d[:i][alive]
        row = dist[i, i + 1:]
        alive_row = np.isfinite(row)
        row[alive_row] = d[i + 1:][alive_row]
    survivors = np.unique(owner)
    merged = Partition(np.searchsorted(survivors, owner)[part.labels])
    if return_history:
        return merged, history
    return merged
